//! Exact and approximate receptive fields of the two encoder kinds, with the
//! measured gradient support next to them.
//!
//! ```bash
//! cargo run --example receptive_field -- 3
//! ```

use overseg::cli::empirical_prefixes;
use overseg::rf::{encoder_layers, format_table, rf_exact, rf_paper_approx, Mode};

fn main() -> overseg::Result<()> {
    let levels: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for mode in [Mode::Under, Mode::Over] {
        let layers = encoder_layers(mode, levels, 3);
        let emp = empirical_prefixes(&layers, 1)?;
        println!("{} encoder, {levels} levels, k=3", mode.name());
        print!("{}", format_table(&rf_exact(&layers), Some(&emp)));
        let approx: Vec<String> = (1..=levels).map(|i| rf_paper_approx(i, 3, mode).to_string()).collect();
        println!("approximation by level: {}\n", approx.join(", "));
    }
    Ok(())
}
