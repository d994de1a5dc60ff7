//! Generates a small synthetic set, reloads it and shows the padding applied
//! for a 3-level model.
//!
//! ```bash
//! cargo run --example synthetic_data -- /tmp/synth
//! ```

use overseg::data::{crop, generate_synthetic, load_dataset, GenParams, Split};

fn main() -> overseg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic".into());
    let params = GenParams {
        n: 6,
        n_test: 2,
        size: 60,
        divisor: 4,
        seed: 3,
        ..GenParams::default()
    };
    let manifest = generate_synthetic(&params, &out)?;
    println!("wrote {} samples to {out}", manifest.entries.len());

    let data = load_dataset(format!("{out}/manifest.tsv"), 8)?;
    for split in [Split::Train, Split::Test] {
        for r in data.split(split) {
            let fg = r.mask.data().iter().filter(|&&v| v != 0.0).count();
            println!(
                "{:<6} {}  original {:?} padded {:?}  foreground {fg}",
                split.name(),
                r.meta.id,
                r.meta.original,
                r.image.shape()
            );
        }
    }
    let r = data.split(Split::Train).next().expect("one training sample");
    assert_eq!(crop(&r.image, &r.meta.original)?.spatial(), &r.meta.original[..]);
    Ok(())
}
