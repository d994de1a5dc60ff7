//! Prints every traced op of a variant with its input and output shapes.
//!
//! ```bash
//! cargo run --example shape_trace -- OC_SK 128
//! ```

use overseg::nn::{arch, ModelConfig, Variant};

fn main() -> overseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().as_deref().unwrap_or("KIUNET").parse()?;
    let side: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(64);
    let t = arch::trace(&ModelConfig::new(2, variant), &[1, side, side])?;
    for r in &t.rows {
        let name = r.name.as_deref().unwrap_or("");
        println!(
            "{:<16} {:<9} {:<22} {:?} -> {:?}",
            r.scope, r.op, name, r.input, r.output
        );
    }
    Ok(())
}
