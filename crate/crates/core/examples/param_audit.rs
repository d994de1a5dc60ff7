//! Parameter totals of every variant, with the per-group breakdown of one.
//!
//! ```bash
//! cargo run --example param_audit -- KIUNET
//! ```

use overseg::nn::{param_count, ModelConfig, Variant};

fn main() -> overseg::Result<()> {
    let detail: Variant = std::env::args().nth(1).as_deref().unwrap_or("KIUNET").parse()?;
    for v in Variant::ALL {
        let n = param_count(&ModelConfig::new(2, v))?.total;
        println!("{:<14} {:>10}", v.name(), n);
    }
    let baseline = ModelConfig::new(2, Variant::UcSk).with_channels(&[64, 128, 256, 512, 1024]);
    println!(
        "{:<14} {:>10}  (5 levels, 64..1024)",
        "UC_SK",
        param_count(&baseline)?.total
    );
    println!("\n{detail} breakdown:");
    for (group, n) in param_count(&ModelConfig::new(2, detail))?.groups {
        println!("  {group:<14} {n:>10}");
    }
    Ok(())
}
