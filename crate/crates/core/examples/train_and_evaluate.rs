//! Trains a narrow KIUNET on a few synthetic images, then evaluates the final
//! checkpoint on the test split.
//!
//! ```bash
//! cargo run --release --example train_and_evaluate -- /tmp/run 10
//! ```

use std::ops::ControlFlow;
use std::path::PathBuf;

use overseg::data::{generate_synthetic, load_dataset, GenParams, Split};
use overseg::metrics::aggregate;
use overseg::nn::{ModelConfig, Variant};
use overseg::train::{evaluate_split, load_model, train_with, TrainConfig};

fn main() -> overseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "run".into()));
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    generate_synthetic(
        &GenParams {
            n: 12,
            n_test: 4,
            seed: 1,
            ..GenParams::default()
        },
        out.join("data"),
    )?;
    let mut cfg = TrainConfig::new(ModelConfig::new(2, Variant::Kiunet).with_channels(&[4, 8, 8]));
    cfg.epochs = epochs;
    let data = load_dataset(out.join("data/manifest.tsv"), cfg.model.divisor())?;

    train_with(&cfg, &data, &out.join("run"), &mut |r| {
        println!(
            "epoch {:>3} loss {:.4} train dice {:.4}",
            r.epoch, r.train_loss, r.train_dice
        );
        ControlFlow::Continue(())
    })?;

    let model = load_model(&cfg.model, &out.join("run/final.kiuc"))?;
    let (rows, small) = evaluate_split(&model, &data, Split::Test)?;
    let (all, sm) = (aggregate(&rows), aggregate(&small));
    println!(
        "test dice {:.4}  hd95 {:.2}  small-structure dice {:.4}",
        all.dice, all.hausdorff95, sm.dice
    );
    Ok(())
}
