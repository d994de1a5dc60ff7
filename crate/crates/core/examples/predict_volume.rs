//! Runs an untrained two-class volumetric model on a padded synthetic volume
//! and crops the label map back to the original extent.

use overseg::data::{crop, generate_sample, pad_reflect, GenParams};
use overseg::nn::{build_model, ModelConfig, Variant};
use overseg::train::labels_from_output;
use overseg::Rng;

fn main() -> overseg::Result<()> {
    let params = GenParams {
        dims: 3,
        size: 24,
        depth: 20,
        divisor: 4,
        small_max: 2,
        seed: 9,
        ..GenParams::default()
    };
    let sample = generate_sample(&params, 0)?;
    let cfg = ModelConfig::new(3, Variant::Kiunet).with_channels(&[2, 4]);
    let model = build_model(&cfg, &mut Rng::new(9))?;

    let (x, pad) = pad_reflect(&sample.image, cfg.divisor())?;
    let logits = model.forward(&x)?;
    let labels = crop(&labels_from_output(&logits)?, &sample.meta.original)?;
    println!(
        "input {:?} padded by {pad:?} -> logits {:?}",
        sample.image.shape(),
        logits.shape()
    );
    println!(
        "label map {:?}, {} voxels labelled 1",
        labels.shape(),
        labels.data().iter().filter(|&&v| v == 1.0).count()
    );
    Ok(())
}
