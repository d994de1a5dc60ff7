//! Saves a model's parameters as a checkpoint, reloads them and checks the
//! forward pass is unchanged.

use overseg::io::{load_checkpoint, save_checkpoint};
use overseg::nn::{build_model, Model, ModelConfig, ParameterSet, Variant};
use overseg::{Rng, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::new(2, Variant::UcSk).with_channels(&[4, 8, 16]);
    let model = build_model(&cfg, &mut Rng::new(2))?;
    let dir = std::env::temp_dir().join("overseg_ckpt_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.kiuc");
    save_checkpoint(&path, model.params.entries())?;
    println!(
        "{} tensors, {} bytes",
        model.params.len(),
        std::fs::metadata(&path)?.len()
    );

    let back = Model::with_params(&cfg, ParameterSet::from_entries(load_checkpoint(&path)?)?)?;
    let x = Tensor::full(&[1, 16, 16], 0.5)?;
    let diff = model.forward(&x)?.max_abs_diff(&back.forward(&x)?)?;
    println!("max forward difference after reload: {diff}");
    Ok(())
}
