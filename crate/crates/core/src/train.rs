//! Training, evaluation and prediction over manifest datasets.
//!
//! Training is batch 1 with Adam. Planar models minimize binary
//! cross-entropy on the sigmoid of the head (computed from the logits in
//! one fused step); volumetric models minimize multi-class cross-entropy.
//! Every artifact except `timing.csv` is a pure function of the seed,
//! config and data.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autograd::Graph;
use crate::data::{crop, load_dataset, small_threshold, Dataset, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::io::{load_checkpoint, save_checkpoint, save_tensor};
use crate::metrics::{aggregate, evaluate, overlap_metrics, small_structure_pair, write_csv, Mask, SampleRow};
use crate::nn::{build_model, Adam, Model, ModelConfig, ParameterSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Prediction voxels within this distance of a small structure count toward
/// the small-structure subset.
pub const SMALL_MARGIN: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Stop after the loss improves by less than `min_delta` for this many
    /// consecutive epochs.
    pub patience: usize,
    pub min_delta: f64,
    /// Stop once an epoch's mean train dice exceeds this.
    pub target_train_dice: Option<f64>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        let lr = if model.dims == 3 { 1e-4 } else { 1e-3 };
        TrainConfig {
            seed: model.seed,
            model,
            epochs: 300,
            lr,
            checkpoint_every: 0,
            patience: 20,
            min_delta: 1e-5,
            target_train_dice: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::validation(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        Ok(())
    }

    /// Model keys plus `epochs`, `lr`, `checkpoint_every`, `patience`,
    /// `min_delta` and `target_train_dice`, one `key=value` per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut model_lines = String::new();
        let mut train: Vec<(usize, String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            match line.split_once('=') {
                Some((k, v))
                    if matches!(
                        k.trim(),
                        "epochs" | "lr" | "checkpoint_every" | "patience" | "min_delta" | "target_train_dice"
                    ) =>
                {
                    train.push((n + 1, k.trim().to_string(), v.trim().to_string()));
                    model_lines.push('\n');
                }
                _ => {
                    model_lines.push_str(raw);
                    model_lines.push('\n');
                }
            }
        }
        let mut cfg = TrainConfig::new(ModelConfig::parse(&model_lines)?);
        for (n, k, v) in train {
            let bad = || Error::validation(format!("config line {n}: bad value '{v}' for '{k}'"));
            match k.as_str() {
                "epochs" => cfg.epochs = v.parse().map_err(|_| bad())?,
                "lr" => cfg.lr = v.parse().map_err(|_| bad())?,
                "checkpoint_every" => cfg.checkpoint_every = v.parse().map_err(|_| bad())?,
                "patience" => cfg.patience = v.parse().map_err(|_| bad())?,
                "min_delta" => cfg.min_delta = v.parse().map_err(|_| bad())?,
                _ => cfg.target_train_dice = Some(v.parse().map_err(|_| bad())?),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { offset: 0, source }.in_file(path))?;
        TrainConfig::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn to_text(&self) -> String {
        let mut s = self.model.to_text();
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "checkpoint_every={}", self.checkpoint_every);
        let _ = writeln!(s, "patience={}", self.patience);
        let _ = writeln!(s, "min_delta={}", self.min_delta);
        if let Some(d) = self.target_train_dice {
            let _ = writeln!(s, "target_train_dice={d}");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_dice: f64,
    /// Mean test-split dice; `None` without test samples.
    pub val_dice: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<EpochRow>,
}

impl RunLog {
    /// `epoch,train_loss,train_dice,val_dice`; wall time is left out so the
    /// file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_dice,val_dice\n");
        for r in &self.rows {
            let val = r.val_dice.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.train_dice, val);
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.3}", r.epoch, r.seconds);
        }
        s
    }
}

/// Per-epoch callback of [`train_with`].
pub type EpochHook<'a> = dyn FnMut(&EpochRow) -> ControlFlow<()> + 'a;

pub struct TrainOutcome {
    pub model: Model,
    pub log: RunLog,
    pub stopped_early: bool,
}

/// Training target: binary mask for planar models, class ids over the
/// spatial grid for volumetric ones.
pub fn target_for(cfg: &ModelConfig, mask: &Tensor) -> Result<Tensor> {
    if cfg.num_classes == 1 {
        return Ok(mask.map(|v| if v != 0.0 { 1.0 } else { 0.0 }));
    }
    if let Some(&bad) = mask
        .data()
        .iter()
        .find(|&&v| v < 0.0 || v >= cfg.num_classes as f32 || v.fract() != 0.0)
    {
        return Err(Error::validation(format!(
            "mask id {bad} outside 0..{}",
            cfg.num_classes
        )));
    }
    mask.clone().reshape(mask.spatial())
}

/// Per-voxel labels from a model output: threshold 0.5 on probabilities
/// (one channel) or channel argmax, first maximum winning.
pub fn labels_from_output(out: &Tensor) -> Result<Tensor> {
    let c = out.channels();
    let spatial = out.spatial().to_vec();
    let mut shape = vec![1];
    shape.extend_from_slice(&spatial);
    if c == 1 {
        return Tensor::new(
            &shape,
            out.data().iter().map(|&p| if p >= 0.5 { 1.0 } else { 0.0 }).collect(),
        );
    }
    let n: usize = spatial.iter().product();
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let mut best = 0;
        for ch in 1..c {
            if out.data()[ch * n + s] > out.data()[best * n + s] {
                best = ch;
            }
        }
        labels.push(best as f32);
    }
    Tensor::new(&shape, labels)
}

fn classes(cfg: &ModelConfig) -> std::ops::Range<u32> {
    1..cfg.num_classes.max(2) as u32
}

/// Dice per foreground class, averaged.
fn mean_dice(cfg: &ModelConfig, pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let mut total = 0.0;
    for c in classes(cfg) {
        let (p, g) = class_masks(cfg, pred, gt, c)?;
        total += overlap_metrics(&p, &g)?.dice;
    }
    Ok(total / classes(cfg).len() as f64)
}

fn class_masks(cfg: &ModelConfig, pred: &Tensor, gt: &Tensor, class: u32) -> Result<(Mask, Mask)> {
    if cfg.num_classes == 1 {
        let g = Mask::new(gt.spatial(), gt.data().iter().map(|&v| v != 0.0).collect())?;
        Ok((Mask::from_labels(pred, 1)?, g))
    } else {
        Ok((Mask::from_labels(pred, class)?, Mask::from_labels(gt, class)?))
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io { offset: 0, source }.in_file(path))
}

fn checkpoint_entries(params: &ParameterSet) -> Vec<(String, Tensor)> {
    params.entries().to_vec()
}

/// Cropped label map predicted for one record.
pub fn predict_record(model: &Model, r: &SampleRecord) -> Result<Tensor> {
    let out = model.forward(&r.image)?;
    crop(&labels_from_output(&out)?, &r.meta.original)
}

/// Full and small-structure metric rows for one split, in manifest order.
pub fn evaluate_split(model: &Model, data: &Dataset, split: Split) -> Result<(Vec<SampleRow>, Vec<SampleRow>)> {
    let cfg = &model.cfg;
    let spacing = vec![1.0; cfg.dims];
    let mut rows = Vec::new();
    let mut small = Vec::new();
    for r in data.split(split) {
        let pred = predict_record(model, r)?;
        let gt = crop(&r.mask, &r.meta.original)?;
        for class in classes(cfg) {
            let (p, g) = class_masks(cfg, &pred, &gt, class)?;
            rows.push(SampleRow {
                id: r.meta.id.clone(),
                class,
                report: evaluate(&p, &g, &spacing)?,
            });
            if let Some((ps, gs)) = small_structure_pair(&p, &g, small_threshold(cfg.dims), SMALL_MARGIN)? {
                small.push(SampleRow {
                    id: r.meta.id.clone(),
                    class,
                    report: evaluate(&ps, &gs, &spacing)?,
                });
            }
        }
    }
    Ok((rows, small))
}

/// Trains on the train split of `data`, writing artifacts into `out`.
pub fn train(cfg: &TrainConfig, data: &Dataset, out: &Path) -> Result<TrainOutcome> {
    train_with(cfg, data, out, &mut |_| ControlFlow::Continue(()))
}

/// [`train`], calling `on_epoch` after every epoch. Returning
/// `ControlFlow::Break` ends training after that epoch, as an early stop.
pub fn train_with(cfg: &TrainConfig, data: &Dataset, out: &Path, on_epoch: &mut EpochHook) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|source| Error::Io { offset: 0, source }.in_file(out))?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = cfg.seed;
    write_file(
        &out.join("train.cfg"),
        TrainConfig {
            model: model_cfg.clone(),
            ..cfg.clone()
        }
        .to_text(),
    )?;

    let root = Rng::new(cfg.seed);
    let mut model = build_model(&model_cfg, &mut root.fork(1))?;
    let train_set: Vec<&SampleRecord> = data.split(Split::Train).collect();
    if train_set.is_empty() {
        return Err(Error::validation("the manifest has no train samples"));
    }
    let has_test = data.split(Split::Test).next().is_some();
    let targets: Vec<Tensor> = train_set
        .iter()
        .map(|r| target_for(&model_cfg, &r.mask))
        .collect::<Result<_>>()?;
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = RunLog::default();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut graph = Graph::<f32>::new();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        root.fork(1000 + epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut dice_sum) = (0.0, 0.0);
        for &i in &order {
            let r = train_set[i];
            graph.reset();
            let (y, vars) = model.record(&mut graph, &r.image, true)?;
            let (loss, labels) = if model_cfg.dims == 2 {
                let p = graph.sigmoid(y);
                let labels = labels_from_output(graph.value(p))?;
                (graph.bce_with_logits(y, &targets[i])?, labels)
            } else {
                let labels = labels_from_output(graph.value(y))?;
                (graph.ce_loss_multiclass(y, &targets[i])?, labels)
            };
            let l = graph.value(loss).data()[0] as f64;
            if !l.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {l} at epoch {epoch}, sample {}",
                    r.meta.id
                )));
            }
            let gt = crop(&r.mask, &r.meta.original)?;
            dice_sum += mean_dice(&model_cfg, &crop(&labels, &r.meta.original)?, &gt)?;
            loss_sum += l;
            graph.backward(loss)?;
            let mut grads = Vec::with_capacity(model.params.len());
            for name in model.params.names() {
                let g = graph.grad(vars[name]).expect("parameters are tracked");
                grads.push((name.to_string(), g));
            }
            adam.step(&mut model.params, &ParameterSet::from_entries(grads)?)?;
        }
        let n = train_set.len() as f64;
        let val_dice = if has_test {
            Some(aggregate(&evaluate_split(&model, data, Split::Test)?.0).dice)
        } else {
            None
        };
        let row = EpochRow {
            epoch,
            train_loss: loss_sum / n,
            train_dice: dice_sum / n,
            val_dice,
            seconds: start.elapsed().as_secs_f64(),
        };
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            save_checkpoint(
                out.join(format!("ckpt_epoch{epoch:04}.kiuc")),
                &checkpoint_entries(&model.params),
            )?;
        }
        if best - row.train_loss < cfg.min_delta {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(row.train_loss);
        let reached = cfg.target_train_dice.is_some_and(|t| row.train_dice > t);
        let halt = on_epoch(&row).is_break();
        log.rows.push(row);
        if stale >= cfg.patience || reached || halt {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }

    save_checkpoint(out.join("final.kiuc"), &checkpoint_entries(&model.params))?;
    write_file(&out.join("log.csv"), log.to_csv())?;
    write_file(&out.join("timing.csv"), log.timing_csv())?;
    let losses: Vec<f64> = log.rows.iter().map(|r| r.train_loss).collect();
    write_file(&out.join("loss_curve.svg"), crate::plot::loss_curve_svg(&losses))?;
    Ok(TrainOutcome {
        model,
        log,
        stopped_early,
    })
}

/// [`train`] reading the dataset from a manifest.
pub fn cmd_train(cfg: &TrainConfig, manifest: &Path, out: &Path, on_epoch: &mut EpochHook) -> Result<TrainOutcome> {
    let data = load_dataset(manifest, cfg.model.divisor())?;
    train_with(cfg, &data, out, on_epoch)
}

pub fn load_model(cfg: &ModelConfig, checkpoint: &Path) -> Result<Model> {
    let entries = load_checkpoint(checkpoint)?;
    Model::with_params(cfg, ParameterSet::from_entries(entries)?).map_err(|e| e.in_file(checkpoint))
}

pub struct EvalOutcome {
    pub rows: Vec<SampleRow>,
    pub small: Vec<SampleRow>,
    pub metrics_csv: PathBuf,
    pub small_csv: PathBuf,
}

/// Writes `metrics.csv` and `metrics_small.csv` for `split` into `out`.
pub fn cmd_eval(
    cfg: &ModelConfig,
    checkpoint: &Path,
    manifest: &Path,
    split: Split,
    out: &Path,
) -> Result<EvalOutcome> {
    let model = load_model(cfg, checkpoint)?;
    let data = load_dataset(manifest, cfg.divisor())?;
    let (rows, small) = evaluate_split(&model, &data, split)?;
    std::fs::create_dir_all(out).map_err(|source| Error::Io { offset: 0, source }.in_file(out))?;
    let metrics_csv = out.join("metrics.csv");
    let small_csv = out.join("metrics_small.csv");
    for (path, r) in [(&metrics_csv, &rows), (&small_csv, &small)] {
        let mut buf = Vec::new();
        write_csv(r, &mut buf)?;
        write_file(path, buf)?;
    }
    Ok(EvalOutcome {
        rows,
        small,
        metrics_csv,
        small_csv,
    })
}

/// Writes `<id>_pred.kiut` label maps for every entry of `split` (all
/// entries when `None`) and returns their paths.
pub fn cmd_predict(
    cfg: &ModelConfig,
    checkpoint: &Path,
    manifest: &Path,
    split: Option<Split>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let model = load_model(cfg, checkpoint)?;
    let data = load_dataset(manifest, cfg.divisor())?;
    std::fs::create_dir_all(out).map_err(|source| Error::Io { offset: 0, source }.in_file(out))?;
    let mut written = Vec::new();
    for (s, r) in &data.records {
        if split.is_some_and(|want| want != *s) {
            continue;
        }
        let path = out.join(format!("{}_pred.kiut", r.meta.id));
        save_tensor(&path, &predict_record(&model, r)?)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip() {
        let cfg =
            TrainConfig::parse("variant=UC_SK\nchannels=4,8,16\nepochs=7\nlr=0.01 # comment\ntarget_train_dice=0.9\n")
                .unwrap();
        assert_eq!((cfg.epochs, cfg.lr, cfg.target_train_dice), (7, 0.01, Some(0.9)));
        assert_eq!(cfg.model.channels, vec![4, 8, 16]);
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(TrainConfig::parse("epochs=0").is_err());
        assert!(TrainConfig::parse("lr=-1").is_err());
        assert_eq!(TrainConfig::parse("dims=3\nchannels=4,8").unwrap().lr, 1e-4);
    }

    #[test]
    fn labels_threshold_and_argmax() {
        let p = Tensor::new(&[1, 1, 3], vec![0.2, 0.5, 0.9]).unwrap();
        assert_eq!(labels_from_output(&p).unwrap().data(), &[0.0, 1.0, 1.0]);
        let l = Tensor::new(&[3, 1, 2], vec![1.0, 0.0, 1.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(labels_from_output(&l).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn log_csv_has_no_wall_time() {
        let log = RunLog {
            rows: vec![EpochRow {
                epoch: 1,
                train_loss: 0.5,
                train_dice: 0.25,
                val_dice: None,
                seconds: 3.0,
            }],
        };
        assert_eq!(log.to_csv(), "epoch,train_loss,train_dice,val_dice\n1,0.5,0.25,\n");
        assert!(log.timing_csv().contains("3.000"));
    }
}
