//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). `OVERSEG_ACCEPTANCE=1,3,6`
//! restricts the run to the listed criteria. The process fails when any
//! criterion fails, except those listed in `DOCUMENTED_RED`, which still
//! print FAIL.

mod common;

use std::collections::HashMap;
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use num_rational::Ratio;
use overseg::cli::empirical_prefixes;
use overseg::data::{generate_synthetic, load_dataset, GenParams, Split};
use overseg::gradcheck::{gradcheck_suite, STEP, TOLERANCE};
use overseg::metrics::{aggregate, evaluate, overlap_metrics, write_csv};
use overseg::nn::{arch, build_model, param_count, Model, ModelConfig, ParameterSet, Variant};
use overseg::rf::{self, rf_empirical, rf_exact, rf_paper_approx, Mode};
use overseg::train::{evaluate_split, train_with, TrainConfig};
use overseg::{Rng, Tensor};

/// Criteria that cannot be met as stated; see the project notes.
const DOCUMENTED_RED: &[u32] = &[5];

/// Criterion 7, planar run.
const OVERFIT_2D_LR: f64 = 1e-4;
const OVERFIT_2D_BUDGET_S: f64 = 600.0;
/// Criterion 7, volumetric run.
const OVERFIT_3D_CHANNELS: &[usize] = &[4, 8];
const OVERFIT_3D_LR: f64 = 3e-4;
const OVERFIT_3D_BUDGET_S: f64 = 1800.0;
/// Criteria 8 and 9: both models share widths, schedule and seed.
const BENCH_CHANNELS: &[usize] = &[4, 8, 8];
const BENCH_EPOCHS: usize = 4;
const BENCH_LR: f64 = 1e-3;
const BENCH_SEED: u64 = 123;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    overseg::heap::retain_freed_memory();
    let only: Option<Vec<u32>> = std::env::var("OVERSEG_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let work = tempfile::tempdir().expect("temp dir");
    let criteria: [(u32, &str, fn(&Path) -> Outcome); 9] = [
        (1, "gradient suite", c1_gradients),
        (2, "shape conformance", c2_shapes),
        (3, "receptive-field formulas", c3_receptive_field),
        (4, "fusion identity", c4_fusion_identity),
        (5, "parameter audit", c5_parameters),
        (6, "metric oracles", c6_metrics),
        (7, "trainability", c7_trainability),
        (8, "small-structure direction", c8_small_structures),
        (9, "determinism", c9_determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let dir = work.path().join(format!("c{id}"));
        std::fs::create_dir_all(&dir).unwrap();
        let start = Instant::now();
        let o = std::panic::catch_unwind(|| f(&dir)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = match (o.pass, DOCUMENTED_RED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (documented)",
            (false, false) => "FAIL",
        };
        println!(
            "criterion {id} [{tag}] {name}: {} ({:.1}s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass && !DOCUMENTED_RED.contains(&id) {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("undocumented failures: {failed:?}");
        std::process::exit(1);
    }
}

fn c1_gradients(_: &Path) -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut ops = 0;
    let mut bad = Vec::new();
    for seed in [7, 11, 42] {
        for r in gradcheck_suite(seed).expect("suite runs") {
            ops += 1;
            if r.max_rel_err > worst.0 {
                worst = (r.max_rel_err, r.name.clone());
            }
            if !r.pass || r.max_rel_err > 1e-4 {
                bad.push(format!("{}@{seed}", r.name));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bad.is_empty() && secs < 120.0 && STEP == 1e-3 && TOLERANCE == 1e-4;
    outcome(
        pass,
        format!(
            "{ops} op checks over seeds 7/11/42, worst {:.2e} ({}), {secs:.1}s of 120s, failing {bad:?}",
            worst.0, worst.1
        ),
    )
}

/// `(op, input, output)` with sizes in units of H/8 so every entry is integral.
type Row = (&'static str, [usize; 3], [usize; 3]);

fn expected_over() -> Vec<Row> {
    // Over branch: up through 32, 64, 128 channels, then down through 128, 64, 32.
    let h = 8;
    vec![
        ("conv", [1, h, h], [32, h, h]),
        ("upsample", [32, h, h], [32, 2 * h, 2 * h]),
        ("relu", [32, 2 * h, 2 * h], [32, 2 * h, 2 * h]),
        ("conv", [32, 2 * h, 2 * h], [64, 2 * h, 2 * h]),
        ("upsample", [64, 2 * h, 2 * h], [64, 4 * h, 4 * h]),
        ("relu", [64, 4 * h, 4 * h], [64, 4 * h, 4 * h]),
        ("conv", [64, 4 * h, 4 * h], [128, 4 * h, 4 * h]),
        ("upsample", [128, 4 * h, 4 * h], [128, 8 * h, 8 * h]),
        ("relu", [128, 8 * h, 8 * h], [128, 8 * h, 8 * h]),
        ("conv", [128, 8 * h, 8 * h], [128, 8 * h, 8 * h]),
        ("maxpool", [128, 8 * h, 8 * h], [128, 4 * h, 4 * h]),
        ("relu", [128, 4 * h, 4 * h], [128, 4 * h, 4 * h]),
        ("conv", [128, 4 * h, 4 * h], [64, 4 * h, 4 * h]),
        ("maxpool", [64, 4 * h, 4 * h], [64, 2 * h, 2 * h]),
        ("relu", [64, 2 * h, 2 * h], [64, 2 * h, 2 * h]),
        ("conv", [64, 2 * h, 2 * h], [32, 2 * h, 2 * h]),
        ("maxpool", [32, 2 * h, 2 * h], [32, h, h]),
        ("relu", [32, h, h], [32, h, h]),
    ]
}

fn expected_under() -> Vec<Row> {
    // Under branch: the decoder mirrors the three-level encoder.
    let h = 8;
    vec![
        ("conv", [1, h, h], [32, h, h]),
        ("maxpool", [32, h, h], [32, h / 2, h / 2]),
        ("relu", [32, h / 2, h / 2], [32, h / 2, h / 2]),
        ("conv", [32, h / 2, h / 2], [64, h / 2, h / 2]),
        ("maxpool", [64, h / 2, h / 2], [64, h / 4, h / 4]),
        ("relu", [64, h / 4, h / 4], [64, h / 4, h / 4]),
        ("conv", [64, h / 4, h / 4], [128, h / 4, h / 4]),
        ("maxpool", [128, h / 4, h / 4], [128, h / 8, h / 8]),
        ("relu", [128, h / 8, h / 8], [128, h / 8, h / 8]),
        ("conv", [128, h / 8, h / 8], [128, h / 8, h / 8]),
        ("upsample", [128, h / 8, h / 8], [128, h / 4, h / 4]),
        ("relu", [128, h / 4, h / 4], [128, h / 4, h / 4]),
        ("conv", [128, h / 4, h / 4], [64, h / 4, h / 4]),
        ("upsample", [64, h / 4, h / 4], [64, h / 2, h / 2]),
        ("relu", [64, h / 2, h / 2], [64, h / 2, h / 2]),
        ("conv", [64, h / 2, h / 2], [32, h / 2, h / 2]),
        ("upsample", [32, h / 2, h / 2], [32, h, h]),
        ("relu", [32, h, h], [32, h, h]),
    ]
}

fn branch_trace(variant: Variant, side: usize) -> Vec<(String, Vec<usize>, Vec<usize>)> {
    let t = arch::trace(&ModelConfig::new(2, variant), &[1, side, side]).expect("trace");
    t.rows
        .into_iter()
        .filter(|r| r.scope != "head" && matches!(r.op, "conv" | "maxpool" | "upsample" | "relu"))
        .map(|r| (r.op.to_string(), r.input, r.output))
        .collect()
}

fn scaled(rows: Vec<Row>, side: usize) -> Vec<(String, Vec<usize>, Vec<usize>)> {
    let unit = side / 8;
    let sc = |s: [usize; 3]| vec![s[0], s[1] * unit, s[2] * unit];
    rows.into_iter()
        .map(|(op, i, o)| (op.to_string(), sc(i), sc(o)))
        .collect()
}

fn c2_shapes(_: &Path) -> Outcome {
    let side = 128;
    let oc = branch_trace(Variant::OcSk, side) == scaled(expected_over(), side);
    let uc = branch_trace(Variant::UcSk, side) == scaled(expected_under(), side);
    outcome(
        oc && uc,
        format!("H=W={side}: OC_SK rows match {oc}, UC_SK rows match {uc}"),
    )
}

fn c3_receptive_field(_: &Path) -> Outcome {
    let mut ok = true;
    for k in 1..=7i64 {
        let under: Vec<_> = (1..=3).map(|i| rf_paper_approx(i, k as usize, Mode::Under)).collect();
        let over: Vec<_> = (1..=3).map(|i| rf_paper_approx(i, k as usize, Mode::Over)).collect();
        ok &= under == [Ratio::from(k), Ratio::from(4 * k), Ratio::from(16 * k)];
        ok &= over == [Ratio::from(k), Ratio::new(k, 4), Ratio::new(k, 16)];
    }
    let formulas = ok;
    let under_layers = rf::encoder_layers(Mode::Under, 3, 3);
    let over_layers = rf::encoder_layers(Mode::Over, 3, 3);
    let want = rf::ceil(rf_exact(&under_layers).rf()) as usize;
    let mut boxes = Vec::new();
    for seed in 1..=8 {
        let b = empirical_prefixes(&under_layers, seed)
            .expect("probe")
            .pop()
            .flatten()
            .unwrap();
        ok &= b == [want, want];
        boxes.push(b[0]);
    }
    // Equal depth: both stacks probed on the same 64×64 input.
    let ub = rf_empirical(&under_layers, &[64, 64], &[4, 4], 1)
        .expect("probe")
        .extent();
    let ob = rf_empirical(&over_layers, &[64, 64], &[256, 256], 1)
        .expect("probe")
        .extent();
    let smaller = ob.iter().zip(&ub).all(|(o, u)| o < u);
    ok &= smaller;
    outcome(
        ok,
        format!(
            "approximate rf k..16k and k..k/16 for k=1..7: {formulas}; under probe {boxes:?} vs ceil(rf_exact)={want}; \
             over box {ob:?} < under box {ub:?}: {smaller}"
        ),
    )
}

fn zero_fusion(model: &mut Model) {
    for (name, t) in model.params.iter_mut() {
        if name.starts_with("crfb.") {
            t.data_mut().fill(0.0);
        }
    }
}

fn c4_fusion_identity(_: &Path) -> Outcome {
    let mut ki = build_model(&ModelConfig::new(2, Variant::Kiunet), &mut Rng::new(4)).unwrap();
    zero_fusion(&mut ki);
    let plain_cfg = ModelConfig::new(2, Variant::UcOcSk);
    let entries: Vec<_> = ki
        .params
        .iter()
        .filter(|(n, _)| !n.starts_with("crfb."))
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    let plain = Model::with_params(&plain_cfg, ParameterSet::from_entries(entries).unwrap()).unwrap();
    let mut rng = Rng::new(44);
    let mut worst = 0.0f32;
    for _ in 0..10 {
        let x = Tensor::new(&[1, 32, 32], (0..32 * 32).map(|_| rng.next_f32()).collect()).unwrap();
        let a = ki.forward(&x).unwrap();
        let b = plain.forward(&x).unwrap();
        worst = worst.max(a.max_abs_diff(&b).unwrap());
    }
    outcome(
        worst <= 1e-6,
        format!("max |KIUNET - UC_OC_SK| over 10 inputs = {worst:.3e} (limit 1e-6)"),
    )
}

fn c5_parameters(_: &Path) -> Outcome {
    const KIUNET_GOLDEN: usize = 1_440_097;
    let mut formulas = true;
    for v in Variant::ALL {
        for dims in [2, 3] {
            let cfg = ModelConfig::new(dims, v);
            let t = arch::trace(&cfg, &{
                let mut s = vec![1];
                s.extend(std::iter::repeat_n(8, dims));
                s
            })
            .unwrap();
            let mut hand = 0;
            for r in t.rows.iter().filter(|r| r.op == "conv") {
                let k = r.kernel.unwrap().pow(dims as u32);
                hand += (k * r.input[0] + 1) * r.output[0];
            }
            formulas &= hand == param_count(&cfg).unwrap().total;
        }
    }
    let kiunet = param_count(&ModelConfig::new(2, Variant::Kiunet)).unwrap().total;
    let baseline = param_count(&ModelConfig::new(2, Variant::UcSk).with_channels(&[64, 128, 256, 512, 1024]))
        .unwrap()
        .total;
    let golden = kiunet == KIUNET_GOLDEN;
    let ratio = (kiunet as f64) < baseline as f64 / 5.0;
    let baseline_ok = (baseline as f64 - 3.1e6).abs() <= 0.15 * 3.1e6;
    let magnitude = (100_000..=1_000_000).contains(&kiunet);
    outcome(
        formulas && golden && ratio && baseline_ok && magnitude,
        format!(
            "hand formulas {formulas}; KIUNET {kiunet} (golden {golden}); 5-level UC_SK {baseline}; \
             KIUNET < baseline/5 {ratio}; baseline within 15% of 3.1M {baseline_ok}; KIUNET in 0.1M..1.0M {magnitude}"
        ),
    )
}

fn c6_metrics(_: &Path) -> Outcome {
    use common::*;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    let mut mismatches = 0;
    let mut check = |p: &overseg::metrics::Mask, g: &overseg::metrics::Mask, spacing: &[f64]| {
        let r = evaluate(p, g, spacing).unwrap();
        let (dice, jac) = overlap_oracle(p, g);
        let (ps, gs) = (on_set(p), on_set(g));
        let n = p.data().len() as f64;
        let tp = ps.intersection(&gs).count() as f64;
        let (fp, fn_) = (ps.len() as f64 - tp, gs.len() as f64 - tp);
        let tn = n - tp - fp - fn_;
        let fnr = if tp + fn_ > 0.0 { fn_ / (tp + fn_) } else { 0.0 };
        let fpr = if fp + tn > 0.0 { fp / (fp + tn) } else { 0.0 };
        let mut ok = close(r.dice, dice) && close(r.jaccard, jac) && close(r.voe, 1.0 - jac);
        ok &= close(r.fnr, fnr) && close(r.fpr, fpr);
        if !p.is_empty() && !g.is_empty() {
            let (hd, assd, msd) = surface_metrics_oracle(p, g, spacing);
            ok &= close(r.hausdorff95, hd) && close(r.assd, assd) && close(r.msd, msd);
        }
        if !ok {
            mismatches += 1;
        }
    };
    let mut rng = Rng::new(6);
    for _ in 0..200 {
        check(
            &random_mask(&mut rng, &[16, 16]),
            &random_mask(&mut rng, &[16, 16]),
            &[1.0, 1.0],
        );
    }
    for _ in 0..50 {
        check(
            &random_mask(&mut rng, &[8, 8, 8]),
            &random_mask(&mut rng, &[8, 8, 8]),
            &[1.0, 1.0, 1.0],
        );
    }
    let mut worst_identity = 0.0f64;
    for _ in 0..1000 {
        let (p, g) = (random_mask(&mut rng, &[16, 16]), random_mask(&mut rng, &[16, 16]));
        let o = overlap_metrics(&p, &g).unwrap();
        worst_identity = worst_identity.max((o.dice - 2.0 * o.jaccard / (1.0 + o.jaccard)).abs());
    }
    outcome(
        mismatches == 0 && worst_identity <= 1e-12,
        format!("200 planar + 50 volumetric pairs, {mismatches} mismatches at 1e-9; dice=2J/(1+J) worst {worst_identity:.1e}"),
    )
}

/// Trains until `target` train dice, the epoch budget or `budget_s` seconds.
fn overfit(cfg: &TrainConfig, params: &GenParams, dir: &Path, target: f64, budget_s: f64) -> (bool, f64, usize, f64) {
    generate_synthetic(params, dir.join("data")).unwrap();
    let data = load_dataset(dir.join("data/manifest.tsv"), cfg.model.divisor()).unwrap();
    // Only the target, the epoch budget and the clock end these runs.
    let cfg = &TrainConfig {
        patience: cfg.epochs,
        ..cfg.clone()
    };
    let start = Instant::now();
    let out = train_with(cfg, &data, &dir.join("run"), &mut |_| {
        if start.elapsed().as_secs_f64() > budget_s {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let last = out.log.rows.last().unwrap();
    (
        last.train_dice > target && secs < budget_s,
        last.train_dice,
        last.epoch,
        secs,
    )
}

fn c7_trainability(dir: &Path) -> Outcome {
    let mut cfg2 = TrainConfig::new(ModelConfig::new(2, Variant::Kiunet));
    cfg2.lr = OVERFIT_2D_LR;
    cfg2.seed = 7;
    cfg2.target_train_dice = Some(0.95);
    let p2 = GenParams {
        n: 1,
        n_test: 0,
        seed: 7,
        ..GenParams::default()
    };
    let (ok2, d2, e2, s2) = overfit(&cfg2, &p2, &dir.join("2d"), 0.95, OVERFIT_2D_BUDGET_S);

    let m3 = ModelConfig::new(3, Variant::Kiunet)
        .with_channels(OVERFIT_3D_CHANNELS)
        .with_classes(2);
    let mut cfg3 = TrainConfig::new(m3);
    cfg3.lr = OVERFIT_3D_LR;
    cfg3.seed = 7;
    cfg3.target_train_dice = Some(0.90);
    let p3 = GenParams {
        n: 1,
        n_test: 0,
        dims: 3,
        size: 32,
        depth: 16,
        seed: 7,
        ..GenParams::default()
    };
    let (ok3, d3, e3, s3) = overfit(&cfg3, &p3, &dir.join("3d"), 0.90, OVERFIT_3D_BUDGET_S);
    outcome(
        ok2 && ok3,
        format!(
            "2D default KIUNET lr {OVERFIT_2D_LR}: dice {d2:.4} at epoch {e2} in {s2:.0}s (need > 0.95, < {OVERFIT_2D_BUDGET_S}s); \
             3D KIUNET channels {OVERFIT_3D_CHANNELS:?} lr {}: dice {d3:.4} at epoch {e3} in {s3:.0}s (need > 0.90, < {OVERFIT_3D_BUDGET_S}s)",
            cfg3.lr
        ),
    )
}

/// Criterion 8's pipeline: returns the small-structure subset dice per
/// model and the artifact bytes that must be reproducible.
fn benchmark(dir: &Path) -> (HashMap<&'static str, f64>, Vec<(String, Vec<u8>)>) {
    let p = GenParams {
        n: 250,
        n_test: 50,
        seed: BENCH_SEED,
        ..GenParams::default()
    };
    generate_synthetic(&p, dir.join("data")).unwrap();
    let mut dice = HashMap::new();
    let mut artifacts = Vec::new();
    for (name, v) in [("KIUNET", Variant::Kiunet), ("UC_SK", Variant::UcSk)] {
        let mut cfg = TrainConfig::new(ModelConfig::new(2, v).with_channels(BENCH_CHANNELS));
        cfg.epochs = BENCH_EPOCHS;
        cfg.lr = BENCH_LR;
        cfg.seed = BENCH_SEED;
        let data = load_dataset(dir.join("data/manifest.tsv"), cfg.model.divisor()).unwrap();
        let run = dir.join(name);
        let out = train_with(&cfg, &data, &run, &mut |_| ControlFlow::Continue(())).unwrap();
        let (rows, small) = evaluate_split(&out.model, &data, Split::Test).unwrap();
        dice.insert(name, aggregate(&small).dice);
        let mut full = Vec::new();
        write_csv(&rows, &mut full).unwrap();
        let mut sm = Vec::new();
        write_csv(&small, &mut sm).unwrap();
        artifacts.push((format!("{name}/log.csv"), std::fs::read(run.join("log.csv")).unwrap()));
        artifacts.push((format!("{name}/metrics.csv"), full));
        artifacts.push((format!("{name}/metrics_small.csv"), sm));
    }
    (dice, artifacts)
}

fn c8_small_structures(dir: &Path) -> Outcome {
    let (dice, _) = benchmark(dir);
    let (k, u) = (dice["KIUNET"], dice["UC_SK"]);
    outcome(
        k > u,
        format!(
            "200 train / 50 test at 64x64, seed {BENCH_SEED}, channels {BENCH_CHANNELS:?}, {BENCH_EPOCHS} epochs, lr {BENCH_LR}: \
             small-structure dice KIUNET {k:.4} vs UC_SK {u:.4}"
        ),
    )
}

fn c9_determinism(dir: &Path) -> Outcome {
    let (_, a) = benchmark(&dir.join("a"));
    let (_, b) = benchmark(&dir.join("b"));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        a.len() == b.len() && differing.is_empty(),
        format!(
            "two runs of the benchmark pipeline: {} artifacts compared, differing {differing:?}",
            a.len()
        ),
    )
}
