//! Finite-difference verification of the analytic gradients.
//!
//! Runs in `f64` with central differences. A coordinate's relative error is
//! `|a − n| / max(|a|, |n|, 1e-8)`; a check passes when the largest one is at
//! most [`TOLERANCE`].

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Tensors larger than this are checked on a random subset of this many coordinates.
pub const MAX_COORDS: usize = 96;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
    pub pass: bool,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>], track: bool) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if track { g.param(t.clone()) } else { g.input(t.clone()) })
        .collect();
    let out = f(&mut g, &vars)?;
    Ok((g, vars, out))
}

/// Compares the gradient of the scalar `f(inputs)` with respect to every
/// input against central differences.
pub fn gradcheck<F>(name: &str, inputs: &[Tensor<f64>], f: F, rng: &mut Rng) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = eval(&f, inputs, true)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v).expect("param grad")).collect();

    let mut worst = 0.0f64;
    let mut coords = 0;
    let mut probe = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        let n = grad.numel();
        let mut idx: Vec<usize> = (0..n).collect();
        if n > MAX_COORDS {
            rng.shuffle(&mut idx);
            idx.truncate(MAX_COORDS);
        }
        for &k in &idx {
            let orig = probe[i].data()[k];
            probe[i].data_mut()[k] = orig + STEP;
            let (gp, _, op) = eval(&f, &probe, false)?;
            probe[i].data_mut()[k] = orig - STEP;
            let (gm, _, om) = eval(&f, &probe, false)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (gp.value(op).data()[0] - gm.value(om).data()[0]) / (2.0 * STEP);
            worst = worst.max(rel_err(grad.data()[k], numeric));
            coords += 1;
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        max_rel_err: worst,
        coords,
        pass: worst <= TOLERANCE,
    })
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect()).expect("valid shape")
}

/// Values at least 0.1 away from zero on either side.
fn off_kink(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if rng.bernoulli(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Input for 2× pooling whose window maxima lead their runners-up by ≥ 0.25.
fn pool_input(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = Tensor::<f64>::zeros(shape).expect("valid shape");
    let (c, dims) = (shape[0], &shape[1..]);
    let window = 1usize << dims.len();
    let out_dims: Vec<usize> = dims.iter().map(|d| d / 2).collect();
    let outs: usize = out_dims.iter().product();
    for ch in 0..c {
        for o in 0..outs {
            let mut rank: Vec<usize> = (0..window).collect();
            rng.shuffle(&mut rank);
            let base = rng.uniform(-1.0, 1.0);
            // decode output position, then visit window members
            let mut pos = vec![0; dims.len()];
            let mut r = o;
            for a in (0..dims.len()).rev() {
                pos[a] = r % out_dims[a];
                r /= out_dims[a];
            }
            for (m, &rk) in rank.iter().enumerate() {
                let mut idx = vec![ch];
                for a in 0..dims.len() {
                    let bit = (m >> (dims.len() - 1 - a)) & 1;
                    idx.push(pos[a] * 2 + bit);
                }
                t.set(&idx, base + 0.25 * rk as f64);
            }
        }
    }
    t
}

/// Runs every differentiable op of the engine through [`gradcheck`].
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = Rng::new(seed);
    let mut reports = Vec::new();

    // Non-scalar outputs are reduced with a fixed random projection.
    macro_rules! check {
        ($name:expr, $inputs:expr, $out_shape:expr, |$g:ident, $v:ident| $body:expr) => {{
            let inputs: Vec<Tensor<f64>> = $inputs;
            let proj = uniform(&mut rng, &$out_shape, -1.0, 1.0);
            let mut sub = rng.fork(reports.len() as u64);
            reports.push(gradcheck(
                $name,
                &inputs,
                |$g: &mut Graph<f64>, $v: &[Var]| {
                    let y: Var = $body;
                    $g.dot(y, &proj)
                },
                &mut sub,
            )?);
        }};
    }

    let x = uniform(&mut rng, &[2, 5, 5], -1.0, 1.0);
    let w = uniform(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[3], -1.0, 1.0);
    check!("conv2d", vec![x, w, b], [3, 5, 5], |g, v| g.conv2d(
        v[0],
        v[1],
        Some(v[2])
    )?);

    let x = uniform(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let w = uniform(&mut rng, &[2, 2, 3, 3, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[2], -1.0, 1.0);
    check!("conv3d", vec![x, w, b], [2, 3, 4, 4], |g, v| g.conv3d(
        v[0],
        v[1],
        Some(v[2])
    )?);

    let x = uniform(&mut rng, &[3, 4, 4], -1.0, 1.0);
    let w = uniform(&mut rng, &[2, 3, 1, 1], -1.0, 1.0);
    let b = uniform(&mut rng, &[2], -1.0, 1.0);
    check!("conv_head", vec![x, w, b], [2, 4, 4], |g, v| g.conv(
        v[0],
        v[1],
        Some(v[2])
    )?);

    check!(
        "maxpool2d",
        vec![pool_input(&mut rng, &[3, 8, 8])],
        [3, 4, 4],
        |g, v| g.maxpool(v[0])?
    );
    check!(
        "maxpool3d",
        vec![pool_input(&mut rng, &[2, 4, 4, 4])],
        [2, 2, 2, 2],
        |g, v| g.maxpool(v[0])?
    );
    check!(
        "upsample2d",
        vec![uniform(&mut rng, &[2, 3, 5], -1.0, 1.0)],
        [2, 6, 10],
        |g, v| g.upsample(v[0])?
    );
    check!(
        "upsample3d",
        vec![uniform(&mut rng, &[2, 2, 3, 3], -1.0, 1.0)],
        [2, 4, 6, 6],
        |g, v| g.upsample(v[0])?
    );
    check!("relu", vec![off_kink(&mut rng, &[3, 4, 4])], [3, 4, 4], |g, v| g
        .relu(v[0]));
    check!(
        "sigmoid",
        vec![uniform(&mut rng, &[3, 4, 4], -3.0, 3.0)],
        [3, 4, 4],
        |g, v| g.sigmoid(v[0])
    );
    check!(
        "softmax",
        vec![uniform(&mut rng, &[4, 3, 3], -2.0, 2.0)],
        [4, 3, 3],
        |g, v| g.softmax(v[0])?
    );
    let a = uniform(&mut rng, &[2, 3, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[2, 3, 3], -1.0, 1.0);
    check!("add", vec![a, b], [2, 3, 3], |g, v| g.add(v[0], v[1])?);
    let a = uniform(&mut rng, &[2, 3, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[3, 3, 3], -1.0, 1.0);
    check!("concat", vec![a, b], [5, 3, 3], |g, v| g.concat(&[v[0], v[1]])?);

    let x = uniform(&mut rng, &[2, 3, 3], -1.0, 1.0);
    let mut sub = rng.fork(100);
    reports.push(gradcheck("sum", &[x], |g, v| Ok(g.sum(v[0])), &mut sub)?);

    let p = uniform(&mut rng, &[1, 4, 4], 0.1, 0.9);
    let t = Tensor::new(
        &[1, 4, 4],
        (0..16).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect(),
    )?;
    let mut sub = rng.fork(101);
    reports.push(gradcheck("bce_loss", &[p], |g, v| g.bce_loss(v[0], &t), &mut sub)?);

    let z = uniform(&mut rng, &[1, 4, 4], -3.0, 3.0);
    let t = Tensor::new(
        &[1, 4, 4],
        (0..16).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect(),
    )?;
    let mut sub = rng.fork(103);
    reports.push(gradcheck(
        "bce_with_logits",
        &[z],
        |g, v| g.bce_with_logits(v[0], &t),
        &mut sub,
    )?);

    let l = uniform(&mut rng, &[4, 3, 4, 4], -2.0, 2.0);
    let t = Tensor::new(&[3, 4, 4], (0..48).map(|_| rng.below(4) as f64).collect())?;
    let mut sub = rng.fork(102);
    reports.push(gradcheck(
        "ce_loss_multiclass",
        &[l],
        |g, v| g.ce_loss_multiclass(v[0], &t),
        &mut sub,
    )?);

    Ok(reports)
}
