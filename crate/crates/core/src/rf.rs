//! Receptive-field bookkeeping for stacks of stride-1 convolutions, 2× max
//! pooling and 2× linear upsampling.
//!
//! Three views of the same quantity:
//! - [`rf_paper_approx`], the pooling-only growth law indexed by level;
//! - [`rf_exact`], the layer-by-layer recurrence over exact rationals;
//! - [`rf_empirical`], the support of an actual input gradient.

use std::fmt::Write as _;

use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub type Rational = Ratio<i64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Pooling encoder: the field grows with depth.
    Under,
    /// Upsampling encoder: the field shrinks with depth.
    Over,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Under => "under",
            Mode::Over => "over",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "under" => Ok(Mode::Under),
            "over" => Ok(Mode::Over),
            _ => Err(Error::validation(format!(
                "unknown mode '{s}' (expected under or over)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    /// Odd `k`, stride 1, same padding.
    Conv(usize),
    MaxPool,
    Upsample,
}

impl Layer {
    pub fn label(self) -> String {
        match self {
            Layer::Conv(k) => format!("conv{k}"),
            Layer::MaxPool => "maxpool2".into(),
            Layer::Upsample => "upsample2".into(),
        }
    }
}

fn pow2(e: u32) -> Rational {
    Rational::from_integer(1i64 << e)
}

/// `k · 4^(i−1)` for the under branch, `k / 4^(i−1)` for the over branch.
/// This is the area factor `2^(2(i−1))` applied to `k`.
pub fn rf_paper_approx(i: usize, k: usize, mode: Mode) -> Rational {
    assert!(i >= 1 && k >= 1, "level and base extent start at 1");
    let f = pow2(2 * (i as u32 - 1));
    let k = Rational::from_integer(k as i64);
    match mode {
        Mode::Under => k * f,
        Mode::Over => k / f,
    }
}

/// Per-axis form of the same law: `k · 2^(i−1)` or `k / 2^(i−1)`.
pub fn rf_paper_axis(i: usize, k: usize, mode: Mode) -> Rational {
    assert!(i >= 1 && k >= 1, "level and base extent start at 1");
    let f = pow2(i as u32 - 1);
    let k = Rational::from_integer(k as i64);
    match mode {
        Mode::Under => k * f,
        Mode::Over => k / f,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfEntry {
    pub layer: String,
    /// Input pixels per step of this layer's output.
    pub jump: Rational,
    /// Extent along every spatial axis, in input pixels.
    pub rf: Rational,
    /// Level the following block sits at.
    pub level: usize,
    pub paper_approx: Rational,
    pub paper_axis: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfRecord {
    pub entries: Vec<RfEntry>,
}

impl RfRecord {
    pub fn last(&self) -> Option<&RfEntry> {
        self.entries.last()
    }

    /// Extent after the whole stack (1 for an empty one).
    pub fn rf(&self) -> Rational {
        self.last().map_or(Rational::one(), |e| e.rf)
    }

    pub fn jump(&self) -> Rational {
        self.last().map_or(Rational::one(), |e| e.jump)
    }
}

/// Exact recurrence starting from `rf = 1, jump = 1`:
/// conv k adds `(k−1)·jump`; pooling adds `jump` then doubles it;
/// upsampling halves `jump` then adds the new `jump` for the two-tap support.
///
/// The approximation columns use the first conv's kernel as `k` and count the
/// resampling layers seen so far to get the level; the mode follows the
/// most recent resampling layer.
pub fn rf_exact(layers: &[Layer]) -> RfRecord {
    let k = layers
        .iter()
        .find_map(|l| match l {
            Layer::Conv(k) => Some(*k),
            _ => None,
        })
        .unwrap_or(1);
    let mut rf = Rational::one();
    let mut jump = Rational::one();
    let mut level = 1;
    let mut mode = Mode::Under;
    let mut entries = Vec::with_capacity(layers.len());
    for (n, &layer) in layers.iter().enumerate() {
        match layer {
            Layer::Conv(k) => rf += Rational::from_integer(k as i64 - 1) * jump,
            Layer::MaxPool => {
                rf += jump;
                jump *= 2;
                level += 1;
                mode = Mode::Under;
            }
            Layer::Upsample => {
                jump /= 2;
                rf += jump;
                level += 1;
                mode = Mode::Over;
            }
        }
        entries.push(RfEntry {
            layer: format!("{}:{}", n + 1, layer.label()),
            jump,
            rf,
            level,
            paper_approx: rf_paper_approx(level, k, mode),
            paper_axis: rf_paper_axis(level, k, mode),
        });
    }
    RfRecord { entries }
}

/// `levels` encoder blocks of `conv k` followed by the branch's resampling.
pub fn encoder_layers(mode: Mode, levels: usize, k: usize) -> Vec<Layer> {
    let resample = match mode {
        Mode::Under => Layer::MaxPool,
        Mode::Over => Layer::Upsample,
    };
    (0..levels).flat_map(|_| [Layer::Conv(k), resample]).collect()
}

/// Inclusive bounding box in input coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfBox {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl RfBox {
    pub fn extent(&self) -> Vec<usize> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l + 1).collect()
    }
}

fn output_dims(layers: &[Layer], dims: &[usize]) -> Result<Vec<usize>> {
    let mut d = dims.to_vec();
    for l in layers {
        match l {
            Layer::Conv(k) if k % 2 == 0 => {
                return Err(Error::validation(format!("conv kernel {k} must be odd")));
            }
            Layer::Conv(_) => {}
            Layer::MaxPool => {
                if d.iter().any(|v| v % 2 != 0) {
                    return Err(Error::validation(format!("cannot pool odd extent {d:?}")));
                }
                d.iter_mut().for_each(|v| *v /= 2);
            }
            Layer::Upsample => d.iter_mut().for_each(|v| *v *= 2),
        }
    }
    Ok(d)
}

/// Support of `d output[probe] / d input` for a single-channel stack with
/// positive random weights, as a bounding box over 8 draws.
///
/// Draw `j` feeds a ramp rising along axis `a` when bit `a` of `j` is set
/// and falling otherwise, plus small distinct noise, so every pooling window
/// picks its extreme corner and the union reaches every side of the field.
pub fn rf_empirical(layers: &[Layer], dims: &[usize], probe: &[usize], seed: u64) -> Result<RfBox> {
    if !(2..=3).contains(&dims.len()) || probe.len() != dims.len() {
        return Err(Error::validation(format!(
            "probe {probe:?} and input {dims:?} must both be 2D or 3D"
        )));
    }
    let out = output_dims(layers, dims)?;
    let record = rf_exact(layers);
    let (rf, jump) = (record.rf(), record.jump());
    for a in 0..dims.len() {
        if probe[a] >= out[a] {
            return Err(Error::validation(format!("probe {probe:?} outside output {out:?}")));
        }
        let centre = (Rational::from_integer(probe[a] as i64) + Ratio::new(1, 2)) * jump - Ratio::new(1, 2);
        let last = Rational::from_integer(dims[a] as i64 - 1);
        if centre - rf < Rational::zero() || centre + rf > last {
            return Err(Error::validation(format!(
                "probe {probe:?} is within {rf} pixels of the border of {dims:?} on axis {a}"
            )));
        }
    }

    let n: usize = dims.iter().product();
    let mut rng = Rng::new(seed);
    let mut lo = dims.to_vec();
    let mut hi = vec![0; dims.len()];
    let mut touched = false;
    for draw in 0..8u64 {
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..n {
            let mut v = 1.0 + 1e-3 * rng.next_f64();
            for a in 0..dims.len() {
                let rising = (draw >> a) & 1 == 1;
                v += if rising { idx[a] } else { dims[a] - 1 - idx[a] } as f64;
            }
            data.push(v);
            for a in (0..dims.len()).rev() {
                idx[a] += 1;
                if idx[a] < dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        let mut shape = vec![1];
        shape.extend_from_slice(dims);
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&shape, data)?);
        let mut y = x;
        for &l in layers {
            y = match l {
                Layer::Conv(k) => {
                    let mut wshape = vec![1, 1];
                    wshape.extend(std::iter::repeat_n(k, dims.len()));
                    let taps = k.pow(dims.len() as u32);
                    let w = Tensor::new(&wshape, (0..taps).map(|_| rng.uniform(0.5, 1.5)).collect())?;
                    let w = g.input(w);
                    g.conv(y, w, None)?
                }
                Layer::MaxPool => g.maxpool(y)?,
                Layer::Upsample => g.upsample(y)?,
            };
        }
        let mut onehot = Tensor::<f64>::zeros(g.shape(y))?;
        let mut at = vec![0];
        at.extend_from_slice(probe);
        onehot.set(&at, 1.0);
        let loss = g.dot(y, &onehot)?;
        g.backward(loss)?;
        let grad = g.grad(x).expect("input is a parameter");
        let mut idx = vec![0usize; dims.len()];
        for &v in grad.data() {
            if v.abs() > 1e-12 {
                touched = true;
                for a in 0..dims.len() {
                    lo[a] = lo[a].min(idx[a]);
                    hi[a] = hi[a].max(idx[a]);
                }
            }
            for a in (0..dims.len()).rev() {
                idx[a] += 1;
                if idx[a] < dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
    }
    if !touched {
        return Err(Error::Numerical("probe gradient vanished everywhere".into()));
    }
    Ok(RfBox { lo, hi })
}

/// Smallest integer ≥ `r`.
pub fn ceil(r: Rational) -> i64 {
    r.ceil().to_integer()
}

/// Smallest integer ≤ `r`.
pub fn floor(r: Rational) -> i64 {
    r.floor().to_integer()
}

/// Plain-text table: one row per layer, with the empirical extent per row
/// when `empirical` is given.
pub fn format_table(record: &RfRecord, empirical: Option<&[Option<Vec<usize>>]>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>8} {:>10} {:>7} {:>12} {:>10} {:>12}",
        "layer", "jump", "rf_exact", "level", "paper_approx", "paper_axis", "empirical"
    );
    for (n, e) in record.entries.iter().enumerate() {
        let emp = match empirical.and_then(|v| v.get(n)).and_then(|b| b.as_ref()) {
            Some(ext) => ext.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x"),
            None => "-".into(),
        };
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>10} {:>7} {:>12} {:>10} {:>12}",
            e.layer, e.jump, e.rf, e.level, e.paper_approx, e.paper_axis, emp
        );
    }
    s
}

/// Decimal value of a rational, for display and plotting.
pub fn to_f64(r: Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}
