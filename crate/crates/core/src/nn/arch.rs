//! The network graph, written once against [`Exec`].
//!
//! Running it on a [`GraphExec`] computes a differentiable forward pass;
//! running it on a [`Tracer`] only propagates shapes, which yields the
//! parameter list and per-layer shape traces without touching any data.
//!
//! Layout of one branch with `L` levels and widths `c[0..L]`:
//!
//! - encoder level `i`: conv3×3 `(i == 1 ? in : c[i-2]) → c[i-1]`, resample, ReLU
//! - decoder level 1: conv3×3 `c[L-1] → c[L-1]`, resample, ReLU
//! - decoder level `j ≥ 2`: conv3×3 `c[L-j+1] → c[L-j]`, plus the output of
//!   encoder level `L-j+1` when skips are on, resample, ReLU
//!
//! The undercomplete branch pools in the encoder and upsamples in the
//! decoder; the overcomplete branch does the opposite. With fusion enabled a
//! cross-residual block couples the two branches after every level.

use std::collections::HashMap;

use super::config::{Block, ModelConfig};
use super::params::{ParamSpec, ParameterSet};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Operations the architecture is written in.
pub trait Exec {
    type V: Copy;

    fn shape(&self, v: Self::V) -> Vec<usize>;
    /// Same-padded `k`-wide convolution with weight `{name}.w` and bias `{name}.b`.
    fn conv(&mut self, name: &str, x: Self::V, cout: usize, k: usize) -> Result<Self::V>;
    fn maxpool(&mut self, x: Self::V) -> Result<Self::V>;
    fn upsample(&mut self, x: Self::V) -> Result<Self::V>;
    fn relu(&mut self, x: Self::V) -> Result<Self::V>;
    fn sigmoid(&mut self, x: Self::V) -> Result<Self::V>;
    fn add(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn concat(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    /// Labels the ops that follow, for traces.
    fn scope(&mut self, _label: &str) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Under,
    Over,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Under => "under",
            Branch::Over => "over",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Encoder,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    MaxPool2,
    Upsample2,
}

/// Where a level sits and how it resamples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub role: Role,
    pub branch: Branch,
    /// 1-based.
    pub level: usize,
}

impl BlockSpec {
    pub fn resample(&self) -> Resample {
        match (self.role, self.branch) {
            (Role::Encoder, Branch::Under) | (Role::Decoder, Branch::Over) => Resample::MaxPool2,
            _ => Resample::Upsample2,
        }
    }

    pub fn prefix(&self) -> String {
        let role = match self.role {
            Role::Encoder => "enc",
            Role::Decoder => "dec",
        };
        format!("{}.{role}{}", self.branch.name(), self.level)
    }
}

fn resample<E: Exec>(e: &mut E, how: Resample, x: E::V) -> Result<E::V> {
    match how {
        Resample::MaxPool2 => e.maxpool(x),
        Resample::Upsample2 => e.upsample(x),
    }
}

/// `h + relu(conv3×3(h))`.
pub fn residual_block<E: Exec>(e: &mut E, name: &str, h: E::V) -> Result<E::V> {
    let c = e.shape(h)[0];
    let f = e.conv(name, h, c, 3)?;
    let f = e.relu(f)?;
    e.add(h, f)
}

/// Four 3×3 convs emitting `k/4` channels each, every one fed with the block
/// input and all earlier outputs; the concatenated outputs are added to the input.
pub fn dense_block<E: Exec>(e: &mut E, name: &str, h: E::V) -> Result<E::V> {
    let k = e.shape(h)[0];
    if k % 4 != 0 {
        return Err(Error::validation(format!(
            "dense block needs a width divisible by 4, got {k}"
        )));
    }
    let mut feed = vec![h];
    let mut outs = Vec::with_capacity(4);
    for n in 1..=4 {
        let input = if feed.len() == 1 { h } else { e.concat(&feed)? };
        let o = e.conv(&format!("{name}{n}"), input, k / 4, 3)?;
        let o = e.relu(o)?;
        feed.push(o);
        outs.push(o);
    }
    let cat = e.concat(&outs)?;
    e.add(h, cat)
}

fn apply_block<E: Exec>(e: &mut E, block: Block, prefix: &str, h: E::V) -> Result<E::V> {
    match block {
        Block::Plain => Ok(h),
        Block::Residual => residual_block(e, &format!("{prefix}.res"), h),
        Block::Dense => dense_block(e, &format!("{prefix}.dense"), h),
    }
}

/// Number of 2× stages separating two resolutions whose ratio must be a power of 4.
fn fusion_stages(small: &[usize], large: &[usize]) -> Result<usize> {
    let mut stages = None;
    for (&s, &l) in small.iter().zip(large) {
        let ratio = l / s;
        if l % s != 0 || !ratio.is_power_of_two() {
            return Err(Error::shape(format!(
                "resolution ratio between {small:?} and {large:?} is not a power of 4"
            )));
        }
        let k = ratio.trailing_zeros() as usize;
        if *stages.get_or_insert(k) != k {
            return Err(Error::shape(format!(
                "anisotropic resolution ratio between {small:?} and {large:?}"
            )));
        }
    }
    let k = stages.unwrap_or(0);
    if k % 2 != 0 {
        return Err(Error::shape(format!(
            "resolution ratio between {small:?} and {large:?} is not a power of 4"
        )));
    }
    Ok(k)
}

/// Cross-residual fusion of an undercomplete feature map `fu` with an
/// overcomplete one `fki` of the same width:
/// `(fu + pool^s(conv(fki)), fki + up^s(conv(fu)))`, `s` closing the resolution gap.
pub fn crfb<E: Exec>(e: &mut E, name: &str, fu: E::V, fki: E::V) -> Result<(E::V, E::V)> {
    let (su, sk) = (e.shape(fu), e.shape(fki));
    if su[0] != sk[0] || su.len() != sk.len() {
        return Err(Error::shape(format!(
            "fusion needs equal widths and ranks, got {su:?} and {sk:?}"
        )));
    }
    let stages = fusion_stages(&su[1..], &sk[1..])?;
    let c = su[0];
    let mut r_ki = e.conv(&format!("{name}.ki2u"), fki, c, 3)?;
    for _ in 0..stages {
        r_ki = e.maxpool(r_ki)?;
    }
    let mut r_u = e.conv(&format!("{name}.u2ki"), fu, c, 3)?;
    for _ in 0..stages {
        r_u = e.upsample(r_u)?;
    }
    let fu_hat = e.add(fu, r_ki)?;
    let fki_hat = e.add(fki, r_u)?;
    Ok((fu_hat, fki_hat))
}

/// Per-branch state while walking the levels.
struct Lane<V> {
    branch: Branch,
    h: V,
    skips: Vec<V>,
}

fn level<E: Exec>(e: &mut E, cfg: &ModelConfig, spec: BlockSpec, lane: &mut Lane<E::V>) -> Result<()> {
    let l = cfg.levels;
    let c = &cfg.channels;
    let cout = match spec.role {
        Role::Encoder => c[spec.level - 1],
        Role::Decoder if spec.level == 1 => c[l - 1],
        Role::Decoder => c[l - spec.level],
    };
    let prefix = spec.prefix();
    e.scope(&prefix);
    let mut h = e.conv(&format!("{prefix}.conv"), lane.h, cout, 3)?;
    h = apply_block(e, cfg.variant.block(), &prefix, h)?;
    if spec.role == Role::Decoder && spec.level >= 2 && cfg.variant.has_skips() {
        let skip = lane.skips[l - spec.level];
        h = e.add(h, skip)?;
    }
    h = resample(e, spec.resample(), h)?;
    lane.h = e.relu(h)?;
    Ok(())
}

/// Full network: input `[in, ...spatial]` to output `[classes, ...spatial]`.
/// With `activate`, 2D outputs pass through the sigmoid; otherwise both 2D
/// and 3D return head logits.
pub fn network<E: Exec>(e: &mut E, cfg: &ModelConfig, x: E::V, activate: bool) -> Result<E::V> {
    let mut lanes = Vec::new();
    if cfg.variant.has_under() {
        lanes.push(Lane {
            branch: Branch::Under,
            h: x,
            skips: Vec::new(),
        });
    }
    if cfg.variant.has_over() {
        lanes.push(Lane {
            branch: Branch::Over,
            h: x,
            skips: Vec::new(),
        });
    }
    let fuse = cfg.crfb_enabled() && lanes.len() == 2;
    for role in [Role::Encoder, Role::Decoder] {
        for lvl in 1..=cfg.levels {
            for lane in lanes.iter_mut() {
                let spec = BlockSpec {
                    role,
                    branch: lane.branch,
                    level: lvl,
                };
                level(e, cfg, spec, lane)?;
            }
            if fuse {
                let tag = match role {
                    Role::Encoder => "enc",
                    Role::Decoder => "dec",
                };
                let name = format!("crfb.{tag}{lvl}");
                e.scope(&name);
                let (u, o) = crfb(e, &name, lanes[0].h, lanes[1].h)?;
                lanes[0].h = u;
                lanes[1].h = o;
            }
            if role == Role::Encoder {
                for lane in lanes.iter_mut() {
                    lane.skips.push(lane.h);
                }
            }
        }
    }
    e.scope("head");
    let merged = match lanes.as_slice() {
        [a] => a.h,
        [a, b] => e.add(a.h, b.h)?,
        _ => unreachable!("at least one branch"),
    };
    let y = e.conv("head", merged, cfg.num_classes, 1)?;
    if cfg.dims == 2 && activate {
        e.sigmoid(y)
    } else {
        Ok(y)
    }
}

/// Checks rank, channels and divisibility of a model input shape.
pub fn check_input(cfg: &ModelConfig, shape: &[usize]) -> Result<()> {
    if shape.len() != cfg.dims + 1 || shape[0] != cfg.in_channels {
        return Err(Error::shape(format!(
            "a {}D model with {} input channels cannot take input {shape:?}",
            cfg.dims, cfg.in_channels
        )));
    }
    let div = cfg.divisor();
    if shape[1..].iter().any(|d| d % div != 0) {
        return Err(Error::shape(format!(
            "spatial extents {:?} must be divisible by 2^levels = {div}",
            &shape[1..]
        )));
    }
    Ok(())
}

/// Forward pass on an autograd graph, looking parameters up by name.
pub struct GraphExec<'g, T: Scalar> {
    pub graph: &'g mut Graph<T>,
    pub params: &'g HashMap<String, Var>,
}

impl<T: Scalar> GraphExec<'_, T> {
    fn param(&self, name: &str) -> Result<Var> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::validation(format!("missing parameter tensor '{name}'")))
    }
}

impl<T: Scalar> Exec for GraphExec<'_, T> {
    type V = Var;

    fn shape(&self, v: Var) -> Vec<usize> {
        self.graph.shape(v).to_vec()
    }

    fn conv(&mut self, name: &str, x: Var, cout: usize, _k: usize) -> Result<Var> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        if self.graph.shape(w)[0] != cout {
            return Err(Error::shape(format!(
                "parameter '{name}.w' {:?} should have {cout} outputs",
                self.graph.shape(w)
            )));
        }
        self.graph.conv(x, w, Some(b))
    }

    fn maxpool(&mut self, x: Var) -> Result<Var> {
        self.graph.maxpool(x)
    }

    fn upsample(&mut self, x: Var) -> Result<Var> {
        self.graph.upsample(x)
    }

    fn relu(&mut self, x: Var) -> Result<Var> {
        Ok(self.graph.relu(x))
    }

    fn sigmoid(&mut self, x: Var) -> Result<Var> {
        Ok(self.graph.sigmoid(x))
    }

    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.graph.add(a, b)
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.graph.concat(parts)
    }
}

/// One traced op.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub scope: String,
    /// `conv`, `maxpool`, `upsample`, `relu`, `sigmoid`, `add` or `concat`.
    pub op: &'static str,
    /// Parameter name prefix for convolutions.
    pub name: Option<String>,
    /// Kernel extent for convolutions.
    pub kernel: Option<usize>,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

/// Shape-only executor.
#[derive(Default)]
pub struct Tracer {
    shapes: Vec<Vec<usize>>,
    scope: String,
    pub rows: Vec<TraceRow>,
    pub params: Vec<ParamSpec>,
}

impl Tracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, shape: &[usize]) -> usize {
        self.shapes.push(shape.to_vec());
        self.shapes.len() - 1
    }

    fn emit(&mut self, op: &'static str, input: usize, output: Vec<usize>) -> usize {
        self.rows.push(TraceRow {
            scope: self.scope.clone(),
            op,
            name: None,
            kernel: None,
            input: self.shapes[input].clone(),
            output: output.clone(),
        });
        self.shapes.push(output);
        self.shapes.len() - 1
    }
}

impl Exec for Tracer {
    type V = usize;

    fn shape(&self, v: usize) -> Vec<usize> {
        self.shapes[v].clone()
    }

    fn conv(&mut self, name: &str, x: usize, cout: usize, k: usize) -> Result<usize> {
        let xs = self.shapes[x].clone();
        let mut w = vec![cout, xs[0]];
        w.extend(std::iter::repeat_n(k, xs.len() - 1));
        for spec in [
            ParamSpec {
                name: format!("{name}.w"),
                shape: w,
            },
            ParamSpec {
                name: format!("{name}.b"),
                shape: vec![cout],
            },
        ] {
            if self.params.iter().any(|p| p.name == spec.name) {
                return Err(Error::validation(format!("parameter '{}' declared twice", spec.name)));
            }
            self.params.push(spec);
        }
        let mut out = xs;
        out[0] = cout;
        let v = self.emit("conv", x, out);
        let row = self.rows.last_mut().expect("just pushed");
        row.name = Some(name.to_string());
        row.kernel = Some(k);
        Ok(v)
    }

    fn maxpool(&mut self, x: usize) -> Result<usize> {
        let xs = &self.shapes[x];
        if xs[1..].iter().any(|d| d % 2 != 0) {
            return Err(Error::shape(format!(
                "max-pooling needs even spatial extents, got {xs:?}; pad the input"
            )));
        }
        let out = std::iter::once(xs[0]).chain(xs[1..].iter().map(|d| d / 2)).collect();
        Ok(self.emit("maxpool", x, out))
    }

    fn upsample(&mut self, x: usize) -> Result<usize> {
        let xs = &self.shapes[x];
        let out = std::iter::once(xs[0]).chain(xs[1..].iter().map(|d| d * 2)).collect();
        Ok(self.emit("upsample", x, out))
    }

    fn relu(&mut self, x: usize) -> Result<usize> {
        let s = self.shapes[x].clone();
        Ok(self.emit("relu", x, s))
    }

    fn sigmoid(&mut self, x: usize) -> Result<usize> {
        let s = self.shapes[x].clone();
        Ok(self.emit("sigmoid", x, s))
    }

    fn add(&mut self, a: usize, b: usize) -> Result<usize> {
        if self.shapes[a] != self.shapes[b] {
            return Err(Error::shape(format!(
                "cannot add {:?} and {:?}",
                self.shapes[a], self.shapes[b]
            )));
        }
        let s = self.shapes[a].clone();
        Ok(self.emit("add", a, s))
    }

    fn concat(&mut self, parts: &[usize]) -> Result<usize> {
        let first = self.shapes[parts[0]].clone();
        let mut c = 0;
        for &p in parts {
            let s = &self.shapes[p];
            if s[1..] != first[1..] {
                return Err(Error::shape(format!("cannot concatenate {first:?} with {s:?}")));
            }
            c += s[0];
        }
        let mut out = first;
        out[0] = c;
        Ok(self.emit("concat", parts[0], out))
    }

    fn scope(&mut self, label: &str) {
        self.scope = label.to_string();
    }
}

/// Shape trace and parameter list of `cfg` for an input of `shape`.
pub fn trace(cfg: &ModelConfig, shape: &[usize]) -> Result<Tracer> {
    cfg.validate()?;
    check_input(cfg, shape)?;
    let mut t = Tracer::new();
    let x = t.input(shape);
    network(&mut t, cfg, x, true)?;
    Ok(t)
}

/// Parameter shapes of `cfg`, in declaration order.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    let side = cfg.divisor();
    let mut shape = vec![cfg.in_channels];
    shape.extend(std::iter::repeat_n(side, cfg.dims));
    Ok(trace(cfg, &shape)?.params)
}

/// Inserts every tensor of `params` into `graph`; trainable ones as
/// parameters, otherwise as constants.
pub fn bind<T: Scalar>(graph: &mut Graph<T>, params: &ParameterSet, trainable: bool) -> HashMap<String, Var> {
    params
        .iter()
        .map(|(name, t)| {
            let t: Tensor<T> = t.cast();
            let v = if trainable { graph.param(t) } else { graph.input(t) };
            (name.to_string(), v)
        })
        .collect()
}
