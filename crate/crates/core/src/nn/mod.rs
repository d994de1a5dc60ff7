//! Model family: configuration, architecture, parameters and optimizer.

pub mod arch;
pub mod config;
pub mod params;

use std::collections::BTreeMap;

pub use arch::{crfb, dense_block, residual_block, BlockSpec, Branch, Exec, Resample, Role};
pub use config::{Block, ModelConfig, Variant};
pub use params::{init_params, Adam, ParamSpec, ParameterSet};

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// A configuration together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParameterSet,
}

/// Builds `cfg` with freshly initialized parameters.
pub fn build_model(cfg: &ModelConfig, rng: &mut Rng) -> Result<Model> {
    cfg.validate()?;
    let specs = arch::param_specs(cfg)?;
    Ok(Model {
        cfg: cfg.clone(),
        params: init_params(&specs, rng),
    })
}

impl Model {
    /// Wraps existing parameters after checking they fit `cfg`.
    pub fn with_params(cfg: &ModelConfig, params: ParameterSet) -> Result<Model> {
        cfg.validate()?;
        let expected = init_params(&arch::param_specs(cfg)?, &mut Rng::new(0));
        expected.check_compatible(&params)?;
        Ok(Model {
            cfg: cfg.clone(),
            params,
        })
    }

    /// Records the forward pass of `x` on `graph` up to the head logits.
    /// Returns the logits node and the parameter nodes by name.
    pub fn record<T: Scalar>(
        &self,
        graph: &mut Graph<T>,
        x: &Tensor<T>,
        trainable: bool,
    ) -> Result<(Var, std::collections::HashMap<String, Var>)> {
        arch::check_input(&self.cfg, x.shape())?;
        let params = arch::bind(graph, &self.params, trainable);
        let xv = graph.input(x.clone());
        let mut exec = arch::GraphExec { graph, params: &params };
        let y = arch::network(&mut exec, &self.cfg, xv, false)?;
        Ok((y, params))
    }

    /// Prediction for one input: probabilities in 2D, logits in 3D.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::<f32>::new();
        let (y, _) = self.record(&mut g, x, false)?;
        let y = if self.cfg.dims == 2 { g.sigmoid(y) } else { y };
        Ok(g.value(y).clone())
    }

    pub fn param_count(&self) -> ParamCount {
        param_count_of(&self.params)
    }
}

/// Parameter total with a breakdown by layer group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    /// `(group, count)` in first-appearance order; groups are parameter
    /// names without their layer and `.w`/`.b` suffix, e.g. `under.enc1`,
    /// `crfb.dec2`, `head`.
    pub groups: Vec<(String, usize)>,
}

impl ParamCount {
    /// Sum over groups whose name starts with `prefix`.
    pub fn group_total(&self, prefix: &str) -> usize {
        self.groups
            .iter()
            .filter(|(g, _)| g.starts_with(prefix))
            .map(|(_, n)| n)
            .sum()
    }
}

fn group_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        [single, _] => single.to_string(),
        [a, b, ..] => format!("{a}.{b}"),
        _ => name.to_string(),
    }
}

fn param_count_of(params: &ParameterSet) -> ParamCount {
    let mut order = Vec::new();
    let mut sums: BTreeMap<String, usize> = BTreeMap::new();
    for (name, t) in params.iter() {
        let g = group_of(name);
        if !sums.contains_key(&g) {
            order.push(g.clone());
        }
        *sums.entry(g).or_default() += t.numel();
    }
    ParamCount {
        total: params.numel(),
        groups: order
            .into_iter()
            .map(|g| {
                let n = sums[&g];
                (g, n)
            })
            .collect(),
    }
}

/// Parameter count of `cfg` from its declared shapes alone.
pub fn param_count(cfg: &ModelConfig) -> Result<ParamCount> {
    let specs = arch::param_specs(cfg)?;
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, usize> = BTreeMap::new();
    for s in &specs {
        let g = group_of(&s.name);
        if !sums.contains_key(&g) {
            order.push(g.clone());
        }
        *sums.entry(g).or_default() += s.shape.iter().product::<usize>();
    }
    Ok(ParamCount {
        total: sums.values().sum(),
        groups: order
            .into_iter()
            .map(|g| {
                let n = sums[&g];
                (g, n)
            })
            .collect(),
    })
}

/// Parameters of one same-padded convolution: `(taps · cin + 1) · cout`.
pub fn conv_params(taps: usize, cin: usize, cout: usize) -> usize {
    (taps * cin + 1) * cout
}
