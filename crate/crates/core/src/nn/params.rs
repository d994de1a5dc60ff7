//! Named parameter tensors, initialization and the Adam optimizer.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut set = ParameterSet::new();
        for (name, t) in entries {
            set.insert(name, t)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::validation(format!("duplicate parameter name '{name}'")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParameterSet) -> Result<()> {
        let missing: Vec<&str> = self.names().filter(|n| other.get(n).is_none()).collect();
        let extra: Vec<&str> = other.names().filter(|n| self.get(n).is_none()).collect();
        let reshaped: Vec<String> = self
            .iter()
            .filter_map(|(n, t)| {
                other
                    .get(n)
                    .filter(|o| o.shape() != t.shape())
                    .map(|o| format!("{n} {:?} vs {:?}", t.shape(), o.shape()))
            })
            .collect();
        if missing.is_empty() && extra.is_empty() && reshaped.is_empty() {
            return Ok(());
        }
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing tensors: {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            parts.push(format!("extra tensors: {}", extra.join(", ")));
        }
        if !reshaped.is_empty() {
            parts.push(format!("shape mismatches: {}", reshaped.join(", ")));
        }
        Err(Error::validation(format!(
            "checkpoint does not match the model config; {}",
            parts.join("; ")
        )))
    }
}

/// Shape of one parameter as declared by the architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn is_bias(&self) -> bool {
        self.shape.len() == 1
    }

    /// Inputs feeding one output unit: `Cin · kernel volume`.
    pub fn fan_in(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// Weights uniform in `±√(6 / fan_in)`, biases zero, drawn in spec order.
pub fn init_params(specs: &[ParamSpec], rng: &mut Rng) -> ParameterSet {
    let mut set = ParameterSet::new();
    for spec in specs {
        let t = if spec.is_bias() {
            Tensor::zeros(&spec.shape).expect("valid spec")
        } else {
            let limit = (6.0 / spec.fan_in() as f64).sqrt();
            let n = spec.shape.iter().product();
            let data = (0..n).map(|_| rng.uniform(-limit, limit) as f32).collect();
            Tensor::new(&spec.shape, data).expect("valid spec")
        };
        set.insert(spec.name.clone(), t).expect("unique spec names");
    }
    set
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: HashMap<String, Vec<f32>>,
    v: HashMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Number of steps taken.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter that has a gradient in `grads`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params
                .get(name)
                .ok_or_else(|| Error::validation(format!("gradient for unknown parameter '{name}'")))?;
            if p.shape() != g.shape() {
                return Err(Error::validation(format!(
                    "gradient {:?} does not match parameter '{name}' {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("checked above");
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; g.numel()]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; g.numel()]);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gd = gv as f64;
                let mn = b1 * *mv as f64 + (1.0 - b1) * gd;
                let vn = b2 * *vv as f64 + (1.0 - b2) * gd * gd;
                *mv = mn as f32;
                *vv = vn as f32;
                let update = self.lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *pv = (*pv as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f32) -> ParameterSet {
        ParameterSet::from_entries(vec![("p".into(), Tensor::scalar(v))]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = scalar_set(0.3);
        let mut adam = Adam::new(0.001);
        adam.step(&mut p, &scalar_set(0.0)).unwrap();
        assert_eq!(p.get("p").unwrap().data(), &[0.3]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_set(0.0);
        let mut adam = Adam::new(0.001);
        adam.step(&mut p, &scalar_set(1.0)).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction
        let want = -0.001 / (1.0 + 1e-8);
        assert!((p.get("p").unwrap().data()[0] as f64 - want).abs() < 1e-9);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = scalar_set(1.0);
        let mut adam = Adam::new(0.01);
        let mut steps = 0;
        while p.get("p").unwrap().data()[0].abs() >= 1e-2 {
            let x = p.get("p").unwrap().data()[0];
            adam.step(&mut p, &scalar_set(2.0 * x)).unwrap();
            steps += 1;
            assert!(steps <= 2000, "no convergence");
        }
    }

    #[test]
    fn mismatched_gradient_is_rejected() {
        let mut p = scalar_set(0.0);
        let g = ParameterSet::from_entries(vec![("p".into(), Tensor::zeros(&[2]).unwrap())]).unwrap();
        assert!(Adam::new(0.1).step(&mut p, &g).is_err());
        assert_eq!(Adam::new(0.1).steps(), 0);
    }

    #[test]
    fn initialization_bounds_and_determinism() {
        let specs = vec![
            ParamSpec {
                name: "a.w".into(),
                shape: vec![8, 4, 3, 3],
            },
            ParamSpec {
                name: "a.b".into(),
                shape: vec![8],
            },
        ];
        let p = init_params(&specs, &mut Rng::new(5));
        assert_eq!(p, init_params(&specs, &mut Rng::new(5)));
        assert!(p.get("a.b").unwrap().data().iter().all(|&v| v == 0.0));
        let limit = (6.0f64 / 36.0).sqrt() as f32;
        assert!(p.get("a.w").unwrap().data().iter().all(|v| v.abs() <= limit));
    }
}
