#![allow(dead_code)]

use std::collections::HashSet;

use overseg::metrics::Mask;
use overseg::Rng;

pub fn random_mask(rng: &mut Rng, shape: &[usize]) -> Mask {
    let n = shape.iter().product();
    let p = rng.uniform(0.05, 0.6);
    Mask::new(shape, (0..n).map(|_| rng.bernoulli(p)).collect()).unwrap()
}

pub fn coords(shape: &[usize], mut i: usize) -> Vec<usize> {
    let mut c = vec![0; shape.len()];
    for a in (0..shape.len()).rev() {
        c[a] = i % shape[a];
        i /= shape[a];
    }
    c
}

fn at(m: &Mask, c: &[i64]) -> bool {
    let shape = m.shape();
    let mut i = 0usize;
    for (a, &v) in c.iter().enumerate() {
        if v < 0 || v >= shape[a] as i64 {
            return false;
        }
        i = i * shape[a] + v as usize;
    }
    m.data()[i]
}

pub fn on_set(m: &Mask) -> HashSet<Vec<usize>> {
    (0..m.data().len())
        .filter(|&i| m.data()[i])
        .map(|i| coords(m.shape(), i))
        .collect()
}

/// Dice and Jaccard from set intersection and union.
pub fn overlap_oracle(p: &Mask, g: &Mask) -> (f64, f64) {
    let (a, b) = (on_set(p), on_set(g));
    let inter = a.intersection(&b).count() as f64;
    let union = a.union(&b).count() as f64;
    if union == 0.0 {
        return (1.0, 1.0);
    }
    (2.0 * inter / (a.len() + b.len()) as f64, inter / union)
}

pub fn surface_oracle(m: &Mask) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for c in on_set(m) {
        let ci: Vec<i64> = c.iter().map(|&v| v as i64).collect();
        let mut edge = false;
        for a in 0..ci.len() {
            for d in [-1i64, 1] {
                let mut n = ci.clone();
                n[a] += d;
                edge |= !at(m, &n);
            }
        }
        if edge {
            out.push(c);
        }
    }
    out.sort();
    out
}

/// All-pairs directed distances both ways, sorted.
pub fn pooled_oracle(p: &Mask, g: &Mask, spacing: &[f64]) -> Vec<f64> {
    let (sp, sg) = (surface_oracle(p), surface_oracle(g));
    let dist = |a: &Vec<usize>, b: &Vec<usize>| {
        a.iter()
            .zip(b)
            .zip(spacing)
            .map(|((&x, &y), &s)| ((x as f64 - y as f64) * s).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let directed = |from: &[Vec<usize>], to: &[Vec<usize>]| -> Vec<f64> {
        from.iter()
            .map(|a| to.iter().map(|b| dist(a, b)).fold(f64::INFINITY, f64::min))
            .collect()
    };
    let mut d = directed(&sp, &sg);
    d.extend(directed(&sg, &sp));
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d
}

/// (hausdorff95, assd, msd) from the brute-force pool; both masks nonempty.
pub fn surface_metrics_oracle(p: &Mask, g: &Mask, spacing: &[f64]) -> (f64, f64, f64) {
    let d = pooled_oracle(p, g, spacing);
    let rank = 0.95 * (d.len() as f64 - 1.0);
    let (i, frac) = (rank.floor() as usize, rank.fract());
    let j = if i + 1 < d.len() { i + 1 } else { i };
    let hd = d[i] * (1.0 - frac) + d[j] * frac;
    (hd, d.iter().sum::<f64>() / d.len() as f64, d[d.len() - 1])
}
