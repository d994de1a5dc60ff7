//! Overlap and surface-distance metrics for binary masks.
//!
//! Empty masks: both empty scores dice = jaccard = 1 with zero distances;
//! exactly one empty scores dice = jaccard = 0 and every distance is the
//! volume diagonal. Both cases set the emptiness flags.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary mask over a 2D or 3D grid (row-major, last axis fastest).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(shape: &[usize], data: Vec<bool>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != data.len() {
            return Err(Error::shape(format!(
                "mask of shape {shape:?} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Mask {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Voxels of a single-channel probability map at or above `threshold`.
    pub fn from_probs(t: &Tensor, threshold: f32) -> Result<Self> {
        if t.channels() != 1 {
            return Err(Error::shape(format!("expected one channel, got shape {:?}", t.shape())));
        }
        Mask::new(t.spatial(), t.data().iter().map(|&v| v >= threshold).collect())
    }

    /// Voxels of a label map (single channel) equal to `class`.
    pub fn from_labels(t: &Tensor, class: u32) -> Result<Self> {
        if t.channels() != 1 {
            return Err(Error::shape(format!("expected one channel, got shape {:?}", t.shape())));
        }
        Mask::new(
            t.spatial(),
            t.data().iter().map(|&v| v.round() as u32 == class).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.contains(&true)
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for a in (0..self.shape.len().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.shape[a + 1];
        }
        s
    }

    /// Foreground voxels with at least one face neighbour that is background
    /// or outside the grid.
    pub fn surface(&self) -> Vec<bool> {
        let strides = self.strides();
        let mut out = vec![false; self.data.len()];
        for (i, o) in out.iter_mut().enumerate() {
            if !self.data[i] {
                continue;
            }
            *o = (0..self.shape.len()).any(|a| {
                let c = (i / strides[a]) % self.shape[a];
                c == 0 || c + 1 == self.shape[a] || !self.data[i - strides[a]] || !self.data[i + strides[a]]
            });
        }
        out
    }
}

/// Face-connected foreground components as sorted flat indices, ordered by
/// their first voxel.
pub fn components(m: &Mask) -> Vec<Vec<usize>> {
    let strides = m.strides();
    let mut label = vec![false; m.data.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..m.data.len() {
        if !m.data[start] || label[start] {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            for a in 0..m.shape.len() {
                let c = (i / strides[a]) % m.shape[a];
                let mut visit = |j: usize| {
                    if m.data[j] && !label[j] {
                        label[j] = true;
                        stack.push(j);
                    }
                };
                if c > 0 {
                    visit(i - strides[a]);
                }
                if c + 1 < m.shape[a] {
                    visit(i + strides[a]);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Areas of the components no larger than `threshold`, in component order.
pub fn small_areas(m: &Mask, threshold: usize) -> Vec<usize> {
    components(m).iter().map(Vec::len).filter(|&n| n <= threshold).collect()
}

/// Restricts a pair to the small structures of `gt`: the ground truth keeps
/// only components of at most `threshold` voxels, the prediction keeps only
/// voxels within `margin` (Chebyshev) of those components and outside the
/// large ones. `None` when `gt` has no small component.
pub fn small_structure_pair(pred: &Mask, gt: &Mask, threshold: usize, margin: usize) -> Result<Option<(Mask, Mask)>> {
    same_shape(pred, gt)?;
    let mut small = vec![false; gt.data.len()];
    let mut large = vec![false; gt.data.len()];
    let mut any = false;
    for comp in components(gt) {
        let target = if comp.len() <= threshold {
            any = true;
            &mut small
        } else {
            &mut large
        };
        for i in comp {
            target[i] = true;
        }
    }
    if !any {
        return Ok(None);
    }
    let strides = gt.strides();
    let mut region = small.clone();
    // separable box dilation
    for a in 0..gt.shape.len() {
        let prev = region.clone();
        for (i, r) in region.iter_mut().enumerate() {
            if *r {
                continue;
            }
            let c = (i / strides[a]) % gt.shape[a];
            let lo = c.saturating_sub(margin);
            let hi = (c + margin).min(gt.shape[a] - 1);
            *r = (lo..=hi).any(|t| prev[i - c * strides[a] + t * strides[a]]);
        }
    }
    let restricted: Vec<bool> = (0..pred.data.len())
        .map(|i| pred.data[i] && region[i] && !large[i])
        .collect();
    Ok(Some((
        Mask::new(&pred.shape, restricted)?,
        Mask::new(&gt.shape, small)?,
    )))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn same_shape(pred: &Mask, gt: &Mask) -> Result<()> {
    if pred.shape != gt.shape {
        return Err(Error::validation(format!(
            "prediction shape {:?} does not match ground truth shape {:?}",
            pred.shape, gt.shape
        )));
    }
    Ok(())
}

pub fn confusion(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts> {
    same_shape(pred, gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlap {
    pub dice: f64,
    pub jaccard: f64,
    pub voe: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub pred_empty: bool,
    pub gt_empty: bool,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Rates with a zero denominator (no positives for FNR, no negatives for
/// FPR) are 0.
pub fn overlap_from_counts(c: &ConfusionCounts) -> Overlap {
    let pred_empty = c.tp + c.fp == 0;
    let gt_empty = c.tp + c.fn_ == 0;
    let (dice, jaccard) = if pred_empty && gt_empty {
        (1.0, 1.0)
    } else {
        (
            ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            ratio(c.tp, c.tp + c.fp + c.fn_),
        )
    };
    Overlap {
        dice,
        jaccard,
        voe: 1.0 - jaccard,
        fnr: ratio(c.fn_, c.tp + c.fn_),
        fpr: ratio(c.fp, c.fp + c.tn),
        pred_empty,
        gt_empty,
    }
}

pub fn overlap_metrics(pred: &Mask, gt: &Mask) -> Result<Overlap> {
    Ok(overlap_from_counts(&confusion(pred, gt)?))
}

/// Lower-envelope pass along one line (squared distances, sample spacing `s`).
fn edt_line(f: &mut [f64], s: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut [f64]) {
    v.clear();
    z.clear();
    let pos = |q: usize| q as f64 * s;
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let x = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if x <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(x);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
    f.copy_from_slice(out);
}

/// Exact Euclidean distance from every voxel to the nearest `true` voxel of
/// `features`, with per-axis `spacing`. Infinite when there are none.
pub fn distance_transform(shape: &[usize], features: &[bool], spacing: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = features.iter().map(|&f| if f { 0.0 } else { f64::INFINITY }).collect();
    let n = d.len();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for a in 0..shape.len() {
        let len = shape[a];
        let inner: usize = shape[a + 1..].iter().product();
        let outer = n / (len * inner);
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for (q, l) in line.iter_mut().enumerate() {
                    *l = d[base + q * inner];
                }
                edt_line(&mut line, spacing[a], &mut v, &mut z, &mut out);
                for (q, &l) in line.iter().enumerate() {
                    d[base + q * inner] = l;
                }
            }
        }
    }
    d.iter_mut().for_each(|v| *v = v.sqrt());
    d
}

/// Inclusive percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceDistances {
    pub hausdorff95: f64,
    pub assd: f64,
    pub msd: f64,
}

/// Length of the grid diagonal in spacing units.
pub fn diagonal(shape: &[usize], spacing: &[f64]) -> f64 {
    shape
        .iter()
        .zip(spacing)
        .map(|(&n, &s)| (n as f64 * s).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Directed surface distances both ways, pooled.
pub fn surface_distances_pooled(pred: &Mask, gt: &Mask, spacing: &[f64]) -> Result<Vec<f64>> {
    same_shape(pred, gt)?;
    check_spacing(pred.shape(), spacing)?;
    let (sp, sg) = (pred.surface(), gt.surface());
    let to_gt = distance_transform(&gt.shape, &sg, spacing);
    let to_pred = distance_transform(&pred.shape, &sp, spacing);
    let mut d: Vec<f64> = sp.iter().zip(&to_gt).filter(|(s, _)| **s).map(|(_, &v)| v).collect();
    d.extend(sg.iter().zip(&to_pred).filter(|(s, _)| **s).map(|(_, &v)| v));
    Ok(d)
}

fn check_spacing(shape: &[usize], spacing: &[f64]) -> Result<()> {
    if spacing.len() != shape.len() || spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::validation(format!(
            "spacing {spacing:?} must hold one positive value per axis of {shape:?}"
        )));
    }
    Ok(())
}

pub fn surface_distance_metrics(pred: &Mask, gt: &Mask, spacing: &[f64]) -> Result<SurfaceDistances> {
    same_shape(pred, gt)?;
    check_spacing(pred.shape(), spacing)?;
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => {
            return Ok(SurfaceDistances {
                hausdorff95: 0.0,
                assd: 0.0,
                msd: 0.0,
            })
        }
        (true, false) | (false, true) => {
            let s = diagonal(pred.shape(), spacing);
            return Ok(SurfaceDistances {
                hausdorff95: s,
                assd: s,
                msd: s,
            });
        }
        _ => {}
    }
    let mut d = surface_distances_pooled(pred, gt, spacing)?;
    d.sort_by(f64::total_cmp);
    Ok(SurfaceDistances {
        hausdorff95: percentile(&d, 0.95),
        assd: d.iter().sum::<f64>() / d.len() as f64,
        msd: *d.last().unwrap(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub dice: f64,
    pub jaccard: f64,
    pub voe: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub hausdorff95: f64,
    pub assd: f64,
    pub msd: f64,
    pub pred_empty: bool,
    pub gt_empty: bool,
}

impl MetricsReport {
    /// Distances are the diagonal sentinel rather than measurements.
    pub fn is_sentinel(&self) -> bool {
        self.pred_empty != self.gt_empty
    }
}

pub fn evaluate(pred: &Mask, gt: &Mask, spacing: &[f64]) -> Result<MetricsReport> {
    let o = overlap_metrics(pred, gt)?;
    let s = surface_distance_metrics(pred, gt, spacing)?;
    Ok(MetricsReport {
        dice: o.dice,
        jaccard: o.jaccard,
        voe: o.voe,
        fnr: o.fnr,
        fpr: o.fpr,
        hausdorff95: s.hausdorff95,
        assd: s.assd,
        msd: s.msd,
        pred_empty: o.pred_empty,
        gt_empty: o.gt_empty,
    })
}

/// One evaluated sample: id, class id (1 for binary tasks) and metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRow {
    pub id: String,
    pub class: u32,
    pub report: MetricsReport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub dice: f64,
    pub jaccard: f64,
    pub voe: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub hausdorff95: f64,
    pub assd: f64,
    pub msd: f64,
    pub pred_empty: usize,
    pub gt_empty: usize,
    /// Rows left out of the distance means.
    pub excluded: usize,
}

/// Means over all rows; distance means skip sentinel rows (NaN if all are).
pub fn aggregate(rows: &[SampleRow]) -> Aggregate {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&MetricsReport) -> f64| rows.iter().map(|r| f(&r.report)).sum::<f64>() / n;
    let kept: Vec<&MetricsReport> = rows.iter().map(|r| &r.report).filter(|r| !r.is_sentinel()).collect();
    let dmean = |f: fn(&MetricsReport) -> f64| {
        if kept.is_empty() {
            f64::NAN
        } else {
            kept.iter().map(|r| f(r)).sum::<f64>() / kept.len() as f64
        }
    };
    Aggregate {
        dice: mean(|r| r.dice),
        jaccard: mean(|r| r.jaccard),
        voe: mean(|r| r.voe),
        fnr: mean(|r| r.fnr),
        fpr: mean(|r| r.fpr),
        hausdorff95: dmean(|r| r.hausdorff95),
        assd: dmean(|r| r.assd),
        msd: dmean(|r| r.msd),
        pred_empty: rows.iter().filter(|r| r.report.pred_empty).count(),
        gt_empty: rows.iter().filter(|r| r.report.gt_empty).count(),
        excluded: rows.len() - kept.len(),
    }
}

pub const CSV_HEADER: [&str; 13] = [
    "id",
    "class",
    "dice",
    "jaccard",
    "voe",
    "fnr",
    "fpr",
    "hausdorff95",
    "assd",
    "msd",
    "pred_empty",
    "gt_empty",
    "excluded",
];

/// Writes one row per sample followed by a `mean` row. In the `mean` row the
/// flag columns count flagged samples and `excluded` counts sentinel rows.
pub fn write_csv<W: Write>(rows: &[SampleRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Error::Io {
        offset: 0,
        source: std::io::Error::other(e),
    };
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        let m = &r.report;
        w.write_record([
            r.id.clone(),
            r.class.to_string(),
            m.dice.to_string(),
            m.jaccard.to_string(),
            m.voe.to_string(),
            m.fnr.to_string(),
            m.fpr.to_string(),
            m.hausdorff95.to_string(),
            m.assd.to_string(),
            m.msd.to_string(),
            (m.pred_empty as u8).to_string(),
            (m.gt_empty as u8).to_string(),
            (m.is_sentinel() as u8).to_string(),
        ])
        .map_err(io)?;
    }
    let a = aggregate(rows);
    w.write_record([
        "mean".to_string(),
        "-".to_string(),
        a.dice.to_string(),
        a.jaccard.to_string(),
        a.voe.to_string(),
        a.fnr.to_string(),
        a.fpr.to_string(),
        a.hausdorff95.to_string(),
        a.assd.to_string(),
        a.msd.to_string(),
        a.pred_empty.to_string(),
        a.gt_empty.to_string(),
        a.excluded.to_string(),
    ])
    .map_err(io)?;
    w.flush().map_err(|e| Error::Io { offset: 0, source: e })?;
    Ok(())
}
