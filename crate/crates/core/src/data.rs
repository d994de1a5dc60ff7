//! Synthetic small-structure datasets and manifest-driven loading.
//!
//! A generated sample holds at most one large ellipse (ellipsoid in 3D) and
//! a few small discs (balls) kept apart from each other and from the
//! ellipse, so each disc is its own connected component. The image is the
//! blurred mask intensity with multiplicative speckle.
//!
//! Manifest format: `#`-prefixed `key=value` parameter lines, then one
//! `id<TAB>image<TAB>mask<TAB>train|test` line per sample, with file paths
//! relative to the manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{load_tensor, save_tensor};
use crate::metrics::{small_areas, Mask};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const SMALL_THRESHOLD_2D: usize = 30;
pub const SMALL_THRESHOLD_3D: usize = 100;

pub fn small_threshold(dims: usize) -> usize {
    if dims == 3 {
        SMALL_THRESHOLD_3D
    } else {
        SMALL_THRESHOLD_2D
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::validation(format!(
                "unknown split '{s}' (expected train or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    /// Total sample count; the last `n_test` are the test split.
    pub n: usize,
    pub n_test: usize,
    pub dims: usize,
    /// Height and width.
    pub size: usize,
    /// Depth of 3D volumes.
    pub depth: usize,
    pub seed: u64,
    /// Probability that a sample contains the large ellipse.
    pub large_prob: f64,
    pub small_min: usize,
    pub small_max: usize,
    pub blur_sigma: f64,
    pub noise: f64,
    /// Large structure labelled 1 and small ones 2, instead of a binary mask.
    pub multiclass: bool,
    /// Allow masks without foreground.
    pub allow_empty: bool,
    /// Size must be divisible by this (2^levels of the intended model).
    pub divisor: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            n: 10,
            n_test: 2,
            dims: 2,
            size: 64,
            depth: 64,
            seed: 0,
            large_prob: 1.0,
            small_min: 0,
            small_max: 4,
            blur_sigma: 1.0,
            noise: 0.2,
            multiclass: false,
            allow_empty: false,
            divisor: 8,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let v = |msg: String| Err(Error::validation(msg));
        if !(2..=3).contains(&self.dims) {
            return v(format!("dims must be 2 or 3, got {}", self.dims));
        }
        if self.divisor == 0 || self.size == 0 || !self.size.is_multiple_of(self.divisor) {
            return v(format!(
                "size {} must be a positive multiple of {}",
                self.size, self.divisor
            ));
        }
        if self.dims == 3 && (self.depth == 0 || !self.depth.is_multiple_of(self.divisor)) {
            return v(format!(
                "depth {} must be a positive multiple of {}",
                self.depth, self.divisor
            ));
        }
        if self.size < 16 || (self.dims == 3 && self.depth < 8) {
            return v(format!(
                "size {} (depth {}) too small to place structures",
                self.size, self.depth
            ));
        }
        if !(0.0..=1.0).contains(&self.large_prob) {
            return v(format!("large_prob {} must lie in [0, 1]", self.large_prob));
        }
        if self.small_min > self.small_max || self.small_max > 4 {
            return v(format!(
                "small shape count range {}..={} must lie within 0..=4",
                self.small_min, self.small_max
            ));
        }
        if !(self.blur_sigma >= 0.0 && self.noise >= 0.0) {
            return v("blur sigma and noise level must be non-negative".into());
        }
        if self.n_test > self.n {
            return v(format!("n_test {} exceeds n {}", self.n_test, self.n));
        }
        Ok(())
    }

    pub fn spatial(&self) -> Vec<usize> {
        if self.dims == 3 {
            vec![self.depth, self.size, self.size]
        } else {
            vec![self.size, self.size]
        }
    }

    fn echo(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "# {k}={v}");
        };
        kv("n", self.n.to_string());
        kv("n_test", self.n_test.to_string());
        kv("dims", self.dims.to_string());
        kv("size", self.size.to_string());
        if self.dims == 3 {
            kv("depth", self.depth.to_string());
        }
        kv("seed", self.seed.to_string());
        kv("large_prob", self.large_prob.to_string());
        kv("small_min", self.small_min.to_string());
        kv("small_max", self.small_max.to_string());
        kv("blur_sigma", self.blur_sigma.to_string());
        kv("noise", self.noise.to_string());
        kv("multiclass", self.multiclass.to_string());
        kv("allow_empty", self.allow_empty.to_string());
        kv("divisor", self.divisor.to_string());
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub id: String,
    /// Voxel counts of the components at or below the small threshold.
    pub small_areas: Vec<usize>,
    pub seed: Option<u64>,
    /// Spatial dims before padding.
    pub original: Vec<usize>,
    /// Voxels appended after the end of each spatial axis.
    pub pad: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub image: Tensor,
    pub mask: Tensor,
    pub meta: SampleMeta,
}

/// One in-memory generated sample, unpadded.
pub fn generate_sample(params: &GenParams, index: usize) -> Result<SampleRecord> {
    params.validate()?;
    let mut rng = Rng::new(params.seed).fork(index as u64);
    let dims = params.spatial();
    let n: usize = dims.iter().product();
    let mut labels = vec![0u8; n];

    let coords = |mut i: usize| {
        let mut c = vec![0usize; dims.len()];
        for a in (0..dims.len()).rev() {
            c[a] = i % dims[a];
            i /= dims[a];
        }
        c
    };

    if rng.bernoulli(params.large_prob) {
        // Full axes between 20% and 40% of the extent.
        let semi: Vec<f64> = dims.iter().map(|&d| rng.uniform(0.1, 0.2) * d as f64).collect();
        let centre: Vec<f64> = dims.iter().map(|&d| rng.uniform(0.3, 0.7) * d as f64).collect();
        let theta = rng.uniform(0.0, std::f64::consts::PI);
        let (sin, cos) = theta.sin_cos();
        let k = dims.len();
        for (i, l) in labels.iter_mut().enumerate() {
            let c = coords(i);
            let mut d: Vec<f64> = (0..k).map(|a| c[a] as f64 + 0.5 - centre[a]).collect();
            // rotate in the (h, w) plane
            let (y, x) = (d[k - 2], d[k - 1]);
            d[k - 2] = cos * y + sin * x;
            d[k - 1] = -sin * y + cos * x;
            let r: f64 = (0..k).map(|a| (d[a] / semi[a]).powi(2)).sum();
            if r <= 1.0 {
                *l = 1;
            }
        }
    }

    let mut small = params.small_min + rng.below((params.small_max - params.small_min + 1) as u64) as usize;
    if small == 0 && !params.allow_empty && !labels.contains(&1) {
        small = 1;
    }
    let max_radius: i64 = if params.dims == 3 { 2 } else { 3 };
    let gap = 4i64;
    let mut placed = 0;
    for _ in 0..200 {
        if placed == small {
            break;
        }
        let r = rng.range(1, max_radius);
        let margin = r + 1;
        let centre: Vec<i64> = dims.iter().map(|&d| rng.range(margin, d as i64 - 1 - margin)).collect();
        let reach = r + gap;
        // reject if any foreground lies within the gap of the disc's box
        let mut clear = true;
        let mut cells = Vec::new();
        visit_box(&centre, reach, &dims, &mut |c| {
            let i = flat(c, &dims);
            if labels[i] != 0 {
                clear = false;
            }
            let d2: i64 = c.iter().zip(&centre).map(|(&a, &b)| (a as i64 - b).pow(2)).sum();
            if d2 <= r * r {
                cells.push(i);
            }
        });
        if !clear {
            continue;
        }
        for i in cells {
            labels[i] = 2;
        }
        placed += 1;
    }
    if placed < small {
        return Err(Error::validation(format!(
            "could not place {small} small structures in sample {index}"
        )));
    }

    let mask_vals: Vec<f32> = labels
        .iter()
        .map(|&l| match (l, params.multiclass) {
            (0, _) => 0.0,
            (_, false) => 1.0,
            (l, true) => l as f32,
        })
        .collect();
    let mut image: Vec<f64> = labels.iter().map(|&l| if l == 0 { 0.2 } else { 0.8 }).collect();
    if params.blur_sigma > 0.0 {
        gaussian_blur(&mut image, &dims, params.blur_sigma);
    }
    if params.noise > 0.0 {
        for v in image.iter_mut() {
            *v *= 1.0 + params.noise * rng.normal();
        }
    }
    let image: Vec<f32> = image.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();

    let mut shape = vec![1];
    shape.extend_from_slice(&dims);
    let mask = Tensor::new(&shape, mask_vals)?;
    let binary = Mask::new(&dims, labels.iter().map(|&l| l != 0).collect())?;
    Ok(SampleRecord {
        image: Tensor::new(&shape, image)?,
        mask,
        meta: SampleMeta {
            id: sample_id(index),
            small_areas: small_areas(&binary, small_threshold(params.dims)),
            seed: Some(params.seed),
            original: dims.clone(),
            pad: vec![0; dims.len()],
        },
    })
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:04}")
}

fn flat(c: &[usize], dims: &[usize]) -> usize {
    c.iter().zip(dims).fold(0, |acc, (&v, &d)| acc * d + v)
}

fn visit_box(centre: &[i64], reach: i64, dims: &[usize], f: &mut dyn FnMut(&[usize])) {
    let lo: Vec<usize> = centre.iter().map(|&c| (c - reach).max(0) as usize).collect();
    let hi: Vec<usize> = centre
        .iter()
        .zip(dims)
        .map(|(&c, &d)| ((c + reach) as usize).min(d - 1))
        .collect();
    let mut c = lo.clone();
    loop {
        f(&c);
        let mut a = c.len();
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            if c[a] < hi[a] {
                c[a] += 1;
                break;
            }
            c[a] = lo[a];
        }
    }
}

/// Index into `0..n` under whole-sample symmetric reflection
/// (`-1 → 1`, `n → n − 2`), periodic with period `2n − 2`.
pub fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

fn gaussian_blur(data: &mut [f64], dims: &[usize], sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let n = data.len();
    for a in 0..dims.len() {
        let len = dims[a];
        let inner: usize = dims[a + 1..].iter().product();
        let outer = n / (len * inner);
        let mut line = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for (q, l) in line.iter_mut().enumerate() {
                    *l = data[base + q * inner];
                }
                for q in 0..len {
                    let mut s = 0.0;
                    for (t, &k) in kernel.iter().enumerate() {
                        s += k * line[reflect(q as i64 + t as i64 - radius, len)];
                    }
                    data[base + q * inner] = s;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// `key=value` pairs from the comment lines, in file order.
    pub params: Vec<(String, String)>,
}

impl DatasetManifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut params = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    params.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::validation(format!(
                    "manifest line {}: expected 4 tab-separated fields, found {}",
                    n + 1,
                    f.len()
                )));
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                image: PathBuf::from(f[1]),
                mask: PathBuf::from(f[2]),
                split: f[3].trim().parse()?,
            });
        }
        Ok(DatasetManifest {
            root: root.into(),
            entries,
            params,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { offset: 0, source }.in_file(path))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        DatasetManifest::parse(&text, root).map_err(|e| e.in_file(path))
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.params {
            let _ = writeln!(s, "# {k}={v}");
        }
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                e.id,
                e.image.display(),
                e.mask.display(),
                e.split.name()
            );
        }
        s
    }
}

/// Writes every sample and the manifest under `out`; returns the manifest.
pub fn generate_synthetic(params: &GenParams, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    params.validate()?;
    let out = out.as_ref();
    for sub in ["images", "masks"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io { offset: 0, source }.in_file(&dir))?;
    }
    let mut entries = Vec::with_capacity(params.n);
    for i in 0..params.n {
        let s = generate_sample(params, i)?;
        let image = PathBuf::from("images").join(format!("{}.kiut", s.meta.id));
        let mask = PathBuf::from("masks").join(format!("{}.kiut", s.meta.id));
        save_tensor(out.join(&image), &s.image)?;
        save_tensor(out.join(&mask), &s.mask)?;
        let split = if i + params.n_test >= params.n {
            Split::Test
        } else {
            Split::Train
        };
        entries.push(ManifestEntry {
            id: s.meta.id,
            image,
            mask,
            split,
        });
    }
    let text = params.echo();
    let params = DatasetManifest::parse(&text, out)?.params;
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        entries,
        params,
    };
    let path = out.join("manifest.tsv");
    std::fs::write(&path, manifest.to_text()).map_err(|source| Error::Io { offset: 0, source }.in_file(&path))?;
    Ok(manifest)
}

/// Pads every spatial axis at its end, by reflection, up to a multiple of
/// `divisor`. Returns the padded tensor and per-axis padding.
pub fn pad_reflect(t: &Tensor, divisor: usize) -> Result<(Tensor, Vec<usize>)> {
    let c = t.channels();
    let dims = t.spatial().to_vec();
    let pad: Vec<usize> = dims.iter().map(|&d| d.next_multiple_of(divisor) - d).collect();
    if pad.iter().all(|&p| p == 0) {
        return Ok((t.clone(), pad));
    }
    let new: Vec<usize> = dims.iter().zip(&pad).map(|(d, p)| d + p).collect();
    let n_new: usize = new.iter().product();
    let n_old: usize = dims.iter().product();
    let mut data = Vec::with_capacity(c * n_new);
    let mut src = vec![0usize; dims.len()];
    for ch in 0..c {
        for i in 0..n_new {
            let mut r = i;
            for a in (0..new.len()).rev() {
                src[a] = reflect((r % new[a]) as i64, dims[a]);
                r /= new[a];
            }
            data.push(t.data()[ch * n_old + flat(&src, &dims)]);
        }
    }
    let mut shape = vec![c];
    shape.extend(new);
    Ok((Tensor::new(&shape, data)?, pad))
}

/// Inverse of [`pad_reflect`]: keeps the leading `original` extent per axis.
pub fn crop(t: &Tensor, original: &[usize]) -> Result<Tensor> {
    let c = t.channels();
    let dims = t.spatial().to_vec();
    if dims.len() != original.len() || dims.iter().zip(original).any(|(d, o)| o > d) {
        return Err(Error::shape(format!("cannot crop {:?} to {original:?}", t.shape())));
    }
    if dims == original {
        return Ok(t.clone());
    }
    let n_old: usize = dims.iter().product();
    let n_new: usize = original.iter().product();
    let mut data = Vec::with_capacity(c * n_new);
    let mut src = vec![0usize; dims.len()];
    for ch in 0..c {
        for i in 0..n_new {
            let mut r = i;
            for a in (0..original.len()).rev() {
                src[a] = r % original[a];
                r /= original[a];
            }
            data.push(t.data()[ch * n_old + flat(&src, &dims)]);
        }
    }
    let mut shape = vec![c];
    shape.extend_from_slice(original);
    Tensor::new(&shape, data)
}

/// Loaded dataset in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<(Split, SampleRecord)>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |(s, _)| *s == split).map(|(_, r)| r)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn load_entry(root: &Path, e: &ManifestEntry, divisor: usize, seed: Option<u64>) -> Result<SampleRecord> {
    let image = load_tensor(root.join(&e.image))?;
    let mask = load_tensor(root.join(&e.mask))?;
    if image.spatial() != mask.spatial() || mask.channels() != 1 {
        return Err(Error::validation(format!(
            "image shape {:?} and mask shape {:?} disagree",
            image.shape(),
            mask.shape()
        )));
    }
    if !(2..=3).contains(&image.spatial().len()) {
        return Err(Error::validation(format!(
            "image shape {:?} is neither 2D nor 3D",
            image.shape()
        )));
    }
    let original = image.spatial().to_vec();
    let binary = Mask::new(&original, mask.data().iter().map(|&v| v != 0.0).collect())?;
    let areas = small_areas(&binary, small_threshold(original.len()));
    let (image, pad) = pad_reflect(&image, divisor)?;
    let (mask, _) = pad_reflect(&mask, divisor)?;
    Ok(SampleRecord {
        image,
        mask,
        meta: SampleMeta {
            id: e.id.clone(),
            small_areas: areas,
            seed,
            original,
            pad,
        },
    })
}

/// Reads every entry, padding spatial dims up to multiples of `divisor`.
/// Small-structure areas are recounted from the masks.
pub fn load_dataset(manifest: impl AsRef<Path>, divisor: usize) -> Result<Dataset> {
    let m = DatasetManifest::load(&manifest)?;
    let seed = m.param("seed").and_then(|s| s.parse().ok());
    let mut records = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        let r = load_entry(&m.root, e, divisor, seed).map_err(|source| Error::Entry {
            name: e.id.clone(),
            source: Box::new(source),
        })?;
        records.push((e.split, r));
    }
    Ok(Dataset { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::components;

    #[test]
    fn reflection_indices() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn large_only_sample_is_one_ellipse() {
        let p = GenParams {
            small_max: 0,
            seed: 3,
            ..GenParams::default()
        };
        for i in 0..10 {
            let s = generate_sample(&p, i).unwrap();
            let m = Mask::new(&s.meta.original, s.mask.data().iter().map(|&v| v != 0.0).collect()).unwrap();
            assert_eq!(components(&m).len(), 1);
            let area = m.count() as f64;
            let (lo, hi) = (std::f64::consts::PI * 6.4 * 6.4, std::f64::consts::PI * 12.8 * 12.8);
            assert!(area >= 0.8 * lo && area <= 1.1 * hi, "area {area}");
            assert!(s.meta.small_areas.is_empty());
        }
    }

    #[test]
    fn small_discs_are_separate_components() {
        let p = GenParams {
            small_min: 4,
            seed: 11,
            ..GenParams::default()
        };
        for i in 0..10 {
            let s = generate_sample(&p, i).unwrap();
            assert_eq!(s.meta.small_areas.len(), 4);
            assert!(s.meta.small_areas.iter().all(|&a| (5..=29).contains(&a)));
        }
        let p = GenParams {
            dims: 3,
            size: 32,
            depth: 16,
            small_min: 3,
            seed: 1,
            ..GenParams::default()
        };
        let s = generate_sample(&p, 0).unwrap();
        assert_eq!(s.image.shape(), &[1, 16, 32, 32]);
        assert_eq!(s.meta.small_areas.len(), 3);
        assert!(s.meta.small_areas.iter().all(|&a| a <= SMALL_THRESHOLD_3D));
    }

    #[test]
    fn noiseless_image_tracks_mask() {
        let p = GenParams {
            blur_sigma: 0.0,
            noise: 0.0,
            seed: 2,
            ..GenParams::default()
        };
        let s = generate_sample(&p, 0).unwrap();
        for (&m, &v) in s.mask.data().iter().zip(s.image.data()) {
            if m != 0.0 {
                assert_eq!(v, 0.8 * m);
            }
        }
    }

    #[test]
    fn never_empty_unless_allowed() {
        let p = GenParams {
            large_prob: 0.0,
            small_max: 0,
            seed: 4,
            ..GenParams::default()
        };
        let s = generate_sample(&p, 0).unwrap();
        assert_eq!(s.meta.small_areas.len(), 1);
        let p = GenParams { allow_empty: true, ..p };
        let s = generate_sample(&p, 0).unwrap();
        assert!(s.mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_sizes_rejected() {
        for p in [
            GenParams {
                size: 60,
                ..GenParams::default()
            },
            GenParams {
                dims: 3,
                depth: 12,
                ..GenParams::default()
            },
            GenParams {
                small_max: 5,
                ..GenParams::default()
            },
        ] {
            assert!(matches!(p.validate(), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn pad_crop_round_trip_depth_50() {
        let mut rng = Rng::new(8);
        let n = 50 * 8 * 8;
        let t = Tensor::new(&[1, 50, 8, 8], (0..n).map(|_| rng.below(3) as f32).collect()).unwrap();
        let (p, pad) = pad_reflect(&t, 8).unwrap();
        assert_eq!(p.shape(), &[1, 56, 8, 8]);
        assert_eq!(pad, vec![6, 0, 0]);
        assert_eq!(p.get(&[0, 50, 3, 4]), t.get(&[0, 48, 3, 4]));
        assert_eq!(crop(&p, &[50, 8, 8]).unwrap(), t);
    }

    #[test]
    fn manifest_round_trip() {
        let text = "# seed=5\n# size=64\na\timages/a.kiut\tmasks/a.kiut\ttrain\nb\ti/b\tm/b\ttest\n";
        let m = DatasetManifest::parse(text, "/x").unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.param("seed"), Some("5"));
        assert_eq!(m.to_text(), text);
        assert!(DatasetManifest::parse("a\tb\tc\n", "/").is_err());
        assert!(DatasetManifest::parse("a\tb\tc\tval\n", "/").is_err());
    }
}
