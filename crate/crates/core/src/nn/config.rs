//! Model configuration and its flat `key=value` file format.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Architecture variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Undercomplete (max-pooling encoder) branch, no skips.
    Uc,
    /// Overcomplete (upsampling encoder) branch, no skips.
    Oc,
    /// Undercomplete branch with skips, a small U-Net.
    UcSk,
    /// Overcomplete branch with skips, Kite-Net.
    OcSk,
    /// Both branches with skips, summed before the head, no fusion blocks.
    UcOcSk,
    Kiunet,
    ResKiunet,
    DenseKiunet,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Uc,
        Variant::Oc,
        Variant::UcSk,
        Variant::OcSk,
        Variant::UcOcSk,
        Variant::Kiunet,
        Variant::ResKiunet,
        Variant::DenseKiunet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Uc => "UC",
            Variant::Oc => "OC",
            Variant::UcSk => "UC_SK",
            Variant::OcSk => "OC_SK",
            Variant::UcOcSk => "UC_OC_SK",
            Variant::Kiunet => "KIUNET",
            Variant::ResKiunet => "RES_KIUNET",
            Variant::DenseKiunet => "DENSE_KIUNET",
        }
    }

    pub fn has_under(self) -> bool {
        !matches!(self, Variant::Oc | Variant::OcSk)
    }

    pub fn has_over(self) -> bool {
        !matches!(self, Variant::Uc | Variant::UcSk)
    }

    pub fn has_skips(self) -> bool {
        !matches!(self, Variant::Uc | Variant::Oc)
    }

    pub fn crfb_enabled(self) -> bool {
        matches!(self, Variant::Kiunet | Variant::ResKiunet | Variant::DenseKiunet)
    }

    pub fn block(self) -> Block {
        match self {
            Variant::ResKiunet => Block::Residual,
            Variant::DenseKiunet => Block::Dense,
            _ => Block::Plain,
        }
    }

    pub fn valid_names() -> String {
        Variant::ALL.map(|v| v.name()).join(", ")
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '+'], "_");
        Variant::ALL.into_iter().find(|v| v.name() == norm).ok_or_else(|| {
            Error::validation(format!(
                "unknown variant '{s}'; valid variants: {}",
                Variant::valid_names()
            ))
        })
    }
}

/// Extra layers applied after each level's convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Plain,
    Residual,
    Dense,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// 2 or 3.
    pub dims: usize,
    pub variant: Variant,
    pub levels: usize,
    /// Width of each level, shallowest first.
    pub channels: Vec<usize>,
    pub in_channels: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dims: 2,
            variant: Variant::Kiunet,
            levels: 3,
            channels: vec![32, 64, 128],
            in_channels: 1,
            num_classes: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(dims: usize, variant: Variant) -> Self {
        ModelConfig {
            dims,
            variant,
            num_classes: if dims == 3 { 2 } else { 1 },
            ..Default::default()
        }
    }

    pub fn with_channels(mut self, channels: &[usize]) -> Self {
        self.levels = channels.len();
        self.channels = channels.to_vec();
        self
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn crfb_enabled(&self) -> bool {
        self.variant.crfb_enabled()
    }

    /// Every spatial extent of the input must be a multiple of this.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.dims != 2 && self.dims != 3 {
            bad.push(format!("dims must be 2 or 3, got {}", self.dims));
        }
        if self.levels == 0 {
            bad.push("levels must be at least 1".to_string());
        }
        if self.channels.len() != self.levels {
            bad.push(format!(
                "channels lists {} widths but levels is {}",
                self.channels.len(),
                self.levels
            ));
        }
        if self.channels.contains(&0) {
            bad.push("channel widths must be positive".to_string());
        }
        if self.in_channels == 0 {
            bad.push("in_channels must be positive".to_string());
        }
        if self.num_classes == 0 {
            bad.push("num_classes must be positive".to_string());
        }
        if self.dims == 2 && self.num_classes != 1 {
            bad.push(format!(
                "2D models have a single sigmoid output, got num_classes={}",
                self.num_classes
            ));
        }
        if self.dims == 3 && self.num_classes < 2 {
            bad.push("3D models emit softmax logits and need num_classes >= 2".to_string());
        }
        if self.variant == Variant::DenseKiunet {
            if let Some(c) = self.channels.iter().find(|&&c| c % 4 != 0) {
                bad.push(format!("dense blocks need widths divisible by 4, got {c}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid model config: {}", bad.join("; "))))
        }
    }

    /// Parses the flat `key=value` format. Blank lines and `#` comments are
    /// ignored; unspecified keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut classes = None;
        let mut levels = None;
        let mut channels = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("config line {}: expected key=value, got '{raw}'", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| {
                    Error::validation(format!("config line {}: '{key}' needs an integer, got '{v}'", n + 1))
                })
            };
            match key {
                "dims" => cfg.dims = int(value)?,
                "variant" => cfg.variant = value.parse()?,
                "levels" => levels = Some(int(value)?),
                "channels" => channels = Some(value.split(',').map(|c| int(c.trim())).collect::<Result<Vec<_>>>()?),
                "in_channels" => cfg.in_channels = int(value)?,
                "num_classes" => classes = Some(int(value)?),
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| Error::validation(format!("config line {}: bad seed '{value}'", n + 1)))?
                }
                other => {
                    return Err(Error::validation(format!(
                        "config line {}: unknown key '{other}'",
                        n + 1
                    )))
                }
            }
        }
        match (levels, channels) {
            (Some(l), Some(c)) => {
                cfg.levels = l;
                cfg.channels = c;
            }
            (None, Some(c)) => {
                cfg.levels = c.len();
                cfg.channels = c;
            }
            (Some(l), None) => {
                cfg.levels = l;
                cfg.channels = (0..l).map(|i| 32 << i).collect();
            }
            (None, None) => {}
        }
        cfg.num_classes = classes.unwrap_or(if cfg.dims == 3 { 2 } else { 1 });
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { offset: 0, source: e }.in_file(path))?;
        ModelConfig::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn to_text(&self) -> String {
        let ch: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        format!(
            "dims={}\nvariant={}\nlevels={}\nchannels={}\nin_channels={}\nnum_classes={}\nseed={}\n",
            self.dims,
            self.variant,
            self.levels,
            ch.join(","),
            self.in_channels,
            self.num_classes,
            self.seed
        )
    }
}
