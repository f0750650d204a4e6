use std::fmt;
use std::str::FromStr;

use crate::activations::RangeShape;
use crate::error::{Error, Result};
use crate::gatecore::GateKind;
use crate::glu::GluOrder;

/// Range parameterization chosen by name; the channel count comes from the block width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RangeChoice {
    Standard,
    Symmetric,
    MinOnly,
    MaxOnly,
    Asymmetric,
    PerChannel,
}

impl RangeChoice {
    pub const ALL: [RangeChoice; 6] = [
        RangeChoice::Standard,
        RangeChoice::Symmetric,
        RangeChoice::MinOnly,
        RangeChoice::MaxOnly,
        RangeChoice::Asymmetric,
        RangeChoice::PerChannel,
    ];

    pub fn shape(self, channels: usize) -> RangeShape {
        match self {
            RangeChoice::Standard => RangeShape::Standard,
            RangeChoice::Symmetric => RangeShape::Symmetric,
            RangeChoice::MinOnly => RangeShape::MinOnly,
            RangeChoice::MaxOnly => RangeShape::MaxOnly,
            RangeChoice::Asymmetric => RangeShape::Asymmetric,
            RangeChoice::PerChannel => RangeShape::PerChannel(channels),
        }
    }

    pub fn tag(self) -> &'static str {
        self.shape(0).tag()
    }
}

impl fmt::Display for RangeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for RangeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let long = match s {
            "standard" => "std",
            "symmetric" => "sym",
            "min_only" => "min",
            "max_only" => "max",
            "asymmetric" => "asym",
            "per_channel" => "chan",
            other => other,
        };
        RangeChoice::ALL
            .into_iter()
            .find(|r| r.tag() == long)
            .ok_or_else(|| Error::Config(format!("unknown range `{s}` (expected std, sym, min, max, asym or chan)")))
    }
}

/// Which MLP block a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockKind {
    pub gate: GateKind,
    /// `None` for a self-gated block.
    pub glu: Option<GluOrder>,
    pub range: RangeChoice,
}

const SELF_GATED: [(&str, GateKind); 4] = [
    ("atlu", GateKind::Arctan),
    ("gelu", GateKind::GaussCdf),
    ("silu", GateKind::Sigmoid),
    ("relu", GateKind::Threshold),
];

const GATED: [(&str, GateKind); 4] = [
    ("atglu", GateKind::Arctan),
    ("geglu", GateKind::GaussCdf),
    ("swiglu", GateKind::Sigmoid),
    ("reglu", GateKind::Threshold),
];

impl BlockKind {
    pub fn self_gated(gate: GateKind, range: RangeChoice) -> Self {
        BlockKind { gate, glu: None, range }
    }

    pub fn gated(gate: GateKind, order: GluOrder, range: RangeChoice) -> Self {
        BlockKind {
            gate,
            glu: Some(order),
            range,
        }
    }

    pub fn is_gated(&self) -> bool {
        self.glu.is_some()
    }

    pub fn with_range(self, range: RangeChoice) -> Self {
        BlockKind { range, ..self }
    }

    pub fn with_order(self, order: GluOrder) -> Self {
        BlockKind {
            glu: self.glu.map(|_| order),
            ..self
        }
    }

    /// Hidden width for a model of width `dim`: 4x for self-gated blocks, the
    /// multiple of 8 nearest to 8/3x for gated ones.
    pub fn hidden_dim(&self, dim: usize) -> usize {
        if self.is_gated() {
            (((8 * dim) as f64 / 24.0).round() as usize).max(1) * 8
        } else {
            4 * dim
        }
    }

    /// Global-norm clip used when the config does not set one.
    pub fn default_clip(&self) -> f64 {
        if self.is_gated() {
            0.1
        } else {
            0.0
        }
    }

    fn base_name(&self) -> String {
        match self.glu {
            None => SELF_GATED.iter().find(|(_, g)| *g == self.gate).unwrap().0.to_string(),
            Some(order) => {
                let stem = GATED.iter().find(|(_, g)| *g == self.gate).unwrap().0;
                format!("{stem}{}", order.as_number())
            }
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.range {
            RangeChoice::Standard => write!(f, "{}", self.base_name()),
            RangeChoice::Symmetric => write!(f, "x{}", self.base_name()),
            r => write!(f, "{}:{r}", self.base_name()),
        }
    }
}

/// Parses names such as `gelu`, `xatlu`, `swiglu1`, `xgeglu2`, `atlu:chan`.
///
/// A leading `x` selects the symmetric range; a `:tag` suffix picks any other
/// (`xgelu:chan` and `gelu:chan` are the same block).
/// `glu` is the sigmoid first-order unit; a gated name without an order digit
/// means second order (the usual GEGLU/SwiGLU/ReGLU).
impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, range) = match lower.split_once(':') {
            Some((n, r)) => (n.to_string(), Some(r.parse::<RangeChoice>()?)),
            None => (lower.clone(), None),
        };
        let unknown = || Error::Config(format!("unknown activation `{s}`"));
        let parse_plain = |n: &str| -> Option<BlockKind> {
            if let Some((_, g)) = SELF_GATED.iter().find(|(k, _)| *k == n) {
                return Some(BlockKind::self_gated(*g, RangeChoice::Standard));
            }
            if n == "glu" || n == "glu1" {
                return Some(BlockKind::gated(GateKind::Sigmoid, GluOrder::First, RangeChoice::Standard));
            }
            if n == "glu2" {
                return Some(BlockKind::gated(GateKind::Sigmoid, GluOrder::Second, RangeChoice::Standard));
            }
            for (stem, g) in GATED {
                if let Some(rest) = n.strip_prefix(stem) {
                    let order = match rest {
                        "" | "2" => GluOrder::Second,
                        "1" => GluOrder::First,
                        _ => return None,
                    };
                    return Some(BlockKind::gated(g, order, RangeChoice::Standard));
                }
            }
            None
        };
        let kind = match parse_plain(&name) {
            Some(k) => k,
            None => {
                let rest = name.strip_prefix('x').ok_or_else(unknown)?;
                if range == Some(RangeChoice::Standard) {
                    return Err(Error::Config(format!("`{s}`: the x prefix needs an expanded range")));
                }
                parse_plain(rest).ok_or_else(unknown)?.with_range(RangeChoice::Symmetric)
            }
        };
        Ok(match range {
            Some(r) => kind.with_range(r),
            None => kind,
        })
    }
}

/// How the range parameters of every block are treated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaMode {
    /// Starts at 0 and is updated by the optimizer.
    Trainable,
    /// Held at the given value for the whole run.
    Fixed(f64),
}

impl AlphaMode {
    pub fn initial(self) -> f64 {
        match self {
            AlphaMode::Trainable => 0.0,
            AlphaMode::Fixed(v) => v,
        }
    }

    pub fn is_trainable(self) -> bool {
        matches!(self, AlphaMode::Trainable)
    }
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaMode::Trainable => f.write_str("trainable"),
            AlphaMode::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "trainable" {
            return Ok(AlphaMode::Trainable);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("alpha must be `trainable` or a number, got `{s}`")))?;
        if !v.is_finite() {
            return Err(Error::Config(format!("alpha must be finite, got {v}")));
        }
        Ok(AlphaMode::Fixed(v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub depth: usize,
    pub model_dim: usize,
    pub head_dim: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub block: BlockKind,
    pub alpha: AlphaMode,
    pub lr_peak: f64,
    pub warmup_frac: f64,
    pub min_lr_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// `None` picks the block's default.
    pub grad_clip: Option<f64>,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub log_every: usize,
    pub zero_init_head: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            depth: 2,
            model_dim: 64,
            head_dim: 64,
            seq_len: 64,
            vocab_size: crate::dataio::BYTE_VOCAB,
            block: BlockKind::self_gated(GateKind::Arctan, RangeChoice::Symmetric),
            alpha: AlphaMode::Trainable,
            lr_peak: 2e-3,
            warmup_frac: 0.02,
            min_lr_ratio: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: None,
            iterations: 500,
            batch_size: 8,
            seed: 0,
            log_every: 1,
            zero_init_head: true,
        }
    }
}

const KEYS: [&str; 20] = [
    "depth",
    "dim",
    "head_dim",
    "seq_len",
    "vocab",
    "block",
    "alpha",
    "lr",
    "warmup_frac",
    "min_lr_ratio",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "clip",
    "iters",
    "batch",
    "seed",
    "log_every",
    "zero_init_head",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

impl NetConfig {
    pub fn grad_clip(&self) -> f64 {
        self.grad_clip.unwrap_or_else(|| self.block.default_clip())
    }

    pub fn hidden_dim(&self) -> usize {
        self.block.hidden_dim(self.model_dim)
    }

    pub fn n_heads(&self) -> usize {
        self.model_dim / self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 || self.model_dim == 0 || self.head_dim == 0 {
            return bad("depth, dim and head_dim must be positive".into());
        }
        if !self.model_dim.is_multiple_of(self.head_dim) {
            return bad(format!(
                "dim {} is not divisible by head_dim {}",
                self.model_dim, self.head_dim
            ));
        }
        if self.seq_len == 0 || self.batch_size == 0 || self.vocab_size == 0 {
            return bad("seq_len, batch and vocab must be positive".into());
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad(format!("warmup_frac must lie in (0, 1), got {}", self.warmup_frac));
        }
        if !(self.min_lr_ratio > 0.0 && self.min_lr_ratio <= 1.0) {
            return bad(format!("min_lr_ratio must lie in (0, 1], got {}", self.min_lr_ratio));
        }
        if !(self.lr_peak >= 0.0 && self.lr_peak.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr_peak));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c >= 0.0) {
                return bad(format!("clip must be non-negative, got {c}"));
            }
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        Ok(())
    }

    /// Sets one key. Keys match [`NetConfig::to_text`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "depth" => self.depth = parse_num(key, v)?,
            "dim" => self.model_dim = parse_num(key, v)?,
            "head_dim" => self.head_dim = parse_num(key, v)?,
            "seq_len" => self.seq_len = parse_num(key, v)?,
            "vocab" => self.vocab_size = parse_num(key, v)?,
            "block" => self.block = v.parse()?,
            "alpha" => self.alpha = v.parse()?,
            "lr" => self.lr_peak = parse_num(key, v)?,
            "warmup_frac" => self.warmup_frac = parse_num(key, v)?,
            "min_lr_ratio" => self.min_lr_ratio = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "clip" => {
                self.grad_clip = if v == "auto" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "iters" => self.iterations = parse_num(key, v)?,
            "batch" => self.batch_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "log_every" => self.log_every = parse_num(key, v)?,
            "zero_init_head" => self.zero_init_head = parse_num(key, v)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown config key `{other}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{raw}`", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<NetConfig> {
        let mut cfg = NetConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key on its own line; `from_text(to_text())` reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let clip = match self.grad_clip {
            Some(c) => c.to_string(),
            None => "auto".to_string(),
        };
        let values = [
            self.depth.to_string(),
            self.model_dim.to_string(),
            self.head_dim.to_string(),
            self.seq_len.to_string(),
            self.vocab_size.to_string(),
            self.block.to_string(),
            self.alpha.to_string(),
            self.lr_peak.to_string(),
            self.warmup_frac.to_string(),
            self.min_lr_ratio.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.eps.to_string(),
            self.weight_decay.to_string(),
            clip,
            self.iterations.to_string(),
            self.batch_size.to_string(),
            self.seed.to_string(),
            self.log_every.to_string(),
            self.zero_init_head.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
