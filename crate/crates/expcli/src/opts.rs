use std::path::{Path, PathBuf};

use clap::Args;
use xgate::dataio::{load_corpus, Corpus};
use xgate::nanonet::{BlockKind, NetConfig, RangeChoice};
use xgate::GluOrder;

use crate::CliError;

/// Share of the corpus held out for validation.
pub const VAL_FRACTION: f64 = 0.1;

/// Model and training flags shared by the training commands.
///
/// Precedence: flags, then `--config` file, then built-in defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct NetArgs {
    /// key = value file applied before the flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Self-gated activation: atlu, gelu, silu, relu; an `x` prefix selects the symmetric range
    #[arg(long, conflicts_with = "glu")]
    pub activation: Option<String>,
    /// Gated unit: glu, atglu, geglu, swiglu, reglu, optionally with order digit and `x` prefix
    #[arg(long)]
    pub glu: Option<String>,
    /// GLU order, 1 or 2
    #[arg(long)]
    pub order: Option<u8>,
    /// Range parameterization: std, sym, min, max, asym, chan
    #[arg(long)]
    pub range: Option<String>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Global gradient-norm clip; 0 disables. Defaults to 0 for self-gated and 0.1 for gated blocks
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Comma-separated seeds; defaults to the config's `seed`
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Training text; any file, read as bytes
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl NetArgs {
    /// Resolves the block from `--activation`/`--glu`, `--order` and `--range`.
    pub fn block(&self, base: BlockKind) -> Result<BlockKind, CliError> {
        let mut block = match (&self.activation, &self.glu) {
            (Some(a), _) => {
                let k: BlockKind = a.parse().map_err(|e| usage(format!("{e}")))?;
                if k.is_gated() {
                    return Err(usage(format!("`{a}` is a gated unit; pass it with --glu")));
                }
                k
            }
            (None, Some(g)) => {
                let k: BlockKind = g.parse().map_err(|e| usage(format!("{e}")))?;
                if !k.is_gated() {
                    return Err(usage(format!("`{g}` is not a gated unit; pass it with --activation")));
                }
                k
            }
            (None, None) => base,
        };
        if let Some(o) = self.order {
            let order = GluOrder::from_number(o).map_err(|e| usage(format!("{e}")))?;
            if !block.is_gated() {
                return Err(usage("--order applies to gated units only"));
            }
            block = block.with_order(order);
        }
        if let Some(r) = &self.range {
            let r: RangeChoice = r.parse().map_err(|e| usage(format!("{e}")))?;
            block = block.with_range(r);
        }
        Ok(block)
    }

    pub fn net_config(&self) -> Result<NetConfig, CliError> {
        let mut cfg = NetConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
        cfg.block = self.block(cfg.block)?;
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.depth, self.depth);
        set(&mut cfg.model_dim, self.dim);
        set(&mut cfg.head_dim, self.head_dim);
        set(&mut cfg.seq_len, self.seq_len);
        set(&mut cfg.iterations, self.iters);
        set(&mut cfg.batch_size, self.batch);
        set(&mut cfg.log_every, self.log_every);
        if let Some(lr) = self.lr {
            cfg.lr_peak = lr;
        }
        if let Some(c) = self.clip {
            cfg.grad_clip = Some(c);
        }
        if self.head_dim.is_none() && cfg.model_dim > 0 && cfg.model_dim < cfg.head_dim {
            cfg.head_dim = cfg.model_dim;
        }
        cfg.validate().map_err(|e| usage(format!("{e}")))?;
        Ok(cfg)
    }

    pub fn seeds(&self, cfg: &NetConfig) -> Result<Vec<u64>, CliError> {
        match &self.seeds {
            None => Ok(vec![cfg.seed]),
            Some(s) if s.is_empty() => Err(usage("--seeds must list at least one seed")),
            Some(s) => Ok(s.clone()),
        }
    }

    pub fn corpus(&self, seq_len: usize) -> Result<Corpus, CliError> {
        let path = self
            .corpus
            .as_ref()
            .ok_or_else(|| usage("--corpus <path> is required"))?;
        Ok(load_corpus(path, VAL_FRACTION, seq_len)?)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| xgate::Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}
