use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use xgate::gradcheck::{default_activation_specs, default_x_grid, run_default, GradChecker};
use xgate::nanonet::{load_checkpoint, save_checkpoint, AlphaMode, BlockKind, NetConfig, RangeChoice};
use xgate::{act_backward, GateKind};

use crate::opts::NetArgs;
use crate::report::{alpha_stats, mean_stderr, num, Table};
use crate::runs::{run_all, RunOutcome};
use crate::CliError;

/// Range value of the fixed-symmetric ablation row.
pub const DEFAULT_FIXED_ALPHA: f64 = 0.32;

#[derive(Args, Debug, Default)]
pub struct GradcheckArgs {
    /// Comma-separated gate kinds: arctan, gausscdf, sigmoid, threshold
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    /// Check against a deliberately wrong backward pass; the check must fail
    #[arg(long)]
    pub corrupt_demo: bool,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Comma-separated fixed range values
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub alpha: Vec<f64>,
}

#[derive(Args, Debug, Default)]
pub struct AblateArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Range value of the fixed-symmetric variant
    #[arg(long, default_value_t = DEFAULT_FIXED_ALPHA, allow_negative_numbers = true)]
    pub fixed_alpha: f64,
}

#[derive(Args, Debug, Default)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output CSV file
    #[arg(long)]
    pub out: PathBuf,
}

fn io(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<(), CliError> {
    out.write_fmt(text).map_err(|e| CliError::Run(xgate::Error::io("<stdout>", e)))
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let gates: Vec<GateKind> = match &args.kinds {
        None => GateKind::ALL.to_vec(),
        Some(list) => list
            .iter()
            .map(|k| k.parse::<GateKind>().map_err(|e| CliError::Usage(e.to_string())))
            .collect::<Result<_, _>>()?,
    };
    let report = if args.corrupt_demo {
        GradChecker::default().activations_against(&default_activation_specs(&gates), &default_x_grid(), |s, x, c| {
            let mut g = act_backward(s, x, c)?;
            g.d_input += 0.01;
            Ok(g)
        })?
    } else {
        run_default(&gates)?
    };
    io(out, format_args!("{report}"))?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Check("gradient check failed".into()))
    }
}

fn seeded(cfg: &NetConfig, seeds: &[u64]) -> Vec<NetConfig> {
    seeds
        .iter()
        .map(|&seed| NetConfig { seed, ..cfg.clone() })
        .collect()
}

fn train_table(run: &RunOutcome) -> Table {
    let mut t = Table::new("train", &["iteration", "loss", "lr", "perplexity"]);
    for r in &run.records {
        t.row([r.iteration.to_string(), num(r.loss), num(r.lr), num(r.loss.exp())]);
    }
    t
}

fn alpha_table(run: &RunOutcome) -> Table {
    let mut t = Table::new("alpha", &["iteration", "layer", "alpha_mean", "alpha_min", "alpha_max"]);
    for r in &run.records {
        for (layer, a) in r.alpha.iter().enumerate() {
            let (mean, min, max) = alpha_stats(a);
            t.row([r.iteration.to_string(), layer.to_string(), num(mean), num(min), num(max)]);
        }
    }
    t
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = args.net.net_config()?;
    let seeds = args.net.seeds(&cfg)?;
    let corpus = args.net.corpus(cfg.seq_len)?;
    let dir = args.net.out_dir()?;
    let runs = run_all(&seeded(&cfg, &seeds), &corpus)?;
    let mut summary = Table::new(
        "train-summary",
        &["activation", "seed", "status", "loss_mean", "loss_stderr", "perplexity"],
    );
    let mut means = Vec::new();
    let mut first_error = None;
    for run in runs {
        let seed = run.config.seed;
        train_table(&run).save(&dir.join(format!("train_seed{seed}.csv")))?;
        alpha_table(&run).save(&dir.join(format!("alpha_seed{seed}.csv")))?;
        let (mean, se) = run.tail();
        summary.row([
            cfg.block.to_string(),
            seed.to_string(),
            run.status(),
            num(mean),
            num(se),
            num(mean.exp()),
        ]);
        io(
            out,
            format_args!("{} seed {seed}: {}, last-5 loss {mean:.4} ± {se:.4}\n", cfg.block, run.status()),
        )?;
        match run.result {
            Ok(model) => {
                save_checkpoint(&model, dir.join(format!("checkpoint_seed{seed}.xgat")))?;
                means.push(mean);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let (mean, se) = mean_stderr(&means);
    summary.row([cfg.block.to_string(), "all".into(), format!("{} seeds", means.len()), num(mean), num(se), num(mean.exp())]);
    summary.save(&dir.join("summary.csv"))?;
    io(out, format_args!("{}: mean last-5 loss {mean:.4} ± {se:.4}, perplexity {:.3}\n", cfg.block, mean.exp()))?;
    match first_error {
        Some(e) => Err(CliError::Run(e)),
        None => Ok(()),
    }
}

/// The block a fixed-range sweep trains: a plain activation becomes its symmetric variant.
pub fn sweep_block(block: BlockKind) -> BlockKind {
    if block.range == RangeChoice::Standard {
        block.with_range(RangeChoice::Symmetric)
    } else {
        block
    }
}

pub fn cmd_sweep_alpha(args: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(a) = args.alpha.iter().find(|a| !a.is_finite()) {
        return Err(CliError::Usage(format!("--alpha values must be finite, got {a}")));
    }
    let base = args.net.net_config()?;
    let seeds = args.net.seeds(&base)?;
    let corpus = args.net.corpus(base.seq_len)?;
    let dir = args.net.out_dir()?;
    let block = sweep_block(base.block);
    let configs: Vec<NetConfig> = args
        .alpha
        .iter()
        .flat_map(|&a| {
            let cfg = NetConfig {
                block,
                alpha: AlphaMode::Fixed(a),
                ..base.clone()
            };
            seeded(&cfg, &seeds)
        })
        .collect();
    let runs = run_all(&configs, &corpus)?;
    let name = block.to_string();
    let mut rows = Table::new("sweep", &["activation", "alpha", "seed", "iteration", "loss", "lr"]);
    let mut summary = Table::new(
        "sweep-summary",
        &["activation", "alpha", "seed", "status", "loss_mean", "loss_stderr"],
    );
    let mut best: Option<(f64, f64)> = None;
    for (i, &alpha) in args.alpha.iter().enumerate() {
        let cell = &runs[i * seeds.len()..(i + 1) * seeds.len()];
        let mut means = Vec::new();
        for run in cell {
            for r in &run.records {
                rows.row([
                    name.clone(),
                    num(alpha),
                    run.config.seed.to_string(),
                    r.iteration.to_string(),
                    num(r.loss),
                    num(r.lr),
                ]);
            }
            let (mean, se) = run.tail();
            summary.row([name.clone(), num(alpha), run.config.seed.to_string(), run.status(), num(mean), num(se)]);
            if run.ok() {
                means.push(mean);
            }
        }
        let failed = cell.len() - means.len();
        let (mean, se) = mean_stderr(&means);
        let status = if failed == 0 { "ok".to_string() } else { format!("{failed} failed") };
        summary.row([name.clone(), num(alpha), "all".into(), status.clone(), num(mean), num(se)]);
        io(out, format_args!("{name} alpha {alpha}: last-5 loss {mean:.4} ± {se:.4} ({status})\n"))?;
        if failed == 0 && best.is_none_or(|(_, m)| mean < m) {
            best = Some((alpha, mean));
        }
    }
    rows.save(&dir.join("sweep.csv"))?;
    summary.save(&dir.join("sweep_summary.csv"))?;
    match best {
        Some((a, m)) => io(out, format_args!("best fixed alpha: {a} (last-5 loss {m:.4})\n")),
        None => Err(CliError::Check("every sweep cell failed".into())),
    }
}

/// The seven ablation rows: name, range and how α is treated.
pub fn ablation_variants(fixed_alpha: f64) -> Vec<(&'static str, RangeChoice, AlphaMode)> {
    vec![
        ("standard", RangeChoice::Standard, AlphaMode::Trainable),
        ("sym", RangeChoice::Symmetric, AlphaMode::Trainable),
        ("sym-fixed", RangeChoice::Symmetric, AlphaMode::Fixed(fixed_alpha)),
        ("min", RangeChoice::MinOnly, AlphaMode::Trainable),
        ("max", RangeChoice::MaxOnly, AlphaMode::Trainable),
        ("asym", RangeChoice::Asymmetric, AlphaMode::Trainable),
        ("chan", RangeChoice::PerChannel, AlphaMode::Trainable),
    ]
}

pub fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !args.fixed_alpha.is_finite() {
        return Err(CliError::Usage(format!("--fixed-alpha must be finite, got {}", args.fixed_alpha)));
    }
    let base = args.net.net_config()?;
    let seeds = args.net.seeds(&base)?;
    let corpus = args.net.corpus(base.seq_len)?;
    let dir = args.net.out_dir()?;
    let variants = ablation_variants(args.fixed_alpha);
    let configs: Vec<NetConfig> = variants
        .iter()
        .flat_map(|&(_, range, alpha)| {
            let cfg = NetConfig {
                block: base.block.with_range(range),
                alpha,
                ..base.clone()
            };
            seeded(&cfg, &seeds)
        })
        .collect();
    let runs = run_all(&configs, &corpus)?;
    let mut rows = Table::new(
        "ablate",
        &["variant", "activation", "alpha_mode", "seed", "status", "loss_mean", "loss_stderr", "perplexity"],
    );
    let mut summary = Table::new(
        "ablate-summary",
        &["variant", "activation", "alpha_mode", "seeds", "failed", "loss_mean", "loss_stderr", "perplexity"],
    );
    let mut alphas = Table::new("ablate-alpha", &["variant", "seed", "layer", "alpha_mean", "alpha_min", "alpha_max"]);
    let mut failures = 0;
    for (i, &(variant, _, mode)) in variants.iter().enumerate() {
        let cell = &runs[i * seeds.len()..(i + 1) * seeds.len()];
        let activation = cell[0].config.block.to_string();
        let mut means = Vec::new();
        for run in cell {
            let seed = run.config.seed.to_string();
            let (mean, se) = run.tail();
            rows.row([
                variant.to_string(),
                activation.clone(),
                mode.to_string(),
                seed.clone(),
                run.status(),
                num(mean),
                num(se),
                num(mean.exp()),
            ]);
            if let Ok(model) = &run.result {
                means.push(mean);
                for (layer, a) in model.alphas().iter().enumerate() {
                    let (am, lo, hi) = alpha_stats(a);
                    alphas.row([variant.to_string(), seed.clone(), layer.to_string(), num(am), num(lo), num(hi)]);
                }
            }
        }
        let failed = cell.len() - means.len();
        failures += failed;
        let (mean, se) = mean_stderr(&means);
        summary.row([
            variant.to_string(),
            activation.clone(),
            mode.to_string(),
            cell.len().to_string(),
            failed.to_string(),
            num(mean),
            num(se),
            num(mean.exp()),
        ]);
        io(out, format_args!("{variant:<10} {activation:<14} last-5 loss {mean:.4} ± {se:.4}\n"))?;
    }
    rows.save(&dir.join("ablate.csv"))?;
    summary.save(&dir.join("ablate_summary.csv"))?;
    alphas.save(&dir.join("ablate_alpha.csv"))?;
    if failures > 0 {
        return Err(CliError::Check(format!("{failures} ablation runs failed")));
    }
    Ok(())
}

pub fn cmd_export_alpha(args: &ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint)?;
    let mut t = Table::new("alpha-export", &["layer", "param", "alpha"]);
    let mut n = 0;
    for (layer, a) in model.alphas().iter().enumerate() {
        for (param, v) in a.iter().enumerate() {
            t.row([layer.to_string(), param.to_string(), num(*v)]);
            n += 1;
        }
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| xgate::Error::io(parent, e))?;
    }
    t.save(&args.out)?;
    io(out, format_args!("wrote {n} rows to {}\n", args.out.display()))
}
