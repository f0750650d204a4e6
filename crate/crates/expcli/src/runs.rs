use rayon::prelude::*;
use xgate::dataio::Corpus;
use xgate::nanonet::{train, Model, NetConfig, TrainRecord};

use crate::report::{mean_stderr, tail_losses};
use crate::CliError;

/// Caps how many independent runs execute at once.
pub const THREADS_ENV: &str = "XGATE_THREADS";

/// One training run: everything logged, plus the model or the error that stopped it.
pub struct RunOutcome {
    pub config: NetConfig,
    pub records: Vec<TrainRecord>,
    pub result: xgate::Result<Model>,
}

impl RunOutcome {
    pub fn status(&self) -> String {
        match &self.result {
            Ok(_) => "ok".into(),
            Err(xgate::Error::NonFiniteLoss { iteration, .. }) => format!("failed at iteration {iteration}"),
            Err(e) => format!("failed: {e}"),
        }
    }

    pub fn ok(&self) -> bool {
        self.result.is_ok()
    }

    /// Mean and standard error of the last five logged losses.
    pub fn tail(&self) -> (f64, f64) {
        if !self.ok() {
            return (f64::NAN, f64::NAN);
        }
        mean_stderr(&tail_losses(&self.records))
    }
}

pub fn run_one(config: &NetConfig, corpus: &Corpus) -> RunOutcome {
    let mut records = Vec::new();
    let result = train(config, corpus, &mut |r| {
        records.push(r.clone());
        Ok(())
    });
    RunOutcome {
        config: config.clone(),
        records,
        result,
    }
}

fn thread_cap() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v} is not a thread count"))),
    }
}

/// Runs every config, in parallel up to the thread cap. Outcomes keep input order.
pub fn run_all(configs: &[NetConfig], corpus: &Corpus) -> Result<Vec<RunOutcome>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap()?)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    Ok(pool.install(|| configs.par_iter().map(|c| run_one(c, corpus)).collect()))
}
