//! `whittle-bandit`: index tables, value functions, policy simulations,
//! Thompson-sampling runs and property suites, driven by JSON configs.
//!
//! Exit codes: 0 success, 1 a verification suite failed, 2 usage or
//! configuration error.

pub mod config;
pub mod fixtures;
pub mod output;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;
use whittle_core::index::index;
use whittle_core::learning::run_learning_batch;
use whittle_core::sim::{run_batch, run_episode, BatchResult, Policy, SimConfig, SimulationTrace};
use whittle_core::value::{Threshold, ValueSolver};
use whittle_core::verify::{run_suite, Suite};
use whittle_core::{Belief, Criterion};

use config::{ConfigError, CriterionSpec, ExperimentConfig, SeedSpec};
use output::{line_chart, num, sibling, Series, Table};

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "WHITTLE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Usage(String),

    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Run(String),

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "whittle-bandit", version, about = "Whittle-index restless bandits for recommendation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Whittle index of every arm at each belief.
    Index {
        #[command(flatten)]
        common: Common,
        /// Beliefs to tabulate, comma-separated; overrides `index.beliefs`.
        #[arg(long, value_delimiter = ',')]
        pi: Option<Vec<f64>>,
    },
    /// Value function and optimal threshold of every arm at one subsidy.
    Value {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo comparison of policies.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Thompson-sampling parameter learning with regret diagnostics.
    Learn {
        #[command(flatten)]
        common: Common,
    },
    /// Property suites on a seeded battery of random arms.
    Verify {
        /// lipschitz, threshold, indexability, oracle, vanishing-discount or all.
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Discount factor; overrides the configured criterion.
    #[arg(long, conflicts_with = "average")]
    beta: Option<f64>,
    /// Use the average-reward criterion.
    #[arg(long)]
    average: bool,
    /// Also write an SVG chart to this path.
    #[arg(long)]
    svg: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seeds = Some(SeedSpec::List(vec![seed]));
        }
        if let Some(beta) = self.beta {
            cfg.criterion = Some(CriterionSpec::Discounted(beta));
        }
        if self.average {
            cfg.criterion = Some(CriterionSpec::Average);
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        Ok(cfg)
    }
}

/// Parses `args` (program name first), runs the command, writes reports to
/// `stdout` and diagnostics to `stderr`, and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(stderr, "error: {e}");
        return e.exit_code();
    }
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    // a pool built earlier in the same process keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Index { common, pi } => cmd_index(&common, pi, stdout),
        Command::Value { common } => cmd_value(&common, stdout),
        Command::Simulate { common } => cmd_simulate(&common, stdout),
        Command::Learn { common } => cmd_learn(&common, stdout),
        Command::Verify { suite, config, out } => cmd_verify(&suite, config.as_deref(), out.as_deref(), stdout),
    }
}

fn emit(table: &Table, stdout: &mut dyn Write) -> Result<()> {
    table
        .write_to(stdout)
        .map_err(|e| CliError::Io { path: PathBuf::from("<stdout>"), source: std::io::Error::other(e) })
}

fn save(table: &Table, path: &Path) -> Result<()> {
    table.write_file(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn save_svg(svg: &str, path: &Path) -> Result<()> {
    std::fs::write(path, svg).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn criterion_label(c: Criterion) -> String {
    match c {
        Criterion::Discounted(beta) => format!("discounted:{beta}"),
        Criterion::Average => "average".into(),
    }
}

fn cmd_index(common: &Common, pi: Option<Vec<f64>>, stdout: &mut dyn Write) -> Result<()> {
    let cfg = common.load()?;
    let arms = cfg.arm_models()?;
    let criterion = cfg.criterion()?;
    let beliefs = match pi {
        Some(p) => p,
        None => cfg
            .index
            .as_ref()
            .map(|s| s.beliefs.clone())
            .ok_or_else(|| CliError::Usage("no beliefs: pass --pi or set `index.beliefs`".into()))?,
    };
    if beliefs.is_empty() {
        return Err(CliError::Usage("no beliefs to tabulate".into()));
    }
    let mut table = Table::new(["arm", "kind", "pi", "criterion", "index", "regime"]);
    for &x in &beliefs {
        let b = Belief::new(x).map_err(|e| CliError::Usage(format!("--pi: {e}")))?;
        for (i, arm) in arms.iter().enumerate() {
            let r = index(arm, criterion, b).map_err(|e| CliError::Run(format!("arm {}: {e}", i + 1)))?;
            table.push(vec![
                (i + 1).to_string(),
                arm.kind().to_string(),
                num(x),
                criterion_label(criterion),
                num(r.w),
                r.regime.to_string(),
            ]);
        }
    }
    if let Some(out) = &cfg.output {
        save(&table, out)?;
    }
    emit(&table, stdout)
}

fn cmd_value(common: &Common, stdout: &mut dyn Write) -> Result<()> {
    let cfg = common.load()?;
    let arms = cfg.arm_models()?;
    let beta = match cfg.criterion()? {
        Criterion::Discounted(beta) => beta,
        Criterion::Average => {
            return Err(CliError::Usage("value: needs a discounted criterion (use --beta)".into()))
        }
    };
    let section = cfg
        .value
        .clone()
        .ok_or_else(|| ConfigError::Invalid { field: "value".into(), message: "missing field".into() })?;
    if !section.lambda.is_finite() {
        return Err(ConfigError::Invalid { field: "value.lambda".into(), message: "must be finite".into() }.into());
    }
    let mut values = Table::new(["arm", "pi", "v", "v_play", "v_idle", "action"]);
    let mut summary = Table::new(["arm", "kind", "beta", "lambda", "threshold", "iterations"]);
    for (i, arm) in arms.iter().enumerate() {
        let field = |e: &dyn std::fmt::Display| CliError::Run(format!("arm {}: {e}", i + 1));
        let solver = ValueSolver::new(*arm, beta, section.grid_size).map_err(|e| field(&e))?;
        let sol = solver
            .solve_policy_iteration(section.lambda, section.tolerance, None)
            .map_err(|e| field(&e))?;
        let table = solver.table(section.lambda, &sol.v);
        let threshold = match solver.threshold(section.lambda, section.tolerance, Some(&sol.v)) {
            Ok((t, _)) => match t.threshold {
                Threshold::Interior(x) => num(x),
                Threshold::AlwaysPlay => "always-play".into(),
                Threshold::NeverPlay => "never-play".into(),
            },
            Err(e) => format!("none ({e})"),
        };
        summary.push(vec![
            (i + 1).to_string(),
            arm.kind().to_string(),
            num(beta),
            num(section.lambda),
            threshold,
            sol.iterations.to_string(),
        ]);
        for j in 0..table.grid.len() {
            let action = if table.v_play[j] > table.v_idle[j] { "play" } else { "idle" };
            values.push(vec![
                (i + 1).to_string(),
                num(table.grid[j]),
                num(table.v[j]),
                num(table.v_play[j]),
                num(table.v_idle[j]),
                action.into(),
            ]);
        }
    }
    if let Some(out) = &cfg.output {
        save(&values, out)?;
    }
    emit(&summary, stdout)
}

/// Traces of one policy for every configured seed, in seed order.
fn policy_traces(cfg: &ExperimentConfig, policy: Policy) -> Result<(Vec<SimulationTrace>, usize)> {
    match cfg.generator_spec()? {
        Some(generator) => {
            let n = generator.arms();
            let beliefs = cfg.beliefs(n, None)?;
            let criterion = cfg.criterion()?;
            let horizon = cfg.horizon()?;
            let seeds = cfg.seeds()?;
            let traces = seeds
                .par_iter()
                .map(|&seed| {
                    let arms = generator.generate_for_seed(seed).map_err(|e| CliError::Run(e.to_string()))?;
                    let sim = SimConfig {
                        arms,
                        initial_beliefs: beliefs.clone(),
                        criterion,
                        policy,
                        horizon,
                        seeds: vec![seed],
                    };
                    run_episode(&sim, seed).map_err(|e| CliError::Run(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((traces, n))
        }
        None => {
            let sim = cfg.sim_config(policy)?;
            let traces = sim
                .seeds
                .par_iter()
                .map(|&seed| run_episode(&sim, seed).map_err(|e| CliError::Run(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            Ok((traces, sim.arms.len()))
        }
    }
}

fn cmd_simulate(common: &Common, stdout: &mut dyn Write) -> Result<()> {
    let cfg = common.load()?;
    let policies = cfg.policies()?;
    let horizon = cfg.horizon()?;
    let mut steps = Table::new(["run_id", "seed", "t", "policy", "arm", "reward", "cumulative"]);
    let mut batches: Vec<BatchResult> = Vec::new();
    let mut arms = 0;
    for &policy in &policies {
        let (traces, n) = policy_traces(&cfg, policy)?;
        arms = n;
        if cfg.output.is_some() {
            for tr in &traces {
                for t in 0..tr.chosen.len() {
                    steps.push(vec![
                        format!("{policy}-{}", tr.seed),
                        tr.seed.to_string(),
                        (t + 1).to_string(),
                        policy.to_string(),
                        (tr.chosen[t] + 1).to_string(),
                        tr.rewards[t].to_string(),
                        tr.cumulative[t].to_string(),
                    ]);
                }
            }
        }
        batches.push(BatchResult::from_traces(policy, &traces, horizon, n));
    }
    let mut header: Vec<String> =
        ["policy", "seeds", "horizon", "mean_final", "stderr_final"].map(String::from).to_vec();
    header.extend((1..=arms).map(|i| format!("plays_{i}")));
    let mut summary = Table::new(header);
    for b in &batches {
        let mut row = vec![
            b.policy.to_string(),
            b.seeds.len().to_string(),
            horizon.to_string(),
            num(b.final_mean()),
            num(b.final_stderr()),
        ];
        row.extend(b.mean_play_counts.iter().map(|&c| num(c)));
        summary.push(row);
    }
    if let Some(out) = &cfg.output {
        save(&steps, out)?;
        save(&summary, &sibling(out, "summary"))?;
    }
    if let Some(path) = &common.svg {
        let series: Vec<Series<'_>> =
            batches.iter().map(|b| Series { label: b.policy.name(), values: &b.mean }).collect();
        save_svg(&line_chart("Mean cumulative reward", "cumulative reward", &series), path)?;
    }
    emit(&summary, stdout)
}

fn cmd_learn(common: &Common, stdout: &mut dyn Write) -> Result<()> {
    let cfg = common.load()?;
    let learning = cfg.learning_config()?;
    let report = run_learning_batch(&learning).map_err(|e| CliError::Run(e.to_string()))?;
    let random = run_batch(&SimConfig {
        arms: learning.truth.clone(),
        initial_beliefs: learning.initial(),
        criterion: learning.criterion,
        policy: Policy::UniformRandom,
        horizon: learning.horizon,
        seeds: learning.seeds.clone(),
    })
    .map_err(|e| CliError::Run(e.to_string()))?;
    let oracle_final = report.oracle_mean.last().copied().unwrap_or(0.0);
    let random_regret = oracle_final - random.final_mean();
    let n = learning.truth.len();
    let policy = learning.base_policy;

    let mut header: Vec<String> = [
        "horizon",
        "seeds",
        "final_regret",
        "final_regret_stderr",
        "random_policy_regret",
        "mean_mismatch_steps",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=n).map(|i| format!("true_mass_{i}")));
    let mut summary = Table::new(header);
    let mut row = vec![
        learning.horizon.to_string(),
        learning.seeds.len().to_string(),
        num(report.final_regret()),
        num(report.regret_stderr.last().copied().unwrap_or(0.0)),
        num(random_regret),
        num(report.mismatch_mean.last().copied().unwrap_or(0.0)),
    ];
    row.extend(report.final_true_mass().iter().map(|&m| num(m)));
    if report.true_mass_mean.is_empty() {
        row.extend(std::iter::repeat_n(String::new(), n));
    }
    summary.push(row);

    if let Some(out) = &cfg.output {
        let mut header: Vec<String> = [
            "run_id",
            "seed",
            "t",
            "policy",
            "arm",
            "reward",
            "cumulative",
            "oracle_cumulative",
            "regret",
            "mismatch",
            "mismatch_count",
        ]
        .map(String::from)
        .to_vec();
        header.extend((1..=n).map(|i| format!("true_mass_{i}")));
        let mut steps = Table::new(header);
        for (run, oracle) in report.runs.iter().zip(&report.oracle_runs) {
            for t in 0..run.chosen.len() {
                let mut row = vec![
                    format!("learn-{}", run.seed),
                    run.seed.to_string(),
                    (t + 1).to_string(),
                    policy.to_string(),
                    (run.chosen[t] + 1).to_string(),
                    run.rewards[t].to_string(),
                    run.cumulative[t].to_string(),
                    oracle.cumulative[t].to_string(),
                    (oracle.cumulative[t] as i64 - run.cumulative[t] as i64).to_string(),
                    u8::from(run.mismatch[t]).to_string(),
                    run.mismatch_count[t].to_string(),
                ];
                row.extend(run.true_mass[t].iter().map(|&m| num(m)));
                steps.push(row);
            }
        }
        save(&steps, out)?;

        let mut header: Vec<String> =
            ["t", "regret_mean", "regret_stderr", "mismatch_mean"].map(String::from).to_vec();
        header.extend((1..=n).map(|i| format!("true_mass_{i}")));
        let mut series = Table::new(header);
        for t in 0..learning.horizon {
            let mut row = vec![
                (t + 1).to_string(),
                num(report.regret_mean[t]),
                num(report.regret_stderr[t]),
                num(report.mismatch_mean[t]),
            ];
            row.extend(report.true_mass_mean[t].iter().map(|&m| num(m)));
            series.push(row);
        }
        save(&series, &sibling(out, "series"))?;
        save(&summary, &sibling(out, "summary"))?;
    }
    if let Some(path) = &common.svg {
        let s = [Series { label: "learner regret", values: &report.regret_mean }];
        save_svg(&line_chart("Expected cumulative regret", "regret", &s), path)?;
    }
    emit(&summary, stdout)
}

fn cmd_verify(suite: &str, config: Option<&Path>, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let suite: Suite = suite.parse().map_err(CliError::Usage)?;
    let cfg = match config {
        Some(path) => ExperimentConfig::load(path)?.verify_config()?,
        None => ExperimentConfig::empty().verify_config()?,
    };
    let outcomes = run_suite(suite, &cfg);
    for o in &outcomes {
        writeln!(stdout, "{o}").map_err(|source| CliError::Io { path: "<stdout>".into(), source })?;
    }
    if let Some(out) = out {
        let mut table = Table::new(["check", "passed", "detail"]);
        for o in &outcomes {
            table.push(vec![o.name.clone(), o.passed.to_string(), o.detail.clone()]);
        }
        save(&table, out)?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} checks failed", outcomes.len())));
    }
    Ok(())
}
