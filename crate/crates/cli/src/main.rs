#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use abrlab::checks::{gradient_check, mpc_agreement};
use abrlab::config::ExperimentConfig;
use abrlab::eval::{
    compare, evaluate, provenance_line, reports_csv, reports_table, sweep_csv, sweep_table, threshold_sweep,
};
use abrlab::policy::{PolicyContext, PolicyRegistry};
use abrlab::sac::{curve_csv, train, SacAgent, StreamingEnv};
use abrlab::trace::{
    format_split, load_trace_dir, parse_split, preprocess_scale, split_corpus, synthetic_corpus, NetworkTrace,
    TraceError, DEFAULT_BANDWIDTH_FLOOR_MBPS,
};

#[derive(Parser)]
#[command(
    name = "abrlab",
    version,
    about = "Trace-driven ABR simulator with progressive playback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rescale a directory of traces to a target mean with Gaussian noise.
    Preprocess(PreprocessArgs),
    /// Write a synthetic trace corpus.
    SynthTraces(SynthArgs),
    /// Print the default experiment config.
    InitConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the SAC agent on the training split.
    Train(RunArgs),
    /// Evaluate one policy on the test split.
    Eval(EvalArgs),
    /// Evaluate several policies on identical offsets and rank them.
    Compare(CompareArgs),
    /// Evaluate a policy under a list of playback thresholds.
    SweepThreshold(SweepArgs),
    /// Run the MPC-vs-enumeration and gradient-check suites.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    target_mean: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_std: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH_FLOOR_MBPS)]
    floor: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 4.0)]
    mean: f64,
    #[arg(long, default_value_t = 0.5)]
    volatility: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides sac.train_steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides sac.eval_interval.
    #[arg(long)]
    eval_interval: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    policy: Option<String>,
    /// Agent checkpoint directory (required for sac).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Level for the fixed policy.
    #[arg(long, default_value_t = 0)]
    level: usize,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = ["bb".to_string(), "rate".to_string(), "mpc".to_string()])]
    policies: Vec<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.7, 0.8, 0.9, 1.0])]
    r0: Vec<f64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    level: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 3)]
    max_horizon: usize,
    #[arg(long, default_value_t = 50)]
    nets: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Problem with the invocation itself (exit code 1).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Numeric failure detected by the CLI itself (exit code 3).
#[derive(Debug)]
struct Numeric(String);

impl std::fmt::Display for Numeric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Numeric {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if cause.downcast_ref::<Numeric>().is_some() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<abrlab::Error>() {
            return if e.is_numeric() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Preprocess(a) => cmd_preprocess(&a).map(|n| println!("wrote {n} traces to {}", a.out.display())),
        Command::SynthTraces(a) => cmd_synth(&a),
        Command::InitConfig { out } => {
            let text = ExperimentConfig::default().to_toml();
            match out {
                Some(p) => write(&p, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::SweepThreshold(a) => cmd_sweep(&a),
        Command::OracleCheck(a) => cmd_oracle(&a),
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| abrlab::Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| abrlab::Error::io(path, e))?;
    Ok(())
}

fn cmd_preprocess(a: &PreprocessArgs) -> anyhow::Result<usize> {
    let corpus = load_trace_dir(&a.input).map_err(|e| abrlab::Error::io(&a.input, e))?;
    for (name, reason) in &corpus.failures {
        eprintln!("skipping {name}: {reason}");
    }
    if corpus.traces.is_empty() {
        return Err(abrlab::Error::from(TraceError::NoTraces(a.input.display().to_string())).into());
    }
    std::fs::create_dir_all(&a.out).map_err(|e| abrlab::Error::io(&a.out, e))?;
    let mut provenance = String::from("source,scale_factor,target_mean,noise_std,seed,floor\n");
    for (i, t) in corpus.traces.iter().enumerate() {
        let seed = a.seed.wrapping_add(i as u64);
        let scaled = preprocess_scale(t, a.target_mean, a.noise_std, seed, a.floor).map_err(abrlab::Error::from)?;
        write(&a.out.join(t.name()), &scaled.to_text())?;
        let _ = writeln!(
            provenance,
            "{},{:.6},{},{},{},{}",
            t.name(),
            a.target_mean / t.mean_bandwidth(),
            a.target_mean,
            a.noise_std,
            seed,
            a.floor
        );
    }
    write(&a.out.join("provenance.csv"), &provenance)?;
    Ok(corpus.traces.len())
}

fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    if a.count == 0 || !(a.mean > 0.0) || !(a.volatility >= 0.0) {
        return Err(usage("synth-traces needs count >= 1, mean > 0, volatility >= 0"));
    }
    for t in synthetic_corpus(a.count, a.mean, a.volatility, a.seed) {
        write(&a.out.join(t.name()), &t.to_text())?;
    }
    println!("wrote {} traces to {}", a.count, a.out.display());
    Ok(())
}

/// Resolved config plus the train/test split.
struct Setup {
    config: ExperimentConfig,
    hash: String,
    train: Vec<Arc<NetworkTrace>>,
    test: Vec<Arc<NetworkTrace>>,
    split_text: String,
}

fn setup(a: &RunArgs) -> anyhow::Result<Setup> {
    let mut config = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = &a.traces {
        config.trace_dir = t.clone();
    }
    if let Some(o) = &a.out {
        config.output_dir = o.clone();
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(s) = a.steps {
        config.sac.train_steps = s;
    }
    if let Some(s) = a.eval_interval {
        config.sac.eval_interval = s;
    }
    config.validate()?;
    if !config.trace_dir.is_dir() {
        return Err(abrlab::Error::Config(format!("trace directory {} not found", config.trace_dir.display())).into());
    }
    let corpus = load_trace_dir(&config.trace_dir).map_err(|e| abrlab::Error::io(&config.trace_dir, e))?;
    for (name, reason) in &corpus.failures {
        eprintln!("skipping {name}: {reason}");
    }
    let traces: Vec<Arc<NetworkTrace>> = corpus.traces.into_iter().map(Arc::new).collect();
    let (train, test) = match &config.split_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| abrlab::Error::io(path, e))?;
            let (tr, te) = parse_split(&text).map_err(abrlab::Error::from)?;
            let pick = |names: &[String]| -> anyhow::Result<Vec<Arc<NetworkTrace>>> {
                names
                    .iter()
                    .map(|n| {
                        traces.iter().find(|t| t.name() == n).cloned().ok_or_else(|| {
                            anyhow::Error::from(abrlab::Error::Config(format!("split names missing trace {n}")))
                        })
                    })
                    .collect()
            };
            (pick(&tr)?, pick(&te)?)
        }
        None => split_corpus(&traces, config.train_fraction, config.seed).map_err(abrlab::Error::from)?,
    };
    let split_text = format_split(
        &train.iter().map(|t| t.name()).collect::<Vec<_>>(),
        &test.iter().map(|t| t.name()).collect::<Vec<_>>(),
    );
    let hash = config.hash()?;
    Ok(Setup {
        config,
        hash,
        train,
        test,
        split_text,
    })
}

fn context(s: &Setup, checkpoint: Option<&Path>, needs_agent: bool, level: usize) -> anyhow::Result<PolicyContext> {
    let mut ctx = PolicyContext::new(Arc::new(s.config.quality()?), s.config.session.clone());
    ctx.bb = s.config.bb;
    ctx.mpc = s.config.mpc;
    ctx.rate_window = s.config.rate_window;
    ctx.seed = s.config.seed;
    ctx.fixed_level = level;
    match (needs_agent, checkpoint) {
        (true, None) => return Err(usage("policy sac needs --checkpoint")),
        (_, Some(dir)) => ctx.agent = Some(Arc::new(SacAgent::load(dir)?)),
        (false, None) => {}
    }
    Ok(ctx)
}

fn cmd_train(a: &RunArgs) -> anyhow::Result<()> {
    let s = setup(a)?;
    let out = s.config.output_dir.clone();
    write(&out.join("split.txt"), &s.split_text)?;
    let started = Instant::now();
    let result = train_inner(&s);
    let mut manifest = String::new();
    let _ = writeln!(manifest, "config_hash = \"{}\"", s.hash);
    let _ = writeln!(manifest, "seed = {}", s.config.seed);
    let _ = writeln!(manifest, "wall_time_s = {:.3}", started.elapsed().as_secs_f64());
    let _ = writeln!(manifest, "complete = {}", result.is_ok());
    if let Err(e) = &result {
        let _ = writeln!(manifest, "error = {:?}", format!("{e:#}"));
    }
    let _ = writeln!(manifest, "\n[config]\n{}", s.config.to_toml());
    write(&out.join("manifest.toml"), &manifest)?;
    let curve = result?;
    println!("{curve}");
    Ok(())
}

fn train_inner(s: &Setup) -> anyhow::Result<String> {
    let ctx = context(s, None, false, 0)?;
    let levels = ctx.quality.levels();
    let obs_dim = s.config.session.observation_len(levels);
    let mut agent = SacAgent::new(obs_dim, levels, s.config.sac.clone(), s.config.seed)?;
    let mut env = StreamingEnv::new(s.config.session.clone(), ctx.quality.clone(), s.train.clone())?;
    let registry = PolicyRegistry::with_builtins();
    let mut evaluate_agent = |ag: &SacAgent| -> abrlab::Result<f64> {
        let mut c = ctx.clone();
        c.agent = Some(Arc::new(ag.clone()));
        Ok(evaluate(&registry, "sac", &c, &s.test, s.config.seed)?
            .aggregate
            .total_qoe)
    };
    let curve = train(&mut agent, &mut env, &mut evaluate_agent, s.config.seed, None)?;
    let out = &s.config.output_dir;
    agent.save(&out.join("checkpoint"), &s.hash)?;
    let csv = provenance_line(&s.hash, s.config.seed) + &curve_csv(&curve);
    write(&out.join("curve.csv"), &csv)?;
    if curve.iter().any(|p| !p.eval_qoe.is_finite()) {
        return Err(Numeric("non-finite evaluation QoE in learning curve".into()).into());
    }
    Ok(csv)
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let s = setup(&a.run)?;
    let policy = a.policy.clone().unwrap_or_else(|| s.config.policy.clone());
    let registry = PolicyRegistry::with_builtins();
    if !registry.names().contains(&policy.as_str()) {
        return Err(usage(format!(
            "unknown policy {policy} (known: {})",
            registry.names().join(", ")
        )));
    }
    let ctx = context(&s, a.checkpoint.as_deref(), policy == "sac", a.level)?;
    let report = evaluate(&registry, &policy, &ctx, &s.test, s.config.seed)?;
    let reports = [report];
    write(
        &s.config.output_dir.join(format!("eval_{policy}.csv")),
        &reports_csv(&reports, &s.hash, s.config.seed),
    )?;
    print!("{}", reports_table(&reports));
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> anyhow::Result<()> {
    if a.policies.len() < 2 {
        return Err(usage("compare needs at least two policies"));
    }
    let s = setup(&a.run)?;
    let registry = PolicyRegistry::with_builtins();
    for p in &a.policies {
        if !registry.names().contains(&p.as_str()) {
            return Err(usage(format!("unknown policy {p}")));
        }
    }
    let needs_agent = a.policies.iter().any(|p| p == "sac");
    let ctx = context(&s, a.checkpoint.as_deref(), needs_agent, 0)?;
    let names: Vec<&str> = a.policies.iter().map(String::as_str).collect();
    let cmp = compare(&registry, &names, &ctx, &s.test, s.config.seed)?;
    let out = &s.config.output_dir;
    write(
        &out.join("compare.csv"),
        &reports_csv(&cmp.reports, &s.hash, s.config.seed),
    )?;
    let mut ranking = provenance_line(&s.hash, s.config.seed);
    ranking.push_str("metric,rank,policy\n");
    for (metric, order) in &cmp.metric_rankings {
        for (i, p) in order.iter().enumerate() {
            let _ = writeln!(ranking, "{metric},{},{p}", i + 1);
        }
    }
    write(&out.join("ranking.csv"), &ranking)?;
    print!("{}", reports_table(&cmp.reports));
    println!("\nranking by mean QoE: {}", cmp.ranking.join(" > "));
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<()> {
    if let Some(bad) = a.r0.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(usage(format!("threshold {bad} outside (0, 1]")));
    }
    let s = setup(&a.run)?;
    let policy = a.policy.clone().unwrap_or_else(|| s.config.policy.clone());
    let registry = PolicyRegistry::with_builtins();
    if !registry.names().contains(&policy.as_str()) {
        return Err(usage(format!("unknown policy {policy}")));
    }
    let ctx = context(&s, a.checkpoint.as_deref(), policy == "sac", a.level)?;
    let rows = threshold_sweep(&registry, &policy, &ctx, &s.test, &a.r0, s.config.seed)?;
    write(
        &s.config.output_dir.join("sweep.csv"),
        &sweep_csv(&rows, &s.hash, s.config.seed),
    )?;
    print!("{}", sweep_table(&rows));
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> anyhow::Result<()> {
    let quality = abrlab::quality::QualityModel::default();
    let m = mpc_agreement(&quality, a.instances, a.max_horizon, a.seed)?;
    println!(
        "mpc vs exhaustive: {}/{} decisions match, max score gap {:.3e}",
        m.matches, m.instances, m.max_score_gap
    );
    let g = gradient_check(a.nets, a.seed)?;
    println!(
        "gradients vs finite differences: {} nets, {} parameters, max relative error {:.3e}",
        g.nets, g.parameters, g.max_rel_error
    );
    if m.matches != m.instances || g.max_rel_error >= 1e-4 {
        return Err(Numeric("oracle check failed".into()).into());
    }
    println!("all checks passed");
    Ok(())
}
