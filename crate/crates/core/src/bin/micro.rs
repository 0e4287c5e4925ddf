//! `micro`: dataset generation, training, evaluation, attacks, environment
//! sweeps and the tabular verification suite.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use micro_core::agent::{train, Agent, TrainInputs, TrainState};
use micro_core::config::RunConfig;
use micro_core::data::{load_dataset, save_dataset, save_stats, stats_path};
use micro_core::dynamics::GaussianEnsemble;
use micro_core::envs::{behavior, dataset_from, train_behavior, CemConfig, PendulumParams, BEHAVIOR_NOISE};
use micro_core::ndmath::Checkpoint;
use micro_core::rng::SeedStreams;
use micro_core::robust_eval::{attack_curve, evaluate, normalized_score, sweep_env_params, ReturnStats, ScoreRefs};
use micro_core::tabular::{fixture_paths, verify_fixtures, VerifyOptions};
use micro_core::Error;

#[derive(Parser)]
#[command(name = "micro", version, about = "Model-based offline RL with a conservative Bellman operator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset from the behavior policies.
    GenData(RunArgs),
    /// Train the dynamics ensemble, then the agent.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from the training state in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate the trained policy on the nominal environment.
    Eval(RunArgs),
    /// Evaluate under observation attacks over a grid of radii.
    Attack(RunArgs),
    /// Evaluate over a grid of gravity and friction multipliers.
    Sweep(RunArgs),
    /// Run the tabular operator property suite.
    VerifyTabular(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "MICRO_OUT_DIR", default_value = "micro-out")]
    out: PathBuf,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// medium, medium-replay or medium-expert.
    #[arg(long)]
    tier: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    n_transitions: Option<usize>,
    #[arg(long)]
    n_iter: Option<usize>,
    /// Model rollout length h.
    #[arg(long)]
    horizon: Option<usize>,
    /// Penalty coefficient.
    #[arg(long)]
    beta: Option<f64>,
    /// Probability of drawing model data.
    #[arg(long)]
    model_data_prob: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Any config value as dotted.key=value, e.g. `ensemble.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Directory of `*.toml` fixtures.
    #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/tabular"))]
    fixture_dir: PathBuf,
    #[arg(long, env = "MICRO_OUT_DIR", default_value = "micro-out")]
    out: PathBuf,
    /// Random Q pairs per operator variant.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// An error tagged with the stage that raised it.
struct Failure {
    stage: &'static str,
    error: Error,
}

type Outcome<T> = Result<T, Failure>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Outcome<T>;
}

impl<T> Stage<T> for micro_core::Result<T> {
    fn stage(self, stage: &'static str) -> Outcome<T> {
        self.map_err(|error| Failure { stage, error })
    }
}

/// Reference returns stored next to a generated dataset.
#[derive(Debug, Serialize, Deserialize)]
struct References {
    random: f64,
    expert: f64,
    behavior: f64,
}

impl RunArgs {
    fn resolve(&self) -> micro_core::Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut sets = self.overrides.clone();
        let mut named = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                sets.push(format!("{key}={v}"));
            }
        };
        named("env", self.env.as_ref().map(|e| format!("{e:?}")));
        named("seed", self.seed.map(|v| v.to_string()));
        named("tier", self.tier.as_ref().map(|t| format!("{t:?}")));
        named("dataset", self.dataset.as_ref().map(|d| format!("{:?}", d.display().to_string())));
        named("n_transitions", self.n_transitions.map(|v| v.to_string()));
        named("agent.n_iter", self.n_iter.map(|v| v.to_string()));
        named("agent.horizon", self.horizon.map(|v| v.to_string()));
        named("agent.beta", self.beta.map(float_literal));
        named("agent.model_data_prob", self.model_data_prob.map(float_literal));
        named("eval.episodes", self.episodes.map(|v| v.to_string()));
        config.apply_overrides(&sets)?;
        config.env_id()?;
        Ok(config)
    }
}

fn float_literal(x: f64) -> String {
    format!("{x:?}")
}

fn dataset_path(config: &RunConfig, out: &Path) -> PathBuf {
    config.dataset.clone().unwrap_or_else(|| out.join("dataset.jsonl"))
}

fn refs_path(dataset: &Path) -> PathBuf {
    let mut p = dataset.as_os_str().to_owned();
    p.push(".refs.json");
    p.into()
}

fn create_dir(dir: &Path) -> micro_core::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> micro_core::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> micro_core::Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    write_text(path, &text)
}

fn print_config(config: &RunConfig) {
    println!("# resolved config\n{}", config.to_toml());
}

fn load_agent(out: &Path) -> micro_core::Result<Agent> {
    Agent::from_checkpoint(&Checkpoint::load(out.join("agent.ckpt"))?)
}

fn gen_data(args: &RunArgs) -> Outcome<()> {
    let config = args.resolve().stage("config")?;
    print_config(&config);
    create_dir(&args.out).stage("output")?;
    let path = dataset_path(&config, &args.out);
    let training = train_behavior(&CemConfig::default(), config.seed).stage("behavior training")?;
    let dataset = dataset_from(&training, config.tier, config.n_transitions, config.seed).stage("generation")?;
    save_dataset(&path, &dataset).stage("writing dataset")?;
    save_stats(stats_path(&path), &dataset.stats().stage("statistics")?).stage("writing dataset")?;
    let env = PendulumParams::default();
    let refs = References {
        random: training.random_return,
        expert: training.expert_return(),
        behavior: behavior::evaluate(env, &training.half_trained(BEHAVIOR_NOISE), 10, config.seed)
            .stage("reference returns")?,
    };
    write_text(&refs_path(&path), &serde_json::to_string_pretty(&refs).expect("refs serialize"))
        .stage("writing dataset")?;
    println!("wrote {} transitions to {}", dataset.transitions.len(), path.display());
    Ok(())
}

fn train_cmd(args: &RunArgs, resume: bool) -> Outcome<()> {
    let config = args.resolve().stage("config")?;
    print_config(&config);
    create_dir(&args.out).stage("output")?;
    config.save(args.out.join("config.toml")).stage("output")?;
    let dataset = load_dataset(dataset_path(&config, &args.out)).stage("loading dataset")?;
    if dataset.header.env != config.env_id().stage("config")? {
        return Err(Error::InvalidArgument(format!(
            "dataset was generated for `{}`, config asks for `{}`",
            dataset.header.env,
            config.env_id().unwrap_or_default()
        )))
        .stage("loading dataset");
    }
    let stats = dataset.stats().stage("loading dataset")?;
    let offline = stats.normalize_transitions(&dataset.transitions);
    let streams = SeedStreams::new(config.seed);

    let ensemble_path = args.out.join("ensemble.ckpt");
    let ensemble = if resume && ensemble_path.exists() {
        GaussianEnsemble::load(&ensemble_path).stage("loading ensemble")?
    } else {
        let (ensemble, report) = GaussianEnsemble::train(&offline, &config.ensemble, streams.seed(SeedStreams::MODEL))
            .stage("dynamics training")?;
        log::info!("ensemble elites {:?} holdout nll {:?}", ensemble.elites, report.holdout_nll);
        ensemble.save(&ensemble_path).stage("writing ensemble")?;
        ensemble
    };

    let inputs = TrainInputs {
        offline: &offline,
        stats: &stats,
        ensemble: &ensemble,
        env: PendulumParams::default(),
        seed: config.seed,
    };
    let state_path = args.out.join("train_state.ckpt");
    let metrics_path = args.out.join("metrics.jsonl");
    let state = if resume {
        let c = Checkpoint::load(&state_path).stage("loading training state")?;
        TrainState::from_checkpoint(&c, &inputs, &config.agent).stage("loading training state")?
    } else {
        TrainState::new(&inputs, &config.agent).stage("agent training")?
    };
    let state = train(&inputs, &config.agent, state, |s, _| {
        write_json_lines(&metrics_path, &s.metrics)?;
        s.to_checkpoint().save(&state_path)
    })
    .stage("agent training")?;
    write_json_lines(&metrics_path, &state.metrics).stage("writing metrics")?;
    state.agent.to_checkpoint().save(args.out.join("agent.ckpt")).stage("writing agent")?;
    if let Some(last) = state.metrics.last() {
        println!("{}", serde_json::to_string(last).expect("record serializes"));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    #[serde(flatten)]
    returns: ReturnStats,
    normalized_score: Option<f64>,
}

fn eval_cmd(args: &RunArgs) -> Outcome<()> {
    let config = args.resolve().stage("config")?;
    print_config(&config);
    let agent = load_agent(&args.out).stage("loading agent")?;
    let seed = SeedStreams::new(config.seed).seed(SeedStreams::EVAL);
    let returns = evaluate(&agent.policy, &agent.stats, PendulumParams::default(), config.eval.episodes, seed)
        .stage("evaluation")?;
    let refs_file = refs_path(&dataset_path(&config, &args.out));
    let normalized_score = match fs::read_to_string(&refs_file) {
        Ok(text) => {
            let r: References = serde_json::from_str(&text)
                .map_err(|e| Error::invalid(format!("{}: {e}", refs_file.display())))
                .stage("reading references")?;
            let refs = ScoreRefs::new(r.random, r.expert).stage("reading references")?;
            Some(normalized_score(returns.mean, &refs).stage("evaluation")?)
        }
        Err(_) => None,
    };
    let report = EvalReport { returns, normalized_score };
    let text = serde_json::to_string(&report).expect("report serializes");
    write_text(&args.out.join("eval.json"), &text).stage("writing report")?;
    println!("{text}");
    Ok(())
}

fn attack_cmd(args: &RunArgs) -> Outcome<()> {
    let config = args.resolve().stage("config")?;
    print_config(&config);
    let agent = load_agent(&args.out).stage("loading agent")?;
    let e = &config.eval;
    // Episode starts match `eval`, so a zero radius reproduces it.
    let seed = SeedStreams::new(config.seed).seed(SeedStreams::EVAL);
    let records =
        attack_curve(&agent, PendulumParams::default(), &e.kinds, &e.epsilons, e.n_candidates, e.episodes, seed)
            .stage("attack")?;
    write_json_lines(&args.out.join("attack.jsonl"), &records).stage("writing report")?;
    for r in &records {
        println!("{}", serde_json::to_string(r).expect("record serializes"));
    }
    Ok(())
}

fn sweep_cmd(args: &RunArgs) -> Outcome<()> {
    let config = args.resolve().stage("config")?;
    print_config(&config);
    let agent = load_agent(&args.out).stage("loading agent")?;
    let seed = SeedStreams::new(config.seed).seed(SeedStreams::EVAL);
    let cells = sweep_env_params(
        &agent.policy,
        &agent.stats,
        PendulumParams::default(),
        &config.eval.sweep,
        config.eval.episodes,
        seed,
    )
    .stage("sweep")?;
    write_json_lines(&args.out.join("sweep.jsonl"), &cells).stage("writing report")?;
    for c in &cells {
        println!("{}", serde_json::to_string(c).expect("record serializes"));
    }
    Ok(())
}

/// Returns whether every fixture passed.
fn verify_cmd(args: &VerifyArgs) -> Outcome<bool> {
    let mut opts = VerifyOptions::default();
    if let Some(p) = args.pairs {
        opts.pairs = p;
    }
    if let Some(s) = args.seed {
        opts.seed = s;
    }
    println!("# resolved options\n{}", toml::to_string(&opts).expect("options serialize"));
    let paths = fixture_paths(&args.fixture_dir).stage("reading fixtures")?;
    let report = verify_fixtures(&paths, &opts).stage("verification")?;
    let mut stdout = std::io::stdout().lock();
    for f in &report.fixtures {
        let _ = writeln!(stdout, "{}: {}", f.fixture, if f.passed() { "PASS" } else { "FAIL" });
        for c in &f.checks {
            let _ = writeln!(stdout, "  {:<20} {}  {}", c.property, if c.passed { "pass" } else { "FAIL" }, c.detail);
        }
        if let Some(gap) = f.dual_gap {
            let _ = writeln!(stdout, "  dual/primal gap {gap:.3e}");
        }
    }
    drop(stdout);
    if create_dir(&args.out).is_ok() {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        write_text(&args.out.join("verify.json"), &text).stage("writing report")?;
    }
    if !report.passed() {
        eprintln!("failing fixtures: {}", report.failing().join(", "));
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Train { run, resume } => train_cmd(run, *resume).map(|_| true),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::Attack(a) => attack_cmd(a).map(|_| true),
        Command::Sweep(a) => sweep_cmd(a).map(|_| true),
        Command::VerifyTabular(a) => verify_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure { stage, error }) => {
            eprintln!("error ({stage}): {error}");
            ExitCode::from(if error.is_validation() { 1 } else { 2 })
        }
    }
}
