use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catchbench::agent::{AgentRegistry, SqpPlanner};
use catchbench::blackbox::{curve_csv, finetune, train, BlackboxError, CatchObjective, Checkpoint, Policy};
use catchbench::harness::{
    clopper_pearson, rows_csv, run_eval, shifted_env, write_file, Config, ConfigError, ExperimentSpec, HarnessError,
    SuiteContext, SuiteRegistry,
};
use catchbench::sim::Env;
use catchbench::sqp;
use catchbench::stage_ocp::StageState;

#[derive(Parser)]
#[command(name = "catchbench", version, about = "Ball-catching benchmark: trajectory optimization and blackbox policies")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set thrower.speed_mean=4.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    episodes: Option<usize>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Policy checkpoint for `bb` runs.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one throw with the trajectory optimizer and print the plan as JSON.
    Solve {
        /// Episode seed the throw is drawn from.
        #[arg(long, default_value_t = 0)]
        throw_seed: u64,
        #[arg(long, allow_hyphen_values = true)]
        yaw: Option<f64>,
        #[arg(long)]
        speed: Option<f64>,
    },
    /// Train a policy in simulation.
    Train {
        /// Continue from this checkpoint instead of a random init.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Continue training a checkpoint in the shifted environment.
    Finetune,
    /// Evaluate one agent on the configured thrower.
    Eval {
        #[arg(long, default_value = "sqp")]
        agent: String,
        #[arg(long, default_value = "training")]
        condition: String,
    },
    /// Run a named evaluation suite.
    Suite { name: String },
    /// Clopper-Pearson interval for k successes in n trials.
    Ci {
        k: u64,
        n: u64,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    MissingCheckpoint(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingCheckpoint(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::MissingCheckpoint(m) => write!(f, "missing checkpoint: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => c.into(),
            HarnessError::UnknownSuite(_) => CliError::Config(e.to_string()),
            HarnessError::MissingCheckpoint(m) => CliError::MissingCheckpoint(format!("agent `{m}` needs --checkpoint")),
            HarnessError::Blackbox(b) => b.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<BlackboxError> for CliError {
    fn from(e: BlackboxError) -> Self {
        match e {
            BlackboxError::Config(_) | BlackboxError::Architecture(_) | BlackboxError::ShapeMismatch(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

fn resolve_config(common: &Common) -> Result<Config, CliError> {
    let mut overrides = common.set.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(e) = common.episodes {
        overrides.push(format!("episodes={e}"));
    }
    if let Some(d) = &common.output_dir {
        overrides.push(format!("output_dir={}", toml_string(d)));
    }
    if let Some(c) = &common.checkpoint {
        overrides.push(format!("checkpoint={}", toml_string(c)));
    }
    Ok(Config::load(common.config.as_deref(), &overrides)?)
}

fn toml_string(p: &Path) -> String {
    toml_quote(&p.display().to_string())
}

fn toml_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn load_checkpoint(cfg: &Config) -> Result<Option<Checkpoint>, CliError> {
    let Some(path) = &cfg.checkpoint else { return Ok(None) };
    if !path.exists() {
        return Err(CliError::MissingCheckpoint(format!("{} does not exist", path.display())));
    }
    Checkpoint::load(path).map(Some).map_err(|e| CliError::MissingCheckpoint(e.to_string()))
}

fn require_checkpoint(cfg: &Config) -> Result<Checkpoint, CliError> {
    load_checkpoint(cfg)?.ok_or_else(|| CliError::MissingCheckpoint("pass --checkpoint".into()))
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.common)?;
    if cli.common.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match cli.command {
        Command::Solve { throw_seed, yaw, speed } => {
            let (env, _) = Env::reset(&cfg.env, &cfg.thrower, throw_seed).map_err(|e| CliError::Config(e.to_string()))?;
            let mut throw = *env.throw();
            if yaw.is_some() || speed.is_some() {
                throw.yaw_deg = yaw.unwrap_or(throw.yaw_deg);
                throw.speed = speed.unwrap_or(throw.speed);
                throw.ball.v_ref = cfg.thrower.release_velocity(throw.speed, throw.yaw_deg);
            }
            let planner = SqpPlanner::new(&cfg.sqp, &cfg.env);
            let (q, qd) = env.joint_state();
            let x0 = StageState { q, qd, t: 0.0 };
            let spec = planner.weights.spec(throw.ball, planner.flight);
            let sol = sqp::solve(&x0, &spec, &planner.limits, &planner.model, None, &planner.settings)
                .map_err(|e| CliError::Other(e.to_string()))?;
            let out = serde_json::json!({ "throw": throw, "x0": x0, "solution": sol });
            println!("{}", serde_json::to_string_pretty(&out).map_err(io_err)?);
        }
        Command::Train { resume } => {
            let objective = CatchObjective::new(cfg.env.clone(), cfg.thrower.clone(), cfg.policy.clone(), cfg.env.reward_mode)?;
            let start = match resume {
                Some(path) => {
                    let ck = Checkpoint::load(&path).map_err(|e| CliError::MissingCheckpoint(e.to_string()))?;
                    Checkpoint { bgs: cfg.bgs.clone(), ..ck }
                }
                None => Checkpoint::random_init(cfg.policy.clone(), cfg.bgs.clone()),
            };
            let dir = cfg.output_dir.join("train");
            std::fs::create_dir_all(&dir).map_err(io_err)?;
            let done = train(&objective, start, Some(&dir))?;
            print!("{}", curve_csv(&done.curve));
            eprintln!("checkpoint written to {}", dir.join("latest.json").display());
        }
        Command::Finetune => {
            let ckpt = require_checkpoint(&cfg)?;
            let (env, thrower) = shifted_env(&cfg);
            let arch = ckpt.arch.clone().unwrap_or_else(|| cfg.policy.clone());
            let objective = CatchObjective::new(env, thrower, arch, cfg.finetune.reward_mode)?;
            let dir = cfg.output_dir.join("finetune");
            std::fs::create_dir_all(&dir).map_err(io_err)?;
            let report = finetune(&objective, &ckpt, cfg.finetune.bgs.clone(), Some(&dir))?;
            print!("{}", curve_csv(&report.curve));
            println!("iteration_variance {:.6}", report.iteration_variance);
        }
        Command::Eval { agent, condition } => {
            let agents = AgentRegistry::default();
            let policy = match load_checkpoint(&cfg)? {
                Some(ck) => Some(Policy::new(ck.arch.unwrap_or_else(|| cfg.policy.clone()), ck.theta)?),
                None => None,
            };
            let spec = ExperimentSpec {
                condition,
                agent,
                env: cfg.env.clone(),
                thrower: cfg.thrower.clone(),
                sqp: cfg.sqp.clone(),
                policy,
                episodes: cfg.episodes,
                seed: cfg.seed,
            };
            let out = run_eval(&spec, &agents)?;
            let stem = format!("eval_{}_{}", spec.condition, spec.agent);
            let csv = rows_csv(std::slice::from_ref(&out.row));
            write_file(&cfg.output_dir.join(format!("{stem}.csv")), &csv)?;
            write_file(&cfg.output_dir.join(format!("{stem}.json")), &out.log.to_json())?;
            print!("{csv}");
        }
        Command::Suite { name } => {
            let agents = AgentRegistry::default();
            let suites = SuiteRegistry::default();
            suites.get(&name)?;
            let checkpoint = load_checkpoint(&cfg)?;
            let ctx = SuiteContext {
                config: &cfg,
                checkpoint: checkpoint.as_ref(),
                agents: &agents,
                out_dir: Some(&cfg.output_dir),
            };
            let report = suites.run(&name, &ctx)?;
            report.write(&cfg.output_dir)?;
            print!("{}{}", rows_csv(&report.rows), report.summary_text());
        }
        Command::Ci { k, n, confidence } => {
            let (lo, hi) = clopper_pearson(k, n, confidence).map_err(|e| CliError::Config(e.to_string()))?;
            println!("k={k} n={n} rate={:.6} ci_lo={lo:.6} ci_hi={hi:.6}", k as f64 / n as f64);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
