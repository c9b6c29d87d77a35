use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use rmg_core::eval::{cce_gap, ne_gap};
use rmg_core::experiment::{
    generate_random_game, learning_curve, run_sweep, write_csv, ExperimentConfig, RandomGameSpec,
};
use rmg_core::hard::{
    closed_form_optimal_value, hard_rmdp, parse_theta, random_theta, HardInstanceParams, DEFAULT_C,
    DEFAULT_C1,
};
use rmg_core::policy::{MixturePolicy, PolicyBundle, PolicyFile};
use rmg_core::qftrl::{
    run_robust_qftrl, theory_bonus_constant, AlgoConfig, DEFAULT_C_B, DEFAULT_DELTA,
};
use rmg_core::rng::{Purpose, RandomStream};
use rmg_core::schedule::DEFAULT_C_ALPHA;
use rmg_core::RobustMarkovGame;

/// Robust Markov game solver: Robust Q-FTRL, exact gap evaluation and the
/// two-state hard instance family.
#[derive(Parser)]
#[command(name = "rmg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random game.
    Generate(GenerateArgs),
    /// Run Robust Q-FTRL and write the output policy.
    Solve(SolveArgs),
    /// Exact CCE (and optionally NE) gaps of a policy file.
    Evaluate(EvaluateArgs),
    /// Write a member of the hard instance family.
    HardInstance(HardInstanceArgs),
    /// Run a (K, R, seed) grid and write the CSV.
    Sweep(SweepArgs),
    /// Print the closed-form optimal value of the hard instance as CSV.
    ClosedForm(ClosedFormArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    states: usize,
    /// Actions per agent, e.g. `2,3`.
    #[arg(long, value_delimiter = ',', required = true)]
    actions: Vec<usize>,
    #[arg(long)]
    horizon: usize,
    #[arg(long, default_value_t = 0.0)]
    uncertainty: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Two players with `r_2 = 1 - r_1`.
    #[arg(long)]
    zero_sum: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    game: PathBuf,
    #[arg(long)]
    rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "RMG_C_ALPHA", default_value_t = DEFAULT_C_ALPHA)]
    c_alpha: f64,
    #[arg(long, env = "RMG_C_B", default_value_t = DEFAULT_C_B)]
    c_b: f64,
    #[arg(long, env = "RMG_DELTA", default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Use `c_b = 2 sqrt(c_alpha + 1)`.
    #[arg(long)]
    theory_constants: bool,
    /// Override the uncertainty level stored in the game file.
    #[arg(long)]
    uncertainty: Option<f64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Write the per-round trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    game: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    /// Also report the NE gap of the product policy.
    #[arg(long)]
    ne: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HardParams {
    #[arg(long)]
    horizon: usize,
    #[arg(long)]
    uncertainty: f64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_C)]
    c: f64,
    #[arg(long, default_value_t = DEFAULT_C1)]
    c1: f64,
}

impl HardParams {
    fn build(&self) -> rmg_core::Result<HardInstanceParams> {
        HardInstanceParams::with_constants(
            self.horizon,
            self.uncertainty,
            self.epsilon,
            self.c,
            self.c1,
        )
    }
}

#[derive(Args)]
struct HardInstanceArgs {
    #[command(flatten)]
    params: HardParams,
    /// Bit string such as `0110`.
    #[arg(long, conflicts_with = "random_theta")]
    theta: Option<String>,
    /// Draw theta uniformly from this seed.
    #[arg(long)]
    random_theta: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also print the optimal value table as CSV.
    #[arg(long)]
    closed_form: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `output`; without either the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's `parallelism`.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct ClosedFormArgs {
    #[command(flatten)]
    params: HardParams,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Outcome {
    Done,
    CellFailures(usize),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::CellFailures(n)) => {
            eprintln!("{n} sweep cell(s) failed; see the error column");
            ExitCode::from(2)
        }
        Err(err) => {
            let invalid = err
                .chain()
                .find_map(|e| e.downcast_ref::<rmg_core::Error>())
                .is_some_and(rmg_core::Error::is_validation);
            let kind = if invalid { "invalid input" } else { "error" };
            eprintln!("{kind}: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Generate(args) => generate(args),
        Command::Solve(args) => solve(args),
        Command::Evaluate(args) => evaluate(args),
        Command::HardInstance(args) => hard_instance(args),
        Command::Sweep(args) => sweep(args),
        Command::ClosedForm(args) => {
            let params = args.params.build()?;
            emit_closed_form(&params, args.out.as_deref())?;
            Ok(Outcome::Done)
        }
    }
}

fn read_game(path: &Path) -> anyhow::Result<RobustMarkovGame> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RobustMarkovGame::from_json(&text).with_context(|| format!("loading game {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generate(args: GenerateArgs) -> anyhow::Result<Outcome> {
    let game = generate_random_game(&RandomGameSpec {
        num_states: args.states,
        action_counts: args.actions,
        horizon: args.horizon,
        uncertainty: args.uncertainty,
        seed: args.seed,
        zero_sum: args.zero_sum,
    })?;
    fs::write(&args.out, game.to_json()?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(Outcome::Done)
}

fn solve(args: SolveArgs) -> anyhow::Result<Outcome> {
    let mut game = read_game(&args.game)?;
    if let Some(r) = args.uncertainty {
        game = game.with_uncertainty(r)?;
    }
    let c_b = if args.theory_constants {
        theory_bonus_constant(args.c_alpha)
    } else {
        args.c_b
    };
    let config = AlgoConfig {
        rounds: args.rounds,
        c_alpha: args.c_alpha,
        c_b,
        delta: args.delta,
        seed: args.seed,
        record_trace: args.trace.is_some(),
        threads: args.threads,
        ..AlgoConfig::default()
    };
    let out = run_robust_qftrl(&game, &config)?;
    log::info!("drew {} samples", out.sample_count);
    if let Some(path) = &args.trace {
        let trace = out
            .trace
            .as_ref()
            .ok_or_else(|| anyhow!("solver returned no trace"))?;
        write_json(path, trace)?;
    }
    let bundle = PolicyBundle {
        mixture: out.mixture,
        zero_sum_product: out.zero_sum_products,
        sample_count: out.sample_count,
    };
    write_json(&args.out, &bundle)?;
    Ok(Outcome::Done)
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<Outcome> {
    let game = read_game(&args.game)?;
    let text = fs::read_to_string(&args.policy)
        .with_context(|| format!("reading {}", args.policy.display()))?;
    let policy: PolicyFile = serde_json::from_str(&text).context("parsing policy file")?;
    let (mixture, product) = match policy {
        PolicyFile::Bundle(bundle) => {
            let product = bundle
                .zero_sum_product
                .or_else(|| bundle.mixture.as_product());
            (bundle.mixture, product)
        }
        PolicyFile::Mixture(mixture) => {
            let product = mixture.as_product();
            (mixture, product)
        }
        PolicyFile::Product(product) => (MixturePolicy::from_product(&product), Some(product)),
    };
    let mut report = cce_gap(&game, &mixture)?;
    if args.ne {
        let Some(product) = product else {
            bail!(rmg_core::Error::Unsupported(
                "--ne needs a product policy: a product file, a single-component mixture, or a zero-sum bundle".into()
            ));
        };
        report.ne_gap = ne_gap(&game, &product)?.ne_gap;
    }
    write_json(&args.out, &report)?;
    println!("cce_gap={}", report.cce_gap);
    if let Some(ne) = report.ne_gap {
        println!("ne_gap={ne}");
    }
    Ok(Outcome::Done)
}

fn hard_instance(args: HardInstanceArgs) -> anyhow::Result<Outcome> {
    let params = args.params.build()?;
    if !params.in_lower_bound_regime() {
        log::warn!(
            "q = {} < p/2 = {}: outside the lower-bound regime",
            params.q,
            params.p / 2.0
        );
    }
    let theta = match (&args.theta, args.random_theta) {
        (Some(bits), _) => parse_theta(bits)?,
        (None, Some(seed)) => {
            random_theta(params.horizon, &mut RandomStream::new(seed, Purpose::Theta))
        }
        (None, None) => vec![0; params.horizon],
    };
    let game = hard_rmdp(&params, &theta)?;
    fs::write(&args.out, game.to_json()?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let bits: String = theta
        .iter()
        .map(|b| if *b == 1 { '1' } else { '0' })
        .collect();
    eprintln!("theta={bits}");
    if args.closed_form {
        emit_closed_form(&params, None)?;
    }
    Ok(Outcome::Done)
}

fn emit_closed_form(params: &HardInstanceParams, out: Option<&Path>) -> anyhow::Result<()> {
    let mut text = String::from("h,v0,v1\n");
    for h in 1..=params.horizon + 1 {
        let (v0, v1) = closed_form_optimal_value(params, h)?;
        text.push_str(&format!("{h},{v0},{v1}\n"));
    }
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Fill constants the config leaves unset from the environment.
fn apply_env_defaults(value: &mut serde_json::Value) -> anyhow::Result<()> {
    let obj = value
        .as_object_mut()
        .ok_or_else(|| anyhow!("sweep config must be a JSON object"))?;
    for (key, var) in [
        ("c_alpha", "RMG_C_ALPHA"),
        ("c_b", "RMG_C_B"),
        ("delta", "RMG_DELTA"),
    ] {
        if obj.contains_key(key) {
            continue;
        }
        if let Ok(raw) = std::env::var(var) {
            let parsed: f64 = raw
                .trim()
                .parse()
                .with_context(|| format!("{var}={raw:?} is not a number"))?;
            obj.insert(key.into(), serde_json::json!(parsed));
        }
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> anyhow::Result<Outcome> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(rmg_core::Error::from)
        .context("parsing sweep config")?;
    apply_env_defaults(&mut value)?;
    let mut config: ExperimentConfig = serde_json::from_value(value)
        .map_err(rmg_core::Error::from)
        .context("parsing sweep config")?;
    if let Some(p) = args.parallelism {
        config.parallelism = p;
    }
    let base_dir = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let rows = run_sweep(&config, &base_dir)?;

    let output = args
        .out
        .or_else(|| config.output.as_ref().map(|p| base_dir.join(p)));
    match output {
        Some(path) => {
            let file =
                fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
            write_csv(&rows, file)?;
            for (k, r, m) in learning_curve(&rows) {
                eprintln!("K={k} R={r} median cce_gap={m}");
            }
        }
        None => write_csv(&rows, std::io::stdout().lock())?,
    }
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    Ok(if failures > 0 {
        Outcome::CellFailures(failures)
    } else {
        Outcome::Done
    })
}
