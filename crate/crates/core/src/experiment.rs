//! Random game generation, (K, R, seed) sweeps and CSV emission.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{cce_gap, ne_gap};
use crate::game::{RobustMarkovGame, MAX_JOINT_ACTIONS};
use crate::hard::{
    hard_rmdp, parse_theta, random_theta, HardInstanceParams, DEFAULT_C, DEFAULT_C1,
};
use crate::policy::{JointPolicy, MixturePolicy, PolicyBundle};
use crate::qftrl::{
    run_robust_qftrl, theory_bonus_constant, AlgoConfig, DEFAULT_C_B, DEFAULT_DELTA,
};
use crate::rng::{Purpose, RandomStream};
use crate::schedule::DEFAULT_C_ALPHA;

pub const CSV_HEADER: [&str; 9] = [
    "K",
    "R",
    "seed",
    "cce_gap",
    "ne_gap",
    "max_agent_gap",
    "wall_time_ms",
    "sample_count",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomGameSpec {
    pub num_states: usize,
    pub action_counts: Vec<usize>,
    pub horizon: usize,
    #[serde(default)]
    pub uncertainty: f64,
    #[serde(default)]
    pub seed: u64,
    /// Force `r_2 = 1 - r_1` (two players only).
    #[serde(default)]
    pub zero_sum: bool,
}

/// Kernel rows from normalized independent uniforms, rewards uniform on
/// [0,1]. Deterministic in the seed.
pub fn generate_random_game(spec: &RandomGameSpec) -> Result<RobustMarkovGame> {
    let joint: u128 = spec.action_counts.iter().map(|&a| a as u128).product();
    if joint > MAX_JOINT_ACTIONS as u128 {
        return Err(Error::TooManyJointActions(joint));
    }
    if spec.zero_sum && spec.action_counts.len() != 2 {
        return Err(Error::Config(
            "zero-sum generation needs exactly two agents".into(),
        ));
    }
    let joint = joint as usize;
    let (n, horizon, m) = (spec.num_states, spec.horizon, spec.action_counts.len());
    let mut stream = RandomStream::new(spec.seed, Purpose::GameGeneration);

    let mut kernel = Vec::with_capacity(horizon * n * joint * n);
    for _ in 0..horizon * n * joint {
        let draws: Vec<f64> = (0..n).map(|_| stream.next_f64()).collect();
        let total: f64 = draws.iter().sum();
        if n == 1 {
            kernel.push(1.0);
            continue;
        }
        let mut row: Vec<f64> = draws.iter().map(|d| d / total).collect();
        // Push the rounding residue onto the largest entry so the row sums
        // to one within the validation tolerance.
        let residue = 1.0 - row.iter().sum::<f64>();
        let top = row
            .iter()
            .enumerate()
            .fold(0, |best, (idx, &x)| if x > row[best] { idx } else { best });
        row[top] += residue;
        kernel.extend(row);
    }

    let block = horizon * n * joint;
    let mut rewards: Vec<f64> = (0..block).map(|_| stream.next_f64()).collect();
    if spec.zero_sum {
        let mirrored: Vec<f64> = rewards.iter().map(|r| 1.0 - r).collect();
        rewards.extend(mirrored);
    } else {
        rewards.extend((0..block * (m.saturating_sub(1))).map(|_| stream.next_f64()));
    }
    RobustMarkovGame::from_flat(
        &spec.action_counts,
        n,
        horizon,
        spec.uncertainty,
        kernel,
        rewards,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceSpec {
    pub horizon: usize,
    pub epsilon: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_c1")]
    pub c1: f64,
    /// Bit string; when absent a random one is drawn from `theta_seed`.
    #[serde(default)]
    pub theta: Option<String>,
    #[serde(default)]
    pub theta_seed: u64,
}

fn default_c() -> f64 {
    DEFAULT_C
}

fn default_c1() -> f64 {
    DEFAULT_C1
}

impl HardInstanceSpec {
    pub fn theta(&self) -> Result<Vec<u8>> {
        match &self.theta {
            Some(bits) => parse_theta(bits),
            None => Ok(random_theta(
                self.horizon,
                &mut RandomStream::new(self.theta_seed, Purpose::Theta),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameSource {
    Path(PathBuf),
    Random(RandomGameSpec),
    HardInstance(HardInstanceSpec),
}

impl GameSource {
    /// Materialize the game at uncertainty level `uncertainty`. Relative
    /// paths resolve against `base_dir`.
    pub fn build(&self, uncertainty: f64, base_dir: &Path) -> Result<RobustMarkovGame> {
        match self {
            GameSource::Path(path) => {
                let full = if path.is_relative() {
                    base_dir.join(path)
                } else {
                    path.clone()
                };
                let text = std::fs::read_to_string(&full).map_err(|e| {
                    Error::Config(format!("cannot read game file {}: {e}", full.display()))
                })?;
                RobustMarkovGame::from_json(&text)?.with_uncertainty(uncertainty)
            }
            GameSource::Random(spec) => generate_random_game(&RandomGameSpec {
                uncertainty,
                ..spec.clone()
            }),
            GameSource::HardInstance(spec) => {
                let params = HardInstanceParams::with_constants(
                    spec.horizon,
                    uncertainty,
                    spec.epsilon,
                    spec.c,
                    spec.c1,
                )?;
                hard_rmdp(&params, &spec.theta()?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub game: GameSource,
    pub rounds: Vec<usize>,
    pub uncertainty: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_c_alpha")]
    pub c_alpha: f64,
    #[serde(default = "default_c_b")]
    pub c_b: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub theory_constants: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Fill `wall_time_ms`. Off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_timing: bool,
    /// Directory receiving one policy file per cell.
    #[serde(default)]
    pub policy_dir: Option<PathBuf>,
}

fn default_c_alpha() -> f64 {
    DEFAULT_C_ALPHA
}

fn default_c_b() -> f64 {
    DEFAULT_C_B
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_parallelism() -> usize {
    1
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds.is_empty() || self.uncertainty.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "sweep grid must be non-empty in K, R and seeds".into(),
            ));
        }
        if self.rounds.contains(&0) {
            return Err(Error::Config("every K must be at least 1".into()));
        }
        if let Some(&r) = self.uncertainty.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::UncertaintyLevel(r));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        Ok(())
    }

    pub fn algo_config(&self, rounds: usize, seed: u64) -> AlgoConfig {
        let c_b = if self.theory_constants {
            theory_bonus_constant(self.c_alpha)
        } else {
            self.c_b
        };
        AlgoConfig {
            rounds,
            c_alpha: self.c_alpha,
            c_b,
            delta: self.delta,
            seed,
            ..AlgoConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rounds: usize,
    pub uncertainty: f64,
    pub seed: u64,
    pub cce_gap: Option<f64>,
    pub ne_gap: Option<f64>,
    pub max_agent_gap: Vec<f64>,
    pub wall_time_ms: Option<u64>,
    pub sample_count: u64,
    pub error: Option<String>,
}

/// Solve and evaluate one grid cell.
pub fn run_cell(game: &RobustMarkovGame, config: &AlgoConfig) -> Result<(PolicyBundle, SweepRow)> {
    let out = run_robust_qftrl(game, config)?;
    let report = cce_gap(game, &out.mixture)?;
    let ne = match &out.zero_sum_products {
        Some(product) => Some(ne_gap(game, product)?.cce_gap),
        None => None,
    };
    let row = SweepRow {
        rounds: config.rounds,
        uncertainty: game.uncertainty(),
        seed: config.seed,
        cce_gap: Some(report.cce_gap),
        ne_gap: ne,
        max_agent_gap: report.max_agent_gaps(),
        wall_time_ms: None,
        sample_count: out.sample_count,
        error: None,
    };
    let bundle = PolicyBundle {
        mixture: out.mixture,
        zero_sum_product: out.zero_sum_products,
        sample_count: out.sample_count,
    };
    Ok((bundle, row))
}

pub fn policy_file_name(rounds: usize, uncertainty: f64, seed: u64) -> String {
    format!("policy_K{rounds}_R{uncertainty}_seed{seed}.json")
}

/// Run every `(K, R, seed)` cell. Rows come back sorted by `(K, R, seed)`;
/// failing cells carry their error message and the sweep continues.
pub fn run_sweep(config: &ExperimentConfig, base_dir: &Path) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let mut cells = Vec::new();
    for &k in &config.rounds {
        for &r in &config.uncertainty {
            for &seed in &config.seeds {
                cells.push((k, r, seed));
            }
        }
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    if let Some(dir) = &config.policy_dir {
        std::fs::create_dir_all(base_dir.join(dir))?;
    }

    let job = |&(k, r, seed): &(usize, f64, u64)| -> SweepRow {
        let started = Instant::now();
        let algo = config.algo_config(k, seed);
        let result = config.game.build(r, base_dir).and_then(|game| {
            let (bundle, row) = run_cell(&game, &algo)?;
            if let Some(dir) = &config.policy_dir {
                let path = base_dir.join(dir).join(policy_file_name(k, r, seed));
                std::fs::write(path, serde_json::to_string(&bundle)?)?;
            }
            Ok(row)
        });
        let mut row = result.unwrap_or_else(|e| SweepRow {
            rounds: k,
            uncertainty: r,
            seed,
            cce_gap: None,
            ne_gap: None,
            max_agent_gap: Vec::new(),
            wall_time_ms: None,
            sample_count: 0,
            error: Some(e.to_string()),
        });
        if config.record_timing {
            row.wall_time_ms = Some(started.elapsed().as_millis() as u64);
        }
        row
    };

    let rows = if config.parallelism > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(job).collect())
    } else {
        cells.iter().map(job).collect()
    };
    Ok(rows)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Write rows with the fixed column order of [`CSV_HEADER`]. Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for row in rows {
        let agent_gaps: Vec<String> = row.max_agent_gap.iter().map(|g| g.to_string()).collect();
        writer.write_record([
            row.rounds.to_string(),
            row.uncertainty.to_string(),
            row.seed.to_string(),
            fmt_opt(row.cce_gap),
            fmt_opt(row.ne_gap),
            agent_gaps.join(";"),
            row.wall_time_ms.map(|t| t.to_string()).unwrap_or_default(),
            row.sample_count.to_string(),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[SweepRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    })
}

/// Median `cce_gap` across seeds for every `(K, R)`, sorted by `(K, R)`.
pub fn learning_curve(rows: &[SweepRow]) -> Vec<(usize, f64, f64)> {
    let mut keys: Vec<(usize, f64)> = rows.iter().map(|r| (r.rounds, r.uncertainty)).collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();
    keys.into_iter()
        .filter_map(|(k, r)| {
            let gaps: Vec<f64> = rows
                .iter()
                .filter(|row| row.rounds == k && row.uncertainty == r)
                .filter_map(|row| row.cce_gap)
                .collect();
            median(&gaps).map(|m| (k, r, m))
        })
        .collect()
}

/// Fraction of steps where the policy's state-0 marginal of agent 0 puts
/// strictly more mass on `theta_h` than on `1 - theta_h`. Ties count as
/// misses.
pub fn theta_recovery_stat(
    game: &RobustMarkovGame,
    theta: &[u8],
    mixture: &MixturePolicy,
) -> Result<f64> {
    if game.num_agents() != 1 || game.num_states() < 2 || game.action_counts()[0] != 2 {
        return Err(Error::Unsupported(
            "theta recovery needs a single-agent two-action hard instance".into(),
        ));
    }
    if theta.len() != game.horizon() || mixture.num_steps() != game.horizon() {
        return Err(Error::Dimension(
            "theta, policy and game horizons differ".into(),
        ));
    }
    let space = game.joint_actions();
    let hits = theta
        .iter()
        .enumerate()
        .filter(|&(h, &bit)| {
            let dist = mixture.joint_distribution(space, h, 0);
            let good = dist[bit as usize];
            let bad = dist[1 - bit as usize];
            good > bad
        })
        .count();
    Ok(hits as f64 / theta.len() as f64)
}
