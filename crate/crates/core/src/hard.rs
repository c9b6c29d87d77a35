//! Two-state hard RMDP family indexed by `theta in {0,1}^H`.
//!
//! At state 0 action `theta_h` moves to state 1 with probability `p` and the
//! other action with `q = p - Delta`; state 1 is absorbing under the nominal
//! kernel and pays reward 1. All members share the same optimal robust value,
//! which has a closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{effective_horizon, RobustMarkovGame};
use crate::policy::{MarkovPolicy, ProductMarkovPolicy};
use crate::rng::RandomStream;

pub const DEFAULT_C: f64 = 0.75;
pub const DEFAULT_C1: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceParams {
    pub horizon: usize,
    pub uncertainty: f64,
    pub epsilon: f64,
    pub c: f64,
    pub c1: f64,
    pub p: f64,
    pub q: f64,
    pub delta: f64,
    pub p_tilde: f64,
}

impl HardInstanceParams {
    pub fn new(horizon: usize, uncertainty: f64, epsilon: f64) -> Result<Self> {
        Self::with_constants(horizon, uncertainty, epsilon, DEFAULT_C, DEFAULT_C1)
    }

    pub fn with_constants(
        horizon: usize,
        uncertainty: f64,
        epsilon: f64,
        c: f64,
        c1: f64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::HardInstance("horizon must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&uncertainty) {
            return Err(Error::UncertaintyLevel(uncertainty));
        }
        if !(c > 0.0 && c <= 0.75) {
            return Err(Error::HardInstance(format!(
                "c must lie in (0, 3/4], got {c}"
            )));
        }
        if !(epsilon > 0.0 && c1 > 0.0) {
            return Err(Error::HardInstance(
                "epsilon and c1 must be positive".into(),
            ));
        }
        let p = c * (1.0 / horizon as f64).max(uncertainty);
        let delta = c1 * epsilon / (horizon as f64 * effective_horizon(horizon, uncertainty));
        let q = p - delta;
        if q <= 0.0 {
            return Err(Error::HardInstance(format!(
                "q = p - Delta = {p} - {delta} is not positive; lower epsilon or c1"
            )));
        }
        Ok(Self {
            horizon,
            uncertainty,
            epsilon,
            c,
            c1,
            p,
            q,
            delta,
            p_tilde: (1.0 - uncertainty) * p,
        })
    }

    /// Whether `q >= p/2`, the regime the lower-bound argument assumes.
    pub fn in_lower_bound_regime(&self) -> bool {
        self.q >= self.p / 2.0
    }

    /// `V*_h(0), V*_h(1)` for one-based `h in 1..=H+1`.
    pub fn closed_form_optimal_value(&self, h: usize) -> Result<(f64, f64)> {
        closed_form_optimal_value(self, h)
    }
}

/// Single-agent, two-state, two-action member of the family.
pub fn hard_rmdp(params: &HardInstanceParams, theta: &[u8]) -> Result<RobustMarkovGame> {
    let horizon = params.horizon;
    if theta.len() != horizon {
        return Err(Error::HardInstance(format!(
            "theta has {} bits, horizon is {horizon}",
            theta.len()
        )));
    }
    if theta.iter().any(|&b| b > 1) {
        return Err(Error::HardInstance("theta entries must be 0 or 1".into()));
    }
    let mut kernel = Vec::with_capacity(horizon * 2 * 2 * 2);
    let mut rewards = Vec::with_capacity(horizon * 2 * 2);
    for &bit in theta {
        for a in 0..2u8 {
            let up = if a == bit { params.p } else { params.q };
            kernel.extend_from_slice(&[1.0 - up, up]);
        }
        for _ in 0..2 {
            kernel.extend_from_slice(&[0.0, 1.0]);
        }
        rewards.extend_from_slice(&[0.0, 0.0, 1.0, 1.0]);
    }
    RobustMarkovGame::from_flat(&[2], 2, horizon, params.uncertainty, kernel, rewards)
}

pub fn closed_form_optimal_value(params: &HardInstanceParams, h: usize) -> Result<(f64, f64)> {
    if h == 0 || h > params.horizon + 1 {
        return Err(Error::HardInstance(format!(
            "step {h} outside 1..={}",
            params.horizon + 1
        )));
    }
    let (r, pt) = (params.uncertainty, params.p_tilde);
    let rate = r + pt;
    if rate <= 0.0 {
        return Err(Error::HardInstance("R + p_tilde must be positive".into()));
    }
    let remaining = (params.horizon + 1 - h) as f64;
    let geometric = (1.0 - (1.0 - rate).powi((params.horizon + 1 - h) as i32)) / rate;
    // Cancellation can leave -1e-17 at h = H, where the value is exactly 0.
    let v0 = (pt / rate * (remaining - geometric)).max(0.0);
    let v1 = (pt * remaining + r * geometric) / rate;
    Ok((v0, v1))
}

/// Plays `theta_h` at state 0, action 0 at state 1.
pub fn optimal_theta_policy(theta: &[u8]) -> ProductMarkovPolicy {
    let actions: Vec<Vec<usize>> = theta.iter().map(|&b| vec![b as usize, 0]).collect();
    ProductMarkovPolicy {
        agents: vec![MarkovPolicy::deterministic(&actions, 2)],
    }
}

pub fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Minimum pairwise distance a packing for horizon `H` must respect.
pub fn packing_distance(horizon: usize) -> usize {
    horizon.div_ceil(8)
}

/// Greedy randomized Gilbert-Varshamov packing: draw uniform bit vectors and
/// keep those at Hamming distance at least `ceil(H/8)` from every kept one.
/// The size of the result is not certified.
pub fn gilbert_varshamov_pack(
    horizon: usize,
    max_attempts: usize,
    stream: &mut RandomStream,
) -> Result<Vec<Vec<u8>>> {
    if horizon < 8 {
        return Err(Error::HardInstance(format!(
            "packing needs H >= 8, got {horizon}"
        )));
    }
    let min_dist = packing_distance(horizon);
    let mut kept: Vec<Vec<u8>> = Vec::new();
    for _ in 0..max_attempts {
        let candidate = random_theta(horizon, stream);
        if kept.iter().all(|t| hamming(t, &candidate) >= min_dist) {
            kept.push(candidate);
        }
    }
    Ok(kept)
}

pub fn random_theta(horizon: usize, stream: &mut RandomStream) -> Vec<u8> {
    (0..horizon)
        .map(|_| (stream.next_u64() >> 63) as u8)
        .collect()
}

/// Parse a bit string such as `"0110"`.
pub fn parse_theta(bits: &str) -> Result<Vec<u8>> {
    bits.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::HardInstance(format!(
                "theta must be a 0/1 string, found {other:?}"
            ))),
        })
        .collect()
}
