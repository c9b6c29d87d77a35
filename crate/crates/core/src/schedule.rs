//! Step-size schedules for Robust Q-FTRL.
//!
//! `alpha_k = c log K / (k - 1 + c log K)`, `eta_k = sqrt(log K / (alpha_k M))`
//! with `M = min{H, 1/R}`, and the output mixture weights
//! `alpha_k^K = alpha_k prod_{j>k} (1 - alpha_j)`. Natural log throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::effective_horizon;

pub const DEFAULT_C_ALPHA: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    rounds: usize,
    c_alpha: f64,
    /// `alpha[k-1]` is the Q-learning rate of round `k`.
    alpha: Vec<f64>,
    /// `eta[k-1]` is the FTRL rate `eta_k`, for `k = 1..=K+1`.
    eta: Vec<f64>,
    /// `weights[k-1]` is `alpha_k^K`.
    weights: Vec<f64>,
}

fn alpha_formula(k: usize, c_log_k: f64) -> f64 {
    if k == 1 {
        1.0
    } else {
        c_log_k / ((k - 1) as f64 + c_log_k)
    }
}

impl Schedules {
    pub fn build(rounds: usize, c_alpha: f64, horizon: usize, uncertainty: f64) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::Config(
                "number of rounds K must be at least 1".into(),
            ));
        }
        if !(c_alpha > 0.0 && c_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "c_alpha must be positive, got {c_alpha}"
            )));
        }
        let log_k = (rounds as f64).ln();
        let c_log_k = c_alpha * log_k;
        let horizon_eff = effective_horizon(horizon, uncertainty);

        let alpha: Vec<f64> = (1..=rounds).map(|k| alpha_formula(k, c_log_k)).collect();
        let eta: Vec<f64> = if rounds == 1 {
            // log 1 = 0 zeroes the formula; a single round never uses eta.
            vec![1.0, 1.0]
        } else {
            (1..=rounds + 1)
                .map(|k| (log_k / (alpha_formula(k, c_log_k) * horizon_eff)).sqrt())
                .collect()
        };

        let mut weights = vec![0.0; rounds];
        let mut tail = 1.0;
        for k in (0..rounds).rev() {
            weights[k] = alpha[k] * tail;
            tail *= 1.0 - alpha[k];
        }

        Ok(Self {
            rounds,
            c_alpha,
            alpha,
            eta,
            weights,
        })
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn c_alpha(&self) -> f64 {
        self.c_alpha
    }

    /// `alpha_k`, one-based.
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k - 1]
    }

    /// `eta_k`, one-based, `k <= K + 1`.
    pub fn eta(&self, k: usize) -> f64 {
        self.eta[k - 1]
    }

    /// `alpha_k^K`, one-based.
    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k - 1]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

pub fn build_schedules(
    rounds: usize,
    c_alpha: f64,
    horizon: usize,
    uncertainty: f64,
) -> Result<Schedules> {
    Schedules::build(rounds, c_alpha, horizon, uncertainty)
}
