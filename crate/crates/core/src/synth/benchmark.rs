//! Seeded benchmark over a grid of synthetic regimes.
//!
//! Every cell reuses the same per-trial seeds, so arms within a cell (and
//! cells across the grid) are compared on common random scenes. Trials run in
//! parallel and are reduced in trial order, which keeps aggregates identical
//! for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{derive_seed, generate_scene, OutlierMode, SynthConfig, SynthError};
use crate::decomposition::{decompose, DecompositionConfig, DecompositionError, Method};
use crate::matrix::Matrix;
use crate::metrics::{spearman_rho, MetricsError};
use crate::scoring::{hallucination_scores, rank_and_select};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid benchmark grid: {0}")]
    InvalidGrid(String),
}

/// How the svd arm picks its rank. RPCA ignores this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// Override with the generator's consensus rank.
    Planted,
    /// Variance-threshold selection from the decomposition config.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkArm {
    pub method: Method,
    pub rank_policy: RankPolicy,
}

impl BenchmarkArm {
    pub const SVD_PLANTED: Self = Self {
        method: Method::Svd,
        rank_policy: RankPolicy::Planted,
    };
    pub const SVD_ADAPTIVE: Self = Self {
        method: Method::Svd,
        rank_policy: RankPolicy::Adaptive,
    };
    pub const RPCA: Self = Self {
        method: Method::Rpca,
        rank_policy: RankPolicy::Adaptive,
    };

    pub fn label(&self) -> &'static str {
        match (self.method, self.rank_policy) {
            (Method::Svd, RankPolicy::Planted) => "svd",
            (Method::Svd, RankPolicy::Adaptive) => "svd_adaptive",
            (Method::Rpca, _) => "rpca",
        }
    }

    fn config(&self, base: &DecompositionConfig, scene: &SynthConfig) -> DecompositionConfig {
        let mut cfg = base.clone();
        cfg.method = self.method;
        if self.method == Method::Svd && self.rank_policy == RankPolicy::Planted {
            cfg.rank_override = Some(scene.consensus_rank);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkGrid {
    /// Template scene; `outlier_strength`, `noise_sigma`, `outlier_mode` and
    /// `seed` are overridden per cell and trial.
    pub base: SynthConfig,
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub modes: Vec<OutlierMode>,
    pub arms: Vec<BenchmarkArm>,
    pub trials: usize,
    pub seed: u64,
    pub decomposition: DecompositionConfig,
}

impl Default for BenchmarkGrid {
    fn default() -> Self {
        Self {
            base: SynthConfig::default(),
            deltas: vec![0.1, 0.3, 1.0],
            sigmas: vec![0.02, 0.05, 0.1],
            modes: vec![OutlierMode::DenseShift, OutlierMode::SparseSpike],
            arms: vec![
                BenchmarkArm::SVD_PLANTED,
                BenchmarkArm::SVD_ADAPTIVE,
                BenchmarkArm::RPCA,
            ],
            trials: 200,
            seed: 0,
            decomposition: DecompositionConfig {
                // Generated rows are already unit length when configured.
                normalize_rows: false,
                ..DecompositionConfig::default()
            },
        }
    }
}

impl BenchmarkGrid {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        if self.trials == 0 {
            return Err(BenchmarkError::InvalidGrid("trials must be positive".into()));
        }
        if self.deltas.is_empty() || self.sigmas.is_empty() || self.modes.is_empty() {
            return Err(BenchmarkError::InvalidGrid("empty grid axis".into()));
        }
        if self.arms.is_empty() {
            return Err(BenchmarkError::InvalidGrid("no methods to compare".into()));
        }
        self.decomposition.validate()?;
        for cell in self.cells() {
            cell.validate()?;
        }
        Ok(())
    }

    /// Scene templates in output order: mode, then σ, then δ.
    pub fn cells(&self) -> Vec<SynthConfig> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &sigma in &self.sigmas {
                for &delta in &self.deltas {
                    out.push(SynthConfig {
                        outlier_mode: mode,
                        noise_sigma: sigma,
                        outlier_strength: delta,
                        seed: self.seed,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub mode: OutlierMode,
    pub delta: f64,
    pub sigma: f64,
    pub method: String,
    pub trials: usize,
    /// Share of trials whose selected caption is not an outlier.
    pub selection_rate: f64,
    /// Mean Spearman(scores, planted deviations) over trials where it is defined.
    pub mean_spearman: f64,
    pub spearman_defined: usize,
    /// Mean precision@k of the largest `|E|` entries against planted spikes
    /// (`k` = spike count); sparse-spike cells with outliers only.
    pub spike_precision: Option<f64>,
    pub mean_rank: f64,
    pub not_converged: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct TrialOutcome {
    non_outlier: bool,
    spearman: Option<f64>,
    spike_precision: Option<f64>,
    rank: usize,
    converged: bool,
}

pub fn run_benchmark(grid: &BenchmarkGrid) -> Result<Vec<CellResult>, BenchmarkError> {
    grid.validate()?;
    let mut out = Vec::new();
    for cell in grid.cells() {
        out.extend(run_cell(&cell, &grid.arms, grid.trials, &grid.decomposition)?);
    }
    Ok(out)
}

/// Runs `trials` scenes of one regime through each arm. Trial `t` uses seed
/// `derive_seed(scene.seed, t)`.
pub fn run_cell(
    scene: &SynthConfig,
    arms: &[BenchmarkArm],
    trials: usize,
    decomposition: &DecompositionConfig,
) -> Result<Vec<CellResult>, BenchmarkError> {
    scene.validate()?;
    let per_trial: Vec<Vec<TrialOutcome>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let cfg = SynthConfig {
                seed: derive_seed(scene.seed, t),
                ..scene.clone()
            };
            run_trial(&cfg, arms, decomposition)
        })
        .collect::<Result<_, _>>()?;

    let results = arms
        .iter()
        .enumerate()
        .map(|(a, arm)| {
            let outcomes: Vec<TrialOutcome> = per_trial.iter().map(|t| t[a]).collect();
            aggregate(scene, arm, &outcomes)
        })
        .collect();
    Ok(results)
}

fn run_trial(
    scene_cfg: &SynthConfig,
    arms: &[BenchmarkArm],
    decomposition: &DecompositionConfig,
) -> Result<Vec<TrialOutcome>, BenchmarkError> {
    let scene = generate_scene(scene_cfg)?;
    arms.iter()
        .map(|arm| {
            let out = decompose(&scene.matrix, &arm.config(decomposition, scene_cfg))?;
            let scores = hallucination_scores(&out);
            let ranking = rank_and_select(&scores);
            let spearman = spearman_rho(&scores.scores, &scene.deviation_magnitudes)?.value();
            let spike_precision = spike_precision(&out.residual, &scene.spike_positions);
            Ok(TrialOutcome {
                non_outlier: !scene.outlier_flags[ranking.selected],
                spearman,
                spike_precision,
                rank: out.rank,
                converged: out.converged(),
            })
        })
        .collect()
}

fn aggregate(scene: &SynthConfig, arm: &BenchmarkArm, outcomes: &[TrialOutcome]) -> CellResult {
    let n = outcomes.len() as f64;
    let hits = outcomes.iter().filter(|o| o.non_outlier).count();
    let rhos: Vec<f64> = outcomes.iter().filter_map(|o| o.spearman).collect();
    let mean_spearman = if rhos.is_empty() {
        0.0
    } else {
        rhos.iter().sum::<f64>() / rhos.len() as f64
    };
    let precisions: Vec<f64> = outcomes.iter().filter_map(|o| o.spike_precision).collect();
    CellResult {
        mode: scene.outlier_mode,
        delta: scene.outlier_strength,
        sigma: scene.noise_sigma,
        method: arm.label().to_owned(),
        trials: outcomes.len(),
        selection_rate: hits as f64 / n,
        mean_spearman,
        spearman_defined: rhos.len(),
        spike_precision: (!precisions.is_empty())
            .then(|| precisions.iter().sum::<f64>() / precisions.len() as f64),
        mean_rank: outcomes.iter().map(|o| o.rank as f64).sum::<f64>() / n,
        not_converged: outcomes.iter().filter(|o| !o.converged).count(),
        seed: scene.seed,
    }
}

/// Fraction of the `k` largest-magnitude residual entries that sit on a
/// planted spike, where `k` is the number of spikes. `None` without spikes.
///
/// Equal magnitudes are taken in row-major order.
pub fn spike_precision(residual: &Matrix, spikes: &[Vec<usize>]) -> Option<f64> {
    let k: usize = spikes.iter().map(Vec::len).sum();
    if k == 0 {
        return None;
    }
    let d = residual.cols();
    let values = residual.as_slice();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    let hits = order[..k.min(order.len())]
        .iter()
        .filter(|&&flat| spikes[flat / d].contains(&(flat % d)))
        .count();
    Some(hits as f64 / k as f64)
}
