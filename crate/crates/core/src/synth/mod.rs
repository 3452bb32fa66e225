//! Synthetic scenes with a planted consensus subspace and labelled outliers.
//!
//! Each caption row is a random unit combination of `r*` orthonormal
//! consensus directions plus dense Gaussian noise. The noise scale varies per
//! row (`σ·u`, `u ~ U(0, 1.5)`), which gives inliers distinct planted
//! deviations to rank. Outlier rows are then
//! pushed away from the consensus, either by `δ` along a unit direction
//! orthogonal to the consensus subspace (`DenseShift`) or by `±δ` spikes on 5%
//! of the coordinates (`SparseSpike`). Rows are unit-normalized last when
//! configured.

pub mod benchmark;
pub mod oracle;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposition::{normalize_rows, EmbeddingMatrix};
use crate::matrix::{dot, l2_norm, Matrix};
use crate::metrics::SentenceLabel;

/// Share of coordinates spiked on each sparse outlier row.
pub const SPIKE_FRACTION: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMode {
    DenseShift,
    SparseSpike,
}

impl OutlierMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OutlierMode::DenseShift => "dense_shift",
            OutlierMode::SparseSpike => "sparse_spike",
        }
    }
}

impl std::fmt::Display for OutlierMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OutlierMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense_shift" | "dense" => Ok(OutlierMode::DenseShift),
            "sparse_spike" | "sparse" => Ok(OutlierMode::SparseSpike),
            other => Err(format!("unknown outlier mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub captions_per_scene: usize,
    pub dim: usize,
    pub consensus_rank: usize,
    /// Per-coordinate noise scale; each row draws `σ·u` with `u ~ U(0, 1.5)`.
    pub noise_sigma: f64,
    pub outlier_count: usize,
    pub outlier_strength: f64,
    pub outlier_mode: OutlierMode,
    pub normalize_rows: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            captions_per_scene: 10,
            dim: 64,
            consensus_rank: 2,
            noise_sigma: 0.05,
            outlier_count: 1,
            outlier_strength: 1.0,
            outlier_mode: OutlierMode::DenseShift,
            normalize_rows: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_owned()));
        let n = self.captions_per_scene;
        if n == 0 || self.dim == 0 {
            return bad("captions_per_scene and dim must be positive");
        }
        if self.outlier_count >= n {
            return bad("outlier_count must be smaller than captions_per_scene");
        }
        if self.consensus_rank == 0 || self.consensus_rank >= n {
            return bad("consensus_rank must lie in 1..captions_per_scene");
        }
        if self.consensus_rank >= self.dim {
            return bad("consensus_rank must be smaller than dim");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.outlier_strength.is_finite() && self.outlier_strength >= 0.0) {
            return bad("outlier_strength must be non-negative");
        }
        Ok(())
    }

    pub fn spikes_per_outlier(&self) -> usize {
        ((SPIKE_FRACTION * self.dim as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedScene {
    pub matrix: EmbeddingMatrix,
    pub outlier_flags: Vec<bool>,
    /// Distance of each final row to the planted consensus subspace.
    pub deviation_magnitudes: Vec<f64>,
    /// Spiked coordinates per row (empty outside `SparseSpike` outliers).
    pub spike_positions: Vec<Vec<usize>>,
    /// One-sentence labels: outliers flagged, inliers clean.
    pub gt_labels: Vec<Vec<SentenceLabel>>,
    /// Orthonormal consensus directions, `r* × d`.
    pub consensus_basis: Matrix,
}

impl PlantedScene {
    pub fn outlier_indices(&self) -> Vec<usize> {
        (0..self.outlier_flags.len())
            .filter(|&i| self.outlier_flags[i])
            .collect()
    }

    pub fn spike_count(&self) -> usize {
        self.spike_positions.iter().map(Vec::len).sum()
    }
}

pub fn generate_scene(config: &SynthConfig) -> Result<PlantedScene, SynthError> {
    config.validate()?;
    let n = config.captions_per_scene;
    let d = config.dim;
    let r = config.consensus_rank;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let basis = random_orthonormal_rows(&mut rng, r, d);

    let mut outlier_flags = vec![false; n];
    let mut picked = sample(&mut rng, n, config.outlier_count).into_vec();
    picked.sort_unstable();
    for &i in &picked {
        outlier_flags[i] = true;
    }

    let noise_scale = Uniform::new(0.0, 1.5).expect("valid range");
    let mut rows = Matrix::zeros(n, d);
    let mut spike_positions = vec![Vec::new(); n];
    for i in 0..n {
        let mut coef: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        let norm = l2_norm(&coef);
        if norm > 0.0 {
            coef.iter_mut().for_each(|c| *c /= norm);
        } else {
            coef[0] = 1.0;
        }
        let row = rows.row_mut(i);
        for (k, &c) in coef.iter().enumerate() {
            for (x, &b) in row.iter_mut().zip(basis.row(k)) {
                *x += c * b;
            }
        }

        let sigma = config.noise_sigma * noise_scale.sample(&mut rng);
        for x in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += sigma * z;
        }

        if outlier_flags[i] {
            match config.outlier_mode {
                OutlierMode::DenseShift => {
                    let w = orthogonal_unit(&mut rng, &basis);
                    for (x, wj) in row.iter_mut().zip(w) {
                        *x += config.outlier_strength * wj;
                    }
                }
                OutlierMode::SparseSpike => {
                    let mut pos = sample(&mut rng, d, config.spikes_per_outlier()).into_vec();
                    pos.sort_unstable();
                    for &p in &pos {
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        row[p] += sign * config.outlier_strength;
                    }
                    spike_positions[i] = pos;
                }
            }
        }
    }

    if config.normalize_rows {
        rows = normalize_rows(&rows).0;
    }

    let deviation_magnitudes = rows
        .row_iter()
        .map(|row| distance_to_row_space(row, &basis))
        .collect();
    let gt_labels = outlier_flags
        .iter()
        .enumerate()
        .map(|(i, &out)| {
            if out {
                vec![SentenceLabel::new(format!("Caption {i} describes something absent."), true)]
            } else {
                vec![SentenceLabel::new(format!("Caption {i} matches the scene."), false)]
            }
        })
        .collect();
    let ids = (0..n).map(|i| format!("c{i:02}")).collect();
    let matrix = EmbeddingMatrix::new(rows, ids)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;

    Ok(PlantedScene {
        matrix,
        outlier_flags,
        deviation_magnitudes,
        spike_positions,
        gt_labels,
        consensus_basis: basis,
    })
}

/// `‖x − P x‖` where `P` projects onto the span of `basis`' (orthonormal) rows.
pub fn distance_to_row_space(x: &[f64], basis: &Matrix) -> f64 {
    let mut resid = x.to_vec();
    for b in basis.row_iter() {
        let c = dot(x, b);
        for (r, &bj) in resid.iter_mut().zip(b) {
            *r -= c * bj;
        }
    }
    l2_norm(&resid)
}

fn random_orthonormal_rows(rng: &mut ChaCha8Rng, r: usize, d: usize) -> Matrix {
    let mut q = Matrix::zeros(r, d);
    let mut k = 0;
    while k < r {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        gram_schmidt(&mut v, &q, k);
        let norm = l2_norm(&v);
        if norm < 1e-8 {
            continue;
        }
        q.row_mut(k).iter_mut().zip(&v).for_each(|(o, x)| *o = x / norm);
        k += 1;
    }
    q
}

fn orthogonal_unit(rng: &mut ChaCha8Rng, basis: &Matrix) -> Vec<f64> {
    let d = basis.cols();
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        gram_schmidt(&mut v, basis, basis.rows());
        // Second pass for numerical orthogonality.
        gram_schmidt(&mut v, basis, basis.rows());
        let norm = l2_norm(&v);
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

fn gram_schmidt(v: &mut [f64], q: &Matrix, upto: usize) {
    for k in 0..upto {
        let qk = q.row(k);
        let c = dot(v, qk);
        for (x, &b) in v.iter_mut().zip(qk) {
            *x -= c * b;
        }
    }
}

/// Mixes a base seed with an index into an independent-looking 64-bit seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
