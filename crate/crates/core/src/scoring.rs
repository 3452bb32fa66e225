//! Per-caption hallucination scores from the residual matrix, and the
//! ascending ranking that picks the most consensus-consistent caption.

use serde::{Deserialize, Serialize};

use crate::decomposition::{DecompositionOutput, Method};

/// Spread below which every score counts as tied.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    /// `h_i = ‖E_i,:‖₂`, aligned with matrix rows.
    pub scores: Vec<f64>,
    pub method: Method,
    pub rank: usize,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.scores.iter().map(|h| h * h).sum()
    }
}

pub fn hallucination_scores(decomposition: &DecompositionOutput) -> ScoreVector {
    ScoreVector {
        scores: decomposition.residual.row_norms(),
        method: decomposition.method,
        rank: decomposition.rank,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingResult {
    /// Row indices by ascending score, ties by ascending index.
    pub ordering: Vec<usize>,
    pub selected: usize,
    /// All scores within [`DEGENERATE_SPREAD`] of each other.
    pub degenerate: bool,
}

impl RankingResult {
    /// 1-based position of each row in the ordering.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.ordering.len()];
        for (p, &row) in self.ordering.iter().enumerate() {
            pos[row] = p + 1;
        }
        pos
    }
}

/// Sorts ascending and selects the first caption.
///
/// Panics on an empty score vector; a scene always has at least one caption.
pub fn rank_and_select(scores: &ScoreVector) -> RankingResult {
    rank_scores(&scores.scores)
}

pub fn rank_scores(scores: &[f64]) -> RankingResult {
    assert!(!scores.is_empty(), "cannot rank an empty score vector");
    let mut ordering: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps equal scores in index order.
    ordering.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    RankingResult {
        selected: ordering[0],
        ordering,
        degenerate: hi - lo < DEGENERATE_SPREAD,
    }
}
