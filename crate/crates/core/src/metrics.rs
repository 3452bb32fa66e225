//! Ground-truth hallucination fractions, selection outcomes and Spearman
//! sorting consistency.
//!
//! Two selection quantities are kept apart: `selected_fraction` is the share
//! of hallucinated sentences in the selected caption, while `correct` (and
//! corpus accuracy) asks whether that caption is entirely clean.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("caption text is empty")]
    EmptyCaption,
    #[error("caption has no labelled sentences")]
    NoSentences,
    #[error("selected index {selected} out of range for {len} captions")]
    SelectedOutOfRange { selected: usize, len: usize },
    #[error("caption {index} has no sentence labels")]
    MissingLabels { index: usize },
    #[error("no scenes to aggregate")]
    EmptyCorpus,
    #[error("score vectors differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("at least two captions are needed for a rank correlation, got {0}")]
    TooFew(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceLabel {
    pub text: String,
    pub hallucinated: bool,
}

impl SentenceLabel {
    pub fn new(text: impl Into<String>, hallucinated: bool) -> Self {
        Self {
            text: text.into(),
            hallucinated,
        }
    }
}

/// Splits at `.`, `!` or `?` followed by whitespace or end of text.
///
/// Terminators stay with their sentence. Abbreviations such as "e.g. this"
/// split too; the rule is purely lexical.
pub fn split_sentences(text: &str) -> Result<Vec<String>, MetricsError> {
    if text.trim().is_empty() {
        return Err(MetricsError::EmptyCaption);
    }
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let boundary = chars.peek().is_none_or(|&(_, next)| next.is_whitespace());
        if boundary {
            let end = i + c.len_utf8();
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
    }
    push_trimmed(&mut out, &text[start..]);
    Ok(out)
}

fn push_trimmed(out: &mut Vec<String>, segment: &str) {
    let s = segment.trim();
    if !s.is_empty() {
        out.push(s.to_owned());
    }
}

/// Share of a caption's sentences flagged as hallucinated.
pub fn gt_caption_score(labels: &[SentenceLabel]) -> Result<f64, MetricsError> {
    if labels.is_empty() {
        return Err(MetricsError::NoSentences);
    }
    let flagged = labels.iter().filter(|l| l.hallucinated).count();
    Ok(flagged as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub selected_fraction: f64,
    pub correct: bool,
}

/// `gt_scores[i]` is `None` when caption `i` carries no labels.
pub fn scene_selection_outcome(
    gt_scores: &[Option<f64>],
    selected: usize,
) -> Result<SelectionOutcome, MetricsError> {
    let entry = gt_scores
        .get(selected)
        .ok_or(MetricsError::SelectedOutOfRange {
            selected,
            len: gt_scores.len(),
        })?;
    let fraction = entry.ok_or(MetricsError::MissingLabels { index: selected })?;
    Ok(SelectionOutcome {
        selected_fraction: fraction,
        correct: fraction == 0.0,
    })
}

pub fn selection_accuracy(correct: &[bool]) -> Result<f64, MetricsError> {
    if correct.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedReason {
    ConstantScores,
    ConstantGroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Spearman {
    Defined(f64),
    Undefined(UndefinedReason),
}

impl Spearman {
    pub fn value(self) -> Option<f64> {
        match self {
            Spearman::Defined(v) => Some(v),
            Spearman::Undefined(_) => None,
        }
    }
}

/// 1-based ranks with tied values sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation of the average-rank vectors.
pub fn spearman_rho(h: &[f64], h_gt: &[f64]) -> Result<Spearman, MetricsError> {
    if h.len() != h_gt.len() {
        return Err(MetricsError::LengthMismatch {
            left: h.len(),
            right: h_gt.len(),
        });
    }
    if h.len() < 2 {
        return Err(MetricsError::TooFew(h.len()));
    }
    let rx = average_ranks(h);
    let ry = average_ranks(h_gt);
    // Both rank vectors have mean (n+1)/2 regardless of ties.
    let mean = (h.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in rx.iter().zip(&ry) {
        let (dx, dy) = (x - mean, y - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Ok(Spearman::Undefined(UndefinedReason::ConstantScores));
    }
    if syy == 0.0 {
        return Ok(Spearman::Undefined(UndefinedReason::ConstantGroundTruth));
    }
    Ok(Spearman::Defined((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub defined: usize,
    pub undefined: usize,
    /// `#(ρ > 0) / #defined`; 0 when nothing is defined.
    pub positive_fraction: f64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
}

pub fn correlation_summary(rhos: &[f64], undefined: usize) -> CorrelationSummary {
    if rhos.is_empty() {
        return CorrelationSummary {
            defined: 0,
            undefined,
            positive_fraction: 0.0,
            mean: 0.0,
            variance: 0.0,
        };
    }
    let n = rhos.len() as f64;
    let mean = rhos.iter().sum::<f64>() / n;
    let variance = rhos.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    CorrelationSummary {
        defined: rhos.len(),
        undefined,
        positive_fraction: rhos.iter().filter(|&&r| r > 0.0).count() as f64 / n,
        mean,
        variance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvaluation {
    pub scene_id: String,
    pub gt_scores: Vec<f64>,
    pub selected: usize,
    pub selected_fraction: f64,
    pub correct: bool,
    pub spearman_rho: Option<f64>,
    pub undefined_reason: Option<UndefinedReason>,
    /// The ranking itself was an all-way tie.
    pub degenerate: bool,
}

/// Evaluates one scene whose captions are all labelled.
///
/// `labels[i]` is `None` for an unlabelled caption, which makes the scene
/// uncovered (`MissingLabels`).
pub fn evaluate_scene(
    scene_id: &str,
    scores: &[f64],
    selected: usize,
    degenerate: bool,
    labels: &[Option<Vec<SentenceLabel>>],
) -> Result<SceneEvaluation, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let mut gt_scores = Vec::with_capacity(labels.len());
    for (index, l) in labels.iter().enumerate() {
        let l = l.as_deref().ok_or(MetricsError::MissingLabels { index })?;
        gt_scores.push(gt_caption_score(l)?);
    }
    let wrapped: Vec<Option<f64>> = gt_scores.iter().copied().map(Some).collect();
    let outcome = scene_selection_outcome(&wrapped, selected)?;
    let (spearman_rho, undefined_reason) = if scores.len() < 2 {
        (None, Some(UndefinedReason::ConstantScores))
    } else {
        match spearman_rho(scores, &gt_scores)? {
            Spearman::Defined(v) => (Some(v), None),
            Spearman::Undefined(r) => (None, Some(r)),
        }
    };
    Ok(SceneEvaluation {
        scene_id: scene_id.to_owned(),
        gt_scores,
        selected,
        selected_fraction: outcome.selected_fraction,
        correct: outcome.correct,
        spearman_rho,
        undefined_reason,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub scenes: usize,
    pub evaluated: usize,
    pub uncovered: usize,
    pub correct: usize,
    /// Share of evaluated scenes whose selected caption is hallucination-free.
    pub accuracy: f64,
    /// Mean hallucinated-sentence fraction of the selected captions.
    pub mean_selected_fraction: f64,
    pub degenerate: usize,
    pub correlation: CorrelationSummary,
}

/// Aggregates evaluations in scene-id order; `uncovered` counts scenes that
/// could not be evaluated.
pub fn corpus_report(evaluations: &[SceneEvaluation], uncovered: usize) -> CorpusReport {
    let mut sorted: Vec<&SceneEvaluation> = evaluations.iter().collect();
    sorted.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let flags: Vec<bool> = sorted.iter().map(|e| e.correct).collect();
    let accuracy = selection_accuracy(&flags).unwrap_or(0.0);
    let rhos: Vec<f64> = sorted.iter().filter_map(|e| e.spearman_rho).collect();
    let undefined = sorted.len() - rhos.len();
    let mean_selected_fraction = if sorted.is_empty() {
        0.0
    } else {
        sorted.iter().map(|e| e.selected_fraction).sum::<f64>() / sorted.len() as f64
    };
    CorpusReport {
        scenes: sorted.len() + uncovered,
        evaluated: sorted.len(),
        uncovered,
        correct: flags.iter().filter(|&&c| c).count(),
        accuracy,
        mean_selected_fraction,
        degenerate: sorted.iter().filter(|e| e.degenerate).count(),
        correlation: correlation_summary(&rhos, undefined),
    }
}
