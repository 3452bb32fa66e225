//! Low-rank consensus ranking of candidate captions.
//!
//! Caption embeddings for one scene are stacked into a matrix, split into a
//! low-rank consensus part and a residual, and each caption is scored by the
//! norm of its residual row. The caption with the smallest score is selected.

pub mod decomposition;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod reports;
pub mod scoring;
pub mod svd;
pub mod synth;

pub use decomposition::{
    build_matrix, decompose, decompose_svd, select_rank, singular_spectrum, DecompositionConfig,
    DecompositionError, DecompositionOutput, DecompositionWarning, EmbeddingMatrix, Method,
    SingularSpectrum,
};
pub use decomposition::rpca::decompose_rpca;
pub use matrix::Matrix;
pub use metrics::{
    corpus_report, evaluate_scene, gt_caption_score, spearman_rho, CorpusReport, MetricsError,
    SceneEvaluation, SentenceLabel, Spearman,
};
pub use scoring::{hallucination_scores, rank_and_select, RankingResult, ScoreVector};
pub use synth::{generate_scene, OutlierMode, PlantedScene, SynthConfig};
pub use io::records::{load_scenes, CaptionRecord, SceneRecord};
pub use io::results::{SceneFailure, SceneRanking};
pub use pipeline::{rank_corpus, rank_scene};
