//! Scene-level ranking: matrix → decomposition → scores → ranking, run in
//! parallel across scenes with results ordered by scene id.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::decomposition::{decompose, DecompositionConfig, DecompositionError, DecompositionOutput};
use crate::io::provider::{fetch_embeddings, ProviderConfig, ProviderError};
use crate::io::records::SceneRecord;
use crate::io::results::{SceneFailure, SceneRanking, SceneTiming, TimingReport};
use crate::io::IoError;
use crate::scoring::{hallucination_scores, rank_and_select};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("cannot build worker pool: {0}")]
    WorkerPool(String),
}

#[derive(Debug, Clone)]
pub struct RankedScene {
    pub ranking: SceneRanking,
    /// Kept only when requested, for report emission.
    pub output: Option<DecompositionOutput>,
    pub seconds: f64,
}

pub fn rank_scene(
    scene: &SceneRecord,
    config: &DecompositionConfig,
    keep_output: bool,
) -> Result<RankedScene, PipelineError> {
    let start = Instant::now();
    let m = scene.embedding_matrix()?;
    let out = decompose(&m, config)?;
    let scores = hallucination_scores(&out);
    let ranking = rank_and_select(&scores);
    let seconds = start.elapsed().as_secs_f64();
    for w in &out.warnings {
        log::debug!("scene {}: {w:?}", scene.scene_id);
    }
    Ok(RankedScene {
        ranking: SceneRanking::new(
            scene.scene_id.clone(),
            m.row_ids(),
            &scores.scores,
            &ranking,
            out.method,
            out.rank,
        ),
        output: keep_output.then_some(out),
        seconds,
    })
}

#[derive(Debug, Clone)]
pub struct CorpusRanking {
    /// Ascending by scene id.
    pub scenes: Vec<RankedScene>,
    pub failures: Vec<SceneFailure>,
    pub timing: TimingReport,
}

impl CorpusRanking {
    pub fn rankings(&self) -> Vec<SceneRanking> {
        self.scenes.iter().map(|s| s.ranking.clone()).collect()
    }
}

/// Ranks every scene on a pool of `workers` threads. A failing scene is
/// recorded and the rest continue.
pub fn rank_corpus(
    scenes: &[SceneRecord],
    config: &DecompositionConfig,
    workers: usize,
    keep_outputs: bool,
) -> Result<CorpusRanking, PipelineError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::WorkerPool(e.to_string()))?;
    let start = Instant::now();
    let results: Vec<Result<RankedScene, SceneFailure>> = pool.install(|| {
        scenes
            .par_iter()
            .map(|s| {
                rank_scene(s, config, keep_outputs).map_err(|e| SceneFailure {
                    scene_id: s.scene_id.clone(),
                    error: e.to_string(),
                })
            })
            .collect()
    });
    let wall_seconds = start.elapsed().as_secs_f64();

    let mut ranked = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => ranked.push(s),
            Err(f) => failures.push(f),
        }
    }
    ranked.sort_by(|a, b| a.ranking.scene_id.cmp(&b.ranking.scene_id));
    failures.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));

    let mut secs: Vec<f64> = ranked.iter().map(|s| s.seconds).collect();
    secs.sort_by(f64::total_cmp);
    let timing = TimingReport {
        workers: workers.max(1),
        wall_seconds,
        median_scene_seconds: median(&secs),
        max_scene_seconds: secs.last().copied().unwrap_or(0.0),
        scenes: ranked
            .iter()
            .map(|s| SceneTiming {
                scene_id: s.ranking.scene_id.clone(),
                seconds: s.seconds,
            })
            .collect(),
    };
    Ok(CorpusRanking {
        scenes: ranked,
        failures,
        timing,
    })
}

/// Fills missing embeddings from the provider in one batched fetch. Returns
/// how many captions were filled; without a provider nothing changes.
pub fn resolve_embeddings(
    scenes: &mut [SceneRecord],
    provider: Option<&ProviderConfig>,
) -> Result<usize, ProviderError> {
    let Some(provider) = provider else {
        return Ok(0);
    };
    let missing: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(s, scene)| {
            scene
                .captions
                .iter()
                .enumerate()
                .filter(|(_, c)| c.embedding.is_none())
                .map(move |(c, _)| (s, c))
        })
        .collect();
    if missing.is_empty() {
        return Ok(0);
    }
    let texts: Vec<String> = missing
        .iter()
        .map(|&(s, c)| scenes[s].captions[c].text.clone())
        .collect();
    let vectors = fetch_embeddings(provider, &texts)?;
    for (&(s, c), v) in missing.iter().zip(vectors) {
        scenes[s].captions[c].embedding = Some(v);
    }
    Ok(missing.len())
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}
