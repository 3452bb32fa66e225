use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context};
use consensus_rank::io::provider::ProviderConfig;
use consensus_rank::io::records::{load_scenes, write_scenes, CaptionRecord, SceneRecord};
use consensus_rank::io::results::{
    read_rankings, write_rankings, write_report, write_timing, RankingFile, UncoveredScene,
};
use consensus_rank::metrics::{corpus_report, evaluate_scene, MetricsError};
use consensus_rank::pipeline::{rank_corpus, resolve_embeddings};
use consensus_rank::reports::{benchmark_csv, emit_decomposition_reports, emit_projection_report};
use consensus_rank::synth::benchmark::{run_benchmark, BenchmarkGrid};
use consensus_rank::synth::{derive_seed, generate_scene, OutlierMode, SynthConfig};
use consensus_rank::{decompose, DecompositionConfig, DecompositionOutput, EmbeddingMatrix};
use rayon::prelude::*;

use crate::args::{EvaluateArgs, ProviderArgs, RankArgs, ReportArgs, SynthArgs};
use crate::{CliError, Outcome};

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Config(e.into())
}

fn run_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Run(e.into())
}

fn workers(requested: Option<usize>) -> Result<usize, CliError> {
    match requested {
        Some(0) => Err(config_err(anyhow!("--workers must be at least 1"))),
        Some(w) => Ok(w),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(run_err)
}

fn decomposition_config(cfg: DecompositionConfig) -> Result<DecompositionConfig, CliError> {
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn provider_config(a: &ProviderArgs) -> Result<Option<ProviderConfig>, CliError> {
    let Some(url) = &a.provider_url else {
        if a.provider_model.is_some() {
            return Err(config_err(anyhow!("--provider-model needs --provider-url")));
        }
        return Ok(None);
    };
    let model = a
        .provider_model
        .clone()
        .ok_or_else(|| config_err(anyhow!("--provider-url needs --provider-model")))?;
    let mut cfg = ProviderConfig::new(url.clone(), model);
    cfg.cache_dir = a.cache_dir.clone();
    cfg.max_in_flight = a.provider_max_in_flight;
    cfg.timeout = Duration::from_secs(a.provider_timeout_secs);
    cfg.validate().map_err(config_err)?;
    Ok(Some(cfg))
}

fn load(path: &Path) -> Result<Vec<SceneRecord>, CliError> {
    load_scenes(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(config_err)
}

/// File-name-safe form of a scene id.
fn file_stem(scene_id: &str) -> String {
    scene_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn emit_scene_reports(
    scene_id: &str,
    caption_ids: &[String],
    out: &DecompositionOutput,
    dir: &Path,
    svg: bool,
) -> anyhow::Result<()> {
    let stem = file_stem(scene_id);
    emit_decomposition_reports(out, dir, &stem)?;
    if caption_ids.len() >= 3 {
        let m = EmbeddingMatrix::new(out.input.clone(), caption_ids.to_vec())?;
        let scores = out.residual.row_norms();
        emit_projection_report(&m, &scores, dir, &stem, svg)?;
    } else {
        log::warn!("scene {scene_id}: fewer than 3 captions, no projection written");
    }
    Ok(())
}

pub fn cmd_rank(a: &RankArgs) -> Result<Outcome, CliError> {
    let config = decomposition_config(a.decomposition.to_config())?;
    let threads = workers(a.workers)?;
    let provider = provider_config(&a.provider)?;
    let mut scenes = load(&a.input)?;

    let fetched = resolve_embeddings(&mut scenes, provider.as_ref())
        .context("fetching embeddings")
        .map_err(run_err)?;
    if fetched > 0 {
        log::info!("fetched {fetched} embeddings");
    }

    let ranked = rank_corpus(&scenes, &config, threads, a.emit_reports).map_err(run_err)?;
    write_rankings(&a.output, &ranked.rankings(), &ranked.failures).map_err(run_err)?;
    if let Some(path) = &a.timing_output {
        write_timing(path, &ranked.timing).map_err(run_err)?;
    }
    log::info!(
        "{} scenes in {:.3} s, median {:.3} ms per scene",
        ranked.scenes.len(),
        ranked.timing.wall_seconds,
        ranked.timing.median_scene_seconds * 1e3
    );

    if a.emit_reports {
        for s in &ranked.scenes {
            let out = s.output.as_ref().expect("outputs kept for reports");
            let scene = scenes
                .iter()
                .find(|r| r.scene_id == s.ranking.scene_id)
                .expect("ranked scene comes from the input");
            let ids: Vec<String> = scene.captions.iter().map(|c| c.caption_id.clone()).collect();
            emit_scene_reports(&scene.scene_id, &ids, out, &a.report_dir, false).map_err(run_err)?;
        }
    }

    for f in &ranked.failures {
        eprintln!("scene {}: {}", f.scene_id, f.error);
    }
    Ok(Outcome {
        processed: ranked.scenes.len(),
        failed: ranked.failures.len(),
    })
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<Outcome, CliError> {
    let scenes = load(&a.input)?;
    let rankings: RankingFile = match &a.rankings {
        Some(path) => read_rankings(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(config_err)?,
        None => {
            let config = decomposition_config(a.decomposition.to_config())?;
            let ranked = rank_corpus(&scenes, &config, workers(a.workers)?, false).map_err(run_err)?;
            RankingFile {
                rankings: ranked.rankings(),
                failures: ranked.failures,
                summary: None,
            }
        }
    };
    let by_id: HashMap<&str, _> = rankings
        .rankings
        .iter()
        .map(|r| (r.scene_id.as_str(), r))
        .collect();
    let failed_ranking: HashMap<&str, &str> = rankings
        .failures
        .iter()
        .map(|f| (f.scene_id.as_str(), f.error.as_str()))
        .collect();

    let mut evaluations = Vec::new();
    let mut uncovered = Vec::new();
    let mut failed = 0;
    for scene in &scenes {
        let id = scene.scene_id.as_str();
        let uncover = |reason: String| UncoveredScene {
            scene_id: id.to_owned(),
            reason,
        };
        let Some(ranking) = by_id.get(id) else {
            let reason = match failed_ranking.get(id) {
                Some(err) => format!("ranking failed: {err}"),
                None => "no ranking for this scene".to_owned(),
            };
            uncovered.push(uncover(reason));
            continue;
        };
        let ids: Vec<String> = scene.captions.iter().map(|c| c.caption_id.clone()).collect();
        let scores = match ranking.scores_for(&ids) {
            Some(s) if ranking.captions.len() == ids.len() => s,
            _ => {
                eprintln!(
                    "scene {id}: {}",
                    MetricsError::LengthMismatch {
                        left: ranking.captions.len(),
                        right: ids.len()
                    }
                );
                failed += 1;
                continue;
            }
        };
        let selected = ranking
            .selected()
            .and_then(|s| ids.iter().position(|c| *c == s.caption_id))
            .expect("a ranked scene has a selected caption among its captions");
        match evaluate_scene(id, &scores, selected, ranking.is_degenerate(), &scene.labels()) {
            Ok(e) => evaluations.push(e),
            Err(MetricsError::MissingLabels { index }) => {
                uncovered.push(uncover(format!("caption {} has no sentence labels", ids[index])))
            }
            Err(MetricsError::NoSentences) => {
                uncovered.push(uncover("a caption has an empty sentence list".to_owned()))
            }
            Err(e) => {
                eprintln!("scene {id}: {e}");
                failed += 1;
            }
        }
    }

    let report = corpus_report(&evaluations, uncovered.len());
    write_report(&a.output, &evaluations, &uncovered, &report).map_err(run_err)?;
    println!(
        "scenes {} evaluated {} uncovered {} accuracy {:.4} mean selected fraction {:.4} spearman mean {:.4} positive {:.4} undefined {}",
        report.scenes,
        report.evaluated,
        report.uncovered,
        report.accuracy,
        report.mean_selected_fraction,
        report.correlation.mean,
        report.correlation.positive_fraction,
        report.correlation.undefined
    );
    Ok(Outcome {
        processed: evaluations.len(),
        failed,
    })
}

pub fn cmd_synth(a: &SynthArgs) -> Result<Outcome, CliError> {
    let base = SynthConfig {
        captions_per_scene: a.captions,
        dim: a.dim,
        consensus_rank: a.consensus_rank,
        outlier_count: a.outlier_count,
        normalize_rows: !a.no_normalize,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let defaults = BenchmarkGrid::default();
    let grid = BenchmarkGrid {
        base: base.clone(),
        deltas: a.deltas.clone(),
        sigmas: a.sigmas.clone(),
        modes: a.modes.clone(),
        trials: a.trials,
        seed: a.seed,
        decomposition: DecompositionConfig {
            variance_threshold: a.variance_threshold,
            ..defaults.decomposition
        },
        arms: defaults.arms,
    };
    grid.validate().map_err(config_err)?;
    let pool = pool(workers(a.workers)?)?;

    let results = pool.install(|| run_benchmark(&grid)).map_err(run_err)?;
    std::fs::write(&a.output, benchmark_csv(&results))
        .with_context(|| format!("writing {}", a.output.display()))
        .map_err(run_err)?;

    if let Some(path) = &a.corpus_output {
        let template = SynthConfig {
            noise_sigma: a.corpus_sigma,
            outlier_strength: a.corpus_delta,
            outlier_mode: a.modes.first().copied().unwrap_or(OutlierMode::DenseShift),
            ..base
        };
        template.validate().map_err(config_err)?;
        let scenes = pool
            .install(|| synthetic_corpus(&template, a.corpus_scenes))
            .map_err(run_err)?;
        write_scenes(path, &scenes).map_err(run_err)?;
    }
    Ok(Outcome {
        processed: results.len(),
        failed: 0,
    })
}

/// `count` labelled scenes, scene `i` seeded with `derive_seed(seed, i)`.
pub fn synthetic_corpus(template: &SynthConfig, count: usize) -> anyhow::Result<Vec<SceneRecord>> {
    let width = count.saturating_sub(1).to_string().len().max(4);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let cfg = SynthConfig {
                seed: derive_seed(template.seed, i as u64),
                ..template.clone()
            };
            let scene = generate_scene(&cfg)?;
            let m = scene.matrix.matrix();
            let captions = scene
                .matrix
                .row_ids()
                .iter()
                .enumerate()
                .map(|(r, id)| CaptionRecord {
                    caption_id: id.clone(),
                    model_tag: "synthetic".to_owned(),
                    text: scene.gt_labels[r]
                        .iter()
                        .map(|l| l.text.as_str())
                        .collect::<Vec<_>>()
                        .join(" "),
                    embedding: Some(m.row(r).to_vec()),
                    sentences: Some(scene.gt_labels[r].clone()),
                })
                .collect();
            Ok(SceneRecord {
                scene_id: format!("scene_{i:0width$}"),
                captions,
            })
        })
        .collect()
}

pub fn cmd_report(a: &ReportArgs) -> Result<Outcome, CliError> {
    let config = decomposition_config(a.decomposition.to_config())?;
    let mut scenes = load(&a.input)?;
    if !a.scene.is_empty() {
        if let Some(missing) = a.scene.iter().find(|id| !scenes.iter().any(|s| &s.scene_id == *id)) {
            return Err(config_err(anyhow!("no scene with id {missing:?}")));
        }
        scenes.retain(|s| a.scene.contains(&s.scene_id));
    }
    let pool = pool(workers(a.workers)?)?;
    let results: Vec<anyhow::Result<()>> = pool.install(|| {
        scenes
            .par_iter()
            .map(|scene| {
                let m = scene.embedding_matrix()?;
                let out = decompose(&m, &config)?;
                emit_scene_reports(&scene.scene_id, m.row_ids(), &out, &a.report_dir, a.svg)
            })
            .collect()
    });
    let mut failed = 0;
    for (scene, r) in scenes.iter().zip(&results) {
        if let Err(e) = r {
            eprintln!("scene {}: {e:#}", scene.scene_id);
            failed += 1;
        }
    }
    Ok(Outcome {
        processed: scenes.len() - failed,
        failed,
    })
}
