//! Ranking and evaluation output as line-delimited records tagged by kind.
//!
//! Rankings are written one caption per line, scenes ascending by id and
//! captions in ranking order, followed by a single summary line. Floats use
//! the shortest decimal form that parses back to the same value, so files
//! are byte-stable and exact.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::decomposition::Method;
use crate::metrics::{CorpusReport, SceneEvaluation};
use crate::scoring::{rank_scores, RankingResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRanking {
    pub caption_id: String,
    pub score: f64,
    /// 1-based position in the ranking.
    pub rank: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRanking {
    pub scene_id: String,
    pub method: Method,
    pub rank_used: usize,
    /// In ranking order.
    pub captions: Vec<CaptionRanking>,
}

impl SceneRanking {
    pub fn new(
        scene_id: impl Into<String>,
        caption_ids: &[String],
        scores: &[f64],
        ranking: &RankingResult,
        method: Method,
        rank_used: usize,
    ) -> Self {
        let captions = ranking
            .ordering
            .iter()
            .enumerate()
            .map(|(pos, &i)| CaptionRanking {
                caption_id: caption_ids[i].clone(),
                score: scores[i],
                rank: pos + 1,
                selected: i == ranking.selected,
            })
            .collect();
        Self {
            scene_id: scene_id.into(),
            method,
            rank_used,
            captions,
        }
    }

    pub fn selected(&self) -> Option<&CaptionRanking> {
        self.captions.iter().find(|c| c.selected)
    }

    /// Scores aligned to `caption_ids`; `None` if any id is absent.
    pub fn scores_for(&self, caption_ids: &[String]) -> Option<Vec<f64>> {
        caption_ids
            .iter()
            .map(|id| self.captions.iter().find(|c| &c.caption_id == id).map(|c| c.score))
            .collect()
    }

    /// Whether every score ties, by the scoring module's rule.
    pub fn is_degenerate(&self) -> bool {
        let scores: Vec<f64> = self.captions.iter().map(|c| c.score).collect();
        !scores.is_empty() && rank_scores(&scores).degenerate
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneFailure {
    pub scene_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingSummary {
    pub scenes: usize,
    pub ranked: usize,
    pub failed: usize,
    pub captions: usize,
    pub degenerate: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum RankingLine {
    Caption {
        scene_id: String,
        caption_id: String,
        score: f64,
        rank: usize,
        selected: bool,
        method: Method,
        rank_used: usize,
    },
    Failure(SceneFailure),
    Summary(RankingSummary),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankingFile {
    pub rankings: Vec<SceneRanking>,
    pub failures: Vec<SceneFailure>,
    pub summary: Option<RankingSummary>,
}

pub fn rankings_to_string(rankings: &[SceneRanking], failures: &[SceneFailure]) -> String {
    enum Entry<'a> {
        Ranked(&'a SceneRanking),
        Failed(&'a SceneFailure),
    }
    let mut entries: Vec<(&str, Entry)> = rankings
        .iter()
        .map(|r| (r.scene_id.as_str(), Entry::Ranked(r)))
        .chain(failures.iter().map(|f| (f.scene_id.as_str(), Entry::Failed(f))))
        .collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));

    let mut out = Vec::new();
    for (_, entry) in entries {
        match entry {
            Entry::Ranked(r) => {
                for c in &r.captions {
                    push_line(
                        &mut out,
                        &RankingLine::Caption {
                            scene_id: r.scene_id.clone(),
                            caption_id: c.caption_id.clone(),
                            score: c.score,
                            rank: c.rank,
                            selected: c.selected,
                            method: r.method,
                            rank_used: r.rank_used,
                        },
                    );
                }
            }
            Entry::Failed(f) => push_line(&mut out, &RankingLine::Failure(f.clone())),
        }
    }
    let summary = RankingSummary {
        scenes: rankings.len() + failures.len(),
        ranked: rankings.len(),
        failed: failures.len(),
        captions: rankings.iter().map(|r| r.captions.len()).sum(),
        degenerate: rankings.iter().filter(|r| r.is_degenerate()).count(),
    };
    push_line(&mut out, &RankingLine::Summary(summary));
    String::from_utf8(out).expect("json is utf-8")
}

pub fn write_rankings(
    path: impl AsRef<Path>,
    rankings: &[SceneRanking],
    failures: &[SceneFailure],
) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, rankings_to_string(rankings, failures)).map_err(|e| IoError::io(path, e))
}

pub fn read_rankings(path: impl AsRef<Path>) -> Result<RankingFile, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_rankings(&text)
}

pub fn parse_rankings(text: &str) -> Result<RankingFile, IoError> {
    let mut file = RankingFile::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RankingLine = serde_json::from_str(line).map_err(|e| IoError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        match record {
            RankingLine::Caption {
                scene_id,
                caption_id,
                score,
                rank,
                selected,
                method,
                rank_used,
            } => {
                let entry = CaptionRanking {
                    caption_id,
                    score,
                    rank,
                    selected,
                };
                match file.rankings.last_mut() {
                    Some(r) if r.scene_id == scene_id => r.captions.push(entry),
                    _ => file.rankings.push(SceneRanking {
                        scene_id,
                        method,
                        rank_used,
                        captions: vec![entry],
                    }),
                }
            }
            RankingLine::Failure(f) => file.failures.push(f),
            RankingLine::Summary(s) => file.summary = Some(s),
        }
    }
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UncoveredScene {
    pub scene_id: String,
    pub reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine {
    Scene(SceneEvaluation),
    Uncovered(UncoveredScene),
    Report(CorpusReport),
}

pub fn report_to_string(
    evaluations: &[SceneEvaluation],
    uncovered: &[UncoveredScene],
    report: &CorpusReport,
) -> String {
    let mut evals: Vec<&SceneEvaluation> = evaluations.iter().collect();
    evals.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let mut unc: Vec<&UncoveredScene> = uncovered.iter().collect();
    unc.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));

    let mut out = Vec::new();
    for e in evals {
        push_line(&mut out, &ReportLine::Scene(e.clone()));
    }
    for u in unc {
        push_line(&mut out, &ReportLine::Uncovered(u.clone()));
    }
    push_line(&mut out, &ReportLine::Report(report.clone()));
    String::from_utf8(out).expect("json is utf-8")
}

pub fn write_report(
    path: impl AsRef<Path>,
    evaluations: &[SceneEvaluation],
    uncovered: &[UncoveredScene],
    report: &CorpusReport,
) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, report_to_string(evaluations, uncovered, report))
        .map_err(|e| IoError::io(path, e))
}

/// Reads back the corpus summary line of an evaluation file.
pub fn read_corpus_report(path: impl AsRef<Path>) -> Result<Option<CorpusReport>, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut found = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ReportLine = serde_json::from_str(line).map_err(|e| IoError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let ReportLine::Report(r) = record {
            found = Some(r);
        }
    }
    Ok(found)
}

/// Per-scene decomposition and scoring latency, excluding any embedding fetch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub workers: usize,
    pub wall_seconds: f64,
    pub median_scene_seconds: f64,
    pub max_scene_seconds: f64,
    pub scenes: Vec<SceneTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTiming {
    pub scene_id: String,
    pub seconds: f64,
}

pub fn write_timing(path: impl AsRef<Path>, timing: &TimingReport) -> Result<(), IoError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(timing).expect("timing serializes");
    std::fs::write(path, text + "\n").map_err(|e| IoError::io(path, e))
}

fn push_line<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    serde_json::to_writer(&mut *out, value).expect("record serializes");
    out.write_all(b"\n").expect("write to Vec");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::corpus_report;

    fn ranking(id: &str, scores: &[f64]) -> SceneRanking {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("c{i}")).collect();
        SceneRanking::new(id, &ids, scores, &rank_scores(scores), Method::Svd, 1)
    }

    #[test]
    fn scenes_sorted_and_captions_by_score() {
        let text = rankings_to_string(
            &[ranking("b", &[0.3, 0.1]), ranking("a", &[0.2, 0.2])],
            &[SceneFailure {
                scene_id: "ab".into(),
                error: "boom".into(),
            }],
        );
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].contains(r#""scene_id":"a","caption_id":"c0""#));
        assert!(lines[1].contains(r#""scene_id":"a","caption_id":"c1""#));
        assert!(lines[2].contains(r#""record":"failure""#));
        assert!(lines[3].contains(r#""caption_id":"c1","score":0.1,"rank":1,"selected":true"#));
        assert!(lines[5].contains(r#""record":"summary","scenes":3,"ranked":2,"failed":1"#));
        assert!(lines[5].contains(r#""degenerate":1"#));
    }

    #[test]
    fn empty_corpus_has_only_summary() {
        let text = rankings_to_string(&[], &[]);
        assert_eq!(
            text,
            "{\"record\":\"summary\",\"scenes\":0,\"ranked\":0,\"failed\":0,\"captions\":0,\"degenerate\":0}\n"
        );
    }

    #[test]
    fn rankings_round_trip() {
        let rankings = vec![ranking("a", &[0.1 + 0.2, 1e-17, 0.5]), ranking("b", &[2.0])];
        let failures = vec![SceneFailure {
            scene_id: "c".into(),
            error: "x".into(),
        }];
        let parsed = parse_rankings(&rankings_to_string(&rankings, &failures)).unwrap();
        assert_eq!(parsed.rankings, rankings);
        assert_eq!(parsed.failures, failures);
        assert_eq!(parsed.summary.unwrap().captions, 4);
        let ids = vec!["c0".to_owned(), "c1".to_owned(), "c2".to_owned()];
        assert_eq!(parsed.rankings[0].scores_for(&ids).unwrap()[0], 0.1 + 0.2);
    }

    #[test]
    fn report_lines() {
        let report = corpus_report(&[], 2);
        let text = report_to_string(
            &[],
            &[UncoveredScene {
                scene_id: "z".into(),
                reason: "no labels".into(),
            }],
            &report,
        );
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().last().unwrap().starts_with(r#"{"record":"report","scenes":2"#));
    }
}
