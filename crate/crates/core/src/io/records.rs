//! Line-delimited scene input: one JSON object per caption.
//!
//! ```text
//! {"scene_id":"s1","caption_id":"a","model":"m1","text":"A car.","embedding":[0.1,0.2]}
//! {"scene_id":"s1","caption_id":"b","model":"m2","text":"A bus.","sentences":[{"text":"A bus.","hallucinated":1}]}
//! ```
//!
//! Captions are grouped into scenes by `scene_id` in order of first
//! appearance; blank lines are skipped.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::decomposition::EmbeddingMatrix;
use crate::matrix::Matrix;
use crate::metrics::SentenceLabel;

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub caption_id: String,
    pub model_tag: String,
    pub text: String,
    pub embedding: Option<Vec<f64>>,
    pub sentences: Option<Vec<SentenceLabel>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    pub captions: Vec<CaptionRecord>,
}

impl SceneRecord {
    /// Embedding dimension shared by the captions that carry one.
    pub fn dim(&self) -> Option<usize> {
        self.captions
            .iter()
            .find_map(|c| c.embedding.as_ref().map(Vec::len))
    }

    pub fn has_all_embeddings(&self) -> bool {
        self.captions.iter().all(|c| c.embedding.is_some())
    }

    pub fn embedding_matrix(&self) -> Result<EmbeddingMatrix, IoError> {
        let d = self.dim().unwrap_or(0);
        let mut data = Vec::with_capacity(self.captions.len() * d);
        for c in &self.captions {
            let e = c.embedding.as_ref().ok_or_else(|| IoError::MissingEmbeddings {
                scene_id: self.scene_id.clone(),
                caption_id: c.caption_id.clone(),
            })?;
            if e.len() != d {
                return Err(IoError::DimensionMismatch {
                    scene_id: self.scene_id.clone(),
                    caption_id: c.caption_id.clone(),
                    expected: d,
                    got: e.len(),
                });
            }
            data.extend_from_slice(e);
        }
        let ids = self.captions.iter().map(|c| c.caption_id.clone()).collect();
        EmbeddingMatrix::new(Matrix::from_vec(self.captions.len(), d, data), ids).map_err(|e| {
            IoError::InvalidScene {
                scene_id: self.scene_id.clone(),
                message: e.to_string(),
            }
        })
    }

    /// Per-caption sentence labels, `None` where a caption has none.
    pub fn labels(&self) -> Vec<Option<Vec<SentenceLabel>>> {
        self.captions.iter().map(|c| c.sentences.clone()).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionLine {
    scene_id: String,
    caption_id: String,
    model: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentences: Option<Vec<LabelLine>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelLine {
    text: String,
    hallucinated: u8,
}

pub fn load_scenes(path: impl AsRef<Path>) -> Result<Vec<SceneRecord>, IoError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    parse_scenes(BufReader::new(file)).map_err(|e| match e {
        IoError::Io { source, .. } => IoError::io(path, source),
        other => other,
    })
}

pub fn parse_scenes(reader: impl BufRead) -> Result<Vec<SceneRecord>, IoError> {
    let mut scenes: Vec<SceneRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IoError::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: CaptionLine = serde_json::from_str(&line).map_err(|e| IoError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let invalid = |message: String| IoError::InvalidField {
            line: line_no,
            message,
        };
        if raw.scene_id.is_empty() || raw.caption_id.is_empty() {
            return Err(invalid("scene_id and caption_id must be non-empty".into()));
        }
        if let Some(e) = &raw.embedding {
            if e.is_empty() {
                return Err(invalid("embedding is empty".into()));
            }
            if let Some(j) = e.iter().position(|x| !x.is_finite()) {
                return Err(invalid(format!("embedding entry {j} is not finite")));
            }
        }
        let sentences = match raw.sentences {
            None => None,
            Some(list) => Some(
                list.into_iter()
                    .map(|l| match l.hallucinated {
                        0 | 1 => Ok(SentenceLabel::new(l.text, l.hallucinated == 1)),
                        other => Err(IoError::InvalidLabel {
                            line: line_no,
                            value: other,
                        }),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        if !seen.insert((raw.scene_id.clone(), raw.caption_id.clone())) {
            return Err(IoError::DuplicateId {
                scene_id: raw.scene_id,
                caption_id: raw.caption_id,
            });
        }

        let slot = *index.entry(raw.scene_id.clone()).or_insert_with(|| {
            scenes.push(SceneRecord {
                scene_id: raw.scene_id.clone(),
                captions: Vec::new(),
            });
            scenes.len() - 1
        });
        let scene = &mut scenes[slot];
        if let (Some(expected), Some(e)) = (scene.dim(), &raw.embedding) {
            if e.len() != expected {
                return Err(IoError::DimensionMismatch {
                    scene_id: raw.scene_id,
                    caption_id: raw.caption_id,
                    expected,
                    got: e.len(),
                });
            }
        }
        scene.captions.push(CaptionRecord {
            caption_id: raw.caption_id,
            model_tag: raw.model,
            text: raw.text,
            embedding: raw.embedding,
            sentences,
        });
    }
    Ok(scenes)
}

pub fn write_scenes(path: impl AsRef<Path>, scenes: &[SceneRecord]) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, scenes_to_string(scenes)).map_err(|e| IoError::io(path, e))
}

pub fn scenes_to_string(scenes: &[SceneRecord]) -> String {
    let mut out = Vec::new();
    for scene in scenes {
        for c in &scene.captions {
            let line = CaptionLine {
                scene_id: scene.scene_id.clone(),
                caption_id: c.caption_id.clone(),
                model: c.model_tag.clone(),
                text: c.text.clone(),
                embedding: c.embedding.clone(),
                sentences: c.sentences.as_ref().map(|s| {
                    s.iter()
                        .map(|l| LabelLine {
                            text: l.text.clone(),
                            hallucinated: u8::from(l.hallucinated),
                        })
                        .collect()
                }),
            };
            serde_json::to_writer(&mut out, &line).expect("caption line serializes");
            out.write_all(b"\n").expect("write to Vec");
        }
    }
    String::from_utf8(out).expect("json is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<SceneRecord>, IoError> {
        parse_scenes(s.as_bytes())
    }

    const TWO_SCENES: &str = r#"{"scene_id":"s1","caption_id":"a","model":"m","text":"A car.","embedding":[1.0,0.0,0.5]}
{"scene_id":"s1","caption_id":"b","model":"m","text":"A bus.","embedding":[0.0,1.0,0.5]}
{"scene_id":"s2","caption_id":"a","model":"m","text":"A dog.","embedding":[1.0,1.0]}

{"scene_id":"s1","caption_id":"c","model":"m","text":"A van.","embedding":[0.5,0.5,0.5]}
{"scene_id":"s2","caption_id":"b","model":"m","text":"A cat.","embedding":[1.0,2.0]}
{"scene_id":"s2","caption_id":"c","model":"m","text":"A cow.","embedding":[3.0,1.0]}
"#;

    #[test]
    fn groups_by_first_appearance() {
        let scenes = parse(TWO_SCENES).unwrap();
        assert_eq!(scenes.len(), 2);
        assert_eq!(scenes[0].scene_id, "s1");
        let ids: Vec<&str> = scenes[0].captions.iter().map(|c| c.caption_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(scenes[0].dim(), Some(3));
        assert_eq!(scenes[1].embedding_matrix().unwrap().dims(), 2);
    }

    #[test]
    fn dimension_mismatch_names_ids() {
        let input = r#"{"scene_id":"s","caption_id":"a","model":"m","text":"x","embedding":[1,2,3,4]}
{"scene_id":"s","caption_id":"b","model":"m","text":"y","embedding":[1,2,3]}"#;
        match parse(input).unwrap_err() {
            IoError::DimensionMismatch {
                scene_id,
                caption_id,
                expected,
                got,
            } => {
                assert_eq!((scene_id.as_str(), caption_id.as_str()), ("s", "b"));
                assert_eq!((expected, got), (4, 3));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn text_only_scene_loads_but_has_no_matrix() {
        let input = r#"{"scene_id":"s","caption_id":"a","model":"m","text":"x"}"#;
        let scenes = parse(input).unwrap();
        assert!(!scenes[0].has_all_embeddings());
        assert!(matches!(
            scenes[0].embedding_matrix(),
            Err(IoError::MissingEmbeddings { .. })
        ));
    }

    #[test]
    fn malformed_lines_rejected() {
        let missing = r#"{"scene_id":"s","caption_id":"a","text":"x"}"#;
        assert!(matches!(parse(missing), Err(IoError::Parse { line: 1, .. })));
        let wrong_type = "\n{\"scene_id\":\"s\",\"caption_id\":\"a\",\"model\":\"m\",\"text\":\"x\",\"embedding\":\"no\"}";
        assert!(matches!(parse(wrong_type), Err(IoError::Parse { line: 2, .. })));
        let nan = r#"{"scene_id":"s","caption_id":"a","model":"m","text":"x","embedding":[NaN]}"#;
        assert!(matches!(parse(nan), Err(IoError::Parse { .. })));
        let dup = r#"{"scene_id":"s","caption_id":"a","model":"m","text":"x"}
{"scene_id":"s","caption_id":"a","model":"m","text":"y"}"#;
        assert!(matches!(parse(dup), Err(IoError::DuplicateId { .. })));
        let label = r#"{"scene_id":"s","caption_id":"a","model":"m","text":"x","sentences":[{"text":"x","hallucinated":2}]}"#;
        assert!(matches!(parse(label), Err(IoError::InvalidLabel { value: 2, .. })));
        let empty_id = r#"{"scene_id":"","caption_id":"a","model":"m","text":"x"}"#;
        assert!(matches!(parse(empty_id), Err(IoError::InvalidField { .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        let scenes = vec![SceneRecord {
            scene_id: "s".into(),
            captions: vec![CaptionRecord {
                caption_id: "a".into(),
                model_tag: "m".into(),
                text: "A \"quoted\" car.".into(),
                embedding: Some(vec![0.1 + 0.2, 1e-300, -2.5e17, f64::MIN_POSITIVE]),
                sentences: Some(vec![SentenceLabel::new("A car.", true)]),
            }],
        }];
        let text = scenes_to_string(&scenes);
        assert_eq!(parse(&text).unwrap(), scenes);
    }
}
