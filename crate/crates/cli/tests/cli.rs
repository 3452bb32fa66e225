use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_consensus-rank"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_lines(path: &Path, lines: &[Value]) {
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(path, text).unwrap();
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn caption(scene: &str, id: &str, emb: &[f64], sentences: Option<&[(&str, u8)]>) -> Value {
    let mut v = json!({"scene_id": scene, "caption_id": id, "model": "m", "text": id, "embedding": emb});
    if let Some(s) = sentences {
        v["sentences"] = s
            .iter()
            .map(|(t, h)| json!({"text": t, "hallucinated": h}))
            .collect();
    }
    v
}

/// Three scenes of four captions each; the last caption of every scene is off-consensus.
fn ranked_fixture(dir: &Path) -> PathBuf {
    let path = dir.join("scenes.jsonl");
    let mut lines = Vec::new();
    for s in 0..3 {
        let scene = format!("scene-{s}");
        for c in 0..4 {
            let t = (s * 4 + c) as f64;
            let emb = if c == 3 {
                vec![0.1, 0.0, 1.0, 0.3 + 0.01 * t]
            } else {
                vec![1.0, 0.5 + 0.01 * t, 0.02 * c as f64, 0.0]
            };
            lines.push(caption(&scene, &format!("c{c}"), &emb, None));
        }
    }
    write_lines(&path, &lines);
    path
}

#[test]
fn rank_writes_one_selection_per_scene() {
    let dir = tempfile::tempdir().unwrap();
    let input = ranked_fixture(dir.path());
    let out = dir.path().join("rankings.jsonl");
    let o = run(&["rank", "--input", p(&input), "--output", p(&out), "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = records(&out);
    assert_eq!(recs.len(), 13);
    let selected: Vec<&Value> = recs.iter().filter(|r| r["selected"] == true).collect();
    assert_eq!(selected.len(), 3);
    assert!(selected.iter().all(|r| r["caption_id"] != "c3"));
    let summary = recs.last().unwrap();
    assert_eq!(summary["record"], "summary");
    assert_eq!(summary["ranked"], 3);
    assert_eq!(summary["failed"], 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = ranked_fixture(dir.path());
    let out = dir.path().join("r.jsonl");

    let bad_tau = run(&["rank", "--input", p(&input), "--output", p(&out), "--variance-threshold", "1.5"]);
    assert_eq!(bad_tau.status.code(), Some(2));
    let missing = run(&["rank", "--input", p(&dir.path().join("none.jsonl")), "--output", p(&out)]);
    assert_eq!(missing.status.code(), Some(2));
    let zero_workers = run(&["rank", "--input", p(&input), "--output", p(&out), "--workers", "0"]);
    assert_eq!(zero_workers.status.code(), Some(2));
    let unknown_flag = run(&["rank", "--bogus"]);
    assert_eq!(unknown_flag.status.code(), Some(2));

    // One text-only scene fails; the others are still ranked and written.
    let mut text = std::fs::read_to_string(&input).unwrap();
    text.push_str(&format!(
        "{}\n",
        json!({"scene_id": "scene-x", "caption_id": "a", "model": "m", "text": "no vector"})
    ));
    let partial = dir.path().join("partial.jsonl");
    std::fs::write(&partial, text).unwrap();
    let o = run(&["rank", "--input", p(&partial), "--output", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let recs = records(&out);
    let failure = recs.iter().find(|r| r["record"] == "failure").unwrap();
    assert_eq!(failure["scene_id"], "scene-x");
    assert_eq!(recs.last().unwrap()["ranked"], 3);

    let ok = run(&["rank", "--input", p(&input), "--output", p(&out)]);
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn evaluate_reports_fraction_correctness_and_undefined_rho() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("labelled.jsonl");
    let four: &[(&str, u8)] = &[
        ("A truck is parked.", 0),
        ("A cyclist passes.", 0),
        ("A dog sits on the roof.", 1),
        ("The light is green.", 0),
    ];
    let clean: &[(&str, u8)] = &[("A truck is parked.", 0)];
    let flagged: &[(&str, u8)] = &[("A dragon lands.", 1)];
    write_lines(
        &input,
        &[
            // The four-sentence caption with one flagged sentence is selected.
            caption("a", "x", &[1.0, 0.0], Some(four)),
            caption("a", "y", &[0.0, 1.0], Some(clean)),
            caption("a", "z", &[1.0, 1.0], Some(flagged)),
            // All captions clean: constant ground truth.
            caption("b", "x", &[1.0, 0.0], Some(clean)),
            caption("b", "y", &[0.0, 1.0], Some(clean)),
            caption("b", "z", &[1.0, 1.0], Some(clean)),
            // One caption lacks labels.
            caption("c", "x", &[1.0, 0.0], Some(clean)),
            caption("c", "y", &[0.0, 1.0], None),
            caption("c", "z", &[1.0, 1.0], Some(clean)),
        ],
    );
    let rank_line = |scene: &str, id: &str, score: f64, rank: usize| {
        json!({"record": "caption", "scene_id": scene, "caption_id": id, "score": score,
               "rank": rank, "selected": rank == 1, "method": "svd", "rank_used": 1})
    };
    let rankings = dir.path().join("rankings.jsonl");
    write_lines(
        &rankings,
        &[
            rank_line("a", "x", 0.1, 1),
            rank_line("a", "y", 0.2, 2),
            rank_line("a", "z", 0.9, 3),
            rank_line("b", "y", 0.1, 1),
            rank_line("b", "x", 0.3, 2),
            rank_line("b", "z", 0.5, 3),
            rank_line("c", "x", 0.1, 1),
            rank_line("c", "y", 0.2, 2),
            rank_line("c", "z", 0.3, 3),
        ],
    );
    let out = dir.path().join("eval.jsonl");
    let o = run(&["evaluate", "--input", p(&input), "--rankings", p(&rankings), "--output", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = records(&out);
    let scene = |id: &str| recs.iter().find(|r| r["record"] == "scene" && r["scene_id"] == id).unwrap();

    let a = scene("a");
    assert_eq!(a["selected_fraction"], 0.25);
    assert_eq!(a["correct"], false);
    assert_eq!(a["gt_scores"], json!([0.25, 0.0, 1.0]));
    // Scores (0.1, 0.2, 0.9) against ground truth (0.25, 0, 1).
    assert_eq!(a["spearman_rho"], 0.5);

    let b = scene("b");
    assert_eq!(b["correct"], true);
    assert!(b["spearman_rho"].is_null());

    let uncovered = recs.iter().find(|r| r["record"] == "uncovered").unwrap();
    assert_eq!(uncovered["scene_id"], "c");

    let report = recs.last().unwrap();
    assert_eq!(report["record"], "report");
    assert_eq!(report["scenes"], 3);
    assert_eq!(report["evaluated"], 2);
    assert_eq!(report["uncovered"], 1);
    assert_eq!(report["accuracy"], 0.5);
    assert_eq!(report["correlation"]["undefined"], 1);
    assert_eq!(report["correlation"]["defined"], 1);
}

#[test]
fn evaluate_ranks_in_process_without_rankings_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let bench = dir.path().join("bench.csv");
    let o = run(&[
        "synth", "--output", p(&bench), "--trials", "2", "--deltas", "1.0", "--sigmas", "0.05",
        "--modes", "dense_shift", "--corpus-output", p(&corpus), "--corpus-scenes", "20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("eval.jsonl");
    let o = run(&["evaluate", "--input", p(&corpus), "--output", p(&out), "--rank-override", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = records(&out).pop().unwrap();
    assert_eq!(report["evaluated"], 20);
    assert_eq!(report["accuracy"], 1.0);
    assert!(report["correlation"]["mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn report_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let input = ranked_fixture(dir.path());
    let reports = dir.path().join("reports");
    let o = run(&[
        "report", "--input", p(&input), "--scene", "scene-1", "--report-dir", p(&reports), "--svg",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&reports)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "scene-1_heatmap.csv",
            "scene-1_projection.csv",
            "scene-1_projection.svg",
            "scene-1_sensitivity.csv",
            "scene-1_spectrum.csv",
        ]
    );
    let svg = std::fs::read_to_string(reports.join("scene-1_projection.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));

    let unknown = run(&["report", "--input", p(&input), "--scene", "nope", "--report-dir", p(&reports)]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = ranked_fixture(dir.path());
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    for round in ["1", "2"] {
        let rank_out = dir.path().join(format!("rank{round}.jsonl"));
        assert!(run(&["rank", "--input", p(&input), "--output", p(&rank_out), "--method", "rpca"]).status.success());
        let synth_out = dir.path().join(format!("synth{round}.csv"));
        assert!(run(&["synth", "--output", p(&synth_out), "--trials", "5", "--seed", "9"]).status.success());
    }
    assert_eq!(read("rank1.jsonl"), read("rank2.jsonl"));
    assert_eq!(read("synth1.csv"), read("synth2.csv"));
    let csv = String::from_utf8(read("synth1.csv")).unwrap();
    // Two modes, three sigmas, three deltas, three arms.
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 3 * 3);
}
