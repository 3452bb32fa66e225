//! CSV (and optional SVG) data behind the decomposition-analysis plots:
//! singular spectra, matrix heatmap slices, truncation sensitivity, and a
//! principal-component projection of the captions.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::decomposition::{
    DecompositionError, DecompositionOutput, EmbeddingMatrix, Method, SingularSpectrum,
};
use crate::io::IoError;
use crate::matrix::Matrix;
use crate::svd::{thin_svd, SvdError};
use crate::synth::benchmark::CellResult;

/// Heatmaps cover at most this many leading embedding dimensions.
pub const HEATMAP_COLUMNS: usize = 40;
/// Explained-variance levels marked in the sensitivity table.
pub const SENSITIVITY_MARKERS: [f64; 3] = [0.80, 0.90, 0.95];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("projection needs at least 3 captions, got {0}")]
    TooFew(usize),
    #[error("projection scores have length {got}, expected {expected}")]
    ScoreLength { expected: usize, got: usize },
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
}

impl From<SvdError> for ReportError {
    fn from(e: SvdError) -> Self {
        ReportError::Decomposition(e.into())
    }
}

/// Shortest round-trip decimal, switching to exponent form for extreme
/// magnitudes.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// `k, sigma, sigma_low_rank` for every singular value of the input.
pub fn spectrum_csv(out: &DecompositionOutput) -> Result<String, ReportError> {
    let low_rank: Vec<f64> = match out.method {
        Method::Svd => (0..out.spectrum.len())
            .map(|k| if k < out.rank { out.spectrum.values()[k] } else { 0.0 })
            .collect(),
        Method::Rpca => thin_svd(&out.consensus)?.singular_values,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "sigma", "sigma_low_rank"]).expect("in-memory csv");
    for (k, &s) in out.spectrum.values().iter().enumerate() {
        let lr = low_rank.get(k).copied().unwrap_or(0.0);
        w.write_record([(k + 1).to_string(), num(s), num(lr)])
            .expect("in-memory csv");
    }
    Ok(finish(w))
}

/// Long-format entries of `M`, `R` and `E` over the leading columns.
pub fn heatmap_csv(out: &DecompositionOutput) -> String {
    let cols = out.input.cols().min(HEATMAP_COLUMNS);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["matrix", "row", "col", "value"]).expect("in-memory csv");
    for (tag, m) in [("M", &out.input), ("R", &out.consensus), ("E", &out.residual)] {
        for i in 0..m.rows() {
            for j in 0..cols {
                w.write_record([tag.to_owned(), i.to_string(), j.to_string(), num(m[(i, j)])])
                    .expect("in-memory csv");
            }
        }
    }
    finish(w)
}

/// For each truncation `k`: captured norm `√Σ_{i≤k}σ_i²`, residual norm
/// `√Σ_{i>k}σ_i²` and explained ratio, then one marker row per level in
/// [`SENSITIVITY_MARKERS`] at the first `k` reaching it.
pub fn sensitivity_csv(spectrum: &SingularSpectrum) -> String {
    let sq: Vec<f64> = spectrum.values().iter().map(|s| s * s).collect();
    let rows: Vec<(usize, f64, f64, f64)> = (1..=sq.len())
        .map(|k| {
            let head: f64 = sq[..k].iter().sum();
            let tail: f64 = sq[k..].iter().sum();
            (k, head.sqrt(), tail.sqrt(), spectrum.variance_profile()[k - 1])
        })
        .collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "k", "captured_norm", "residual_norm", "explained_ratio", "threshold"])
        .expect("in-memory csv");
    for &(k, head, tail, ratio) in &rows {
        w.write_record(["component".to_owned(), k.to_string(), num(head), num(tail), num(ratio), String::new()])
            .expect("in-memory csv");
    }
    for tau in SENSITIVITY_MARKERS {
        let record = match rows.iter().find(|r| r.3 >= tau) {
            Some(&(k, head, tail, ratio)) => {
                ["threshold".to_owned(), k.to_string(), num(head), num(tail), num(ratio), num(tau)]
            }
            None => ["threshold".to_owned(), String::new(), String::new(), String::new(), String::new(), num(tau)],
        };
        w.write_record(record).expect("in-memory csv");
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub spectrum: PathBuf,
    pub heatmap: PathBuf,
    pub sensitivity: PathBuf,
}

/// Writes `<stem>_spectrum.csv`, `<stem>_heatmap.csv` and
/// `<stem>_sensitivity.csv` under `dir`.
pub fn emit_decomposition_reports(
    out: &DecompositionOutput,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<ReportPaths, ReportError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let paths = ReportPaths {
        spectrum: dir.join(format!("{stem}_spectrum.csv")),
        heatmap: dir.join(format!("{stem}_heatmap.csv")),
        sensitivity: dir.join(format!("{stem}_sensitivity.csv")),
    };
    write(&paths.spectrum, &spectrum_csv(out)?)?;
    write(&paths.heatmap, &heatmap_csv(out))?;
    write(&paths.sensitivity, &sensitivity_csv(&out.spectrum))?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub caption_ids: Vec<String>,
    pub pc1: Vec<f64>,
    pub pc2: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Projects mean-centered rows onto the top two right singular directions
/// of the centered matrix. Each direction is signed so its largest-magnitude
/// coordinate is positive.
pub fn project(matrix: &EmbeddingMatrix, scores: &[f64]) -> Result<Projection, ReportError> {
    let m = matrix.matrix();
    let (n, d) = m.shape();
    if n < 3 {
        return Err(ReportError::TooFew(n));
    }
    if scores.len() != n {
        return Err(ReportError::ScoreLength {
            expected: n,
            got: scores.len(),
        });
    }
    let means: Vec<f64> = (0..d)
        .map(|j| m.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let mut centered = m.clone();
    for i in 0..n {
        for (x, mu) in centered.row_mut(i).iter_mut().zip(&means) {
            *x -= mu;
        }
    }
    let svd = thin_svd(&centered)?;
    let axis = |k: usize| -> Vec<f64> {
        if k >= svd.v.cols() || svd.singular_values[k] == 0.0 {
            return vec![0.0; n];
        }
        let mut v = svd.v.column(k);
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (j, x)| if x.abs() > v[best].abs() { j } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let dir = Matrix::from_vec(d, 1, v);
        centered.matmul(&dir).into_vec()
    };
    Ok(Projection {
        caption_ids: matrix.row_ids().to_vec(),
        pc1: axis(0),
        pc2: axis(1),
        scores: scores.to_vec(),
    })
}

pub fn projection_csv(p: &Projection) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["caption_id", "pc1", "pc2", "score"]).expect("in-memory csv");
    for i in 0..p.caption_ids.len() {
        w.write_record([p.caption_ids[i].clone(), num(p.pc1[i]), num(p.pc2[i]), num(p.scores[i])])
            .expect("in-memory csv");
    }
    format!(
        "# rows are mean-centered before projection; the decomposition itself uses uncentered rows\n{}",
        finish(w)
    )
}

/// A self-contained scatter plot, points colored from blue (lowest score)
/// to red (highest).
pub fn projection_svg(p: &Projection) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 48.0;
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 0.0 {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = span(&p.pc1);
    let (y0, y1) = span(&p.pc2);
    let (s0, s1) = span(&p.scores);
    let inner = SIZE - 2.0 * PAD;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{inner}\" height=\"{inner}\" fill=\"none\" stroke=\"#888\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">PC1</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {})\">PC2</text>\n",
        SIZE / 2.0,
        SIZE - 14.0,
        SIZE / 2.0,
        SIZE / 2.0
    );
    for i in 0..p.caption_ids.len() {
        let x = PAD + (p.pc1[i] - x0) / (x1 - x0) * inner;
        let y = SIZE - PAD - (p.pc2[i] - y0) / (y1 - y0) * inner;
        let t = (p.scores[i] - s0) / (s1 - s0);
        let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
        let color = format!("#{:02x}{:02x}{:02x}", mix(49.0, 215.0), mix(54.0, 48.0), mix(149.0, 39.0));
        svg.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"{color}\"><title>{} ({})</title></circle>\n",
            xml_escape(&p.caption_ids[i]),
            num(p.scores[i])
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Writes `<stem>_projection.csv` and, when asked, `<stem>_projection.svg`.
pub fn emit_projection_report(
    matrix: &EmbeddingMatrix,
    scores: &[f64],
    dir: impl AsRef<Path>,
    stem: &str,
    svg: bool,
) -> Result<Vec<PathBuf>, ReportError> {
    let p = project(matrix, scores)?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let mut paths = vec![dir.join(format!("{stem}_projection.csv"))];
    write(&paths[0], &projection_csv(&p))?;
    if svg {
        paths.push(dir.join(format!("{stem}_projection.svg")));
        write(&paths[1], &projection_svg(&p))?;
    }
    Ok(paths)
}

pub fn benchmark_csv(results: &[CellResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "mode",
        "delta",
        "sigma",
        "method",
        "selection_rate",
        "mean_spearman",
        "spearman_defined",
        "spike_precision",
        "mean_rank",
        "not_converged",
        "trials",
        "seed",
    ])
    .expect("in-memory csv");
    for r in results {
        w.write_record([
            r.mode.to_string(),
            num(r.delta),
            num(r.sigma),
            r.method.clone(),
            num(r.selection_rate),
            num(r.mean_spearman),
            r.spearman_defined.to_string(),
            r.spike_precision.map(num).unwrap_or_default(),
            num(r.mean_rank),
            r.not_converged.to_string(),
            r.trials.to_string(),
            r.seed.to_string(),
        ])
        .expect("in-memory csv");
    }
    finish(w)
}

fn write(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}
