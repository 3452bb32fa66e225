//! Embedding matrix construction and low-rank consensus / residual splitting.
//!
//! The default backend truncates a full SVD at a rank chosen from the
//! cumulative explained-variance profile. The alternative backend solves
//! principal component pursuit (see [`rpca`]).
//!
//! No mean-centering happens here: the matrix is decomposed as given (after
//! optional row normalization).

pub mod rpca;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{l2_norm, Matrix};
use crate::svd::{thin_svd, SvdError};

pub use rpca::decompose_rpca;

/// `ρ_k` within this distance below the threshold still counts as reaching it,
/// so that spectra built from square roots of exact energies select as intended.
const THRESHOLD_SLACK: f64 = 1e-12;
/// `‖E‖_F` below this fraction of `‖M‖_F` means the scores carry no signal.
pub const DEGENERATE_RESIDUAL_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompositionError {
    #[error("no embeddings supplied")]
    EmptyInput,
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
    #[error("embedding {row} has {got} dimensions, expected {expected}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("duplicate caption id {0:?}")]
    DuplicateId(String),
    #[error("{ids} ids supplied for {rows} embeddings")]
    IdCountMismatch { rows: usize, ids: usize },
    #[error("rank override {requested} outside 1..={max}")]
    InvalidOverride { requested: usize, max: usize },
    #[error("invalid decomposition config: {0}")]
    InvalidConfig(String),
    #[error("singular values must be finite, non-negative and non-increasing")]
    InvalidSpectrum,
    #[error("numerical failure: {0}")]
    NumericalFailure(#[from] SvdError),
}

/// `n × d` matrix of caption embeddings; row `i` belongs to `row_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    matrix: Matrix,
    row_ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(matrix: Matrix, row_ids: Vec<String>) -> Result<Self, DecompositionError> {
        let (n, d) = matrix.shape();
        if n == 0 {
            return Err(DecompositionError::EmptyInput);
        }
        if d == 0 {
            return Err(DecompositionError::ZeroDimension);
        }
        if row_ids.len() != n {
            return Err(DecompositionError::IdCountMismatch {
                rows: n,
                ids: row_ids.len(),
            });
        }
        for (row, values) in matrix.row_iter().enumerate() {
            if let Some(col) = values.iter().position(|x| !x.is_finite()) {
                return Err(DecompositionError::NonFiniteEntry { row, col });
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for id in &row_ids {
            if !seen.insert(id.as_str()) {
                return Err(DecompositionError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { matrix, row_ids })
    }

    /// Unlabelled matrix with row ids `"0"`, `"1"`, ...
    pub fn anonymous(matrix: Matrix) -> Result<Self, DecompositionError> {
        let ids = (0..matrix.rows()).map(|i| i.to_string()).collect();
        Self::new(matrix, ids)
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dims(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn into_parts(self) -> (Matrix, Vec<String>) {
        (self.matrix, self.row_ids)
    }
}

/// Stacks embeddings row-wise.
pub fn build_matrix<S: AsRef<str>>(
    embeddings: &[Vec<f64>],
    ids: &[S],
) -> Result<EmbeddingMatrix, DecompositionError> {
    let first = embeddings.first().ok_or(DecompositionError::EmptyInput)?;
    let d = first.len();
    if d == 0 {
        return Err(DecompositionError::ZeroDimension);
    }
    if ids.len() != embeddings.len() {
        return Err(DecompositionError::IdCountMismatch {
            rows: embeddings.len(),
            ids: ids.len(),
        });
    }
    let mut data = Vec::with_capacity(embeddings.len() * d);
    for (row, e) in embeddings.iter().enumerate() {
        if e.len() != d {
            return Err(DecompositionError::DimensionMismatch {
                row,
                expected: d,
                got: e.len(),
            });
        }
        data.extend_from_slice(e);
    }
    let matrix = Matrix::from_vec(embeddings.len(), d, data);
    EmbeddingMatrix::new(
        matrix,
        ids.iter().map(|s| s.as_ref().to_owned()).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum {
    values: Vec<f64>,
    variance_profile: Vec<f64>,
    shape: (usize, usize),
}

impl SingularSpectrum {
    /// Spectrum of an `shape.0 × shape.1` matrix from its singular values.
    pub fn from_values(values: Vec<f64>, shape: (usize, usize)) -> Result<Self, DecompositionError> {
        let ok = values.len() == shape.0.min(shape.1)
            && values.iter().all(|s| s.is_finite() && *s >= 0.0)
            && values.windows(2).all(|w| w[0] >= w[1]);
        if !ok {
            return Err(DecompositionError::InvalidSpectrum);
        }
        let total: f64 = values.iter().map(|s| s * s).sum();
        let variance_profile = if total > 0.0 {
            let mut acc = 0.0;
            values
                .iter()
                .map(|s| {
                    acc += s * s;
                    acc / total
                })
                .collect()
        } else {
            vec![0.0; values.len()]
        };
        Ok(Self {
            values,
            variance_profile,
            shape,
        })
    }

    /// Singular values, non-increasing.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cumulative explained-variance ratios `ρ_1 … ρ_min(n,d)`.
    pub fn variance_profile(&self) -> &[f64] {
        &self.variance_profile
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_energy(&self) -> f64 {
        self.values.iter().map(|s| s * s).sum()
    }

    /// `Σ_{i>r} σ_i²`.
    pub fn tail_energy(&self, r: usize) -> f64 {
        self.values.iter().skip(r).map(|s| s * s).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.first().is_none_or(|s| *s == 0.0)
    }
}

pub fn singular_spectrum(m: &EmbeddingMatrix) -> Result<SingularSpectrum, DecompositionError> {
    let svd = thin_svd(m.matrix())?;
    SingularSpectrum::from_values(svd.singular_values, m.matrix().shape())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Svd,
    Rpca,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Svd => "svd",
            Method::Rpca => "rpca",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "svd" => Ok(Method::Svd),
            "rpca" => Ok(Method::Rpca),
            other => Err(format!("unknown method {other:?} (expected svd or rpca)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    pub method: Method,
    /// Smallest `ρ_k` the truncated rank has to reach.
    pub variance_threshold: f64,
    /// Upper bound on the adaptive rank; `None` means `n − 1` (at least 1).
    pub rank_cap: Option<usize>,
    /// Fixed rank, bypassing the threshold and cap.
    pub rank_override: Option<usize>,
    pub normalize_rows: bool,
    /// L1 weight for principal component pursuit; `None` means `1/√max(n,d)`.
    pub rpca_lambda: Option<f64>,
    pub rpca_tolerance: f64,
    pub rpca_max_iterations: usize,
    /// Factor by which the augmented-Lagrangian penalty grows per iteration.
    pub rpca_penalty_growth: f64,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            method: Method::Svd,
            variance_threshold: 0.95,
            rank_cap: None,
            rank_override: None,
            normalize_rows: false,
            rpca_lambda: None,
            rpca_tolerance: 1e-7,
            rpca_max_iterations: 500,
            rpca_penalty_growth: 1.5,
        }
    }
}

impl DecompositionConfig {
    pub fn rpca() -> Self {
        Self {
            method: Method::Rpca,
            ..Self::default()
        }
    }

    pub fn with_rank_override(mut self, r: usize) -> Self {
        self.rank_override = Some(r);
        self
    }

    pub fn validate(&self) -> Result<(), DecompositionError> {
        let bad = |msg: &str| Err(DecompositionError::InvalidConfig(msg.to_owned()));
        if !(self.variance_threshold > 0.0 && self.variance_threshold <= 1.0) {
            return bad("variance_threshold must lie in (0, 1]");
        }
        if self.rank_cap == Some(0) {
            return bad("rank_cap must be at least 1");
        }
        if self.rank_override == Some(0) {
            return bad("rank_override must be at least 1");
        }
        if let Some(l) = self.rpca_lambda {
            if !(l.is_finite() && l > 0.0) {
                return bad("rpca_lambda must be positive");
            }
        }
        if !(self.rpca_tolerance.is_finite() && self.rpca_tolerance > 0.0) {
            return bad("rpca_tolerance must be positive");
        }
        if self.rpca_max_iterations == 0 {
            return bad("rpca_max_iterations must be at least 1");
        }
        if !(self.rpca_penalty_growth.is_finite() && self.rpca_penalty_growth > 1.0) {
            return bad("rpca_penalty_growth must exceed 1");
        }
        Ok(())
    }
}

/// Picks the truncation rank from the cumulative variance profile.
///
/// `r = min(k*, cap, min(n,d))` with `k*` the first `k` where `ρ_k ≥ τ`. A zero
/// matrix gets `r = 1`. An override wins outright.
pub fn select_rank(
    spectrum: &SingularSpectrum,
    config: &DecompositionConfig,
) -> Result<usize, DecompositionError> {
    let full = spectrum.len();
    if let Some(requested) = config.rank_override {
        if requested == 0 || requested > full {
            return Err(DecompositionError::InvalidOverride {
                requested,
                max: full,
            });
        }
        return Ok(requested);
    }
    if spectrum.is_zero() {
        return Ok(1);
    }
    let tau = config.variance_threshold;
    let k_star = spectrum
        .variance_profile()
        .iter()
        .position(|&rho| rho >= tau - THRESHOLD_SLACK)
        .map_or(full, |i| i + 1);
    let cap = config
        .rank_cap
        .unwrap_or_else(|| spectrum.shape().0.saturating_sub(1))
        .max(1);
    Ok(k_star.min(cap).min(full).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DecompositionWarning {
    /// Residual is numerically zero; every score ties.
    DegenerateResidual { residual_norm: f64, input_norm: f64 },
    /// Rows with zero norm could not be normalized and were left as-is.
    ZeroRowsNotNormalized { rows: Vec<usize> },
    /// RPCA hit its iteration limit before reaching the tolerance.
    NotConverged { iterations: usize, gap: f64 },
}

/// Leading singular triples used for the consensus part.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// `n × r`
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    /// `d × r`
    pub v: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcaDiagnostics {
    pub iterations: usize,
    /// `‖M − R − E‖_F / ‖M‖_F` at exit.
    pub feasibility_gap: f64,
    pub converged: bool,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionOutput {
    pub method: Method,
    pub rank: usize,
    /// Spectrum of the decomposed matrix.
    pub spectrum: SingularSpectrum,
    /// Matrix actually decomposed (row-normalized if requested).
    pub input: Matrix,
    pub consensus: Matrix,
    pub residual: Matrix,
    /// Present for the svd method only.
    pub factors: Option<SvdFactors>,
    pub rpca: Option<RpcaDiagnostics>,
    pub warnings: Vec<DecompositionWarning>,
}

impl DecompositionOutput {
    pub fn is_degenerate(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, DecompositionWarning::DegenerateResidual { .. }))
    }

    pub fn converged(&self) -> bool {
        self.rpca.as_ref().is_none_or(|d| d.converged)
    }
}

/// Runs the backend selected by `config.method`.
pub fn decompose(
    m: &EmbeddingMatrix,
    config: &DecompositionConfig,
) -> Result<DecompositionOutput, DecompositionError> {
    match config.method {
        Method::Svd => decompose_svd(m, config),
        Method::Rpca => decompose_rpca(m, config),
    }
}

/// Scales every nonzero row to unit L2 norm; returns indices of zero rows.
pub(crate) fn normalize_rows(m: &Matrix) -> (Matrix, Vec<usize>) {
    let mut out = m.clone();
    let mut zero_rows = Vec::new();
    for i in 0..out.rows() {
        let norm = l2_norm(out.row(i));
        if norm > 0.0 {
            out.row_mut(i).iter_mut().for_each(|x| *x /= norm);
        } else {
            zero_rows.push(i);
        }
    }
    (out, zero_rows)
}

pub(crate) fn prepare_input(
    m: &EmbeddingMatrix,
    config: &DecompositionConfig,
) -> (Matrix, Vec<DecompositionWarning>) {
    let mut warnings = Vec::new();
    if !config.normalize_rows {
        return (m.matrix().clone(), warnings);
    }
    let (normalized, zero_rows) = normalize_rows(m.matrix());
    if !zero_rows.is_empty() {
        warnings.push(DecompositionWarning::ZeroRowsNotNormalized { rows: zero_rows });
    }
    (normalized, warnings)
}

pub(crate) fn degenerate_warning(residual: &Matrix, input: &Matrix) -> Option<DecompositionWarning> {
    let residual_norm = residual.frobenius_norm();
    let input_norm = input.frobenius_norm();
    (residual_norm <= DEGENERATE_RESIDUAL_RATIO * input_norm).then_some(
        DecompositionWarning::DegenerateResidual {
            residual_norm,
            input_norm,
        },
    )
}

/// Truncated-SVD split `M = R + E` with `R = U_r Σ_r V_rᵀ`.
pub fn decompose_svd(
    m: &EmbeddingMatrix,
    config: &DecompositionConfig,
) -> Result<DecompositionOutput, DecompositionError> {
    config.validate()?;
    let (input, mut warnings) = prepare_input(m, config);
    let svd = thin_svd(&input)?;
    let spectrum = SingularSpectrum::from_values(svd.singular_values.clone(), input.shape())?;
    let rank = select_rank(&spectrum, config)?;

    let consensus = svd.reconstruct(rank);
    let residual = input.sub(&consensus);
    warnings.extend(degenerate_warning(&residual, &input));

    let factors = SvdFactors {
        u: svd.u.leading_columns(rank),
        singular_values: svd.singular_values[..rank].to_vec(),
        v: svd.v.leading_columns(rank),
    };
    Ok(DecompositionOutput {
        method: Method::Svd,
        rank,
        spectrum,
        input,
        consensus,
        residual,
        factors: Some(factors),
        rpca: None,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[&[f64]]) -> EmbeddingMatrix {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("c{i}")).collect();
        build_matrix(&rows, &ids).unwrap()
    }

    #[test]
    fn build_matrix_stacks_rows() {
        let m = build_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]], &["a", "b"]).unwrap();
        assert_eq!(m.matrix(), &Matrix::identity(2));
        assert_eq!(m.row_ids(), &["a".to_owned(), "b".to_owned()]);
    }

    #[test]
    fn build_matrix_single_row() {
        let m = build_matrix(&[vec![1.0, 2.0, 3.0]], &["only"]).unwrap();
        assert_eq!((m.rows(), m.dims()), (1, 3));
    }

    #[test]
    fn build_matrix_errors() {
        assert_eq!(
            build_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0, 0.0]], &["a", "b"]),
            Err(DecompositionError::DimensionMismatch {
                row: 1,
                expected: 2,
                got: 3
            })
        );
        assert_eq!(
            build_matrix::<&str>(&[], &[]),
            Err(DecompositionError::EmptyInput)
        );
        assert_eq!(
            build_matrix(&[vec![1.0], vec![f64::INFINITY]], &["a", "b"]),
            Err(DecompositionError::NonFiniteEntry { row: 1, col: 0 })
        );
        assert_eq!(
            build_matrix(&[vec![1.0], vec![2.0]], &["a", "a"]),
            Err(DecompositionError::DuplicateId("a".into()))
        );
    }

    #[test]
    fn spectrum_examples() {
        let s = singular_spectrum(&emb(&[&[3.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(s.values(), &[3.0, 1.0]);
        assert!((s.variance_profile()[0] - 0.9).abs() < 1e-15);
        assert_eq!(s.variance_profile()[1], 1.0);

        let s = singular_spectrum(&emb(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        assert!((s.values()[0] - 2.0).abs() < 1e-15);
        assert!(s.values()[1].abs() < 1e-15);
        assert_eq!(s.variance_profile(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_matrix_profile_is_zero() {
        let s = singular_spectrum(&emb(&[&[0.0, 0.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(s.variance_profile(), &[0.0, 0.0]);
        assert_eq!(select_rank(&s, &DecompositionConfig::default()).unwrap(), 1);
    }

    #[test]
    fn select_rank_fixtures() {
        let cfg = DecompositionConfig::default();
        let s = SingularSpectrum::from_values(
            vec![90f64.sqrt(), 8f64.sqrt(), 2f64.sqrt()],
            (3, 3),
        )
        .unwrap();
        assert_eq!(select_rank(&s, &cfg).unwrap(), 2);
        let s = SingularSpectrum::from_values(vec![10.0, 1.0], (2, 2)).unwrap();
        assert_eq!(select_rank(&s, &cfg).unwrap(), 1);
    }

    #[test]
    fn rank_cap_defaults_to_rows_minus_one() {
        // Flat spectrum: ρ_k = k/4, threshold only reached at k = 4.
        let s = SingularSpectrum::from_values(vec![1.0; 4], (4, 6)).unwrap();
        let cfg = DecompositionConfig::default();
        assert_eq!(select_rank(&s, &cfg).unwrap(), 3);
        let literal = DecompositionConfig {
            rank_cap: Some(4),
            ..cfg
        };
        assert_eq!(select_rank(&s, &literal).unwrap(), 4);
    }

    #[test]
    fn override_bounds() {
        let s = SingularSpectrum::from_values(vec![2.0, 1.0], (2, 5)).unwrap();
        let cfg = DecompositionConfig::default().with_rank_override(2);
        assert_eq!(select_rank(&s, &cfg).unwrap(), 2);
        let cfg = DecompositionConfig::default().with_rank_override(3);
        assert_eq!(
            select_rank(&s, &cfg),
            Err(DecompositionError::InvalidOverride {
                requested: 3,
                max: 2
            })
        );
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let out = decompose_svd(
            &emb(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]),
            &DecompositionConfig::default(),
        )
        .unwrap();
        assert_eq!(out.rank, 1);
        assert!(out.residual.max_abs() < 1e-14);
        assert!(out.is_degenerate());
    }

    #[test]
    fn override_one_on_three_rows() {
        let m = emb(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let out = decompose_svd(&m, &DecompositionConfig::default().with_rank_override(1)).unwrap();
        let expected_r = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 0.0]]);
        let expected_e = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [0.0, 1.0]]);
        assert!(out.consensus.sub(&expected_r).max_abs() < 1e-15);
        assert!(out.residual.sub(&expected_e).max_abs() < 1e-15);
        let f = out.factors.unwrap();
        assert_eq!(f.u.shape(), (3, 1));
        assert_eq!(f.v.shape(), (2, 1));
        assert!((f.v[(0, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalization_happens_in_decompose() {
        let m = emb(&[&[3.0, 4.0], &[0.0, 0.0], &[0.0, 2.0]]);
        assert_eq!(m.matrix()[(0, 0)], 3.0);
        let cfg = DecompositionConfig {
            normalize_rows: true,
            ..Default::default()
        };
        let out = decompose_svd(&m, &cfg).unwrap();
        assert_eq!(out.input.row(0), &[0.6, 0.8]);
        assert_eq!(out.input.row(2), &[0.0, 1.0]);
        assert!(out
            .warnings
            .contains(&DecompositionWarning::ZeroRowsNotNormalized { rows: vec![1] }));
    }

    #[test]
    fn config_validation() {
        let bad = DecompositionConfig {
            variance_threshold: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DecompositionConfig {
            rpca_tolerance: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(DecompositionConfig::default().validate().is_ok());
    }
}
