//! Principal component pursuit by inexact augmented Lagrange multipliers.
//!
//! Solves `min ‖R‖_* + λ‖E‖_1` subject to `M = R + E`, alternating
//! entrywise soft-thresholding for `E` with singular-value thresholding for
//! `R`, then a dual ascent step on the multiplier. The penalty starts at
//! `1.25/σ_1` and grows by `rpca_penalty_growth` (1.5 by default) per
//! iteration up to `10⁷` times its start.

use crate::matrix::Matrix;
use crate::svd::thin_svd;

use super::{
    degenerate_warning, prepare_input, select_rank, DecompositionConfig, DecompositionError,
    DecompositionOutput, DecompositionWarning, EmbeddingMatrix, Method, RpcaDiagnostics,
    SingularSpectrum,
};

const INITIAL_PENALTY: f64 = 1.25;
const PENALTY_CEILING: f64 = 1e7;
/// Singular values of `R` above this fraction of the largest count toward its rank.
const NUMERICAL_RANK_RATIO: f64 = 1e-9;

pub fn decompose_rpca(
    m: &EmbeddingMatrix,
    config: &DecompositionConfig,
) -> Result<DecompositionOutput, DecompositionError> {
    config.validate()?;
    let (input, mut warnings) = prepare_input(m, config);
    let (n, d) = input.shape();
    let svd = thin_svd(&input)?;
    let spectrum = SingularSpectrum::from_values(svd.singular_values.clone(), input.shape())?;
    // An override is range-checked like the svd path but otherwise unused:
    // the nuclear norm decides the rank here.
    if config.rank_override.is_some() {
        select_rank(&spectrum, config)?;
    }
    let lambda = config
        .rpca_lambda
        .unwrap_or_else(|| 1.0 / (n.max(d) as f64).sqrt());

    let input_norm = input.frobenius_norm();
    if input_norm == 0.0 {
        return Ok(DecompositionOutput {
            method: Method::Rpca,
            rank: 1,
            spectrum,
            consensus: Matrix::zeros(n, d),
            residual: Matrix::zeros(n, d),
            input,
            factors: None,
            rpca: Some(RpcaDiagnostics {
                iterations: 1,
                feasibility_gap: 0.0,
                converged: true,
                lambda,
            }),
            warnings: {
                warnings.push(DecompositionWarning::DegenerateResidual {
                    residual_norm: 0.0,
                    input_norm: 0.0,
                });
                warnings
            },
        });
    }

    let sigma_1 = spectrum.values()[0];
    let dual_scale = sigma_1.max(input.max_abs() / lambda);
    let mut dual = input.scaled(1.0 / dual_scale);
    let mut mu = INITIAL_PENALTY / sigma_1;
    let mu_max = mu * PENALTY_CEILING;

    let mut low_rank = Matrix::zeros(n, d);
    let mut sparse = Matrix::zeros(n, d);
    let mut r_singular: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut converged = false;

    while iterations < config.rpca_max_iterations {
        iterations += 1;
        let inv_mu = 1.0 / mu;

        // E ← shrink(M − R + Y/μ, λ/μ)
        let shrink = lambda * inv_mu;
        for (((e, &x), &r), &y) in sparse
            .as_mut_slice()
            .iter_mut()
            .zip(input.as_slice())
            .zip(low_rank.as_slice())
            .zip(dual.as_slice())
        {
            *e = soft_threshold(x - r + y * inv_mu, shrink);
        }

        // R ← SVT(M − E + Y/μ, 1/μ)
        let mut target = input.sub(&sparse);
        for (t, &y) in target.as_mut_slice().iter_mut().zip(dual.as_slice()) {
            *t += y * inv_mu;
        }
        let mut svd = thin_svd(&target)?;
        for s in svd.singular_values.iter_mut() {
            *s = (*s - inv_mu).max(0.0);
        }
        let kept = svd.singular_values.iter().take_while(|&&s| s > 0.0).count();
        low_rank = svd.reconstruct(kept);
        r_singular = svd.singular_values;

        // Y ← Y + μ(M − R − E)
        let mut feasibility = 0.0;
        for (((y, &x), &r), &e) in dual
            .as_mut_slice()
            .iter_mut()
            .zip(input.as_slice())
            .zip(low_rank.as_slice())
            .zip(sparse.as_slice())
        {
            let z = x - r - e;
            feasibility += z * z;
            *y += mu * z;
        }
        gap = feasibility.sqrt() / input_norm;
        mu = (mu * config.rpca_penalty_growth).min(mu_max);

        if gap < config.rpca_tolerance {
            converged = true;
            break;
        }
    }

    if !converged {
        warnings.push(DecompositionWarning::NotConverged { iterations, gap });
    }
    warnings.extend(degenerate_warning(&sparse, &input));

    let leading = r_singular.first().copied().unwrap_or(0.0);
    let numerical_rank = r_singular
        .iter()
        .filter(|&&s| leading > 0.0 && s > NUMERICAL_RANK_RATIO * leading)
        .count();

    Ok(DecompositionOutput {
        method: Method::Rpca,
        rank: numerical_rank.max(1),
        spectrum,
        input,
        consensus: low_rank,
        residual: sparse,
        factors: None,
        rpca: Some(RpcaDiagnostics {
            iterations,
            feasibility_gap: gap,
            converged,
            lambda,
        }),
        warnings,
    })
}

#[inline]
fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}
