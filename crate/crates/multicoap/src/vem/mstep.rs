//! M-step updates: loadings, regression coefficients, and noise variances.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::MultiStudyDataset;
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, symmetric_condition};
use crate::params::{ModelParams, VariationalParams};
use crate::vem::elbo::row_quadratic;

/// Condition-number limit above which the weighted covariate Gram matrix is
/// reported as collinear.
pub(crate) const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Updates the shared loading matrix `A` and then every study-specific
/// loading matrix `B_s`:
///
/// ```text
/// A   = [Σ_s (Mf_sᵀMf_s + n_s·Sf_s)]⁻¹ Σ_s Mf_sᵀ(M_s − Z_sβᵀ − Mh_s B_sᵀ)   (transposed)
/// B_s = [Mh_sᵀMh_s + n_s·Sh_s]⁻¹ Mh_sᵀ(M_s − Z_sβᵀ − Mf_s Aᵀ)              (transposed)
/// ```
///
/// where each `B_s` update uses the freshly updated `A`. Per-study
/// contributions to the shared normal equations are accumulated in study
/// order regardless of the thread count.
pub fn mstep_update_loadings(
    params: &mut ModelParams,
    vparams: &VariationalParams,
    data: &MultiStudyDataset,
) -> Result<()> {
    let q = params.q();
    let n_studies = data.n_studies();

    let contributions: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..n_studies)
        .into_par_iter()
        .map(|s| {
            let study = data.study(s);
            let vp = &vparams.studies[s];
            let ns = study.n() as f64;
            let gram = vp.mf.transpose() * &vp.mf + &vp.sf * ns;
            let mut resid = vp.m.clone() - study.z() * params.beta.transpose();
            if params.qs(s) > 0 {
                resid -= &vp.mh * params.b[s].transpose();
            }
            let rhs = vp.mf.transpose() * resid;
            (gram, rhs)
        })
        .collect();

    let mut gram = DMatrix::zeros(q, q);
    let mut rhs = DMatrix::zeros(q, data.p());
    for (g, r) in contributions {
        gram += g;
        rhs += r;
    }
    params.a = solve_spd(&gram, &rhs, "shared loading normal equations")
        .map_err(|_| Error::SingularNormalEquations)?
        .transpose();

    let new_b: Vec<DMatrix<f64>> = (0..n_studies)
        .into_par_iter()
        .map(|s| {
            let qs = params.qs(s);
            if qs == 0 {
                return Ok(params.b[s].clone());
            }
            let study = data.study(s);
            let vp = &vparams.studies[s];
            let ns = study.n() as f64;
            let gram_s = vp.mh.transpose() * &vp.mh + &vp.sh * ns;
            let resid = vp.m.clone()
                - study.z() * params.beta.transpose()
                - &vp.mf * params.a.transpose();
            let rhs_s = vp.mh.transpose() * resid;
            Ok(solve_spd(&gram_s, &rhs_s, "specific loading normal equations")
                .map_err(|_| Error::SingularNormalEquations)?
                .transpose())
        })
        .collect::<Result<Vec<_>>>()?;
    params.b = new_b;
    Ok(())
}

/// Updates the regression coefficients by weighted least squares of the
/// factor-adjusted posterior means on the covariates,
///
/// ```text
/// β̃ = ȲᵀZ̄ (Z̄ᵀZ̄)⁻¹,   Z̄ = stack(Z_s/√λ_s),   Ȳ = stack((M_s − Mf_s Aᵀ − Mh_s B_sᵀ)/√λ_s)
/// ```
///
/// and, when `rank` is given, projects the solution onto its leading rank-r
/// subspace (see [`crate::rrr::reduced_rank_beta`]).
pub fn mstep_update_beta(
    params: &mut ModelParams,
    vparams: &VariationalParams,
    data: &MultiStudyDataset,
    rank: Option<usize>,
) -> Result<()> {
    let d = data.d();
    let n_studies = data.n_studies();

    let contributions: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..n_studies)
        .into_par_iter()
        .map(|s| {
            let study = data.study(s);
            let vp = &vparams.studies[s];
            let w = 1.0 / params.lambda[s];
            let mut ybar = vp.m.clone() - &vp.mf * params.a.transpose();
            if params.qs(s) > 0 {
                ybar -= &vp.mh * params.b[s].transpose();
            }
            let ztz = study.z().transpose() * study.z() * w;
            let zty = study.z().transpose() * ybar * w;
            (ztz, zty)
        })
        .collect();

    let mut gram = DMatrix::zeros(d, d);
    let mut zty = DMatrix::zeros(d, data.p());
    for (g, r) in contributions {
        gram += g;
        zty += r;
    }

    let condition = symmetric_condition(&gram);
    if !condition.is_finite() || condition > GRAM_CONDITION_LIMIT {
        return Err(Error::CollinearCovariates {
            condition,
            limit: GRAM_CONDITION_LIMIT,
        });
    }
    let beta_tilde = solve_spd(&gram, &zty, "covariate normal equations")?.transpose();

    params.beta = match rank {
        Some(r) => {
            let n_tot = data.n_total() as f64;
            crate::rrr::reduced_rank_beta(&beta_tilde, &(gram / n_tot), r)?
        }
        None => beta_tilde,
    };
    Ok(())
}

/// Updates every study's noise variance,
///
/// ```text
/// λ_s = (n_s p)⁻¹ Σ_{i,j} [(μ_sij − z_siᵀβ_j − α_jᵀm_f,si − γ_sjᵀm_h,si)²
///                          + σ²_sij + α_jᵀ Sf α_j + γ_sjᵀ Sh γ_sj]
/// ```
pub fn mstep_update_lambda(
    params: &mut ModelParams,
    vparams: &VariationalParams,
    data: &MultiStudyDataset,
) {
    let lambdas: Vec<f64> = (0..data.n_studies())
        .into_par_iter()
        .map(|s| {
            let study = data.study(s);
            let vp = &vparams.studies[s];
            let ns = study.n() as f64;
            let mut resid = vp.m.clone()
                - study.z() * params.beta.transpose()
                - &vp.mf * params.a.transpose();
            if params.qs(s) > 0 {
                resid -= &vp.mh * params.b[s].transpose();
            }
            let quad_a: f64 = row_quadratic(&params.a, &vp.sf).iter().sum();
            let quad_b: f64 = row_quadratic(&params.b[s], &vp.sh).iter().sum();
            (resid.norm_squared() + vp.v.sum() + ns * (quad_a + quad_b))
                / (ns * study.p() as f64)
        })
        .collect();
    for (s, lam) in lambdas.into_iter().enumerate() {
        params.lambda[s] = lam;
    }
}
