//! E-step updates: cell-wise posterior moments of the latent log-rates and
//! the per-study Gaussian factor posteriors.

use rayon::prelude::*;

use crate::data::{MultiStudyDataset, StudyData};
use crate::error::Result;
use crate::linalg::inv_spd;
use crate::params::{ModelParams, StudyVParams, VariationalParams};
use crate::vem::ln_cap;

/// One Newton refinement of the cell posterior for a single entry: given the
/// count `x`, normalizer `a`, expansion point `y0` (the previous posterior
/// mean), the linear predictor `ztilde`, and the noise variance `lambda`,
/// returns the updated mean and variance
///
/// ```text
/// μ  = (x − a·e^{y0}(1 − y0) + λ⁻¹·z̃) / (λ⁻¹ + a·e^{y0})
/// σ² = 1 / (a·e^{μ} + λ⁻¹)
/// ```
///
/// Exponents are clamped at ln(1e12), which keeps both expressions finite
/// for any finite input.
pub fn estep_update_y(x: f64, a: f64, y0: f64, ztilde: f64, lambda: f64) -> (f64, f64) {
    let cap = ln_cap();
    let li = 1.0 / lambda;
    let aexp = a * y0.min(cap).exp();
    let mu = (x - aexp * (1.0 - y0) + li * ztilde) / (li + aexp);
    let sigma2 = 1.0 / (a * mu.min(cap).exp() + li);
    (mu, sigma2)
}

/// Applies [`estep_update_y`] to every cell of every study, expanding around
/// the previous posterior means. Studies are processed in parallel; each
/// cell's output depends only on that cell, so the result is independent of
/// the thread count.
pub fn estep_update_cells(
    params: &ModelParams,
    vparams: &mut VariationalParams,
    data: &MultiStudyDataset,
) {
    vparams
        .studies
        .par_iter_mut()
        .enumerate()
        .for_each(|(s, vp)| update_cells_one(params, vp, data.study(s), s));
}

fn update_cells_one(params: &ModelParams, vp: &mut StudyVParams, study: &StudyData, s: usize) {
    let lam = params.lambda[s];
    let mut fitted = study.z() * params.beta.transpose();
    fitted += &vp.mf * params.a.transpose();
    if params.qs(s) > 0 {
        fitted += &vp.mh * params.b[s].transpose();
    }
    let x = study.x();
    let a = study.a();
    for j in 0..study.p() {
        for i in 0..study.n() {
            let (mu, sigma2) = estep_update_y(
                x[(i, j)] as f64,
                a[i],
                vp.m[(i, j)],
                fitted[(i, j)],
                lam,
            );
            vp.m[(i, j)] = mu;
            vp.v[(i, j)] = sigma2;
        }
    }
}

/// Updates the factor posteriors `(Mf, Sf, Mh, Sh)` of one study from the
/// current cell posterior means: first the shared block
///
/// ```text
/// Sf = (AᵀA/λ_s + I_q)⁻¹,   Mf = λ_s⁻¹ (M − Zβᵀ − Mh B_sᵀ) A Sf
/// ```
///
/// then the study-specific block with the freshly updated `Mf` on the
/// right-hand side.
pub fn estep_update_factors(
    params: &ModelParams,
    vparams: &mut VariationalParams,
    data: &MultiStudyDataset,
    study: usize,
) -> Result<()> {
    update_factors_one(params, &mut vparams.studies[study], data.study(study), study)
}

pub(crate) fn update_factors_one(
    params: &ModelParams,
    vp: &mut StudyVParams,
    study: &StudyData,
    s: usize,
) -> Result<()> {
    let lam = params.lambda[s];
    let li = 1.0 / lam;
    let q = params.q();
    let qs = params.qs(s);
    let zb = study.z() * params.beta.transpose();

    let mut gram_a = params.a.transpose() * &params.a * li;
    for k in 0..q {
        gram_a[(k, k)] += 1.0;
    }
    vp.sf = inv_spd(&gram_a, "shared factor posterior covariance")?;
    let mut resid_f = &vp.m - &zb;
    if qs > 0 {
        resid_f -= &vp.mh * params.b[s].transpose();
    }
    vp.mf = resid_f * &params.a * &vp.sf * li;

    if qs > 0 {
        let mut gram_b = params.b[s].transpose() * &params.b[s] * li;
        for k in 0..qs {
            gram_b[(k, k)] += 1.0;
        }
        vp.sh = inv_spd(&gram_b, "specific factor posterior covariance")?;
        let resid_h = &vp.m - &zb - &vp.mf * params.a.transpose();
        vp.mh = resid_h * &params.b[s] * &vp.sh * li;
    }
    Ok(())
}

/// Runs [`estep_update_factors`] for every study in parallel.
pub(crate) fn update_factors_all(
    params: &ModelParams,
    vparams: &mut VariationalParams,
    data: &MultiStudyDataset,
) -> Result<()> {
    vparams
        .studies
        .par_iter_mut()
        .enumerate()
        .map(|(s, vp)| update_factors_one(params, vp, data.study(s), s))
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}
