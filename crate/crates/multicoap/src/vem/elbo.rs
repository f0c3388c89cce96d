//! Evidence lower bound evaluation.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::MultiStudyDataset;
use crate::error::{Error, Result};
use crate::linalg::ln_det_spd;
use crate::params::{ModelParams, StudyVParams, VariationalParams};
use crate::vem::ln_cap;

/// Row-wise quadratic form `out[j] = row_j(L) · S · row_j(L)ᵀ` for a loading
/// matrix `L` (p×k) and a k×k covariance `S`.
pub(crate) fn row_quadratic(l: &DMatrix<f64>, s: &DMatrix<f64>) -> Vec<f64> {
    if l.ncols() == 0 {
        return vec![0.0; l.nrows()];
    }
    let ls = l * s;
    (0..l.nrows())
        .map(|j| ls.row(j).iter().zip(l.row(j).iter()).map(|(x, y)| x * y).sum())
        .collect()
}

/// Evidence lower bound of the variational family at `(params, vparams)`,
/// summed over studies (the additive constant is fixed at zero).
///
/// The bound is evaluated per study and accumulated in study order, so the
/// value does not depend on the number of threads.
pub fn elbo(
    data: &MultiStudyDataset,
    params: &ModelParams,
    vparams: &VariationalParams,
) -> Result<f64> {
    let terms: Vec<f64> = vparams
        .studies
        .par_iter()
        .enumerate()
        .map(|(s, vp)| study_term(data, params, vp, s))
        .collect();
    let total: f64 = terms.iter().sum();
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFiniteElbo { value: total })
    }
}

fn study_term(
    data: &MultiStudyDataset,
    params: &ModelParams,
    vp: &StudyVParams,
    s: usize,
) -> f64 {
    let study = data.study(s);
    let (n, p) = (study.n(), study.p());
    let ns = n as f64;
    let lam = params.lambda[s];
    let qs = params.qs(s);
    let cap = ln_cap();

    let mut fitted = study.z() * params.beta.transpose();
    fitted += &vp.mf * params.a.transpose();
    if qs > 0 {
        fitted += &vp.mh * params.b[s].transpose();
    }

    // counts term, Gaussian residual, and entropy of the cell posteriors
    let mut counts = 0.0;
    let mut resid_sq = 0.0;
    let mut var_sum = 0.0;
    let mut ln_var_sum = 0.0;
    let x = study.x();
    let a = study.a();
    for j in 0..p {
        for i in 0..n {
            let mu = vp.m[(i, j)];
            let v = vp.v[(i, j)];
            counts += x[(i, j)] as f64 * mu - a[i] * (mu + 0.5 * v).min(cap).exp();
            let r = vp.m[(i, j)] - fitted[(i, j)];
            resid_sq += r * r;
            var_sum += v;
            ln_var_sum += v.ln();
        }
    }

    let quad_a: f64 = row_quadratic(&params.a, &vp.sf).iter().sum();
    let quad_b: f64 = row_quadratic(&params.b[s], &vp.sh).iter().sum();

    let ln_det_sf = ln_det_spd(&vp.sf, "Sf log-determinant").unwrap_or(f64::NAN);
    let ln_det_sh = if qs > 0 {
        ln_det_spd(&vp.sh, "Sh log-determinant").unwrap_or(f64::NAN)
    } else {
        0.0
    };

    counts
        - 0.5 * (resid_sq + var_sum + ns * (quad_a + quad_b)) / lam
        - 0.5 * ns * p as f64 * lam.ln()
        - 0.5 * (vp.mf.norm_squared() + ns * vp.sf.trace())
        - 0.5 * (vp.mh.norm_squared() + if qs > 0 { ns * vp.sh.trace() } else { 0.0 })
        + 0.5 * (ln_var_sum + ns * (ln_det_sf + ln_det_sh))
}
