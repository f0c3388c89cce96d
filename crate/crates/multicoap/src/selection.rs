//! CUP (cumulative explained variance proportion) selection of the number
//! of shared and study-specific factors.
//!
//! The model is fitted once at generous upper bounds; the loading blocks are
//! rotated to their variance-ordered form, and the factor counts are cut
//! where the cumulative column energies first exceed a fraction τ of their
//! total. No refit happens here — callers that want estimates at the
//! selected sizes fit again with the chosen dimensions.

use serde::{Deserialize, Serialize};

use crate::data::MultiStudyDataset;
use crate::error::{Error, Result};
use crate::params::FitConfig;
use crate::vem::fit;

/// Diagnostics from [`select_factors`]: the chosen factor counts together
/// with the column-energy spectra they were cut from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorSelection {
    /// Selected number of shared factors q̂.
    pub q_hat: usize,
    /// Selected number of study-specific factors q̂_s, one per study.
    pub qs_hat: Vec<usize>,
    /// Shared loading column energies ν_{f,k} = Σ_j α²_{jk}, length q_max.
    pub nu_f: Vec<f64>,
    /// Specific loading column energies ν_{h,sk} = Σ_j γ²_{sjk}, per study.
    pub nu_h: Vec<Vec<f64>>,
    /// Threshold the cumulative energy share must exceed.
    pub tau: f64,
}

/// Returns the smallest k whose cumulative share of the total exceeds `tau`.
///
/// `cup_cut(ν, τ) = min{k : Σ_{j≤k} ν_j / Σ_j ν_j > τ}` with strict
/// inequality; boundary equality moves to the next k. The cut is invariant
/// to positive rescaling of ν and nondecreasing in τ.
pub fn cup_cut(nu: &[f64], tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau {tau} outside (0, 1)")));
    }
    if nu.iter().any(|&v| v < 0.0) {
        return Err(Error::Config(
            "negative entry in a column-energy vector".to_string(),
        ));
    }
    let total: f64 = nu.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSpectrum {
            context: "factor-count cut on an all-zero energy vector",
        });
    }
    let mut running = 0.0;
    for (k, &v) in nu.iter().enumerate() {
        running += v;
        if running / total > tau {
            return Ok(k + 1);
        }
    }
    Ok(nu.len())
}

/// Selects the factor counts by fitting once at `(q_max, qs_max)` and
/// applying the CUP cut to the resulting loading column energies.
///
/// `qs_max` bounds every study's specific factor count. The fit inherits
/// stopping rule, rank constraint, and seed from `fit_config_base`; its `q`
/// and `qs` are replaced by the bounds. Column energies are taken after the
/// identifiability rotation, so they are nonincreasing within each block and
/// the prefix cut is well-defined.
pub fn select_factors(
    data: &MultiStudyDataset,
    q_max: usize,
    qs_max: usize,
    tau: f64,
    fit_config_base: &FitConfig,
) -> Result<FactorSelection> {
    if q_max == 0 || qs_max == 0 {
        return Err(Error::Config(
            "factor upper bounds must be at least 1".to_string(),
        ));
    }
    if data.p() <= q_max + qs_max + 1 {
        return Err(Error::Config(format!(
            "upper bounds violate the dimension condition: need p - 1 > q_max + qs_max, got p = {}, q_max = {q_max}, qs_max = {qs_max}",
            data.p()
        )));
    }

    let mut config = fit_config_base.clone();
    config.q = q_max;
    config.qs = vec![qs_max; data.n_studies()];
    let result = fit(data, &config)?;

    let nu_f: Vec<f64> = result
        .params
        .a
        .column_iter()
        .map(|c| c.norm_squared())
        .collect();
    let nu_h: Vec<Vec<f64>> = result
        .params
        .b
        .iter()
        .map(|b| b.column_iter().map(|c| c.norm_squared()).collect())
        .collect();

    let q_hat = cup_cut(&nu_f, tau)?;
    let qs_hat = nu_h
        .iter()
        .map(|nu| cup_cut(nu, tau))
        .collect::<Result<Vec<_>>>()?;

    Ok(FactorSelection {
        q_hat,
        qs_hat,
        nu_f,
        nu_h,
        tau,
    })
}
