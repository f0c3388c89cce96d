//! Reduced-rank regression for the covariate coefficient matrix and
//! data-driven selection of its rank.
//!
//! With the factor terms held fixed, the coefficient update is a weighted
//! least-squares problem whose rank-r solution has a closed form: project the
//! unrestricted estimate onto the span of the leading eigenvectors of
//! `β̃·gram·β̃ᵀ`. [`select_rank`] chooses r by the cumulative eigenvalue
//! ratio of `β̂ᵀβ̂`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_desc;

/// Diagnostics from [`select_rank`]: the chosen rank together with the
/// eigenvalue spectrum it was cut from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankSelection {
    /// Selected rank r̂.
    pub r_hat: usize,
    /// Largest `r_max` eigenvalues of `β̂ᵀβ̂`, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Cumulative share of the retained spectrum; nondecreasing, ends at 1.
    pub cumulative_ratio: Vec<f64>,
    /// Threshold the cumulative share must exceed.
    pub tau: f64,
}

/// Projects the unrestricted coefficient estimate onto its best rank-r
/// approximation in the `gram` metric.
///
/// Returns `V̄_(r)V̄_(r)ᵀ·β̃` where `V̄_(r)` holds the eigenvectors of
/// `β̃·gram·β̃ᵀ` belonging to its r largest eigenvalues. The basis is built
/// from the d×d eigenproblem of `LᵀB̃ᵀB̃L` with `B̃ = β̃` and `gram = LLᵀ`:
/// mapping its leading eigenvectors through `β̃·L` and orthonormalizing spans
/// the same subspace while avoiding a p×p decomposition, and it stays
/// accurate when the input is already rank deficient (directions with no
/// energy are dropped rather than replaced by noise). Ties break by
/// descending eigenvalue, then lowest index. The output has rank at most r
/// and the map is idempotent: reapplying it with the same r reproduces the
/// result.
pub fn reduced_rank_beta(
    beta_tilde: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    r: usize,
) -> Result<DMatrix<f64>> {
    let p = beta_tilde.nrows();
    let d = beta_tilde.ncols();
    if gram.nrows() != d || gram.ncols() != d {
        return Err(Error::DimensionMismatch {
            study: 0,
            axis: "gram",
            expected: d,
            found: gram.nrows(),
        });
    }
    if r == 0 || r > p.min(d) {
        return Err(Error::Config(format!(
            "rank {r} outside 1..={} for a {p}x{d} coefficient matrix",
            p.min(d)
        )));
    }

    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::NotSpd {
            context: "reduced-rank gram matrix",
        })?;
    let factor = beta_tilde * chol.l();
    let (energies, directions) = symmetric_eigen_desc(&(factor.transpose() * &factor));

    let lead = energies[0].max(0.0);
    let mut basis_cols = Vec::with_capacity(r);
    for k in 0..r {
        let energy = energies[k];
        if !(energy > lead * 1e-30) {
            break;
        }
        basis_cols.push(&factor * directions.column(k) / energy.sqrt());
    }
    if basis_cols.is_empty() {
        return Ok(beta_tilde.clone());
    }
    let basis = DMatrix::from_columns(
        &basis_cols.iter().map(|c| c.column(0)).collect::<Vec<_>>(),
    );
    let ortho = basis.qr().q();
    Ok(&ortho * (ortho.transpose() * beta_tilde))
}

/// Selects the coefficient rank by the cumulative eigenvalue ratio.
///
/// Computes the eigenvalues ν̂ of `β̂ᵀβ̂` in nonincreasing order and returns
/// the smallest r with `Σ_{k≤r} ν̂_k / Σ_{k≤r_max} ν̂_k > tau` (strict), along
/// with the retained spectrum and its cumulative shares.
pub fn select_rank(beta_hat: &DMatrix<f64>, r_max: usize, tau: f64) -> Result<RankSelection> {
    let p = beta_hat.nrows();
    let d = beta_hat.ncols();
    if r_max == 0 || r_max > p.min(d) {
        return Err(Error::Config(format!(
            "r_max {r_max} outside 1..={} for a {p}x{d} coefficient matrix",
            p.min(d)
        )));
    }
    if !(0.0..1.0).contains(&tau) || tau <= 0.0 {
        return Err(Error::Config(format!("tau {tau} outside (0, 1)")));
    }

    let (spectrum, _) = symmetric_eigen_desc(&(beta_hat.transpose() * beta_hat));
    let eigenvalues: Vec<f64> = spectrum.iter().take(r_max).map(|&v| v.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSpectrum {
            context: "rank selection on an all-zero coefficient matrix",
        });
    }

    let mut cumulative_ratio = Vec::with_capacity(r_max);
    let mut running = 0.0;
    for &nu in &eigenvalues {
        running += nu;
        cumulative_ratio.push(running / total);
    }
    if let Some(last) = cumulative_ratio.last_mut() {
        *last = 1.0;
    }
    let r_hat = cumulative_ratio
        .iter()
        .position(|&c| c > tau)
        .map_or(r_max, |idx| idx + 1);

    Ok(RankSelection {
        r_hat,
        eigenvalues,
        cumulative_ratio,
        tau,
    })
}
