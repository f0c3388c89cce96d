//! Model and variational parameter containers plus fit configuration and
//! result types.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::MultiStudyDataset;
use crate::error::{Error, Result};

/// The estimand θ: covariate coefficients `beta` (p×d), shared loadings `a`
/// (p×q), study-specific loadings `b[s]` (p×q_s, possibly zero columns), and
/// per-study error variances `lambda[s] > 0` on the latent log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub lambda: DVector<f64>,
}

impl ModelParams {
    /// Validates the positivity of every `lambda[s]` and cross-field shape
    /// agreement (all loading blocks share `p` rows, one `b`/`lambda` per
    /// study).
    pub fn new(
        beta: DMatrix<f64>,
        a: DMatrix<f64>,
        b: Vec<DMatrix<f64>>,
        lambda: DVector<f64>,
    ) -> Result<Self> {
        let p = beta.nrows();
        if a.nrows() != p {
            return Err(Error::DimensionMismatch {
                study: 0,
                axis: "A rows",
                expected: p,
                found: a.nrows(),
            });
        }
        if b.len() != lambda.len() {
            return Err(Error::DimensionMismatch {
                study: 0,
                axis: "B blocks vs lambda length",
                expected: lambda.len(),
                found: b.len(),
            });
        }
        for (s, bs) in b.iter().enumerate() {
            if bs.nrows() != p {
                return Err(Error::DimensionMismatch {
                    study: s,
                    axis: "B rows",
                    expected: p,
                    found: bs.nrows(),
                });
            }
        }
        for s in 0..lambda.len() {
            if !(lambda[s] > 0.0) || !lambda[s].is_finite() {
                return Err(Error::Config(format!(
                    "lambda[{s}] = {} must be strictly positive",
                    lambda[s]
                )));
            }
        }
        Ok(ModelParams { beta, a, b, lambda })
    }

    /// Number of shared factors `q`.
    pub fn q(&self) -> usize {
        self.a.ncols()
    }

    /// Number of study-specific factors `q_s` for study `s`.
    pub fn qs(&self, s: usize) -> usize {
        self.b[s].ncols()
    }

    /// Off-diagonal mass of `AᵀB_1` relative to the column norms: a
    /// diagnostic for how far the estimate is from joint orthogonality of
    /// the shared and study-1 loading blocks (not enforced by the fit).
    pub fn cross_block_diagnostic(&self) -> f64 {
        if self.b.is_empty() || self.b[0].ncols() == 0 || self.a.ncols() == 0 {
            return 0.0;
        }
        let cross = self.a.transpose() * &self.b[0];
        let a_norm = self.a.norm();
        let b_norm = self.b[0].norm();
        if a_norm == 0.0 || b_norm == 0.0 {
            return 0.0;
        }
        cross.norm() / (a_norm * b_norm)
    }
}

/// Variational posterior state ξ for one study: cell-wise Gaussian means
/// `m` (n×p) and variances `v` (n×p) for the latent log-rates, factor
/// posterior means `mf` (n×q) / `mh` (n×q_s), and the shared-within-study
/// posterior covariances `sf` (q×q) / `sh` (q_s×q_s). The covariances are
/// stored once per study because they depend only on the loadings and
/// `lambda[s]`, not on the observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyVParams {
    pub m: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub mf: DMatrix<f64>,
    pub sf: DMatrix<f64>,
    pub mh: DMatrix<f64>,
    pub sh: DMatrix<f64>,
}

/// Variational parameters for all studies, in study order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub studies: Vec<StudyVParams>,
}

impl VariationalParams {
    /// Checks positivity of every cell variance and symmetric positive
    /// definiteness of every factor covariance.
    pub fn validate(&self) -> Result<()> {
        for (s, vp) in self.studies.iter().enumerate() {
            if vp.v.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::Config(format!(
                    "study {s}: all cell variances must be positive"
                )));
            }
            for (name, mat) in [("Sf", &vp.sf), ("Sh", &vp.sh)] {
                if mat.ncols() == 0 {
                    continue;
                }
                let sym_gap = (mat - mat.transpose()).norm();
                if sym_gap > 1e-8 * (1.0 + mat.norm()) {
                    return Err(Error::Config(format!("study {s}: {name} is not symmetric")));
                }
                if mat.clone().cholesky().is_none() {
                    return Err(Error::Config(format!(
                        "study {s}: {name} is not positive definite"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Tuning knobs for [`crate::vem::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of shared factors (q ≥ 1).
    pub q: usize,
    /// Number of study-specific factors per study (entries may be 0).
    pub qs: Vec<usize>,
    /// Optional rank constraint r ≤ min(p, d) on beta; `None` keeps the
    /// unconstrained least-squares update.
    pub rank: Option<usize>,
    /// Maximum number of outer cycles.
    pub max_iter: usize,
    /// Relative ELBO change below which the fit stops.
    pub eps: f64,
    /// Seed for the initialization jitter applied to degenerate singular
    /// directions (rarely triggered; keeps initialization deterministic).
    pub seed: u64,
}

impl FitConfig {
    /// A config with the default stopping rule: `max_iter = 200`,
    /// `eps = 1e-5`, no rank constraint, seed 0.
    pub fn new(q: usize, qs: Vec<usize>) -> Self {
        FitConfig {
            q,
            qs,
            rank: None,
            max_iter: 200,
            eps: 1e-5,
            seed: 0,
        }
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = Some(rank);
        self
    }

    pub fn with_stopping(mut self, max_iter: usize, eps: f64) -> Self {
        self.max_iter = max_iter;
        self.eps = eps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks the config against a dataset: q ≥ 1, one q_s per study, the
    /// dimension bound `p − 1 > q + q_s` for every study, and the rank
    /// bound `r ≤ min(p, d)`.
    pub fn validate_for(&self, data: &MultiStudyDataset) -> Result<()> {
        if self.q < 1 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.qs.len() != data.n_studies() {
            return Err(Error::Config(format!(
                "qs has {} entries but the dataset has {} studies",
                self.qs.len(),
                data.n_studies()
            )));
        }
        let p = data.p();
        for (s, &qs) in self.qs.iter().enumerate() {
            if p.saturating_sub(1) <= self.q + qs {
                return Err(Error::Config(format!(
                    "dimension bound violated for study {s}: need p−1 > q+q_s, \
                     got p={p}, q={}, q_s={qs}",
                    self.q
                )));
            }
        }
        if let Some(r) = self.rank {
            let lim = p.min(data.d());
            if r < 1 || r > lim {
                return Err(Error::Config(format!(
                    "rank must lie in 1..=min(p,d)={lim}, got {r}"
                )));
            }
        }
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Config("eps must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Output of [`crate::vem::fit`]: the fitted parameters, the variational
/// state, the per-cycle ELBO trajectory (entry 0 is the initialization),
/// and convergence diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub vparams: VariationalParams,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    /// Final ELBO value.
    pub fn elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("elbo_trace is never empty")
    }

    /// Largest relative ELBO decrease observed between consecutive cycles
    /// (0 when the trace is monotone). Coordinate ascent should keep this
    /// below ~1e-6; the approximate log-rate update allows tiny dips.
    pub fn worst_elbo_decrease(&self) -> f64 {
        let mut worst = 0.0_f64;
        for w in self.elbo_trace.windows(2) {
            let dip = (w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE);
            worst = worst.max(dip);
        }
        worst
    }
}
