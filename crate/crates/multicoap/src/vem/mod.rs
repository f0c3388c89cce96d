//! Variational EM engine: initialization, the block-coordinate update cycle,
//! and the identifiability post-processing.
//!
//! [`fit`] alternates an E-step — a Newton refinement of the cell-wise
//! posteriors for the latent log-rates followed by exact Gaussian factor
//! posteriors — with closed-form M-step updates for the loadings, regression
//! coefficients, and noise variances, monitoring the evidence lower bound
//! once per cycle. All cross-study reductions accumulate in study order, so
//! results are identical for any thread count; callers control parallelism
//! by installing a [`rayon`] thread pool.

mod elbo;
mod estep;
mod mstep;

pub use elbo::elbo;
pub use estep::{estep_update_cells, estep_update_factors, estep_update_y};
pub use mstep::{mstep_update_beta, mstep_update_lambda, mstep_update_loadings};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::data::{validate_dataset, MultiStudyDataset};
use crate::error::Result;
use crate::linalg::{sign_fix_columns, solve_spd, thin_svd};
use crate::params::{FitConfig, FitResult, ModelParams, StudyVParams, VariationalParams};

/// Upper clamp for every exponent evaluated by the engine: ln(1e12).
#[inline]
pub(crate) fn ln_cap() -> f64 {
    1e12_f64.ln()
}

/// Fits the model by variational EM.
///
/// Each cycle runs, in order: the cell-posterior update, the factor-posterior
/// updates, and the M-step updates for `A`, `B_s`, `β`, and `λ_s`; the ELBO
/// is evaluated at the initialization (trace entry 0) and once per cycle,
/// and the loop stops when its relative change drops below `config.eps` or
/// after `config.max_iter` cycles (reaching `max_iter` is reported via
/// `converged = false`, not as an error). After
/// the last cycle the factor posteriors are refreshed once against the final
/// parameters — so the returned covariances satisfy
/// `Sf = (ÂᵀÂ/λ̂_s + I)⁻¹` exactly — the refreshed ELBO is appended to the
/// trace, and the identifiability rotation is applied.
pub fn fit(data: &MultiStudyDataset, config: &FitConfig) -> Result<FitResult> {
    validate_dataset(data)?;
    config.validate_for(data)?;

    let (mut params, mut vparams) = init_params(data, config)?;
    let mut trace: Vec<f64> = Vec::with_capacity(config.max_iter + 2);
    trace.push(elbo(data, &params, &vparams)?);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iter {
        estep::estep_update_cells(&params, &mut vparams, data);
        estep::update_factors_all(&params, &mut vparams, data)?;
        mstep_update_loadings(&mut params, &vparams, data)?;
        mstep_update_beta(&mut params, &vparams, data, config.rank)?;
        mstep_update_lambda(&mut params, &vparams, data);
        let value = elbo(data, &params, &vparams)?;
        iterations += 1;
        let stop = trace
            .last()
            .is_some_and(|prev| (value - prev).abs() < config.eps * prev.abs());
        trace.push(value);
        if stop {
            converged = true;
            break;
        }
    }

    estep::estep_update_cells(&params, &mut vparams, data);
    estep::update_factors_all(&params, &mut vparams, data)?;
    trace.push(elbo(data, &params, &vparams)?);
    apply_identifiability(&mut params, &mut vparams);

    Ok(FitResult {
        params,
        vparams,
        elbo_trace: trace,
        converged,
        iterations,
    })
}

/// Rotates each loading block onto its singular basis so that `AᵀA` and every
/// `B_sᵀB_s` are diagonal with nonincreasing diagonal, fixes column signs so
/// the first entry with magnitude above 1e-10 is positive, and applies the
/// compensating transforms to the factor posteriors. The reconstruction
/// `A·m_f + B_s·m_h` — and therefore the ELBO — is unchanged; applying the
/// map twice gives the same result as applying it once.
///
/// Cross-block orthogonality between `A` and `B_1` is left untouched (it
/// holds asymptotically rather than exactly in finite samples); its residual
/// can be inspected via [`ModelParams::cross_block_diagnostic`].
pub fn apply_identifiability(params: &mut ModelParams, vparams: &mut VariationalParams) {
    let rotation = block_rotation(&mut params.a);
    for vp in vparams.studies.iter_mut() {
        vp.mf = &vp.mf * &rotation;
        vp.sf = rotation.transpose() * &vp.sf * &rotation;
    }

    for (s, b) in params.b.iter_mut().enumerate() {
        if b.ncols() == 0 {
            continue;
        }
        let rotation = block_rotation(b);
        let vp = &mut vparams.studies[s];
        vp.mh = &vp.mh * &rotation;
        vp.sh = rotation.transpose() * &vp.sh * &rotation;
    }
}

/// Rotates a loading block in place onto its right singular basis with the
/// sign convention applied, and returns the combined orthogonal map (rotation
/// times sign flips) for transforming the matching factors.
fn block_rotation(block: &mut DMatrix<f64>) -> DMatrix<f64> {
    let svd = thin_svd(block);
    *block = &*block * &svd.v;
    let signs = sign_fix_columns(block);
    let mut rotation = svd.v;
    for (k, &sign) in signs.iter().enumerate() {
        if sign < 0.0 {
            rotation.column_mut(k).neg_mut();
        }
    }
    rotation
}

/// Builds the starting point of the EM cycle.
///
/// Cell posteriors start at `μ⁰ = ln((x+1)/a)`, `σ²⁰ = 1`; `β⁰` is the pooled
/// least-squares fit of `μ⁰` on the covariates; `λ⁰ = 1`; factor posteriors
/// start at zero mean and identity covariance. The shared loading block `A⁰`
/// is built by classifying candidate directions from each study's own
/// residual spectrum (see [`classify_shared`]) and falls back to the top-q
/// pooled directions when no candidate passes; each `B_s⁰` takes the leading
/// directions of study s's residual after removing the `A⁰` projection,
/// scaled by singular value over √n_s. The result is deterministic given
/// `(data, config)` — `config.seed` drives only the small jitter used for
/// shared columns beyond the classified ones.
pub fn init_params(
    data: &MultiStudyDataset,
    config: &FitConfig,
) -> Result<(ModelParams, VariationalParams)> {
    let n_studies = data.n_studies();
    let p = data.p();
    let d = data.d();
    let q = config.q;

    // cell posteriors and their pooled/per-study covariate residuals
    let m_list: Vec<DMatrix<f64>> = (0..n_studies)
        .map(|s| {
            let study = data.study(s);
            DMatrix::from_fn(study.n(), p, |i, j| {
                ((study.x()[(i, j)] as f64 + 1.0) / study.a()[i]).ln()
            })
        })
        .collect();

    let mut ztz = DMatrix::zeros(d, d);
    let mut ztm = DMatrix::zeros(d, p);
    for (s, m) in m_list.iter().enumerate() {
        let z = data.study(s).z();
        ztz += z.transpose() * z;
        ztm += z.transpose() * m;
    }
    let beta = solve_spd(&ztz, &ztm, "initial covariate normal equations")?.transpose();

    let pooled_resid: Vec<DMatrix<f64>> = (0..n_studies)
        .map(|s| &m_list[s] - data.study(s).z() * beta.transpose())
        .collect();
    let own_resid: Vec<DMatrix<f64>> = (0..n_studies)
        .map(|s| {
            let z = data.study(s).z();
            let bs = solve_spd(
                &(z.transpose() * z),
                &(z.transpose() * &m_list[s]),
                "per-study covariate normal equations",
            )?;
            Ok(&m_list[s] - z * bs)
        })
        .collect::<Result<Vec<_>>>()?;

    let a = init_shared(&pooled_resid, &own_resid, q, &config.qs, config.seed, p);

    // per-study specific blocks from the A⁰-deflated residual
    let keep: Vec<usize> = (0..q)
        .filter(|&k| a.column(k).norm() > 1e-10)
        .collect();
    let a_kept = a.select_columns(&keep);
    let b: Vec<DMatrix<f64>> = (0..n_studies)
        .map(|s| {
            let qs = config.qs[s];
            if qs == 0 {
                return Ok(DMatrix::zeros(p, 0));
            }
            let mut resid = pooled_resid[s].clone();
            if !keep.is_empty() {
                let gram = a_kept.transpose() * &a_kept;
                let proj = solve_spd(&gram, &(a_kept.transpose()), "initial loading projection")?;
                resid -= (&resid * &a_kept) * proj;
            }
            let svd = thin_svd(&resid);
            let ns = resid.nrows() as f64;
            let mut block = DMatrix::zeros(p, qs);
            for k in 0..qs {
                block.set_column(k, &(svd.v.column(k) * (svd.s[k] / ns.sqrt())));
            }
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;

    let params = ModelParams::new(beta, a, b, DVector::from_element(n_studies, 1.0))?;
    let studies = (0..n_studies)
        .map(|s| {
            let n = data.study(s).n();
            StudyVParams {
                m: m_list[s].clone(),
                v: DMatrix::from_element(n, p, 1.0),
                mf: DMatrix::zeros(n, q),
                sf: DMatrix::identity(q, q),
                mh: DMatrix::zeros(n, config.qs[s]),
                sh: DMatrix::identity(config.qs[s], config.qs[s]),
            }
        })
        .collect();
    Ok((params, VariationalParams { studies }))
}

/// A candidate shared direction: its worst-case cross-study spike-to-floor
/// ratio, pooled energy, and the unit vector itself.
struct Candidate {
    g_min: f64,
    pooled_energy: f64,
    direction: DVector<f64>,
}

/// Minimum cross-study spike-to-floor ratio a direction must reach in every
/// study to be classified as shared.
const SHARED_RATIO_MIN: f64 = 2.0;
/// Maximum allowed ratio between the strongest and weakest per-study scores;
/// a mixture of a strong study-specific spike with a slice of shared signal
/// shows up as an extreme asymmetry and is rejected.
const SHARED_ASYMMETRY_MAX: f64 = 4.0;
/// Squared-projection threshold above which a candidate duplicates an
/// already accepted direction.
const DUPLICATE_OVERLAP: f64 = 0.5;

/// Classifies shared directions from per-study residual spectra.
///
/// Candidates are the leading right singular vectors of each study's own
/// covariate residual. A candidate direction v is scored per study by the
/// ratio of its residual energy to the heteroscedastic diagonal floor
/// Σ_j v_j²·mean(E_tj²); a direction carried by every study scores well above
/// one everywhere, a study-specific or noise direction collapses in at least
/// one study, and a specific/shared mixture is exposed by cross-study
/// asymmetry. Accepted candidates (deduplicated, best score first) are
/// refined by two rounds of alternating deflation: provisional specific
/// subspaces are estimated from the shared-deflated residuals, removed, and
/// the classification repeated on the cleaned matrices.
fn classify_shared(own_resid: &[DMatrix<f64>], q: usize, qs: &[usize]) -> Vec<Candidate> {
    let n_studies = own_resid.len();
    let n_tot: f64 = own_resid.iter().map(|e| e.nrows() as f64).sum();

    let classify = |cleaned: &[DMatrix<f64>]| -> Vec<Candidate> {
        let floors: Vec<DVector<f64>> = cleaned
            .iter()
            .map(|e| {
                DVector::from_iterator(
                    e.ncols(),
                    e.column_iter().map(|c| c.norm_squared() / e.nrows() as f64),
                )
            })
            .collect();
        let mut cands: Vec<Candidate> = Vec::new();
        for (st, e) in cleaned.iter().enumerate() {
            let svd = thin_svd(e);
            let k_max = (q + qs[st] + 5).min(svd.v.ncols());
            for k in 0..k_max {
                let v = svd.v.column(k).into_owned();
                let mut g_min = f64::INFINITY;
                let mut g_max = 0.0f64;
                let mut pooled = 0.0;
                for (t, et) in cleaned.iter().enumerate() {
                    let spike = (et * &v).norm_squared();
                    pooled += spike;
                    let floor: f64 = v
                        .iter()
                        .zip(floors[t].iter())
                        .map(|(vj, wj)| vj * vj * wj)
                        .sum();
                    let g = (spike / et.nrows() as f64) / floor.max(1e-300);
                    g_min = g_min.min(g);
                    g_max = g_max.max(g);
                }
                if g_min > SHARED_RATIO_MIN && g_max / g_min < SHARED_ASYMMETRY_MAX {
                    cands.push(Candidate {
                        g_min,
                        pooled_energy: pooled / n_tot,
                        direction: v,
                    });
                }
            }
        }
        cands.sort_by(|a, b| {
            b.g_min
                .partial_cmp(&a.g_min)
                .expect("scores are finite")
                .then(
                    b.pooled_energy
                        .partial_cmp(&a.pooled_energy)
                        .expect("energies are finite"),
                )
        });
        let mut chosen: Vec<Candidate> = Vec::new();
        for cand in cands {
            if chosen.len() == q {
                break;
            }
            if !chosen.is_empty() {
                let basis = DMatrix::from_columns(
                    &chosen.iter().map(|c| c.direction.column(0)).collect::<Vec<_>>(),
                );
                let qr = basis.qr();
                let overlap = (qr.q().transpose() * &cand.direction).norm_squared();
                if overlap > DUPLICATE_OVERLAP {
                    continue;
                }
            }
            chosen.push(cand);
        }
        chosen
    };

    let mut chosen = classify(own_resid);
    for _ in 0..2 {
        if chosen.is_empty() {
            break;
        }
        let basis = DMatrix::from_columns(
            &chosen.iter().map(|c| c.direction.column(0)).collect::<Vec<_>>(),
        );
        let q_shared = basis.qr().q();
        let cleaned: Vec<DMatrix<f64>> = (0..n_studies)
            .map(|st| {
                let e = &own_resid[st];
                if qs[st] == 0 {
                    return e.clone();
                }
                let deflated = e - (e * &q_shared) * q_shared.transpose();
                let svd = thin_svd(&deflated);
                let k = qs[st].min(svd.v.ncols());
                let q_spec = svd.v.columns(0, k).into_owned();
                e - (e * &q_spec) * q_spec.transpose()
            })
            .collect();
        chosen = classify(&cleaned);
    }
    chosen
}

/// Assembles `A⁰` from the classified directions, filling any shortfall with
/// small seeded random directions orthogonal to the accepted ones (a column
/// that starts exactly zero would receive zero updates forever), and falling
/// back to the pooled spectrum when classification finds nothing.
fn init_shared(
    pooled_resid: &[DMatrix<f64>],
    own_resid: &[DMatrix<f64>],
    q: usize,
    qs: &[usize],
    seed: u64,
    p: usize,
) -> DMatrix<f64> {
    let chosen = classify_shared(own_resid, q, qs);
    let n_tot: f64 = pooled_resid.iter().map(|e| e.nrows() as f64).sum();

    if chosen.is_empty() {
        let stacked = stack_rows(pooled_resid);
        let svd = thin_svd(&stacked);
        let mut a = DMatrix::zeros(p, q);
        for k in 0..q.min(svd.v.ncols()) {
            a.set_column(k, &(svd.v.column(k) * (svd.s[k] / n_tot.sqrt())));
        }
        return a;
    }

    let mut a = DMatrix::zeros(p, q);
    for (k, cand) in chosen.iter().enumerate() {
        // pooled energy measured on the undeflated residuals
        let energy: f64 = pooled_resid
            .iter()
            .map(|e| (e * &cand.direction).norm_squared())
            .sum::<f64>()
            / n_tot;
        a.set_column(k, &(&cand.direction * energy.sqrt()));
    }

    if chosen.len() < q {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let max_norm = a
            .column_iter()
            .take(chosen.len())
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
        let scale = 1e-2 * max_norm.max(1e-8);
        let basis = DMatrix::from_columns(
            &chosen.iter().map(|c| c.direction.column(0)).collect::<Vec<_>>(),
        );
        let q_chosen = basis.qr().q();
        for k in chosen.len()..q {
            let mut v = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            v -= &q_chosen * (q_chosen.transpose() * &v);
            let norm = v.norm();
            if norm > 0.0 {
                a.set_column(k, &(v * (scale / norm)));
            }
        }
    }
    a
}

/// Stacks per-study matrices with equal column counts vertically.
fn stack_rows(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks[0].ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}
