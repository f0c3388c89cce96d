// Shared fixtures and reference implementations for the integration suites.
// Every reference here recomputes the update formulas from scratch with
// scalar loops and explicit inverses, so the library never checks itself.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use multicoap::vem;
use multicoap::{
    cup_cut, elbo, fit, reduced_rank_beta, select_rank, trace_statistic, FitConfig, ModelParams,
    MultiStudyDataset, SimConfig, StudyData, StudyVParams, VariationalParams,
};

pub struct Tiny {
    pub data: MultiStudyDataset,
    pub params: ModelParams,
    pub vparams: VariationalParams,
}

/// A randomized small model state: 1–2 studies, p ≤ 6, n ≤ 10, q ≤ 2,
/// q_s ≤ 2, d ≤ 2. Counts and parameters are drawn directly, not from a
/// fit, so the updates are exercised away from any fixed point.
pub fn tiny_instance(seed: u64) -> Tiny {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_studies = rng.gen_range(1..=2usize);
    let q = rng.gen_range(1..=2usize);
    let d = rng.gen_range(1..=2usize);
    let qs: Vec<usize> = (0..n_studies).map(|_| rng.gen_range(0..=2usize)).collect();
    let qs_max = *qs.iter().max().unwrap();
    let p = rng.gen_range((q + qs_max + 2).max(3)..=6);

    let mut studies = Vec::new();
    let mut vstudies = Vec::new();
    for &qs_s in &qs {
        let n = rng.gen_range(3..=10usize);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(0..=7i64));
        let z = DMatrix::from_fn(n, d, |_, k| {
            if k == 0 {
                1.0
            } else {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            }
        });
        let a = DVector::from_fn(n, |_, _| rng.gen_range(1..=3) as f64);
        studies.push(StudyData::new(x, z, a).unwrap());

        let m = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let v = DMatrix::from_fn(n, p, |_, _| rng.gen_range(0.2..1.0));
        let mf = DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let mh = DMatrix::from_fn(n, qs_s, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        vstudies.push(StudyVParams {
            m,
            v,
            mf,
            sf: random_spd(q, &mut rng),
            mh,
            sh: random_spd(qs_s, &mut rng),
        });
    }

    let beta = DMatrix::from_fn(p, d, |_, _| {
        0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let a_load = DMatrix::from_fn(p, q, |_, _| {
        0.6 * rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let b_load: Vec<DMatrix<f64>> = qs
        .iter()
        .map(|&qs_s| {
            DMatrix::from_fn(p, qs_s, |_, _| {
                0.6 * rng.sample::<f64, _>(rand_distr::StandardNormal)
            })
        })
        .collect();
    let lambda = DVector::from_fn(n_studies, |_, _| rng.gen_range(0.5..1.5));

    Tiny {
        data: MultiStudyDataset::new(studies).unwrap(),
        params: ModelParams::new(beta, a_load, b_load, lambda).unwrap(),
        vparams: VariationalParams { studies: vstudies },
    }
}

fn random_spd(k: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let w = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let mut s = w.transpose() * w / k as f64;
    for i in 0..k {
        s[(i, i)] += 0.5;
    }
    s
}

// ---------------------------------------------------------------------------
// reference formulas
// ---------------------------------------------------------------------------

/// Termwise evidence lower bound, accumulated cell by cell.
pub fn reference_elbo(data: &MultiStudyDataset, params: &ModelParams, vp: &VariationalParams) -> f64 {
    let mut total = 0.0;
    for s in 0..data.n_studies() {
        let study = data.study(s);
        let st = &vp.studies[s];
        let (n, p) = (study.n(), study.p());
        let lam = params.lambda[s];
        let q = params.q();
        let qs = params.qs(s);

        for i in 0..n {
            for j in 0..p {
                let m = st.m[(i, j)];
                let v = st.v[(i, j)];
                let x = study.x()[(i, j)] as f64;
                let a = study.a()[i];
                total += x * m - a * (m + v / 2.0).exp();

                let mut fitted = 0.0;
                for k in 0..study.d() {
                    fitted += study.z()[(i, k)] * params.beta[(j, k)];
                }
                for k in 0..q {
                    fitted += params.a[(j, k)] * st.mf[(i, k)];
                }
                for k in 0..qs {
                    fitted += params.b[s][(j, k)] * st.mh[(i, k)];
                }
                let r = m - fitted;
                total -= (r * r + v) / (2.0 * lam);
                total += 0.5 * v.ln();
            }
        }

        // loading-covariance quadratics, once per (i, j) pair
        let mut quad = 0.0;
        for j in 0..p {
            for k in 0..q {
                for l in 0..q {
                    quad += params.a[(j, k)] * st.sf[(k, l)] * params.a[(j, l)];
                }
            }
            for k in 0..qs {
                for l in 0..qs {
                    quad += params.b[s][(j, k)] * st.sh[(k, l)] * params.b[s][(j, l)];
                }
            }
        }
        total -= n as f64 * quad / (2.0 * lam);
        total -= (n * p) as f64 / 2.0 * lam.ln();

        // factor prior and entropy
        let tr_sf: f64 = (0..q).map(|k| st.sf[(k, k)]).sum();
        let tr_sh: f64 = (0..qs).map(|k| st.sh[(k, k)]).sum();
        for i in 0..n {
            let mf2: f64 = (0..q).map(|k| st.mf[(i, k)].powi(2)).sum();
            let mh2: f64 = (0..qs).map(|k| st.mh[(i, k)].powi(2)).sum();
            total -= 0.5 * (mf2 + tr_sf + mh2 + tr_sh);
        }
        total += n as f64 / 2.0 * (ln_det(&st.sf) + ln_det(&st.sh));
    }
    total
}

fn ln_det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        0.0
    } else {
        m.determinant().ln()
    }
}

/// One cell update, transcribed directly.
pub fn reference_cell_update(x: f64, a: f64, y0: f64, ztilde: f64, lambda: f64) -> (f64, f64) {
    let li = 1.0 / lambda;
    let e = a * y0.exp();
    let mu = (x - e * (1.0 - y0) + li * ztilde) / (li + e);
    let sigma2 = 1.0 / (a * mu.exp() + li);
    (mu, sigma2)
}

/// Linear predictor of cell (i, j) excluding the latent log rate itself.
pub fn reference_ztilde(
    study: &StudyData,
    params: &ModelParams,
    st: &StudyVParams,
    s: usize,
    i: usize,
    j: usize,
) -> f64 {
    let mut zt = 0.0;
    for k in 0..study.d() {
        zt += study.z()[(i, k)] * params.beta[(j, k)];
    }
    for k in 0..params.q() {
        zt += params.a[(j, k)] * st.mf[(i, k)];
    }
    for k in 0..params.qs(s) {
        zt += params.b[s][(j, k)] * st.mh[(i, k)];
    }
    zt
}

/// Factor-posterior update of one study via explicit inverses: the shared
/// block first, then the specific block from the fresh shared means.
pub fn reference_factor_update(
    study: &StudyData,
    params: &ModelParams,
    st: &StudyVParams,
    s: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let lam = params.lambda[s];
    let q = params.q();
    let qs = params.qs(s);
    let zb = study.z() * params.beta.transpose();

    let sf = (params.a.transpose() * &params.a / lam + DMatrix::identity(q, q))
        .try_inverse()
        .unwrap();
    let mut resid_f = &st.m - &zb;
    if qs > 0 {
        resid_f -= &st.mh * params.b[s].transpose();
    }
    let mf = resid_f * &params.a * &sf / lam;

    if qs == 0 {
        return (mf, sf, st.mh.clone(), st.sh.clone());
    }
    let sh = (params.b[s].transpose() * &params.b[s] / lam + DMatrix::identity(qs, qs))
        .try_inverse()
        .unwrap();
    let resid_h = &st.m - &zb - &mf * params.a.transpose();
    let mh = resid_h * &params.b[s] * &sh / lam;
    (mf, sf, mh, sh)
}

/// Loading updates via explicit inverses: pooled normal equations for the
/// shared block, then per-study equations against the fresh shared loadings.
pub fn reference_loading_update(
    data: &MultiStudyDataset,
    params: &ModelParams,
    vp: &VariationalParams,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let q = params.q();
    let p = data.p();
    let mut gram = DMatrix::zeros(q, q);
    let mut rhs = DMatrix::zeros(q, p);
    for s in 0..data.n_studies() {
        let study = data.study(s);
        let st = &vp.studies[s];
        gram += st.mf.transpose() * &st.mf + &st.sf * study.n() as f64;
        let mut resid = &st.m - study.z() * params.beta.transpose();
        if params.qs(s) > 0 {
            resid -= &st.mh * params.b[s].transpose();
        }
        rhs += st.mf.transpose() * resid;
    }
    let a_new = (gram.try_inverse().unwrap() * rhs).transpose();

    let mut b_new = Vec::new();
    for s in 0..data.n_studies() {
        let qs = params.qs(s);
        if qs == 0 {
            b_new.push(DMatrix::zeros(p, 0));
            continue;
        }
        let study = data.study(s);
        let st = &vp.studies[s];
        let gram_s = st.mh.transpose() * &st.mh + &st.sh * study.n() as f64;
        let resid = &st.m - study.z() * params.beta.transpose() - &st.mf * a_new.transpose();
        let rhs_s = st.mh.transpose() * resid;
        b_new.push((gram_s.try_inverse().unwrap() * rhs_s).transpose());
    }
    (a_new, b_new)
}

/// Noise-variance update accumulated scalar by scalar.
pub fn reference_lambda_update(
    data: &MultiStudyDataset,
    params: &ModelParams,
    vp: &VariationalParams,
) -> Vec<f64> {
    let mut out = Vec::new();
    for s in 0..data.n_studies() {
        let study = data.study(s);
        let st = &vp.studies[s];
        let (n, p) = (study.n(), study.p());
        let q = params.q();
        let qs = params.qs(s);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..p {
                let mut fitted = 0.0;
                for k in 0..study.d() {
                    fitted += study.z()[(i, k)] * params.beta[(j, k)];
                }
                for k in 0..q {
                    fitted += params.a[(j, k)] * st.mf[(i, k)];
                }
                for k in 0..qs {
                    fitted += params.b[s][(j, k)] * st.mh[(i, k)];
                }
                let r = st.m[(i, j)] - fitted;
                acc += r * r + st.v[(i, j)];
            }
        }
        let mut quad = 0.0;
        for j in 0..p {
            for k in 0..q {
                for l in 0..q {
                    quad += params.a[(j, k)] * st.sf[(k, l)] * params.a[(j, l)];
                }
            }
            for k in 0..qs {
                for l in 0..qs {
                    quad += params.b[s][(j, k)] * st.sh[(k, l)] * params.b[s][(j, l)];
                }
            }
        }
        acc += n as f64 * quad;
        out.push(acc / (n * p) as f64);
    }
    out
}

/// Coefficient update as pooled weighted normal equations, solved with an
/// explicit inverse.
pub fn reference_beta_update(
    data: &MultiStudyDataset,
    params: &ModelParams,
    vp: &VariationalParams,
) -> DMatrix<f64> {
    let d = data.d();
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DMatrix::zeros(d, data.p());
    for s in 0..data.n_studies() {
        let study = data.study(s);
        let st = &vp.studies[s];
        let w = 1.0 / params.lambda[s];
        let mut ybar = st.m.clone() - &st.mf * params.a.transpose();
        if params.qs(s) > 0 {
            ybar -= &st.mh * params.b[s].transpose();
        }
        gram += study.z().transpose() * study.z() * w;
        rhs += study.z().transpose() * ybar * w;
    }
    (gram.try_inverse().unwrap() * rhs).transpose()
}

/// Rank-r projection through the primal eigenproblem: top eigenvectors of
/// β̃·W·β̃ᵀ instead of the dual decomposition used by the library.
pub fn reference_reduced_rank(
    beta_tilde: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    r: usize,
) -> DMatrix<f64> {
    let m = beta_tilde * gram * beta_tilde.transpose();
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let p = beta_tilde.nrows();
    let mut v_r = DMatrix::zeros(p, r);
    for (col, &idx) in order.iter().take(r).enumerate() {
        v_r.set_column(col, &eig.eigenvectors.column(idx));
    }
    &v_r * (v_r.transpose() * beta_tilde)
}

// ---------------------------------------------------------------------------
// seeded equivalence checks (shared by the oracle suite and the acceptance
// gate; each returns a one-line summary or a description of the failure)
// ---------------------------------------------------------------------------

pub fn check_cell_updates(n_seeds: u64) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..n_seeds {
        let mut t = tiny_instance(seed);
        let mut expected = Vec::new();
        for s in 0..t.data.n_studies() {
            let study = t.data.study(s);
            let st = &t.vparams.studies[s];
            for i in 0..study.n() {
                for j in 0..study.p() {
                    let zt = reference_ztilde(study, &t.params, st, s, i, j);
                    expected.push(reference_cell_update(
                        study.x()[(i, j)] as f64,
                        study.a()[i],
                        st.m[(i, j)],
                        zt,
                        t.params.lambda[s],
                    ));
                }
            }
        }
        vem::estep_update_cells(&t.params, &mut t.vparams, &t.data);
        let mut idx = 0;
        for s in 0..t.data.n_studies() {
            let study = t.data.study(s);
            let st = &t.vparams.studies[s];
            for i in 0..study.n() {
                for j in 0..study.p() {
                    let (mu, v) = expected[idx];
                    idx += 1;
                    worst = worst.max((st.m[(i, j)] - mu).abs());
                    worst = worst.max((st.v[(i, j)] - v).abs());
                }
            }
        }
    }
    gate(worst, 1e-12, n_seeds, "cell posterior update")
}

pub fn check_factor_updates(n_seeds: u64) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..n_seeds {
        let mut t = tiny_instance(seed);
        for s in 0..t.data.n_studies() {
            let (mf, sf, mh, sh) =
                reference_factor_update(t.data.study(s), &t.params, &t.vparams.studies[s], s);
            vem::estep_update_factors(&t.params, &mut t.vparams, &t.data, s).unwrap();
            let st = &t.vparams.studies[s];
            worst = worst.max(max_abs_diff(&st.mf, &mf));
            worst = worst.max(max_abs_diff(&st.sf, &sf));
            worst = worst.max(max_abs_diff(&st.mh, &mh));
            worst = worst.max(max_abs_diff(&st.sh, &sh));
        }
    }
    gate(worst, 1e-10, n_seeds, "factor posterior update")
}

pub fn check_loading_updates(n_seeds: u64) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..n_seeds {
        let mut t = tiny_instance(seed);
        let (a_ref, b_ref) = reference_loading_update(&t.data, &t.params, &t.vparams);
        vem::mstep_update_loadings(&mut t.params, &t.vparams, &t.data).unwrap();
        worst = worst.max(max_abs_diff(&t.params.a, &a_ref));
        for s in 0..t.data.n_studies() {
            worst = worst.max(max_abs_diff(&t.params.b[s], &b_ref[s]));
        }
    }
    gate(worst, 1e-10, n_seeds, "loading update")
}

pub fn check_lambda_updates(n_seeds: u64) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..n_seeds {
        let mut t = tiny_instance(seed);
        let lam_ref = reference_lambda_update(&t.data, &t.params, &t.vparams);
        vem::mstep_update_lambda(&mut t.params, &t.vparams, &t.data);
        for s in 0..t.data.n_studies() {
            worst = worst.max((t.params.lambda[s] - lam_ref[s]).abs());
        }
    }
    gate(worst, 1e-12, n_seeds, "noise variance update")
}

pub fn check_beta_updates(n_seeds: u64) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..n_seeds {
        let mut t = tiny_instance(seed);
        let beta_ref = reference_beta_update(&t.data, &t.params, &t.vparams);
        vem::mstep_update_beta(&mut t.params, &t.vparams, &t.data, None).unwrap();
        worst = worst.max(max_abs_diff(&t.params.beta, &beta_ref));
    }
    gate(worst, 1e-10, n_seeds, "coefficient update")
}

pub fn check_elbo_termwise(n_seeds: u64) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..n_seeds {
        let t = tiny_instance(seed);
        let got = elbo(&t.data, &t.params, &t.vparams).unwrap();
        let want = reference_elbo(&t.data, &t.params, &t.vparams);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    gate(worst, 1e-10, n_seeds, "bound evaluation")
}

pub fn check_reduced_rank(n_seeds: u64) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..n_seeds {
        let mut rng = ChaCha20Rng::seed_from_u64(9000 + seed);
        let beta_tilde =
            DMatrix::from_fn(6, 4, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let gram = random_spd(4, &mut rng);
        let got = reduced_rank_beta(&beta_tilde, &gram, 2).unwrap();
        let want = reference_reduced_rank(&beta_tilde, &gram, 2);
        worst = worst.max(max_abs_diff(&got, &want));
    }
    gate(worst, 1e-8, n_seeds, "rank projection")
}

fn gate(worst: f64, tol: f64, n_seeds: u64, what: &str) -> Result<String, String> {
    if worst <= tol {
        Ok(format!("{what}: max deviation {worst:.2e} over {n_seeds} seeds (tol {tol:.0e})"))
    } else {
        Err(format!("{what}: max deviation {worst:.2e} exceeds {tol:.0e} over {n_seeds} seeds"))
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// invariant checks (the property suite and acceptance criterion 5)
// ---------------------------------------------------------------------------

/// (b) finite-difference stationarity of the parameter blocks at a converged
/// fit on a p=5, n=10 instance.
pub fn check_stationarity() -> Result<String, String> {
    let mut config = SimConfig::new(vec![10], 5);
    config.q = 1;
    config.qs = vec![1];
    config.d = 2;
    config.r0 = 1;
    config.rho_a = 0.8;
    config.rho_b = 0.8;
    config.rho_z = 0.3;
    config.seed = 17;
    let (data, _) = multicoap::generate(&config).unwrap();
    let fit_config = FitConfig::new(1, vec![1]).with_stopping(20_000, 0.0).with_seed(17);
    let result = fit(&data, &fit_config).unwrap();

    let params = result.params;
    let vparams = result.vparams;
    let mut worst = 0.0_f64;

    let grad = |params: &ModelParams| elbo(&data, params, &vparams).unwrap();
    let h = 1e-5;

    for j in 0..params.beta.nrows() {
        for k in 0..params.beta.ncols() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.beta[(j, k)] += h;
            minus.beta[(j, k)] -= h;
            worst = worst.max(((grad(&plus) - grad(&minus)) / (2.0 * h)).abs());
        }
    }
    for j in 0..params.a.nrows() {
        for k in 0..params.a.ncols() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.a[(j, k)] += h;
            minus.a[(j, k)] -= h;
            worst = worst.max(((grad(&plus) - grad(&minus)) / (2.0 * h)).abs());
        }
    }
    for j in 0..params.b[0].nrows() {
        for k in 0..params.b[0].ncols() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.b[0][(j, k)] += h;
            minus.b[0][(j, k)] -= h;
            worst = worst.max(((grad(&plus) - grad(&minus)) / (2.0 * h)).abs());
        }
    }
    {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.lambda[0] += h;
        minus.lambda[0] -= h;
        worst = worst.max(((grad(&plus) - grad(&minus)) / (2.0 * h)).abs());
    }

    if worst < 1e-4 {
        Ok(format!("block stationarity: max |dELBO| {worst:.2e} (tol 1e-4)"))
    } else {
        Err(format!("block stationarity: max |dELBO| {worst:.2e} >= 1e-4"))
    }
}

/// (c) the fitted bound never exceeds the exact log marginal likelihood on a
/// single-variable toy, computed here by two-level quadrature.
pub fn check_jensen_bound() -> Result<String, String> {
    // p=1, q=1, no specific factors, n=5: y | f ~ N(zβ + αf, λ), x | y ~ Pois(a e^y)
    let n = 5;
    let x_vals = [0i64, 2, 1, 4, 0];
    let a_vals = [1.0, 2.0, 1.0, 1.0, 3.0];
    let x = DMatrix::from_iterator(n, 1, x_vals.iter().copied());
    let z = DMatrix::from_element(n, 1, 1.0);
    let a = DVector::from_row_slice(&a_vals);
    let data = MultiStudyDataset::new(vec![StudyData::new(x, z, a).unwrap()]).unwrap();

    let mut params = ModelParams::new(
        DMatrix::from_element(1, 1, 0.2),
        DMatrix::from_element(1, 1, 0.7),
        vec![DMatrix::zeros(1, 0)],
        DVector::from_element(1, 0.8),
    )
    .unwrap();
    let mut vparams = VariationalParams {
        studies: vec![StudyVParams {
            m: DMatrix::zeros(n, 1),
            v: DMatrix::from_element(n, 1, 1.0),
            mf: DMatrix::zeros(n, 1),
            sf: DMatrix::identity(1, 1),
            mh: DMatrix::zeros(n, 0),
            sh: DMatrix::zeros(0, 0),
        }],
    };

    // drive the state toward the optimum so the bound is tight but still a bound
    let mut bound = f64::NEG_INFINITY;
    for _ in 0..200 {
        vem::estep_update_cells(&params, &mut vparams, &data);
        vem::estep_update_factors(&params, &mut vparams, &data, 0).unwrap();
        vem::mstep_update_loadings(&mut params, &vparams, &data).unwrap();
        vem::mstep_update_beta(&mut params, &vparams, &data, None).unwrap();
        vem::mstep_update_lambda(&mut params, &vparams, &data);
        bound = elbo(&data, &params, &vparams).unwrap();
    }

    // exact log marginal: ln ∫ N(f) ∫ Pois(x | a e^y) N(y; zβ + αf, λ) dy df
    let beta = params.beta[(0, 0)];
    let alpha = params.a[(0, 0)];
    let lambda = params.lambda[0];
    let mut logml = 0.0;
    for i in 0..n {
        let x_i = data.study(0).x()[(i, 0)] as f64;
        let a_i = data.study(0).a()[i];
        let mut outer = 0.0;
        let f_step = 0.01;
        let mut f = -9.0;
        while f <= 9.0 {
            let mean_y = beta + alpha * f;
            let mut inner = 0.0;
            let y_step = 0.01;
            let width = 9.0 * lambda.sqrt() + 4.0;
            let mut y = mean_y - width;
            let hi = mean_y + width;
            while y <= hi {
                let rate = a_i * y.exp();
                let log_pois = x_i * rate.ln() - rate - ln_factorial(x_i);
                let log_norm = -0.5 * ((y - mean_y).powi(2) / lambda
                    + (2.0 * std::f64::consts::PI * lambda).ln());
                inner += (log_pois + log_norm).exp() * y_step;
                y += y_step;
            }
            let log_f = -0.5 * (f * f + (2.0 * std::f64::consts::PI).ln());
            outer += log_f.exp() * inner * f_step;
            f += f_step;
        }
        logml += outer.ln();
    }

    let margin = logml - bound;
    if margin >= -1e-6 {
        Ok(format!(
            "evidence bound: ELBO {bound:.6} <= log marginal {logml:.6} (margin {margin:.2e})"
        ))
    } else {
        Err(format!(
            "evidence bound violated: ELBO {bound:.6} > log marginal {logml:.6} by {:.2e}",
            -margin
        ))
    }
}

fn ln_factorial(x: f64) -> f64 {
    let n = x as u64;
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// (d) the identifiability rotation preserves the bound and is idempotent.
pub fn check_identifiability() -> Result<String, String> {
    let mut worst_rel = 0.0_f64;
    let mut worst_idem = 0.0_f64;
    for seed in 0..5u64 {
        let mut config = SimConfig::new(vec![30, 40], 12);
        config.d = 2;
        config.q = 2;
        config.qs = vec![1, 1];
        config.r0 = 1;
        config.rho_a = 0.8;
        config.rho_b = 0.8;
        config.rho_z = 0.3;
        config.seed = seed;
        let (data, _) = multicoap::generate(&config).unwrap();
        // raw coordinate-ascent state, before any rotation
        let (mut params, mut vparams) =
            multicoap::init_params(&data, &FitConfig::new(2, vec![1, 1]).with_seed(seed)).unwrap();
        for _ in 0..30 {
            vem::estep_update_cells(&params, &mut vparams, &data);
            for s in 0..data.n_studies() {
                vem::estep_update_factors(&params, &mut vparams, &data, s).unwrap();
            }
            vem::mstep_update_loadings(&mut params, &vparams, &data).unwrap();
            vem::mstep_update_beta(&mut params, &vparams, &data, None).unwrap();
            vem::mstep_update_lambda(&mut params, &vparams, &data);
        }

        let before = elbo(&data, &params, &vparams).unwrap();
        multicoap::apply_identifiability(&mut params, &mut vparams);
        let after = elbo(&data, &params, &vparams).unwrap();
        worst_rel = worst_rel.max((after - before).abs() / before.abs());

        let once = params.clone();
        multicoap::apply_identifiability(&mut params, &mut vparams);
        worst_idem = worst_idem.max(max_abs_diff(&params.a, &once.a));
        for s in 0..once.b.len() {
            worst_idem = worst_idem.max(max_abs_diff(&params.b[s], &once.b[s]));
        }
    }
    if worst_rel <= 1e-8 && worst_idem <= 1e-10 {
        Ok(format!(
            "identifiability rotation: bound drift {worst_rel:.2e} (tol 1e-8), \
             repeat drift {worst_idem:.2e} (tol 1e-10)"
        ))
    } else {
        Err(format!(
            "identifiability rotation: bound drift {worst_rel:.2e}, repeat drift {worst_idem:.2e}"
        ))
    }
}

/// (e) the trace statistic ignores invertible column mixing of the estimate.
pub fn check_trace_invariance(n_seeds: u64) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..n_seeds {
        let mut rng = ChaCha20Rng::seed_from_u64(4000 + seed);
        let d_hat = DMatrix::from_fn(6, 2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let d_true = DMatrix::from_fn(6, 2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let mix = loop {
            let m = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            if m.determinant().abs() > 0.1 {
                break m;
            }
        };
        let base = trace_statistic(&d_hat, &d_true).unwrap();
        let mixed = trace_statistic(&(&d_hat * &mix), &d_true).unwrap();
        worst = worst.max((base - mixed).abs());
    }
    gate(worst, 1e-10, n_seeds, "mixing invariance")
}

/// (f) projection idempotence and rank bound; cumulative-cut scale
/// invariance and monotonicity in τ.
pub fn check_projection_and_cut_invariants(n_seeds: u64) -> Result<String, String> {
    for seed in 0..n_seeds {
        let mut rng = ChaCha20Rng::seed_from_u64(5000 + seed);
        let beta_tilde =
            DMatrix::from_fn(6, 4, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let gram = random_spd(4, &mut rng);
        let r = rng.gen_range(1..=3usize);

        let once = reduced_rank_beta(&beta_tilde, &gram, r).unwrap();
        let twice = reduced_rank_beta(&once, &gram, r).unwrap();
        if max_abs_diff(&once, &twice) > 1e-10 {
            return Err(format!("projection not idempotent at seed {seed}, r={r}"));
        }
        let svd = once.clone().svd(false, false);
        let s_max = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&v| v > 1e-8 * s_max).count();
        if rank > r {
            return Err(format!("projection rank {rank} exceeds r={r} at seed {seed}"));
        }

        let nu: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..4.0)).collect();
        if nu.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        let scaled: Vec<f64> = nu.iter().map(|v| v * 7.25).collect();
        let tau_lo = rng.gen_range(0.05..0.5);
        let tau_hi = rng.gen_range(0.5..0.999);
        if cup_cut(&nu, tau_lo).unwrap() != cup_cut(&scaled, tau_lo).unwrap() {
            return Err(format!("cumulative cut not scale invariant at seed {seed}"));
        }
        if cup_cut(&nu, tau_lo).unwrap() > cup_cut(&nu, tau_hi).unwrap() {
            return Err(format!("cumulative cut not monotone in tau at seed {seed}"));
        }
    }
    Ok(format!(
        "projection idempotence, rank bound, cut scale invariance and tau monotonicity \
         over {n_seeds} seeds"
    ))
}

/// (a) on freshly fitted instances the bound trace never dips more than the
/// allowed relative slack.
pub fn check_monotonicity() -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..3u64 {
        let mut config = SimConfig::new(vec![40, 50], 25);
        config.d = 4;
        config.r0 = 2;
        config.seed = seed;
        let (data, _) = multicoap::generate(&config).unwrap();
        let result = fit(&data, &FitConfig::new(3, vec![2, 2]).with_seed(seed)).unwrap();
        worst = worst.max(result.worst_elbo_decrease());
    }
    if worst <= 1e-6 {
        Ok(format!("bound monotone on sample fits: worst dip {worst:.2e} (tol 1e-6)"))
    } else {
        Err(format!("bound decreased by {worst:.2e} relative on a sample fit"))
    }
}

/// Rank selection on a matrix built from orthonormal rank-3 factors with
/// singular values (5, 4, 3) plus jitter: the three directions carry
/// comparable energy, so the cut must keep all of them and nothing more.
pub fn check_constructed_rank_spectrum() -> Result<String, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let u = orthonormal_columns(10, 3, &mut rng);
    let v = orthonormal_columns(8, 3, &mut rng);
    let sigma = DMatrix::from_diagonal(&DVector::from_row_slice(&[5.0, 4.0, 3.0]));
    let mut beta_hat = u * sigma * v.transpose();
    for val in beta_hat.iter_mut() {
        *val += 1e-8 * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    let selection = select_rank(&beta_hat, 8, 0.95).unwrap();
    if selection.r_hat == 3 {
        Ok("constructed rank-3 spectrum selects r=3".to_string())
    } else {
        Err(format!("constructed rank-3 spectrum selected r={}", selection.r_hat))
    }
}

fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(rows, cols, |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    raw.qr().q()
}
