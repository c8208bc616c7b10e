//! The individual sweep updates: sticks, covariances, means, outcome
//! parameters, latent imputation, allocations, label moves, and the
//! concentration parameter.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, StandardNormal};

use crate::cutpoints::interval_of;
use crate::distributions::normal::ln_normal_interval_prob;
use crate::distributions::{sample_truncated_normal, sample_wishart, wishart_ln_pdf};
use crate::error::{Error, Result};
use crate::kernel::response_mix;
use crate::priors::{decompose_cov, recompose_cov, sample_prior_atom};
use crate::sampler::state::{
    ChainModel, Cluster, MixtureState, SamplerMode, ADAPT_BATCH, TAU_MAX, TAU_MIN,
};

/// Step 1: conjugate stick updates `v_h ~ Beta(n_h + 1, n - cum_h + alpha)`.
pub fn update_sticks<R: Rng + ?Sized>(state: &mut MixtureState, rng: &mut R) -> Result<()> {
    let counts = state.counts();
    let n: usize = counts.iter().sum();
    let mut cum = 0usize;
    for h in 0..state.t() {
        cum += counts[h];
        let a = counts[h] as f64 + 1.0;
        let b = (n - cum) as f64 + state.alpha;
        let beta = Beta::new(a, b)
            .map_err(|e| Error::ParamDomain(format!("stick Beta({a},{b}): {e}")))?;
        state.v[h] = beta.sample(rng).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    }
    state.recompute_weights();
    Ok(())
}

/// Scatter matrix of a cluster's members around the component mean.
fn scatter_matrix(
    state: &MixtureState,
    model: &ChainModel,
    members: &[usize],
    mu_star: &DVector<f64>,
) -> DMatrix<f64> {
    let q = model.layout.q();
    let mut s = DMatrix::zeros(q, q);
    let mut z = Vec::with_capacity(q);
    for &i in members {
        state.full_values(&model.data, i, &mut z);
        for a in 0..q {
            let ra = z[a] - mu_star[a];
            for b in a..q {
                let v = ra * (z[b] - mu_star[b]);
                s[(a, b)] += v;
            }
        }
    }
    for a in 0..q {
        for b in (a + 1)..q {
            s[(b, a)] = s[(a, b)];
        }
    }
    s
}

/// Unnormalized log target of `(D_h, Sigma*_h)` given the cluster scatter.
fn ln_cov_target(
    d_latent: &DVector<f64>,
    sigma_star: &DMatrix<f64>,
    sigma_chol: &Cholesky<f64, nalgebra::Dyn>,
    n_h: f64,
    scatter: &DMatrix<f64>,
    model: &ChainModel,
) -> f64 {
    let q = model.layout.q() as f64;
    let eta = model.prior.eta;
    let ln_det_d: f64 = d_latent.iter().map(|&v| v.ln()).sum();
    let ln_det_sigma = 2.0 * sigma_chol.l_dirty().diagonal().map(f64::ln).sum();
    let e = recompose_cov(d_latent, sigma_star, &model.layout);
    let tr_he = model.prior.h_wishart.cholesky().solve(&e).trace();
    let tr_ss = sigma_chol.solve(scatter).trace();
    (0.5 * eta - 1.0) * ln_det_d + 0.5 * (eta - q - 1.0 - n_h) * ln_det_sigma
        - 0.5 * (tr_he + tr_ss)
}

/// Step 2: Metropolis-Hastings update of each cluster's `(D_h, Sigma*_h)`
/// through a Wishart proposal on the expanded matrix `E_h`.
pub fn update_cov_mh<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    rng: &mut R,
) -> Result<()> {
    let counts = state.counts();
    let psi = state.tuning.psi;
    let layout = model.layout;
    let q = layout.q() as f64;
    for h in 0..state.t() {
        if counts[h] == 0 {
            // Empty clusters refresh from the prior.
            let e = sample_wishart(rng, model.prior.eta, &model.prior.h_wishart)?;
            let (d, sigma) = decompose_cov(&e, &layout)?;
            state.clusters[h].atom.set_sigma_star(sigma)?;
            state.clusters[h].d_latent = d;
            continue;
        }
        let members: Vec<usize> = (0..model.data.n)
            .filter(|&i| state.delta[i] == h)
            .collect();
        let accepted = {
            let cluster = &state.clusters[h];
            let scatter = scatter_matrix(state, model, &members, cluster.atom.mu_star());
            let e_t = recompose_cov(&cluster.d_latent, cluster.atom.sigma_star(), &layout);
            propose_cov_move(cluster, &e_t, &scatter, counts[h] as f64, psi, q, model, rng)?
        };
        let ok = accepted.is_some();
        if let Some((d_p, sigma_p)) = accepted {
            state.clusters[h].atom.set_sigma_star(sigma_p)?;
            state.clusters[h].d_latent = d_p;
        }
        state.tuning.cov_counter.record(ok);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn propose_cov_move<R: Rng + ?Sized>(
    cluster: &Cluster,
    e_t: &DMatrix<f64>,
    scatter: &DMatrix<f64>,
    n_h: f64,
    psi: f64,
    q: f64,
    model: &ChainModel,
    rng: &mut R,
) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
    // Proposal E_p ~ Wishart(psi, E_t / psi); Cholesky failure is a rejection.
    let scale_t = symmetrize(&(e_t / psi));
    let Ok(spd_t) = crate::distributions::SpdMatrix::new(scale_t.clone()) else {
        return Ok(None);
    };
    let e_p = match sample_wishart(rng, psi, &spd_t) {
        Ok(m) => m,
        Err(_) => return Ok(None),
    };
    let Ok((d_p, sigma_p)) = decompose_cov(&e_p, &model.layout) else {
        return Ok(None);
    };
    let Some(chol_p) = Cholesky::new(sigma_p.clone()) else {
        return Ok(None);
    };
    let chol_t = Cholesky::new(cluster.atom.sigma_star().clone())
        .ok_or_else(|| Error::Matrix("current Sigma* lost positive definiteness".into()))?;

    let tgt_p = ln_cov_target(&d_p, &sigma_p, &chol_p, n_h, scatter, model);
    let tgt_t = ln_cov_target(
        &cluster.d_latent,
        cluster.atom.sigma_star(),
        &chol_t,
        n_h,
        scatter,
        model,
    );
    // t(E | E') = Wishart(E; psi, E'/psi) x |D|^{(q-1)/2}.
    let fwd = match wishart_ln_pdf(&e_p, psi, &scale_t) {
        Ok(v) => v + 0.5 * (q - 1.0) * d_p.iter().map(|&x| x.ln()).sum::<f64>(),
        Err(_) => return Ok(None),
    };
    let scale_p = symmetrize(&(&e_p / psi));
    let rev = match wishart_ln_pdf(e_t, psi, &scale_p) {
        Ok(v) => {
            v + 0.5 * (q - 1.0)
                * cluster
                    .d_latent
                    .iter()
                    .map(|&x| x.ln())
                    .sum::<f64>()
        }
        Err(_) => return Ok(None),
    };
    let ln_ratio = tgt_p + rev - tgt_t - fwd;
    if ln_ratio >= 0.0 || rng.random::<f64>().ln() < ln_ratio {
        Ok(Some((d_p, sigma_p)))
    } else {
        Ok(None)
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Step 3: conjugate Gaussian update of the free means.
pub fn update_means<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    rng: &mut R,
) -> Result<()> {
    let counts = state.counts();
    let layout = model.layout;
    let p2 = layout.free_dim();
    let d_prior = &model.prior.d;
    let d_diag = &model.prior.d_diag;
    for h in 0..state.t() {
        if counts[h] == 0 {
            let mut mu = DVector::zeros(p2);
            for j in 0..p2 {
                let normal = Normal::new(d_prior[j], d_diag[j].sqrt())
                    .map_err(|e| Error::ParamDomain(format!("mean prior: {e}")))?;
                mu[j] = normal.sample(rng);
            }
            state.clusters[h].atom.set_mu_free(&mu);
            continue;
        }
        // z1 is the response latent (structural zero mean, Sigma11 = 1).
        let (sigma21, sigma22) = {
            let sigma = state.clusters[h].atom.sigma_star();
            (
                sigma.view((1, 0), (p2, 1)).into_owned(),
                sigma.view((1, 1), (p2, p2)).into_owned(),
            )
        };
        let w = symmetrize(&(&sigma22 - &sigma21 * sigma21.transpose()));
        let Some(w_chol) = Cholesky::new(w) else {
            state.push_warning(format!("cluster {h}: singular W in mean update, kept value"));
            continue;
        };
        let mut resid_sum = DVector::zeros(p2);
        let mut buf = Vec::new();
        for i in 0..model.data.n {
            if state.delta[i] != h {
                continue;
            }
            state.rest_values(&model.data, i, &mut buf);
            let y_star = state.y_latent[i];
            for j in 0..p2 {
                resid_sum[j] += buf[j] - sigma21[j] * y_star;
            }
        }
        // Posterior precision A = n_h W^-1 + D^-1 (D diagonal).
        let mut a = w_chol.inverse() * counts[h] as f64;
        let mut rhs = w_chol.solve(&resid_sum);
        for j in 0..p2 {
            a[(j, j)] += 1.0 / d_diag[j];
            rhs[j] += d_prior[j] / d_diag[j];
        }
        let Some(a_chol) = Cholesky::new(symmetrize(&a)) else {
            state.push_warning(format!("cluster {h}: singular posterior precision"));
            continue;
        };
        let mean = a_chol.solve(&rhs);
        // Sample N(mean, A^-1): mean + L^-T z with A = L L^T.
        let z = DVector::from_iterator(p2, (0..p2).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let draw = &mean
            + a_chol
                .l_dirty()
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or_else(|| Error::Singular("mean sampling back-solve".into()))?;
        state.clusters[h].atom.set_mu_free(&draw);
    }
    Ok(())
}

/// Proposal density helpers for step 4.

fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 || shape <= 0.0 || rate <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * x.ln()
        - rate * x
}

fn ln_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) || a <= 0.0 || b <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - statrs::function::beta::ln_beta(a, b)
}

/// Gamma proposal with mean `cur` and variance `1/tau`.
fn gamma_proposal<R: Rng + ?Sized>(cur: f64, tau: f64, rng: &mut R) -> Option<(f64, f64, f64)> {
    let shape = tau * cur * cur;
    let rate = tau * cur;
    if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
        return None;
    }
    let g = Gamma::new(shape, 1.0 / rate).ok()?;
    let prop = g.sample(rng);
    if !(prop > 0.0 && prop.is_finite()) {
        return None;
    }
    Some((prop, shape, rate))
}

/// Beta proposal parameters with mean `xi` and variance ~`1/tau`; `tau` is
/// raised just enough whenever the requested variance is infeasible.
fn beta_proposal_params(xi: f64, tau: f64) -> (f64, f64) {
    let tau_eff = tau.max(1.02 / (xi * (1.0 - xi)));
    let sum = tau_eff * xi * (1.0 - xi) - 1.0;
    (xi * sum, (1.0 - xi) * sum)
}

/// Marginal log likelihood of a cluster's outcome parameters, the response
/// latent integrated out: a product of normal-interval probabilities under
/// the conditional moments given covariate latents/values.
struct XiTargetCtx {
    /// Conditional mean of the response latent per member.
    cond_means: Vec<f64>,
    /// Shared conditional sd.
    cond_sd: f64,
    /// (observed count, offset) per member.
    obs: Vec<(u32, f64)>,
}

fn xi_target_ctx(state: &MixtureState, model: &ChainModel, h: usize) -> XiTargetCtx {
    let mut cond_means = Vec::new();
    let mut obs = Vec::new();
    let mut buf = Vec::new();
    let atom = &state.clusters[h].atom;
    let mut cond_var = 1.0;
    for i in 0..model.data.n {
        if state.delta[i] != h {
            continue;
        }
        state.rest_values(&model.data, i, &mut buf);
        let (m, v) = atom.response_given_rest(&buf);
        cond_means.push(m);
        cond_var = v;
        obs.push((model.data.y[i], model.data.offsets[i]));
    }
    XiTargetCtx {
        cond_means,
        cond_sd: cond_var.sqrt(),
        obs,
    }
}

fn xi_ln_likelihood(ctx: &XiTargetCtx, model: &ChainModel, xi: &[f64]) -> f64 {
    let family = model.layout.family;
    let mut total = 0.0;
    for (k, &(y, offset)) in ctx.obs.iter().enumerate() {
        let Ok(params) = crate::distributions::XiParams::new(family, xi, offset) else {
            return f64::NEG_INFINITY;
        };
        let iv = match interval_of(family, y as i64, &params) {
            Ok(iv) => iv,
            Err(_) => return f64::NEG_INFINITY, // support no longer covers y
        };
        let m = ctx.cond_means[k];
        let lo = (iv.lo - m) / ctx.cond_sd;
        let hi = (iv.hi - m) / ctx.cond_sd;
        total += ln_normal_interval_prob(lo, hi);
        if total == f64::NEG_INFINITY {
            return total;
        }
    }
    total
}

/// Step 4: Metropolis-Hastings update of the outcome parameters.
pub fn update_xi_mh<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    rng: &mut R,
) -> Result<()> {
    use crate::distributions::OutcomeFamily as F;
    let counts = state.counts();
    let family = model.layout.family;
    let prior = model.prior.xi_prior;
    for h in 0..state.t() {
        if counts[h] == 0 {
            let xi = prior.sample(family, rng);
            state.clusters[h].set_xi(xi);
            continue;
        }
        let ctx = xi_target_ctx(state, model, h);
        let cur = state.clusters[h].atom.xi().to_vec();
        let cur_ll = xi_ln_likelihood(&ctx, model, &cur) + prior.ln_density(family, &cur);

        match family {
            F::Poisson | F::Binomial | F::NegativeBinomial | F::BetaBinomial => {
                let tau = state.tuning.tau;
                let mut prop = Vec::with_capacity(cur.len());
                let mut ln_fwd = 0.0;
                let mut ln_rev = 0.0;
                let mut valid = true;
                for &x in &cur {
                    if family == F::Binomial {
                        let (a, b) = beta_proposal_params(x, tau);
                        let Ok(beta) = Beta::new(a, b) else {
                            valid = false;
                            break;
                        };
                        let p: f64 = beta.sample(rng);
                        if !(p > 0.0 && p < 1.0) {
                            valid = false;
                            break;
                        }
                        ln_fwd += ln_beta_pdf(p, a, b);
                        let (ra, rb) = beta_proposal_params(p, tau);
                        ln_rev += ln_beta_pdf(x, ra, rb);
                        prop.push(p);
                    } else {
                        let Some((p, shape, rate)) = gamma_proposal(x, tau, rng) else {
                            valid = false;
                            break;
                        };
                        ln_fwd += ln_gamma_pdf(p, shape, rate);
                        ln_rev += ln_gamma_pdf(x, tau * p * p, tau * p);
                        prop.push(p);
                    }
                }
                let accepted = valid && {
                    let prop_ll =
                        xi_ln_likelihood(&ctx, model, &prop) + prior.ln_density(family, &prop);
                    let ln_ratio = prop_ll + ln_rev - cur_ll - ln_fwd;
                    ln_ratio >= 0.0 || rng.random::<f64>().ln() < ln_ratio
                };
                if accepted {
                    state.clusters[h].set_xi(prop);
                }
                state.tuning.tau_counter.record(accepted);
            }
            F::GeneralizedPoisson => {
                // Two sub-steps with separate tuning parameters.
                let mut xi = cur;
                let mut ll = cur_ll;
                // (i) xi1 via Gamma proposal.
                let tau1 = state.tuning.tau1;
                let acc1 = if let Some((p, shape, rate)) = gamma_proposal(xi[0], tau1, rng) {
                    let cand = vec![p, xi[1]];
                    let cand_ll =
                        xi_ln_likelihood(&ctx, model, &cand) + prior.ln_density(family, &cand);
                    let ln_fwd = ln_gamma_pdf(p, shape, rate);
                    let ln_rev = ln_gamma_pdf(xi[0], tau1 * p * p, tau1 * p);
                    let ln_ratio = cand_ll + ln_rev - ll - ln_fwd;
                    if ln_ratio >= 0.0 || rng.random::<f64>().ln() < ln_ratio {
                        xi = cand;
                        ll = cand_ll;
                        true
                    } else {
                        false
                    }
                } else {
                    false
                };
                state.tuning.tau1_counter.record(acc1);
                // (ii) xi2 via symmetric normal proposal; below-floor
                // candidates have zero target mass and are auto-rejected.
                let tau2 = state.tuning.tau2;
                let sd2 = (1.0 / tau2).sqrt();
                let p2 = xi[1] + sd2 * rng.sample::<f64, _>(StandardNormal);
                let acc2 = if p2 > crate::distributions::GP_XI2_FLOOR {
                    let cand = vec![xi[0], p2];
                    let cand_ll =
                        xi_ln_likelihood(&ctx, model, &cand) + prior.ln_density(family, &cand);
                    let ln_ratio = cand_ll - ll;
                    if ln_ratio >= 0.0 || rng.random::<f64>().ln() < ln_ratio {
                        xi = cand;
                        true
                    } else {
                        false
                    }
                } else {
                    false
                };
                state.tuning.tau2_counter.record(acc2);
                if acc1 || acc2 {
                    state.clusters[h].set_xi(xi);
                }
            }
        }
    }
    Ok(())
}

/// Step 5: impute latent variables one coordinate at a time from their
/// truncated-normal full conditionals.
pub fn impute_latents<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    rng: &mut R,
) -> Result<()> {
    let p_b = model.data.p_binary;
    let mut z = Vec::new();
    for i in 0..model.data.n {
        let h = state.delta[i];
        state.full_values(&model.data, i, &mut z);
        impute_observation(state, model, h, i, &mut z, p_b, rng)?;
    }
    Ok(())
}

/// Redraw all latent coordinates of observation `i` in place; `z` holds the
/// full coordinate vector and is kept in sync.
fn impute_observation<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    h: usize,
    i: usize,
    z: &mut [f64],
    p_b: usize,
    rng: &mut R,
) -> Result<()> {
    let iv = state.clusters[h].interval(model.data.y[i], model.data.offsets[i])?;
    if iv.is_empty() {
        return Err(Error::Numerical(format!(
            "empty response interval for observation {i}"
        )));
    }
    let atom = &state.clusters[h].atom;
    let (m, var) = atom.coord_conditional(0, z);
    let draw = sample_truncated_normal(rng, m, var, iv.lo, iv.hi)?;
    state.y_latent[i] = draw;
    z[0] = draw;
    for b in 0..p_b {
        let coord = 1 + b;
        let iv = crate::cutpoints::binary_interval(model.data.xb_row(i)[b]);
        let (m, var) = atom.coord_conditional(coord, z);
        let draw = sample_truncated_normal(rng, m, var, iv.lo, iv.hi)?;
        state.xb_latent[i * p_b + b] = draw;
        z[coord] = draw;
    }
    Ok(())
}

/// Step 6: allocation update from the latent-marginalized kernel, followed
/// by a latent refresh for reallocated observations so the containment
/// invariant holds under the new component's cut-points.
pub fn update_allocations<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    rng: &mut R,
) -> Result<()> {
    match model.mode {
        SamplerMode::Truncated { .. } => update_allocations_weighted(state, model, rng, None),
        SamplerMode::Slice { max_components } => {
            update_allocations_slice(state, model, rng, max_components)
        }
    }
}

/// Log marginal kernel of observation `i` under cluster `h` (continuous
/// density times latent-rectangle probability). A cluster whose truncated
/// support does not cover the observation has zero kernel mass.
fn ln_marginal_kernel(
    state: &mut MixtureState,
    model: &ChainModel,
    h: usize,
    i: usize,
) -> Result<f64> {
    let iv = match state.clusters[h].interval(model.data.y[i], model.data.offsets[i]) {
        Ok(iv) => iv,
        Err(Error::Support { .. }) => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    let atom = &state.clusters[h].atom;
    let xb = model.data.xb_row(i);
    let xc = model.data.xc_row(i);
    let ln_cont = atom.continuous_ln_pdf(xc);
    if model.data.p_binary == 0 {
        let (m, v) = atom.response_given_continuous(xc);
        let sd = v.sqrt();
        let lo = (iv.lo - m) / sd;
        let hi = (iv.hi - m) / sd;
        Ok(ln_cont + ln_normal_interval_prob(lo, hi))
    } else {
        let mix = response_mix(atom, xb, xc)?;
        let mass = mix.interval_mass(&iv);
        Ok(ln_cont + mass.ln())
    }
}

fn update_allocations_weighted<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    rng: &mut R,
    slice_u: Option<&[f64]>,
) -> Result<()> {
    let n = model.data.n;
    let t = state.t();
    // Cluster-major pass so each cluster's cut-point cache warms once.
    let mut lw = vec![f64::NEG_INFINITY; n * t];
    for h in 0..t {
        let ln_pi = state.pi[h].ln();
        for i in 0..n {
            let allowed = match slice_u {
                Some(u) => u[i] < state.pi[h],
                None => true,
            };
            if !allowed {
                continue;
            }
            let base = match slice_u {
                Some(_) => 0.0,
                None => ln_pi,
            };
            lw[i * t + h] = base + ln_marginal_kernel(state, model, h, i)?;
        }
    }
    let mut moved = Vec::new();
    for i in 0..n {
        let row = &lw[i * t..(i + 1) * t];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Numerical(format!(
                "allocation weights all vanished for observation {i}"
            )));
        }
        let mut total = 0.0;
        for &w in row {
            total += (w - max).exp();
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = t - 1;
        for (h, &w) in row.iter().enumerate() {
            acc += (w - max).exp();
            if acc >= target {
                pick = h;
                break;
            }
        }
        if state.delta[i] != pick {
            state.delta[i] = pick;
            moved.push(i);
        }
    }
    refresh_moved_latents(state, model, &moved, rng)
}

/// Redraw latents of reallocated observations under their new component.
/// For a single latent coordinate this completes an exact blocked draw of
/// (allocation, latent); with binary latents two Gibbs passes are used.
fn refresh_moved_latents<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    moved: &[usize],
    rng: &mut R,
) -> Result<()> {
    let p_b = model.data.p_binary;
    let passes = if p_b == 0 { 1 } else { 2 };
    let mut z = Vec::new();
    for &i in moved {
        let h = state.delta[i];
        for _ in 0..passes {
            state.full_values(&model.data, i, &mut z);
            impute_observation(state, model, h, i, &mut z, p_b, rng)?;
        }
    }
    Ok(())
}

fn update_allocations_slice<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    rng: &mut R,
    max_components: usize,
) -> Result<()> {
    let n = model.data.n;
    // u_i ~ Uniform(0, pi_{delta_i}).
    let mut u = vec![0.0; n];
    let mut u_min = f64::INFINITY;
    for i in 0..n {
        let cap = state.pi[state.delta[i]];
        u[i] = rng.random::<f64>() * cap;
        u_min = u_min.min(u[i]);
    }
    // Instantiate components until the residual stick mass drops below the
    // smallest slice variable.
    let mut rest: f64 = state.v.iter().map(|&v| 1.0 - v).product();
    while rest >= u_min {
        if state.t() >= max_components {
            return Err(Error::Numerical(format!(
                "slice sampler exceeded {max_components} components"
            )));
        }
        let beta = Beta::new(1.0, state.alpha)
            .map_err(|e| Error::ParamDomain(format!("stick prior: {e}")))?;
        let v_new: f64 = beta.sample(rng).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
        let draw = sample_prior_atom(rng, &model.prior)?;
        state.clusters.push(Cluster::new(draw.atom, draw.d_latent));
        state.v.push(v_new);
        rest *= 1.0 - v_new;
    }
    state.recompute_weights();
    state.u = u.clone();
    update_allocations_weighted(state, model, rng, Some(&u))?;
    // The slice variables are auxiliary to this step only: every allocation
    // must sit inside its slice. Later steps may reshuffle the weights.
    debug_assert!((0..n).all(|i| state.u[i] < state.pi[state.delta[i]]));
    // Trim trailing unused components; they are regenerated on demand.
    let max_used = state.delta.iter().cloned().max().unwrap_or(0);
    let keep = max_used + 1;
    if keep < state.t() {
        state.clusters.truncate(keep);
        state.v.truncate(keep);
        state.recompute_weights();
    }
    Ok(())
}

/// Step 7: label-switching moves.
pub fn label_switch_moves<R: Rng + ?Sized>(
    state: &mut MixtureState,
    rng: &mut R,
) -> Result<()> {
    let counts = state.counts();
    let nonempty: Vec<usize> = (0..state.t()).filter(|&h| counts[h] > 0).collect();

    // (a) swap the labels of two random nonempty clusters.
    if nonempty.len() >= 2 {
        let a = nonempty[rng.random_range(0..nonempty.len())];
        let b = loop {
            let c = nonempty[rng.random_range(0..nonempty.len())];
            if c != a {
                break c;
            }
        };
        let ln_ratio = (counts[a] as f64 - counts[b] as f64) * (state.pi[b] / state.pi[a]).ln();
        if ln_ratio >= 0.0 || rng.random::<f64>().ln() < ln_ratio {
            state.clusters.swap(a, b);
            for d in state.delta.iter_mut() {
                if *d == a {
                    *d = b;
                } else if *d == b {
                    *d = a;
                }
            }
        }
    }

    // (b) swap labels a, a+1 together with their stick fractions.
    if let Some(&n_star) = nonempty.last() {
        if n_star >= 1 {
            let a = rng.random_range(0..n_star);
            let (n_a, n_a1) = (counts[a] as f64, counts[a + 1] as f64);
            let ln_ratio = n_a * (1.0 - state.v[a + 1]).ln() - n_a1 * (1.0 - state.v[a]).ln();
            if ln_ratio >= 0.0 || rng.random::<f64>().ln() < ln_ratio {
                state.clusters.swap(a, a + 1);
                state.v.swap(a, a + 1);
                for d in state.delta.iter_mut() {
                    if *d == a {
                        *d = a + 1;
                    } else if *d == a + 1 {
                        *d = a;
                    }
                }
                state.recompute_weights();
            }
        }
    }
    Ok(())
}

/// Step 8: concentration-parameter update via the auxiliary-variable
/// two-Gamma mixture.
pub fn update_alpha<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    rng: &mut R,
) -> Result<()> {
    let (a, b) = (model.prior.alpha_shape, model.prior.alpha_rate);
    let n = model.data.n;
    if n == 0 {
        let g = Gamma::new(a, 1.0 / b).map_err(|e| Error::ParamDomain(format!("{e}")))?;
        state.alpha = g.sample(rng);
        return Ok(());
    }
    let k = state.n_nonempty() as f64;
    let beta = Beta::new(state.alpha + 1.0, n as f64)
        .map_err(|e| Error::ParamDomain(format!("eta Beta: {e}")))?;
    let eta_aux: f64 = beta.sample(rng).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    let rate = b - eta_aux.ln();
    let pi_eta = (a + k - 1.0) / (a + k - 1.0 + n as f64 * rate);
    let shape = if rng.random::<f64>() < pi_eta {
        a + k
    } else {
        a + k - 1.0
    };
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::ParamDomain(format!("alpha Gamma({shape},{rate}): {e}")))?;
    state.alpha = g.sample(rng).max(f64::MIN_POSITIVE);
    Ok(())
}

/// Diminishing-adaptation tuning: every batch, step each proposal scale
/// toward the 20-25% acceptance band.
pub fn adapt_tuning(state: &mut MixtureState, q: usize, sweep: u64) {
    if (sweep + 1) % ADAPT_BATCH != 0 {
        return;
    }
    let t = &mut state.tuning;
    t.batch_index += 1;
    let gamma = (0.05f64.min(1.0 / (t.batch_index as f64).sqrt())).exp();
    let q1 = q as f64 + 1.0;

    if let Some(rate) = t.cov_counter.rate() {
        if rate > 0.25 {
            t.psi = (t.psi / gamma).max(q1);
        } else if rate < 0.20 {
            t.psi *= gamma;
        }
    }
    for (counter, tau) in [
        (&mut t.tau_counter, &mut t.tau),
        (&mut t.tau1_counter, &mut t.tau1),
        (&mut t.tau2_counter, &mut t.tau2),
    ] {
        if let Some(rate) = counter.rate() {
            // High acceptance -> bolder proposals -> larger variance 1/tau.
            if rate > 0.25 {
                *tau = (*tau / gamma).clamp(TAU_MIN, TAU_MAX);
            } else if rate < 0.20 {
                *tau = (*tau * gamma).clamp(TAU_MIN, TAU_MAX);
            }
        }
        counter.reset();
    }
    t.cov_counter.reset();
}

/// One full sweep in the frozen step order.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut MixtureState,
    model: &ChainModel,
    rng: &mut R,
    sweep_index: u64,
) -> Result<()> {
    update_sticks(state, rng)?;
    update_cov_mh(state, model, rng)?;
    update_means(state, model, rng)?;
    update_xi_mh(state, model, rng)?;
    impute_latents(state, model, rng)?;
    update_allocations(state, model, rng)?;
    label_switch_moves(state, rng)?;
    update_alpha(state, model, rng)?;
    adapt_tuning(state, model.layout.q(), sweep_index);
    Ok(())
}
