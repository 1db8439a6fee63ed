//! The MCMC engine: conjugate Gibbs updates for precisions, regression
//! coefficients, and the ICAR vectors; random-walk Metropolis for the mark
//! hyperparameters; adaptive MALA for the latent eta and mu blocks;
//! hard-centering every iteration; burn-in/thinning/output management and a
//! versioned checkpoint format.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::GmrfSampler;
use crate::graph::{Side, SlopeUnitGraph};
use crate::marks::MarkModel;
use crate::model::{
    linear_predictor_counts, linear_predictor_sizes, loglik_sizes, CountLikelihood, Dataset,
    GammaPrior, LatentState, ModelConfig,
};

/// Robbins-Monro step-size tuner for a MALA block.
///
/// During burn-in the log step moves by t^{-0.6} * (alpha - target) toward
/// the optimal-scaling acceptance rate 0.574; after burn-in the kernel is
/// frozen and only acceptance statistics accumulate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MalaTuner {
    log_step: f64,
    target: f64,
    t: u64,
    frozen: bool,
    accepted_post: u64,
    proposed_post: u64,
}

impl MalaTuner {
    pub fn new(initial_step: f64) -> MalaTuner {
        MalaTuner {
            log_step: initial_step.ln(),
            target: 0.574,
            t: 0,
            frozen: false,
            accepted_post: 0,
            proposed_post: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn adapt(&mut self, alpha: f64) {
        if self.frozen {
            return;
        }
        self.t += 1;
        let gain = (self.t as f64).powf(-0.6);
        self.log_step += gain * (alpha - self.target);
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn record_post(&mut self, accepted: bool) {
        self.proposed_post += 1;
        if accepted {
            self.accepted_post += 1;
        }
    }

    /// Acceptance rate after the kernel was frozen.
    pub fn post_freeze_acceptance(&self) -> f64 {
        if self.proposed_post == 0 {
            f64::NAN
        } else {
            self.accepted_post as f64 / self.proposed_post as f64
        }
    }
}

/// Scalar random-walk tuner for the mark hyperparameter components,
/// targeting 0.44 acceptance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RwTuner {
    log_step: f64,
    target: f64,
    t: u64,
    frozen: bool,
    accepted_post: u64,
    proposed_post: u64,
}

impl RwTuner {
    pub fn new(initial_step: f64) -> RwTuner {
        RwTuner {
            log_step: initial_step.ln(),
            target: 0.44,
            t: 0,
            frozen: false,
            accepted_post: 0,
            proposed_post: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn adapt(&mut self, alpha: f64) {
        if self.frozen {
            return;
        }
        self.t += 1;
        self.log_step += (self.t as f64).powf(-0.6) * (alpha - self.target);
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn record_post(&mut self, accepted: bool) {
        self.proposed_post += 1;
        if accepted {
            self.accepted_post += 1;
        }
    }

    pub fn post_freeze_acceptance(&self) -> f64 {
        if self.proposed_post == 0 {
            f64::NAN
        } else {
            self.accepted_post as f64 / self.proposed_post as f64
        }
    }
}

/// Run lengths and the RNG seed for one chain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl SamplerOptions {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn_in {} must be below n_iter {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if (self.n_iter - self.burn_in) % self.thin != 0 {
            return Err(Error::Config(format!(
                "n_iter - burn_in = {} is not a multiple of thin = {}",
                self.n_iter - self.burn_in,
                self.thin
            )));
        }
        Ok(())
    }
}

/// Thinned post-burn-in draws with acceptance diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainOutput {
    pub draws: Vec<LatentState>,
    pub accept_eta: f64,
    pub accept_mu: f64,
    pub accept_theta: Vec<f64>,
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl ChainOutput {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }
}

/// Draws kappa from its Normal-Gamma conjugate conditional:
/// Gamma(a + n_eff/2, b + rss/2).
pub fn gibbs_precision<R: Rng + ?Sized>(
    rss: f64,
    n_eff: f64,
    prior: GammaPrior,
    rng: &mut R,
) -> Result<f64> {
    if rss < 0.0 || n_eff <= 0.0 {
        return Err(Error::Domain(format!("invalid conjugate update: rss {rss}, n_eff {n_eff}")));
    }
    if !(prior.shape > 0.0 && prior.rate > 0.0) {
        return Err(Error::Domain("gamma prior needs positive shape and rate".into()));
    }
    let shape = prior.shape + 0.5 * n_eff;
    let rate = prior.rate + 0.5 * rss;
    let dist = GammaDist::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(format!("gamma sampler: {e}")))?;
    Ok(dist.sample(rng))
}

// Joint Gaussian draw for a linear block: response r with noise precision
// kappa, design X, independent N(0, prior_variance) prior on each
// coefficient. Returns a draw from the exact conditional.
fn gibbs_linear_block<R: Rng + ?Sized>(
    xtx: &DMatrix<f64>,
    xtr: &DVector<f64>,
    kappa: f64,
    prior_variance: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let p = xtx.nrows();
    let mut precision = xtx * kappa;
    for i in 0..p {
        precision[(i, i)] += 1.0 / prior_variance;
    }
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::Numerical("coefficient conditional precision not positive definite".into()))?;
    let mean = chol.solve(&(xtr * kappa));
    let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
    // x = mean + L^{-T} z
    let l = chol.l();
    let delta = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed in coefficient draw".into()))?;
    Ok(mean + delta)
}

/// Internal driver holding precomputed structures for one chain.
pub struct Sampler<'a> {
    config: &'a ModelConfig,
    dataset: &'a Dataset,
    graph: &'a SlopeUnitGraph,
    gmrf: GmrfSampler,
    // Fixed design for the counts side: X1 = [1, Z1] and its cross-product.
    x1: DMatrix<f64>,
    x1tx1: DMatrix<f64>,
    // Per-unit pixel and landslide tallies.
    pixels_per_unit: Vec<f64>,
    landslides_per_unit: Vec<f64>,
    kappa_w_prior: GammaPrior,
    pub state: LatentState,
    pub tuner_eta: MalaTuner,
    pub tuner_mu: MalaTuner,
    pub tuners_theta: Vec<RwTuner>,
    mark: MarkModel,
    // Cached size log-likelihood at the current (mu, theta).
    size_loglik: f64,
}

impl<'a> Sampler<'a> {
    pub fn new(
        config: &'a ModelConfig,
        dataset: &'a Dataset,
        graph: &'a SlopeUnitGraph,
    ) -> Result<Sampler<'a>> {
        let n1 = dataset.n_pixels();
        let l = dataset.n_landslides();
        let n_units = graph.n_units();
        if dataset
            .projection
            .count_side
            .iter()
            .chain(dataset.projection.size_side.iter())
            .any(|&u| u >= n_units)
        {
            return Err(Error::Data("dataset references units outside the graph".into()));
        }
        if let CountLikelihood::GaussianObs { y, .. } = &config.count_likelihood {
            if y.len() != n1 {
                return Err(Error::Dimension("Gaussian observation vector length".into()));
            }
        }

        let x1 = design_with_intercept(&dataset.z1);
        let x1tx1 = &x1.transpose() * &x1;

        let mut pixels_per_unit = vec![0.0; n_units];
        for &u in &dataset.projection.count_side {
            pixels_per_unit[u] += 1.0;
        }
        let mut landslides_per_unit = vec![0.0; n_units];
        for &u in &dataset.projection.size_side {
            landslides_per_unit[u] += 1.0;
        }

        let theta = config.initial_theta()?;
        let mark = MarkModel::new(theta)?;
        let kappa_w_prior = config.priors.kappa_w_prior(graph.mean_degree());

        // Data-informed initialization: latent fields start at crude
        // empirical values, precisions at prior means, coefficients at zero.
        let eta = DVector::from_fn(n1, |i, _| {
            ((dataset.counts[i] as f64 + 0.5) / dataset.exposure[i]).ln()
        });
        let mu = DVector::from_fn(l, |j, _| dataset.landslides[j].size.ln());
        let state = LatentState {
            eta,
            mu,
            w1: DVector::zeros(n_units),
            w2: DVector::zeros(n_units),
            gamma1: 0.0,
            gamma2: 0.0,
            beta1: DVector::zeros(dataset.p1()),
            beta2: DVector::zeros(dataset.p2()),
            beta: 0.0,
            kappa_eta: if config.iid_eta { config.priors.kappa_eta.mean() } else { config.fixed_precision },
            kappa_mu: if config.iid_mu { config.priors.kappa_mu.mean() } else { config.fixed_precision },
            kappa_w1: kappa_w_prior.mean(),
            kappa_w2: kappa_w_prior.mean(),
            theta,
        };

        let size_loglik = loglik_sizes(dataset, &state.mu, &mark)?;
        let step_eta = 0.1 / (n1.max(1) as f64).powf(1.0 / 3.0);
        let step_mu = 0.1 / (l.max(1) as f64).powf(1.0 / 3.0);
        Ok(Sampler {
            config,
            dataset,
            graph,
            gmrf: GmrfSampler::new(graph),
            x1tx1,
            pixels_per_unit,
            landslides_per_unit,
            kappa_w_prior,
            state,
            tuner_eta: MalaTuner::new(step_eta),
            tuner_mu: MalaTuner::new(step_mu),
            tuners_theta: vec![RwTuner::new(0.3); theta.values().len()],
            mark,
            size_loglik,
        })
    }

    /// Replaces the initial state (overdispersed starts, resumed runs).
    pub fn set_state(&mut self, state: LatentState) -> Result<()> {
        self.mark = MarkModel::new(state.theta)?;
        self.size_loglik = loglik_sizes(self.dataset, &state.mu, &self.mark)?;
        self.state = state;
        Ok(())
    }

    // Unnormalized log full conditional of the eta block.
    fn eta_conditional(&self, eta: &DVector<f64>, m_eta: &DVector<f64>) -> f64 {
        let data = match &self.config.count_likelihood {
            CountLikelihood::Poisson => {
                let mut s = 0.0;
                for i in 0..eta.len() {
                    s += self.dataset.counts[i] as f64 * eta[i]
                        - self.dataset.exposure[i] * eta[i].exp();
                }
                s
            }
            CountLikelihood::GaussianObs { y, precision } => {
                let mut s = 0.0;
                for i in 0..eta.len() {
                    let r = y[i] - eta[i];
                    s -= 0.5 * precision * r * r;
                }
                s
            }
        };
        data - 0.5 * self.state.kappa_eta * (eta - m_eta).norm_squared()
    }

    fn eta_gradient(&self, eta: &DVector<f64>, m_eta: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(eta.len());
        match &self.config.count_likelihood {
            CountLikelihood::Poisson => {
                for i in 0..eta.len() {
                    g[i] = self.dataset.counts[i] as f64
                        - self.dataset.exposure[i] * eta[i].exp()
                        - self.state.kappa_eta * (eta[i] - m_eta[i]);
                }
            }
            CountLikelihood::GaussianObs { y, precision } => {
                for i in 0..eta.len() {
                    g[i] = precision * (y[i] - eta[i]) - self.state.kappa_eta * (eta[i] - m_eta[i]);
                }
            }
        }
        g
    }

    fn mu_conditional(&self, mu: &DVector<f64>, m_mu: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for (j, rec) in self.dataset.landslides.iter().enumerate() {
            s += self.mark.log_density(rec.size, mu[j].exp());
        }
        s - 0.5 * self.state.kappa_mu * (mu - m_mu).norm_squared()
    }

    fn mu_gradient(&self, mu: &DVector<f64>, m_mu: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(mu.len());
        for (j, rec) in self.dataset.landslides.iter().enumerate() {
            g[j] = self.mark.grad_log_density_log_median(rec.size, mu[j])
                - self.state.kappa_mu * (mu[j] - m_mu[j]);
        }
        g
    }

    // One MALA step on a block; returns the acceptance probability used for
    // adaptation. Non-finite proposal densities auto-reject.
    fn mala_step<R: Rng + ?Sized>(
        x: &DVector<f64>,
        value: impl Fn(&DVector<f64>) -> f64,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64>,
        step: f64,
        rng: &mut R,
    ) -> (DVector<f64>, bool, f64) {
        let g = gradient(x);
        let z = DVector::from_fn(x.len(), |_, _| StandardNormal.sample(rng));
        let proposal = x + &g * (0.5 * step) + &z * step.sqrt();
        let f_old = value(x);
        let f_new = value(&proposal);
        let u: f64 = rng.gen();
        if !f_new.is_finite() {
            return (x.clone(), false, 0.0);
        }
        let g_new = gradient(&proposal);
        // q(x | x') and q(x' | x) for the Langevin proposal.
        let fwd = &proposal - x - &g * (0.5 * step);
        let bwd = x - &proposal - &g_new * (0.5 * step);
        let log_q_fwd = -fwd.norm_squared() / (2.0 * step);
        let log_q_bwd = -bwd.norm_squared() / (2.0 * step);
        let log_alpha = (f_new - f_old + log_q_bwd - log_q_fwd).min(0.0);
        if !log_alpha.is_finite() {
            return (x.clone(), false, 0.0);
        }
        let alpha = log_alpha.exp();
        if u.ln() < log_alpha {
            (proposal, true, alpha)
        } else {
            (x.clone(), false, alpha)
        }
    }

    fn update_eta<R: Rng + ?Sized>(&mut self, rng: &mut R, adapt: bool) {
        if let CountLikelihood::GaussianObs { y, precision } = &self.config.count_likelihood {
            // Conjugate: eta_i | rest ~ N over each pixel independently.
            let m_eta = linear_predictor_counts(&self.state, self.dataset);
            let prec = precision + self.state.kappa_eta;
            for i in 0..self.state.eta.len() {
                let mean = (precision * y[i] + self.state.kappa_eta * m_eta[i]) / prec;
                let z: f64 = StandardNormal.sample(rng);
                self.state.eta[i] = mean + z / prec.sqrt();
            }
            return;
        }
        let m_eta = linear_predictor_counts(&self.state, self.dataset);
        let step = self.tuner_eta.step();
        let (new, accepted, alpha) = Sampler::mala_step(
            &self.state.eta,
            |x| self.eta_conditional(x, &m_eta),
            |x| self.eta_gradient(x, &m_eta),
            step,
            rng,
        );
        self.state.eta = new;
        if adapt {
            self.tuner_eta.adapt(alpha);
        } else {
            self.tuner_eta.record_post(accepted);
        }
    }

    fn update_mu<R: Rng + ?Sized>(&mut self, rng: &mut R, adapt: bool) {
        if self.dataset.n_landslides() == 0 {
            return;
        }
        let m_mu = linear_predictor_sizes(&self.state, self.dataset);
        let step = self.tuner_mu.step();
        let (new, accepted, alpha) = Sampler::mala_step(
            &self.state.mu,
            |x| self.mu_conditional(x, &m_mu),
            |x| self.mu_gradient(x, &m_mu),
            step,
            rng,
        );
        self.state.mu = new;
        if adapt {
            self.tuner_mu.adapt(alpha);
        } else {
            self.tuner_mu.record_post(accepted);
        }
        self.size_loglik = loglik_sizes(self.dataset, &self.state.mu, &self.mark)
            .expect("size likelihood after mu update");
    }

    fn update_count_coefficients<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let w_proj = self.dataset.projection.project(self.state.w1.as_slice(), Side::Counts);
        let r = DVector::from_fn(self.dataset.n_pixels(), |i, _| self.state.eta[i] - w_proj[i]);
        let x1 = design_with_intercept(&self.dataset.z1);
        let xtr = x1.transpose() * r;
        let draw = gibbs_linear_block(
            &self.x1tx1,
            &xtr,
            self.state.kappa_eta,
            self.config.priors.coef_variance,
            rng,
        )?;
        self.state.gamma1 = draw[0];
        for p in 0..self.dataset.p1() {
            self.state.beta1[p] = draw[p + 1];
        }
        Ok(())
    }

    fn update_size_coefficients<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let l = self.dataset.n_landslides();
        let p2 = self.dataset.p2();
        if l == 0 {
            // No data: draw from the prior to keep the chain well-defined.
            let sd = self.config.priors.coef_variance.sqrt();
            let mut normal = || {
                let z: f64 = StandardNormal.sample(rng);
                z
            };
            self.state.gamma2 = sd * normal();
            for p in 0..p2 {
                self.state.beta2[p] = sd * normal();
            }
            if self.config.beta_free {
                self.state.beta = sd * normal();
            }
            return Ok(());
        }
        let w2_proj = self.dataset.projection.project(self.state.w2.as_slice(), Side::Sizes);
        let r = DVector::from_fn(l, |j, _| self.state.mu[j] - w2_proj[j]);
        // Design [1, Z2, A2 W1] with the sharing column only when beta is free.
        let ncols = 1 + p2 + usize::from(self.config.beta_free);
        let mut x = DMatrix::zeros(l, ncols);
        let w1_proj = self.dataset.projection.project(self.state.w1.as_slice(), Side::Sizes);
        for j in 0..l {
            x[(j, 0)] = 1.0;
            for p in 0..p2 {
                x[(j, p + 1)] = self.dataset.z2[(j, p)];
            }
            if self.config.beta_free {
                x[(j, p2 + 1)] = w1_proj[j];
            }
        }
        let xtx = x.transpose() * &x;
        let xtr = x.transpose() * r;
        let draw = gibbs_linear_block(&xtx, &xtr, self.state.kappa_mu, self.config.priors.coef_variance, rng)?;
        self.state.gamma2 = draw[0];
        for p in 0..p2 {
            self.state.beta2[p] = draw[p + 1];
        }
        if self.config.beta_free {
            self.state.beta = draw[p2 + 1];
        }
        Ok(())
    }

    fn update_w1<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let n_units = self.graph.n_units();
        let beta = if self.config.beta_free { self.state.beta } else { 0.0 };
        // Precision: kappa_w1 Q + kappa_eta A1'A1 + beta^2 kappa_mu A2'A2.
        let mut data_diag = vec![0.0; n_units];
        let mut linear = vec![0.0; n_units];
        for u in 0..n_units {
            data_diag[u] = self.state.kappa_eta * self.pixels_per_unit[u]
                + beta * beta * self.state.kappa_mu * self.landslides_per_unit[u];
        }
        // Count-side residuals eta - (gamma1 + Z1 beta1).
        let base1 = {
            let mut v = &self.dataset.z1 * &self.state.beta1;
            v.add_scalar_mut(self.state.gamma1);
            v
        };
        for i in 0..self.dataset.n_pixels() {
            let u = self.dataset.projection.count_side[i];
            linear[u] += self.state.kappa_eta * (self.state.eta[i] - base1[i]);
        }
        if beta != 0.0 {
            // Size-side residuals mu - (gamma2 + Z2 beta2 + A2 W2).
            let mut base2 = &self.dataset.z2 * &self.state.beta2;
            base2.add_scalar_mut(self.state.gamma2);
            let w2_proj = self.dataset.projection.project(self.state.w2.as_slice(), Side::Sizes);
            for j in 0..self.dataset.n_landslides() {
                let u = self.dataset.projection.size_side[j];
                linear[u] += beta
                    * self.state.kappa_mu
                    * (self.state.mu[j] - base2[j] - w2_proj[j]);
            }
        }
        let mut draw = self.gmrf.sample(self.state.kappa_w1, &data_diag, &linear, rng)?;
        self.graph.hard_center(&mut draw);
        self.state.w1 = DVector::from_vec(draw);
        Ok(())
    }

    fn update_w2<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let n_units = self.graph.n_units();
        let beta = if self.config.beta_free { self.state.beta } else { 0.0 };
        let mut data_diag = vec![0.0; n_units];
        let mut linear = vec![0.0; n_units];
        for u in 0..n_units {
            data_diag[u] = self.state.kappa_mu * self.landslides_per_unit[u];
        }
        let mut base2 = &self.dataset.z2 * &self.state.beta2;
        base2.add_scalar_mut(self.state.gamma2);
        let w1_proj = self.dataset.projection.project(self.state.w1.as_slice(), Side::Sizes);
        for j in 0..self.dataset.n_landslides() {
            let u = self.dataset.projection.size_side[j];
            linear[u] +=
                self.state.kappa_mu * (self.state.mu[j] - base2[j] - beta * w1_proj[j]);
        }
        let mut draw = self.gmrf.sample(self.state.kappa_w2, &data_diag, &linear, rng)?;
        self.graph.hard_center(&mut draw);
        self.state.w2 = DVector::from_vec(draw);
        Ok(())
    }

    fn update_precisions<R: Rng + ?Sized>(
        &mut self,
        rng_counts: &mut R,
        rng_sizes: &mut R,
    ) -> Result<()> {
        if self.config.iid_eta {
            let m = linear_predictor_counts(&self.state, self.dataset);
            let rss = (&self.state.eta - m).norm_squared();
            self.state.kappa_eta = gibbs_precision(
                rss,
                self.dataset.n_pixels() as f64,
                self.config.priors.kappa_eta,
                rng_counts,
            )?;
        }
        if self.config.iid_mu && self.dataset.n_landslides() > 0 {
            let m = linear_predictor_sizes(&self.state, self.dataset);
            let rss = (&self.state.mu - m).norm_squared();
            self.state.kappa_mu = gibbs_precision(
                rss,
                self.dataset.n_landslides() as f64,
                self.config.priors.kappa_mu,
                rng_sizes,
            )?;
        }
        let rank = self.graph.rank() as f64;
        if rank > 0.0 {
            let qf1 = self.graph.icar_quad_form(self.state.w1.as_slice())?;
            self.state.kappa_w1 = gibbs_precision(qf1, rank, self.kappa_w_prior, rng_counts)?;
            let qf2 = self.graph.icar_quad_form(self.state.w2.as_slice())?;
            self.state.kappa_w2 = gibbs_precision(qf2, rank, self.kappa_w_prior, rng_sizes)?;
        }
        Ok(())
    }

    fn update_theta<R: Rng + ?Sized>(&mut self, rng: &mut R, adapt: bool) -> Result<()> {
        let mut values = self.state.theta.values();
        for k in 0..values.len() {
            let step = self.tuners_theta[k].step();
            let z: f64 = StandardNormal.sample(rng);
            let current = values[k];
            let proposed = (current.ln() + step * z).exp();
            let mut proposal_values = values.clone();
            proposal_values[k] = proposed;
            let u: f64 = rng.gen();

            let mut alpha = 0.0;
            let mut accepted = false;
            if let Ok(params) = crate::marks::MarkParams::new(self.config.family, &proposal_values)
            {
                if let Ok(mark_new) = MarkModel::new(params) {
                    if let Ok(ll_new) = loglik_sizes(self.dataset, &self.state.mu, &mark_new) {
                        // Gamma prior plus the log-walk Jacobian.
                        let prior = &self.config.priors.theta;
                        let log_ratio = ll_new - self.size_loglik
                            + prior.log_pdf(proposed)
                            - prior.log_pdf(current)
                            + (proposed.ln() - current.ln());
                        if log_ratio.is_finite() || log_ratio == f64::NEG_INFINITY {
                            alpha = log_ratio.min(0.0).exp();
                            if u.ln() < log_ratio {
                                accepted = true;
                                values = proposal_values;
                                self.state.theta = params;
                                self.mark = mark_new;
                                self.size_loglik = ll_new;
                            }
                        }
                    }
                }
            }
            if adapt {
                self.tuners_theta[k].adapt(alpha);
            } else {
                self.tuners_theta[k].record_post(accepted);
            }
        }
        Ok(())
    }

    /// One systematic-scan sweep: MALA eta, MALA mu, Gibbs coefficients,
    /// Gibbs W1, Gibbs W2, Gibbs free precisions, Metropolis theta.
    ///
    /// Count-side and size-side blocks consume independent RNG streams so
    /// that base-model count chains are bit-reproducible regardless of the
    /// size data.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        rng_counts: &mut R,
        rng_sizes: &mut R,
        adapt: bool,
    ) -> Result<()> {
        self.update_eta(rng_counts, adapt);
        self.update_mu(rng_sizes, adapt);
        self.update_count_coefficients(rng_counts)?;
        self.update_size_coefficients(rng_sizes)?;
        self.update_w1(if self.config.beta_free { rng_sizes } else { rng_counts })?;
        self.update_w2(rng_sizes)?;
        self.update_precisions(rng_counts, rng_sizes)?;
        self.update_theta(rng_sizes, adapt)?;
        Ok(())
    }

    fn freeze(&mut self) {
        self.tuner_eta.freeze();
        self.tuner_mu.freeze();
        for t in &mut self.tuners_theta {
            t.freeze();
        }
    }
}

fn design_with_intercept(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut x = DMatrix::zeros(n, z.ncols() + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for c in 0..z.ncols() {
            x[(i, c + 1)] = z[(i, c)];
        }
    }
    x
}

fn split_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over (seed, stream).
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one chain: adaptive burn-in, frozen kernel afterwards, thinned
/// recording. Deterministic for a fixed seed.
pub fn run_chain(
    config: &ModelConfig,
    dataset: &Dataset,
    graph: &SlopeUnitGraph,
    opts: SamplerOptions,
) -> Result<ChainOutput> {
    run_chain_from(config, dataset, graph, opts, None)
}

/// As [`run_chain`], optionally starting from a caller-provided state.
pub fn run_chain_from(
    config: &ModelConfig,
    dataset: &Dataset,
    graph: &SlopeUnitGraph,
    opts: SamplerOptions,
    init: Option<LatentState>,
) -> Result<ChainOutput> {
    opts.validate()?;
    let mut sampler = Sampler::new(config, dataset, graph)?;
    if let Some(state) = init {
        sampler.set_state(state)?;
    }
    let mut rng_counts = ChaCha12Rng::seed_from_u64(split_seed(opts.seed, 0));
    let mut rng_sizes = ChaCha12Rng::seed_from_u64(split_seed(opts.seed, 1));

    let n_draws = (opts.n_iter - opts.burn_in) / opts.thin;
    let mut draws = Vec::with_capacity(n_draws);
    for iter in 0..opts.n_iter {
        if iter == opts.burn_in {
            sampler.freeze();
        }
        let adapt = iter < opts.burn_in;
        sampler.sweep(&mut rng_counts, &mut rng_sizes, adapt).map_err(|e| {
            Error::Numerical(format!("iteration {iter}: {e}"))
        })?;
        if iter >= opts.burn_in && (iter - opts.burn_in) % opts.thin == 0 {
            draws.push(sampler.state.clone());
        }
    }
    debug_assert_eq!(draws.len(), n_draws);

    Ok(ChainOutput {
        draws,
        accept_eta: sampler.tuner_eta.post_freeze_acceptance(),
        accept_mu: sampler.tuner_mu.post_freeze_acceptance(),
        accept_theta: sampler
            .tuners_theta
            .iter()
            .map(RwTuner::post_freeze_acceptance)
            .collect(),
        seed: opts.seed,
        n_iter: opts.n_iter,
        burn_in: opts.burn_in,
        thin: opts.thin,
    })
}

/// Resumable sampler snapshot. The format is versioned; readers reject
/// snapshots written by an incompatible layout.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub completed_iterations: usize,
    pub options: SamplerOptions,
    pub state: LatentState,
    pub tuner_eta: MalaTuner,
    pub tuner_mu: MalaTuner,
    pub tuners_theta: Vec<RwTuner>,
    pub rng_counts: ChaCha12Rng,
    pub rng_sizes: ChaCha12Rng,
    pub draws: Vec<LatentState>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn write_to(&self, w: impl std::io::Write) -> Result<()> {
        serde_json::to_writer(w, self)
            .map_err(|e| Error::Numerical(format!("checkpoint serialization: {e}")))
    }

    pub fn read_from(r: impl std::io::Read) -> Result<Checkpoint> {
        let cp: Checkpoint = serde_json::from_reader(r)
            .map_err(|e| Error::Data(format!("checkpoint parse: {e}")))?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
                cp.version
            )));
        }
        Ok(cp)
    }
}

/// Runs a chain while emitting a checkpoint, or resumes one mid-run.
pub fn run_chain_checkpointed(
    config: &ModelConfig,
    dataset: &Dataset,
    graph: &SlopeUnitGraph,
    opts: SamplerOptions,
    resume: Option<Checkpoint>,
    checkpoint_at: Option<usize>,
) -> Result<(ChainOutput, Checkpoint)> {
    opts.validate()?;
    let mut sampler = Sampler::new(config, dataset, graph)?;
    let (mut rng_counts, mut rng_sizes, mut draws, start) = match resume {
        Some(cp) => {
            sampler.set_state(cp.state)?;
            sampler.tuner_eta = cp.tuner_eta;
            sampler.tuner_mu = cp.tuner_mu;
            sampler.tuners_theta = cp.tuners_theta;
            (cp.rng_counts, cp.rng_sizes, cp.draws, cp.completed_iterations)
        }
        None => (
            ChaCha12Rng::seed_from_u64(split_seed(opts.seed, 0)),
            ChaCha12Rng::seed_from_u64(split_seed(opts.seed, 1)),
            Vec::new(),
            0,
        ),
    };

    let stop = checkpoint_at.unwrap_or(opts.n_iter).min(opts.n_iter);
    for iter in start..stop {
        if iter == opts.burn_in {
            sampler.freeze();
        }
        let adapt = iter < opts.burn_in;
        sampler
            .sweep(&mut rng_counts, &mut rng_sizes, adapt)
            .map_err(|e| Error::Numerical(format!("iteration {iter}: {e}")))?;
        if iter >= opts.burn_in && (iter - opts.burn_in) % opts.thin == 0 {
            draws.push(sampler.state.clone());
        }
    }

    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        completed_iterations: stop,
        options: opts,
        state: sampler.state.clone(),
        tuner_eta: sampler.tuner_eta.clone(),
        tuner_mu: sampler.tuner_mu.clone(),
        tuners_theta: sampler.tuners_theta.clone(),
        rng_counts,
        rng_sizes,
        draws: draws.clone(),
    };
    let output = ChainOutput {
        draws,
        accept_eta: sampler.tuner_eta.post_freeze_acceptance(),
        accept_mu: sampler.tuner_mu.post_freeze_acceptance(),
        accept_theta: sampler
            .tuners_theta
            .iter()
            .map(RwTuner::post_freeze_acceptance)
            .collect(),
        seed: opts.seed,
        n_iter: opts.n_iter,
        burn_in: opts.burn_in,
        thin: opts.thin,
    };
    Ok((output, checkpoint))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PixelGrid;
    use crate::marks::{MarkFamily, MarkParams};
    use crate::model::{Landslide, Submodel};
    use nalgebra::DMatrix;

    fn tiny_dataset(counts: Vec<u32>, su: Vec<usize>, n_units: usize) -> (Dataset, PixelGrid) {
        let grid = PixelGrid::regular(su, n_units).unwrap();
        let n1 = grid.n_pixels();
        let mut landslides = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            for k in 0..c {
                landslides.push(Landslide { pixel: i, size: 1.0 + 0.3 * k as f64 });
            }
        }
        let z2 = DMatrix::zeros(landslides.len(), 0);
        let d = Dataset::point_process(
            counts,
            landslides,
            DMatrix::zeros(n1, 0),
            z2,
            DMatrix::zeros(n1, 0),
            &grid,
        )
        .unwrap();
        (d, grid)
    }

    #[test]
    fn gibbs_precision_conjugate_arithmetic() {
        // Gamma(0.25, 3) prior, n_eff = 4, rss = 4 -> Gamma(2.25, 5).
        let prior = GammaPrior::new(0.25, 3.0);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| gibbs_precision(4.0, 4.0, prior, &mut rng).unwrap()).sum::<f64>()
                / n as f64;
        let want = 2.25 / 5.0;
        assert!((mean - want).abs() / want < 0.01, "{mean} vs {want}");
        assert!(gibbs_precision(-1.0, 4.0, prior, &mut rng).is_err());
    }

    #[test]
    fn coefficient_block_scalar_conjugacy() {
        // No covariates, two observations of (eta - A1 W1) = (1, 1) with
        // kappa = 1: gamma1 | rest ~ N(2/2.01, 1/2.01).
        let xtx = DMatrix::from_element(1, 1, 2.0);
        let xtr = DVector::from_element(1, 2.0);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let d = gibbs_linear_block(&xtx, &xtr, 1.0, 100.0, &mut rng).unwrap();
            sum += d[0];
            sq += d[0] * d[0];
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!((mean - 2.0 / 2.01).abs() < 0.005, "mean {mean}");
        assert!((var - 1.0 / 2.01).abs() < 0.01, "var {var}");
    }

    #[test]
    fn coefficient_block_matches_dense_completion() {
        // Three coefficients: posterior precision kappa X'X + I/100, mean
        // solve(P, kappa X'r); verified against an explicit dense inverse.
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 40;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0f64));
        let r = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
        let kappa = 2.5;
        let xtx = x.transpose() * &x;
        let xtr = x.transpose() * &r;
        let mut p = &xtx * kappa;
        for i in 0..3 {
            p[(i, i)] += 0.01;
        }
        let want_cov = p.clone().try_inverse().unwrap();
        let want_mean = &want_cov * (&xtr * kappa);

        let draws = 200_000;
        let mut sum: DVector<f64> = DVector::zeros(3);
        let mut sum_sq: DVector<f64> = DVector::zeros(3);
        for _ in 0..draws {
            let d = gibbs_linear_block(&xtx, &xtr, kappa, 100.0, &mut rng).unwrap();
            for i in 0..3 {
                sum[i] += d[i];
                sum_sq[i] += d[i] * d[i];
            }
        }
        for i in 0..3 {
            let mean = sum[i] / draws as f64;
            let var = sum_sq[i] / draws as f64 - mean * mean;
            assert!((mean - want_mean[i]).abs() < 0.005, "mean[{i}] {mean} vs {}", want_mean[i]);
            assert!((var - want_cov[(i, i)]).abs() < 0.005, "var[{i}] {var} vs {}", want_cov[(i, i)]);
        }
    }

    #[test]
    fn mala_proposal_mean_for_standard_gaussian_target() {
        // For a standard Gaussian, g(x) = -x, so the proposal mean at x is
        // x (1 - h/2).
        let x = DVector::from_vec(vec![1.4, -0.3]);
        let g = -&x;
        let step = 0.25;
        let proposal_mean = &x + &g * (0.5 * step);
        let want = &x * (1.0 - step / 2.0);
        assert!((proposal_mean - want).norm() < 1e-15);
    }

    #[test]
    fn mala_matches_quadrature_on_gamma_conditional() {
        // 1-D toy: target log f(x) = (a-1) ln x - b x on x > 0 via the mu
        // machinery is overkill; drive mala_step directly instead.
        let a = 3.0;
        let b = 1.5;
        let value = |x: &DVector<f64>| {
            if x[0] <= 0.0 {
                f64::NEG_INFINITY
            } else {
                (a - 1.0) * x[0].ln() - b * x[0]
            }
        };
        let gradient = |x: &DVector<f64>| {
            DVector::from_element(1, if x[0] > 0.0 { (a - 1.0) / x[0] - b } else { 0.0 })
        };
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut x = DVector::from_element(1, 2.0);
        let mut tuner = MalaTuner::new(0.5);
        for _ in 0..2_000 {
            let (nx, _, alpha) = Sampler::mala_step(&x, value, gradient, tuner.step(), &mut rng);
            tuner.adapt(alpha);
            x = nx;
        }
        tuner.freeze();
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let (nx, _, _) = Sampler::mala_step(&x, value, gradient, tuner.step(), &mut rng);
            x = nx;
            sum += x[0];
            sq += x[0] * x[0];
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        // Quadrature values for Gamma(3, 1.5): mean 2, variance 4/3. Allow
        // 3 Monte Carlo standard errors with a generous autocorrelation
        // inflation.
        let se_mean = (var / n as f64).sqrt() * 20.0;
        assert!((mean - 2.0).abs() < 3.0 * se_mean.max(0.01), "mean {mean}");
        assert!((var - 4.0 / 3.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn theta_log_walk_preserves_support_and_identity_acceptance() {
        let (dataset, _grid) = tiny_dataset(vec![1, 1, 0, 1], vec![0, 0, 1, 1], 2);
        let graph = SlopeUnitGraph::from_edges(2, &[(0, 1)]).unwrap();
        let mut config = ModelConfig::new(MarkFamily::Gpd, Submodel::M1);
        config.theta_init = Some(vec![0.4]);
        let mut sampler = Sampler::new(&config, &dataset, &graph).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..500 {
            sampler.update_theta(&mut rng, true).unwrap();
            let v = sampler.state.theta.values();
            assert!(v[0] > 0.0, "log-walk left the support: {v:?}");
        }
        // A proposal identical to the current value has acceptance 1:
        // the log ratio is exactly zero.
        let values = sampler.state.theta.values();
        let mark = MarkModel::new(sampler.state.theta).unwrap();
        let ll = loglik_sizes(&dataset, &sampler.state.mu, &mark).unwrap();
        let prior = &config.priors.theta;
        let log_ratio = ll - ll + prior.log_pdf(values[0]) - prior.log_pdf(values[0])
            + (values[0].ln() - values[0].ln());
        assert_eq!(log_ratio, 0.0);
    }

    #[test]
    fn theta_recovers_gamma_shape_on_fixed_mu_synthetic() {
        // L = 500 Gamma(kappa = 2) sizes at fixed mu = 0 (median 1); the
        // posterior median of kappa should land within 15% of 2.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mark = MarkModel::new(MarkParams::Gamma { kappa: 2.0 }).unwrap();
        let n1 = 500;
        let counts = vec![1u32; n1];
        let landslides: Vec<Landslide> = (0..n1)
            .map(|pixel| Landslide { pixel, size: mark.sample(1.0, &mut rng) })
            .collect();
        let grid = PixelGrid::regular(vec![0; n1], 1).unwrap();
        let dataset = Dataset::point_process(
            counts,
            landslides,
            DMatrix::zeros(n1, 0),
            DMatrix::zeros(n1, 0),
            DMatrix::zeros(n1, 0),
            &grid,
        )
        .unwrap();
        let graph = SlopeUnitGraph::from_edges(1, &[]).unwrap();
        let config = ModelConfig::new(MarkFamily::Gamma, Submodel::M1);
        let mut sampler = Sampler::new(&config, &dataset, &graph).unwrap();
        // Pin mu at 0 and only update theta.
        sampler.state.mu = DVector::zeros(n1);
        sampler.size_loglik = loglik_sizes(&dataset, &sampler.state.mu, &sampler.mark).unwrap();
        let mut kappas = Vec::new();
        for it in 0..4_000 {
            sampler.update_theta(&mut rng, it < 2_000).unwrap();
            if it >= 2_000 {
                kappas.push(sampler.state.theta.values()[0]);
            }
        }
        kappas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = kappas[kappas.len() / 2];
        assert!((median - 2.0).abs() / 2.0 < 0.15, "posterior median {median}");
    }

    #[test]
    fn w_updates_center_every_iteration() {
        let (dataset, _grid) = tiny_dataset(vec![2, 1, 0, 1, 0, 0], vec![0, 0, 1, 1, 2, 2], 3);
        let graph = SlopeUnitGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let config = ModelConfig::new(MarkFamily::LogNormal, Submodel::M1);
        let mut sampler = Sampler::new(&config, &dataset, &graph).unwrap();
        let mut rc = ChaCha12Rng::seed_from_u64(1);
        let mut rs = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..50 {
            sampler.sweep(&mut rc, &mut rs, true).unwrap();
            let s1: f64 = sampler.state.w1.iter().sum();
            let s2: f64 = sampler.state.w2.iter().sum();
            assert!(s1.abs() < 1e-10 && s2.abs() < 1e-10, "w sums {s1}, {s2}");
        }
    }

    #[test]
    fn w1_posterior_mean_shrinks_to_unit_mean_residual() {
        // One unit with many pixels: as kappa_eta grows, the conditional
        // mean of W approaches the mean residual in that unit (closed form:
        // mean = kappa_eta * n * rbar / (kappa_eta * n + 0) on a single
        // isolated unit centered... use two units to keep Q active).
        let n_per = 50;
        let mut su = vec![0usize; n_per];
        su.extend(vec![1usize; n_per]);
        let counts = vec![0u32; 2 * n_per];
        let (dataset, _grid) = tiny_dataset(counts, su, 2);
        let graph = SlopeUnitGraph::from_edges(2, &[(0, 1)]).unwrap();
        let config = ModelConfig::new(MarkFamily::LogNormal, Submodel::M1);
        let mut sampler = Sampler::new(&config, &dataset, &graph).unwrap();
        // Fabricate residuals: unit 0 at +1, unit 1 at -1.
        for i in 0..2 * n_per {
            sampler.state.eta[i] = if i < n_per { 1.0 } else { -1.0 };
        }
        sampler.state.gamma1 = 0.0;
        sampler.state.kappa_w1 = 1.0;
        for &kappa_eta in &[0.1, 1.0, 10.0, 100.0] {
            sampler.state.kappa_eta = kappa_eta;
            let mut rng = ChaCha12Rng::seed_from_u64(9);
            let mut mean0 = 0.0;
            let n_draws = 3_000;
            for _ in 0..n_draws {
                sampler.update_w1(&mut rng).unwrap();
                mean0 += sampler.state.w1[0];
            }
            mean0 /= n_draws as f64;
            // Closed form: P = kappa_w Q + kappa_eta n I; b = (kn, -kn).
            let kn = kappa_eta * n_per as f64;
            let p = nalgebra::DMatrix::from_row_slice(
                2,
                2,
                &[1.0 + kn, -1.0, -1.0, 1.0 + kn],
            );
            let b = nalgebra::DVector::from_vec(vec![kn, -kn]);
            let want = p.lu().solve(&b).unwrap();
            assert!(
                (mean0 - want[0]).abs() < 0.05,
                "kappa_eta {kappa_eta}: {mean0} vs {}",
                want[0]
            );
        }
    }

    #[test]
    fn chain_is_deterministic_and_thinning_is_exact() {
        let (dataset, _grid) = tiny_dataset(vec![1, 2, 0, 1], vec![0, 0, 1, 1], 2);
        let graph = SlopeUnitGraph::from_edges(2, &[(0, 1)]).unwrap();
        let config = ModelConfig::new(MarkFamily::Gamma, Submodel::M1);
        let opts = SamplerOptions { n_iter: 300, burn_in: 100, thin: 10, seed: 42 };
        let a = run_chain(&config, &dataset, &graph, opts).unwrap();
        let b = run_chain(&config, &dataset, &graph, opts).unwrap();
        assert_eq!(a.draws.len(), 20);
        assert_eq!(a.draws, b.draws);
        assert!(run_chain(
            &config,
            &dataset,
            &graph,
            SamplerOptions { n_iter: 301, burn_in: 100, thin: 10, seed: 42 }
        )
        .is_err());
    }

    #[test]
    fn base_model_keeps_beta_at_zero() {
        let (dataset, _grid) = tiny_dataset(vec![1, 2, 0, 1], vec![0, 0, 1, 1], 2);
        let graph = SlopeUnitGraph::from_edges(2, &[(0, 1)]).unwrap();
        let config = ModelConfig::new(MarkFamily::Gamma, Submodel::M1Base);
        let opts = SamplerOptions { n_iter: 200, burn_in: 100, thin: 5, seed: 1 };
        let out = run_chain(&config, &dataset, &graph, opts).unwrap();
        assert!(out.draws.iter().all(|d| d.beta == 0.0));
    }

    #[test]
    fn fixed_precision_bypasses_update() {
        let (dataset, _grid) = tiny_dataset(vec![1, 2, 0, 1], vec![0, 0, 1, 1], 2);
        let graph = SlopeUnitGraph::from_edges(2, &[(0, 1)]).unwrap();
        let config = ModelConfig::new(MarkFamily::Gamma, Submodel::M2);
        let opts = SamplerOptions { n_iter: 120, burn_in: 60, thin: 4, seed: 5 };
        let out = run_chain(&config, &dataset, &graph, opts).unwrap();
        assert!(out.draws.iter().all(|d| d.kappa_eta == 1000.0 && d.kappa_mu == 1000.0));
    }

    #[test]
    fn adaptation_freezes_after_burn_in() {
        let (dataset, _grid) = tiny_dataset(vec![1, 0, 2, 1], vec![0, 0, 1, 1], 2);
        let graph = SlopeUnitGraph::from_edges(2, &[(0, 1)]).unwrap();
        let config = ModelConfig::new(MarkFamily::LogNormal, Submodel::M1);
        let mut sampler = Sampler::new(&config, &dataset, &graph).unwrap();
        let mut rc = ChaCha12Rng::seed_from_u64(1);
        let mut rs = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..50 {
            sampler.sweep(&mut rc, &mut rs, true).unwrap();
        }
        sampler.freeze();
        let step_eta = sampler.tuner_eta.step();
        let step_mu = sampler.tuner_mu.step();
        let steps_theta: Vec<f64> = sampler.tuners_theta.iter().map(RwTuner::step).collect();
        for _ in 0..50 {
            sampler.sweep(&mut rc, &mut rs, false).unwrap();
        }
        assert_eq!(sampler.tuner_eta.step(), step_eta);
        assert_eq!(sampler.tuner_mu.step(), step_mu);
        assert_eq!(
            sampler.tuners_theta.iter().map(RwTuner::step).collect::<Vec<f64>>(),
            steps_theta
        );
    }

    #[test]
    fn checkpoint_roundtrip_resumes_identically() {
        let (dataset, _grid) = tiny_dataset(vec![1, 2, 0, 1], vec![0, 0, 1, 1], 2);
        let graph = SlopeUnitGraph::from_edges(2, &[(0, 1)]).unwrap();
        let config = ModelConfig::new(MarkFamily::Gamma, Submodel::M1);
        let opts = SamplerOptions { n_iter: 200, burn_in: 100, thin: 5, seed: 9 };

        let (full, _) =
            run_chain_checkpointed(&config, &dataset, &graph, opts, None, None).unwrap();
        let (_, cp) =
            run_chain_checkpointed(&config, &dataset, &graph, opts, None, Some(150)).unwrap();
        let mut buf = Vec::new();
        cp.write_to(&mut buf).unwrap();
        let cp = Checkpoint::read_from(buf.as_slice()).unwrap();
        let (resumed, _) =
            run_chain_checkpointed(&config, &dataset, &graph, opts, Some(cp), None).unwrap();
        assert_eq!(full.draws, resumed.draws);
    }
}
