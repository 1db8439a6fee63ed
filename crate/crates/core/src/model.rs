//! The hierarchical joint occurrence-size model: data containers, submodel
//! configuration, priors, linear predictors, log-likelihoods, the full log
//! posterior, and gradients of the latent blocks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PixelGrid, Projection, Side, SlopeUnitGraph};
use crate::marks::{MarkFamily, MarkModel, MarkParams};
use crate::special::ln_gamma;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One observed event: the pixel it occurred in and its size (sqrt-area scale).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Landslide {
    pub pixel: usize,
    pub size: f64,
}

/// Whether the dataset is the fine-resolution marked point process (one size
/// record per event) or the areal aggregation (one summed size per unit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    PointProcess,
    Areal,
}

/// Per-pixel counts, per-event sizes, covariates, and exposures, with the
/// slope-unit projections baked in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub counts: Vec<u32>,
    pub landslides: Vec<Landslide>,
    /// Count-side covariates, one row per pixel (n1 x P1).
    pub z1: DMatrix<f64>,
    /// Size-side covariates, one row per landslide (L x P2).
    pub z2: DMatrix<f64>,
    /// Pixel-level values of the size-side covariates that exist at pixel
    /// level (n1 x P2_pixel); used to rebuild mu at arbitrary pixels.
    pub z2_pixel: DMatrix<f64>,
    pub exposure: Vec<f64>,
    pub projection: Projection,
    pub kind: DatasetKind,
    // Sum over pixels of Y_i * ln(e_i) - ln(Y_i!): the eta-free part of the
    // Poisson log-likelihood.
    count_const: f64,
}

impl Dataset {
    /// Builds a point-process dataset and checks its structural invariants:
    /// counts match the per-pixel record tally, sizes are positive, and all
    /// dimensions agree with the grid.
    pub fn point_process(
        counts: Vec<u32>,
        landslides: Vec<Landslide>,
        z1: DMatrix<f64>,
        z2: DMatrix<f64>,
        z2_pixel: DMatrix<f64>,
        grid: &PixelGrid,
    ) -> Result<Dataset> {
        let n1 = grid.n_pixels();
        if counts.len() != n1 {
            return Err(Error::Dimension(format!(
                "counts has {} entries for {} pixels",
                counts.len(),
                n1
            )));
        }
        let mut tally = vec![0u32; n1];
        for (j, rec) in landslides.iter().enumerate() {
            if rec.pixel >= n1 {
                return Err(Error::Data(format!("landslide {j} references pixel {}", rec.pixel)));
            }
            if !(rec.size.is_finite() && rec.size > 0.0) {
                return Err(Error::Data(format!("landslide {j} has non-positive size {}", rec.size)));
            }
            tally[rec.pixel] += 1;
        }
        for i in 0..n1 {
            if tally[i] != counts[i] {
                return Err(Error::Data(format!(
                    "pixel {i} has count {} but {} landslide record(s)",
                    counts[i], tally[i]
                )));
            }
        }
        Self::finish(counts, landslides, z1, z2, z2_pixel, grid, DatasetKind::PointProcess)
    }

    /// Builds an areal dataset: one aggregated size record per unit with
    /// positive count; units with zero count carry no size observation.
    pub fn areal(
        counts: Vec<u32>,
        landslides: Vec<Landslide>,
        z1: DMatrix<f64>,
        z2: DMatrix<f64>,
        z2_pixel: DMatrix<f64>,
        grid: &PixelGrid,
    ) -> Result<Dataset> {
        let n = grid.n_pixels();
        if counts.len() != n {
            return Err(Error::Dimension(format!("counts has {} entries for {} units", counts.len(), n)));
        }
        let mut seen = vec![false; n];
        for (j, rec) in landslides.iter().enumerate() {
            if rec.pixel >= n {
                return Err(Error::Data(format!("record {j} references unit {}", rec.pixel)));
            }
            if seen[rec.pixel] {
                return Err(Error::Data(format!("unit {} has more than one size record", rec.pixel)));
            }
            seen[rec.pixel] = true;
            if counts[rec.pixel] == 0 {
                return Err(Error::Data(format!(
                    "unit {} has a size record but zero count",
                    rec.pixel
                )));
            }
            if !(rec.size.is_finite() && rec.size > 0.0) {
                return Err(Error::Data(format!("record {j} has non-positive size {}", rec.size)));
            }
        }
        Self::finish(counts, landslides, z1, z2, z2_pixel, grid, DatasetKind::Areal)
    }

    fn finish(
        counts: Vec<u32>,
        landslides: Vec<Landslide>,
        z1: DMatrix<f64>,
        z2: DMatrix<f64>,
        z2_pixel: DMatrix<f64>,
        grid: &PixelGrid,
        kind: DatasetKind,
    ) -> Result<Dataset> {
        let n1 = grid.n_pixels();
        if z1.nrows() != n1 {
            return Err(Error::Dimension(format!("z1 has {} rows for {n1} pixels", z1.nrows())));
        }
        if z2.nrows() != landslides.len() {
            return Err(Error::Dimension(format!(
                "z2 has {} rows for {} landslide records",
                z2.nrows(),
                landslides.len()
            )));
        }
        if z2_pixel.nrows() != n1 {
            return Err(Error::Dimension(format!(
                "z2_pixel has {} rows for {n1} pixels",
                z2_pixel.nrows()
            )));
        }
        let size_side: Vec<usize> = landslides.iter().map(|l| grid.su_index[l.pixel]).collect();
        let n_units = grid.su_index.iter().copied().max().map_or(0, |m| m + 1);
        let projection = Projection::new(grid.su_index.clone(), size_side, n_units)?;
        let count_const = counts
            .iter()
            .zip(grid.exposure.iter())
            .map(|(&y, &e)| y as f64 * e.ln() - ln_gamma(y as f64 + 1.0))
            .sum();
        Ok(Dataset {
            counts,
            landslides,
            z1,
            z2,
            z2_pixel,
            exposure: grid.exposure.clone(),
            projection,
            kind,
            count_const,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.counts.len()
    }

    pub fn n_landslides(&self) -> usize {
        self.landslides.len()
    }

    pub fn p1(&self) -> usize {
        self.z1.ncols()
    }

    pub fn p2(&self) -> usize {
        self.z2.ncols()
    }

    pub fn sizes(&self) -> impl Iterator<Item = f64> + '_ {
        self.landslides.iter().map(|l| l.size)
    }
}

/// Aggregates a point-process dataset to the slope-unit level: counts and
/// sizes are summed, covariates averaged, exposures summed, and the
/// projection becomes the identity. Units with zero count have no size
/// record (the aggregated size is missing by construction).
pub fn aggregate_to_areal(
    dataset: &Dataset,
    grid: &PixelGrid,
    graph: &SlopeUnitGraph,
) -> Result<(Dataset, PixelGrid)> {
    let n_units = graph.n_units();
    let n1 = dataset.n_pixels();
    let p1 = dataset.p1();
    let p2p = dataset.z2_pixel.ncols();
    let p2_extra = dataset.p2().saturating_sub(p2p);

    let mut counts = vec![0u32; n_units];
    let mut exposure = vec![0.0f64; n_units];
    let mut n_pix = vec![0usize; n_units];
    let mut xs = vec![0.0f64; n_units];
    let mut ys = vec![0.0f64; n_units];
    let mut z1_sum = DMatrix::<f64>::zeros(n_units, p1);
    let mut z2p_sum = DMatrix::<f64>::zeros(n_units, p2p);
    for i in 0..n1 {
        let u = grid.su_index[i];
        counts[u] += dataset.counts[i];
        exposure[u] += grid.exposure[i];
        n_pix[u] += 1;
        xs[u] += grid.x[i];
        ys[u] += grid.y[i];
        for c in 0..p1 {
            z1_sum[(u, c)] += dataset.z1[(i, c)];
        }
        for c in 0..p2p {
            z2p_sum[(u, c)] += dataset.z2_pixel[(i, c)];
        }
    }
    for u in 0..n_units {
        if n_pix[u] == 0 {
            return Err(Error::Data(format!("slope unit {u} has no pixels; cannot aggregate")));
        }
        let inv = 1.0 / n_pix[u] as f64;
        xs[u] *= inv;
        ys[u] *= inv;
        for c in 0..p1 {
            z1_sum[(u, c)] *= inv;
        }
        for c in 0..p2p {
            z2p_sum[(u, c)] *= inv;
        }
    }

    let mut size_sum = vec![0.0f64; n_units];
    let mut extra_sum = vec![vec![0.0f64; p2_extra]; n_units];
    let mut n_rec = vec![0usize; n_units];
    for (j, rec) in dataset.landslides.iter().enumerate() {
        let u = grid.su_index[rec.pixel];
        size_sum[u] += rec.size;
        n_rec[u] += 1;
        for c in 0..p2_extra {
            extra_sum[u][c] += dataset.z2[(j, p2p + c)];
        }
    }

    let mut landslides = Vec::new();
    let mut z2_rows = Vec::new();
    for u in 0..n_units {
        if counts[u] > 0 {
            landslides.push(Landslide { pixel: u, size: size_sum[u] });
            let mut row = Vec::with_capacity(p2p + p2_extra);
            for c in 0..p2p {
                row.push(z2p_sum[(u, c)]);
            }
            for c in 0..p2_extra {
                row.push(extra_sum[u][c] / n_rec[u] as f64);
            }
            z2_rows.push(row);
        }
    }
    let z2 = DMatrix::from_fn(landslides.len(), p2p + p2_extra, |r, c| z2_rows[r][c]);

    let areal_grid = PixelGrid::new(xs, ys, (0..n_units).collect(), exposure, n_units)?;
    let areal = Dataset::areal(counts, landslides, z1_sum, z2, z2p_sum, &areal_grid)?;
    Ok((areal, areal_grid))
}

/// Gamma(shape, rate) prior.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> GammaPrior {
        GammaPrior { shape, rate }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Hyperprior constants. Coefficients get independent N(0, coef_variance);
/// precisions get Gamma hyperpriors, with the ICAR precisions scaled by the
/// mean neighbor count of the graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorSpec {
    pub coef_variance: f64,
    pub kappa_eta: GammaPrior,
    pub kappa_mu: GammaPrior,
    pub kappa_w_shape: f64,
    pub kappa_w_rate_scale: f64,
    pub theta: GammaPrior,
}

impl Default for PriorSpec {
    fn default() -> PriorSpec {
        PriorSpec {
            coef_variance: 100.0,
            kappa_eta: GammaPrior::new(0.25, 3.0),
            kappa_mu: GammaPrior::new(0.25, 3.0),
            kappa_w_shape: 0.25,
            kappa_w_rate_scale: 3.0,
            theta: GammaPrior::new(0.25, 0.25),
        }
    }
}

impl PriorSpec {
    /// Gamma prior for the ICAR precisions: rate 3 / (mean_degree * 0.7^2).
    pub fn kappa_w_prior(&self, mean_degree: f64) -> GammaPrior {
        GammaPrior::new(self.kappa_w_shape, self.kappa_w_rate_scale / (mean_degree * 0.49))
    }
}

/// The eight candidate submodels: with/without each iid random effect, and
/// with the sharing coefficient free or fixed at zero (base models).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Submodel {
    M1,
    M2,
    M3,
    M4,
    M1Base,
    M2Base,
    M3Base,
    M4Base,
}

impl Submodel {
    pub const ALL: [Submodel; 8] = [
        Submodel::M1,
        Submodel::M2,
        Submodel::M3,
        Submodel::M4,
        Submodel::M1Base,
        Submodel::M2Base,
        Submodel::M3Base,
        Submodel::M4Base,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Submodel::M1 => "M1",
            Submodel::M2 => "M2",
            Submodel::M3 => "M3",
            Submodel::M4 => "M4",
            Submodel::M1Base => "M1_0",
            Submodel::M2Base => "M2_0",
            Submodel::M3Base => "M3_0",
            Submodel::M4Base => "M4_0",
        }
    }

    pub fn from_name(s: &str) -> Option<Submodel> {
        let canon = s.trim().to_ascii_uppercase();
        Submodel::ALL.iter().copied().find(|m| m.name() == canon)
    }

    pub fn iid_eta(&self) -> bool {
        matches!(self, Submodel::M1 | Submodel::M3 | Submodel::M1Base | Submodel::M3Base)
    }

    pub fn iid_mu(&self) -> bool {
        matches!(self, Submodel::M1 | Submodel::M4 | Submodel::M1Base | Submodel::M4Base)
    }

    pub fn beta_free(&self) -> bool {
        matches!(self, Submodel::M1 | Submodel::M2 | Submodel::M3 | Submodel::M4)
    }
}

/// Count-side data model. The Gaussian variant replaces the Poisson layer
/// with direct Gaussian observations of eta; it turns the whole sampler into
/// plain Gibbs and exists to validate the machinery against closed forms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CountLikelihood {
    Poisson,
    GaussianObs { y: Vec<f64>, precision: f64 },
}

/// Model configuration: mark family, submodel flags, and prior constants.
///
/// Absent iid effects are emulated by fixing the corresponding precision at
/// `fixed_precision` (no prior, no update), so one sampler covers all eight
/// submodels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: MarkFamily,
    pub theta_init: Option<Vec<f64>>,
    pub iid_eta: bool,
    pub iid_mu: bool,
    pub beta_free: bool,
    pub fixed_precision: f64,
    pub priors: PriorSpec,
    pub count_likelihood: CountLikelihood,
}

impl ModelConfig {
    pub fn new(family: MarkFamily, submodel: Submodel) -> ModelConfig {
        ModelConfig {
            family,
            theta_init: None,
            iid_eta: submodel.iid_eta(),
            iid_mu: submodel.iid_mu(),
            beta_free: submodel.beta_free(),
            fixed_precision: 1000.0,
            priors: PriorSpec::default(),
            count_likelihood: CountLikelihood::Poisson,
        }
    }

    pub fn initial_theta(&self) -> Result<MarkParams> {
        match &self.theta_init {
            Some(values) => MarkParams::new(self.family, values),
            None => Ok(self.family.default_params()),
        }
    }
}

/// Full parameter vector of the hierarchical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    pub w1: DVector<f64>,
    pub w2: DVector<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta1: DVector<f64>,
    pub beta2: DVector<f64>,
    pub beta: f64,
    pub kappa_eta: f64,
    pub kappa_mu: f64,
    pub kappa_w1: f64,
    pub kappa_w2: f64,
    pub theta: MarkParams,
}

/// m_eta = gamma1 * 1 + Z1 beta1 + A1 W1 (the mean of the eta layer; the iid
/// effect is the Gaussian residual around it).
pub fn linear_predictor_counts(state: &LatentState, dataset: &Dataset) -> DVector<f64> {
    let mut m = &dataset.z1 * &state.beta1;
    let w_proj = dataset.projection.project(state.w1.as_slice(), Side::Counts);
    for i in 0..m.len() {
        m[i] += state.gamma1 + w_proj[i];
    }
    m
}

/// m_mu = gamma2 * 1 + Z2 beta2 + beta * A2 W1 + A2 W2.
pub fn linear_predictor_sizes(state: &LatentState, dataset: &Dataset) -> DVector<f64> {
    let mut m = &dataset.z2 * &state.beta2;
    let shared: Vec<f64> = state
        .w1
        .iter()
        .zip(state.w2.iter())
        .map(|(&a, &b)| state.beta * a + b)
        .collect();
    let w_proj = dataset.projection.project(&shared, Side::Sizes);
    for j in 0..m.len() {
        m[j] += state.gamma2 + w_proj[j];
    }
    m
}

/// Poisson log-likelihood of the counts given eta, factorial constants
/// included: sum of Y_i (ln e_i + eta_i) - e_i exp(eta_i) - ln(Y_i!).
pub fn loglik_counts(dataset: &Dataset, eta: &DVector<f64>) -> Result<f64> {
    if eta.len() != dataset.n_pixels() {
        return Err(Error::Dimension(format!(
            "eta has {} entries for {} pixels",
            eta.len(),
            dataset.n_pixels()
        )));
    }
    let mut total = dataset.count_const;
    for i in 0..eta.len() {
        total += dataset.counts[i] as f64 * eta[i] - dataset.exposure[i] * eta[i].exp();
    }
    Ok(total)
}

/// Count-side data log-likelihood under the configured observation model.
pub fn count_data_loglik(dataset: &Dataset, config: &ModelConfig, eta: &DVector<f64>) -> Result<f64> {
    match &config.count_likelihood {
        CountLikelihood::Poisson => loglik_counts(dataset, eta),
        CountLikelihood::GaussianObs { y, precision } => {
            if y.len() != eta.len() {
                return Err(Error::Dimension("Gaussian observation length mismatch".into()));
            }
            let mut total = 0.0;
            for i in 0..eta.len() {
                let r = y[i] - eta[i];
                total += 0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * r * r;
            }
            Ok(total)
        }
    }
}

/// Sum of mark log-densities: each size against its own median exp(mu_j).
pub fn loglik_sizes(dataset: &Dataset, mu: &DVector<f64>, mark: &MarkModel) -> Result<f64> {
    if mu.len() != dataset.n_landslides() {
        return Err(Error::Dimension(format!(
            "mu has {} entries for {} landslides",
            mu.len(),
            dataset.n_landslides()
        )));
    }
    Ok(dataset
        .landslides
        .iter()
        .zip(mu.iter())
        .map(|(rec, &m)| mark.log_density(rec.size, m.exp()))
        .sum())
}

/// The additive pieces of the log posterior, separated so tests (and the
/// base-model decoupling check) can inspect the count side and size side
/// independently.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorTerms {
    pub count_loglik: f64,
    pub size_loglik: f64,
    pub eta_layer: f64,
    pub mu_layer: f64,
    pub icar_w1: f64,
    pub icar_w2: f64,
    pub count_priors: f64,
    pub size_priors: f64,
}

impl PosteriorTerms {
    pub fn total(&self) -> f64 {
        self.count_loglik
            + self.size_loglik
            + self.eta_layer
            + self.mu_layer
            + self.icar_w1
            + self.icar_w2
            + self.count_priors
            + self.size_priors
    }

    /// Everything that may depend on the size data when beta = 0.
    pub fn count_side(&self) -> f64 {
        self.count_loglik + self.eta_layer + self.icar_w1 + self.count_priors
    }
}

fn normal_log_pdf(x: f64, variance: f64) -> f64 {
    -0.5 * (LN_2PI + variance.ln()) - 0.5 * x * x / variance
}

/// Computes each term of the log posterior. Constants independent of all
/// parameters (the ICAR generalized determinant of Q and its 2*pi factors)
/// are dropped, consistently across states.
pub fn log_posterior_terms(
    state: &LatentState,
    dataset: &Dataset,
    graph: &SlopeUnitGraph,
    config: &ModelConfig,
    mark: &MarkModel,
) -> Result<PosteriorTerms> {
    let n1 = dataset.n_pixels() as f64;
    let l = dataset.n_landslides() as f64;
    if state.kappa_eta <= 0.0 || state.kappa_mu <= 0.0 || state.kappa_w1 <= 0.0 || state.kappa_w2 <= 0.0 {
        return Err(Error::Domain("precisions must be positive".into()));
    }

    let count_loglik = count_data_loglik(dataset, config, &state.eta)?;
    let size_loglik = loglik_sizes(dataset, &state.mu, mark)?;

    let m_eta = linear_predictor_counts(state, dataset);
    let r_eta = &state.eta - &m_eta;
    let eta_layer = 0.5 * n1 * (state.kappa_eta.ln() - LN_2PI)
        - 0.5 * state.kappa_eta * r_eta.norm_squared();

    let m_mu = linear_predictor_sizes(state, dataset);
    let r_mu = &state.mu - &m_mu;
    let mu_layer =
        0.5 * l * (state.kappa_mu.ln() - LN_2PI) - 0.5 * state.kappa_mu * r_mu.norm_squared();

    let rank = graph.rank() as f64;
    let qf1 = graph.icar_quad_form(state.w1.as_slice())?;
    let qf2 = graph.icar_quad_form(state.w2.as_slice())?;
    let icar_w1 = 0.5 * rank * state.kappa_w1.ln() - 0.5 * state.kappa_w1 * qf1;
    let icar_w2 = 0.5 * rank * state.kappa_w2.ln() - 0.5 * state.kappa_w2 * qf2;

    let v = config.priors.coef_variance;
    let kappa_w_prior = config.priors.kappa_w_prior(graph.mean_degree());
    let mut count_priors = normal_log_pdf(state.gamma1, v)
        + state.beta1.iter().map(|&b| normal_log_pdf(b, v)).sum::<f64>()
        + kappa_w_prior.log_pdf(state.kappa_w1);
    if config.iid_eta {
        count_priors += config.priors.kappa_eta.log_pdf(state.kappa_eta);
    }

    let mut size_priors = normal_log_pdf(state.gamma2, v)
        + state.beta2.iter().map(|&b| normal_log_pdf(b, v)).sum::<f64>()
        + kappa_w_prior.log_pdf(state.kappa_w2)
        + state.theta.values().iter().map(|&t| config.priors.theta.log_pdf(t)).sum::<f64>();
    if config.iid_mu {
        size_priors += config.priors.kappa_mu.log_pdf(state.kappa_mu);
    }
    if config.beta_free {
        size_priors += normal_log_pdf(state.beta, v);
    }

    Ok(PosteriorTerms {
        count_loglik,
        size_loglik,
        eta_layer,
        mu_layer,
        icar_w1,
        icar_w2,
        count_priors,
        size_priors,
    })
}

/// Full log posterior (up to parameter-free constants).
pub fn log_posterior(
    state: &LatentState,
    dataset: &Dataset,
    graph: &SlopeUnitGraph,
    config: &ModelConfig,
) -> Result<f64> {
    let mark = MarkModel::new(state.theta)?;
    Ok(log_posterior_terms(state, dataset, graph, config, &mark)?.total())
}

/// Gradient of the eta full conditional:
/// Y_i - e_i exp(eta_i) - kappa_eta (eta_i - m_eta,i).
pub fn grad_eta(state: &LatentState, dataset: &Dataset, config: &ModelConfig) -> DVector<f64> {
    let m_eta = linear_predictor_counts(state, dataset);
    let mut g = DVector::zeros(dataset.n_pixels());
    match &config.count_likelihood {
        CountLikelihood::Poisson => {
            for i in 0..g.len() {
                g[i] = dataset.counts[i] as f64 - dataset.exposure[i] * state.eta[i].exp()
                    - state.kappa_eta * (state.eta[i] - m_eta[i]);
            }
        }
        CountLikelihood::GaussianObs { y, precision } => {
            for i in 0..g.len() {
                g[i] = precision * (y[i] - state.eta[i])
                    - state.kappa_eta * (state.eta[i] - m_eta[i]);
            }
        }
    }
    g
}

/// Gradient of the mu full conditional: the mark score with respect to the
/// log-median minus kappa_mu (mu_j - m_mu,j).
pub fn grad_mu(state: &LatentState, dataset: &Dataset, mark: &MarkModel) -> DVector<f64> {
    let m_mu = linear_predictor_sizes(state, dataset);
    let mut g = DVector::zeros(dataset.n_landslides());
    for (j, rec) in dataset.landslides.iter().enumerate() {
        g[j] = mark.grad_log_density_log_median(rec.size, state.mu[j])
            - state.kappa_mu * (state.mu[j] - m_mu[j]);
    }
    g
}

/// Deviance conditional on the latent fields: -2 * (count + size loglik).
pub fn deviance(
    state: &LatentState,
    dataset: &Dataset,
    config: &ModelConfig,
    mark: &MarkModel,
) -> Result<f64> {
    let c = count_data_loglik(dataset, config, &state.eta)?;
    let s = loglik_sizes(dataset, &state.mu, mark)?;
    Ok(-2.0 * (c + s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Small random instance: n1 pixels over a path graph of n_units.
    pub(crate) fn small_instance(
        family: MarkFamily,
        n1: usize,
        n_units: usize,
        l_target: usize,
        seed: u64,
    ) -> (Dataset, PixelGrid, SlopeUnitGraph, ModelConfig, LatentState) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pairs: Vec<(usize, usize)> = (0..n_units - 1).map(|i| (i, i + 1)).collect();
        let graph = SlopeUnitGraph::from_edges(n_units, &pairs).unwrap();
        let su: Vec<usize> = (0..n1).map(|i| i % n_units).collect();
        let grid = PixelGrid::regular(su, n_units).unwrap();

        let p1 = 2;
        let p2 = 2;
        let z1 = DMatrix::from_fn(n1, p1, |_, _| rng.gen_range(-1.0..1.0));
        let z2_pixel = DMatrix::from_fn(n1, p2, |_, _| rng.gen_range(-1.0..1.0));

        // Place l_target landslides on random pixels.
        let mut counts = vec![0u32; n1];
        let mut landslides = Vec::new();
        let mark = MarkModel::new(family.default_params()).unwrap();
        for _ in 0..l_target {
            let pixel = rng.gen_range(0..n1);
            counts[pixel] += 1;
            let size = mark.sample(rng.gen_range(0.5..3.0), &mut rng);
            landslides.push(Landslide { pixel, size });
        }
        let z2 = DMatrix::from_fn(landslides.len(), p2, |r, c| z2_pixel[(landslides[r].pixel, c)]);
        let dataset =
            Dataset::point_process(counts, landslides, z1, z2, z2_pixel, &grid).unwrap();

        let config = ModelConfig::new(family, Submodel::M1);
        let l = dataset.n_landslides();
        let state = LatentState {
            eta: DVector::from_fn(n1, |_, _| rng.gen_range(-1.0..0.5)),
            mu: DVector::from_fn(l, |_, _| rng.gen_range(-0.5..1.0)),
            w1: DVector::from_column_slice(
                &graph.hard_centered(&(0..n_units).map(|_| rng.gen_range(-0.5..0.5)).collect::<Vec<_>>()),
            ),
            w2: DVector::from_column_slice(
                &graph.hard_centered(&(0..n_units).map(|_| rng.gen_range(-0.5..0.5)).collect::<Vec<_>>()),
            ),
            gamma1: rng.gen_range(-0.5..0.5),
            gamma2: rng.gen_range(-0.5..0.5),
            beta1: DVector::from_fn(p1, |_, _| rng.gen_range(-0.3..0.3)),
            beta2: DVector::from_fn(p2, |_, _| rng.gen_range(-0.3..0.3)),
            beta: 0.7,
            kappa_eta: 2.0,
            kappa_mu: 3.0,
            kappa_w1: 1.5,
            kappa_w2: 2.5,
            theta: family.default_params(),
        };
        (dataset, grid, graph, config, state)
    }

    #[test]
    fn linear_predictor_counts_basics() {
        let (dataset, _grid, _graph, _config, mut state) =
            small_instance(MarkFamily::Gamma, 9, 3, 5, 1);
        state.beta1 = DVector::zeros(2);
        state.w1 = DVector::zeros(3);
        state.gamma1 = 1.25;
        let m = linear_predictor_counts(&state, &dataset);
        assert!(m.iter().all(|&v| (v - 1.25).abs() < 1e-15));

        // Single covariate with coefficient 2 reproduces 2 z.
        state.gamma1 = 0.0;
        state.beta1[0] = 2.0;
        let m = linear_predictor_counts(&state, &dataset);
        for i in 0..dataset.n_pixels() {
            assert!((m[i] - 2.0 * dataset.z1[(i, 0)]).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_predictors_match_dense_oracle() {
        let (dataset, grid, _graph, _config, state) =
            small_instance(MarkFamily::LogNormal, 20, 5, 8, 2);
        let n1 = dataset.n_pixels();
        let l = dataset.n_landslides();
        let n_units = 5;
        let mut a1 = DMatrix::<f64>::zeros(n1, n_units);
        for i in 0..n1 {
            a1[(i, grid.su_index[i])] = 1.0;
        }
        let mut a2 = DMatrix::<f64>::zeros(l, n_units);
        for (j, rec) in dataset.landslides.iter().enumerate() {
            a2[(j, grid.su_index[rec.pixel])] = 1.0;
        }
        let ones1 = DVector::from_element(n1, 1.0);
        let ones2 = DVector::from_element(l, 1.0);
        let want_eta = &ones1 * state.gamma1 + &dataset.z1 * &state.beta1 + &a1 * &state.w1;
        let want_mu = &ones2 * state.gamma2
            + &dataset.z2 * &state.beta2
            + &a2 * &state.w1 * state.beta
            + &a2 * &state.w2;
        let got_eta = linear_predictor_counts(&state, &dataset);
        let got_mu = linear_predictor_sizes(&state, &dataset);
        assert!((got_eta - want_eta).norm() < 1e-12);
        assert!((got_mu - want_mu).norm() < 1e-12);
    }

    #[test]
    fn beta_zero_decouples_size_predictor_from_w1() {
        let (dataset, _grid, _graph, _config, mut state) =
            small_instance(MarkFamily::Gamma, 12, 4, 6, 3);
        state.beta = 0.0;
        let before = linear_predictor_sizes(&state, &dataset);
        state.w1 = DVector::from_element(4, 9.0);
        let after = linear_predictor_sizes(&state, &dataset);
        assert_eq!(before, after);
    }

    #[test]
    fn poisson_loglik_examples() {
        let graph = SlopeUnitGraph::from_edges(1, &[]).unwrap();
        let _ = graph;
        let grid = PixelGrid::regular(vec![0], 1).unwrap();
        let z = DMatrix::zeros(1, 0);
        let d1 = Dataset::point_process(
            vec![1],
            vec![Landslide { pixel: 0, size: 1.0 }],
            z.clone(),
            DMatrix::zeros(1, 0),
            z.clone(),
            &grid,
        )
        .unwrap();
        let ll = loglik_counts(&d1, &DVector::from_element(1, 0.0)).unwrap();
        assert!((ll - (-1.0)).abs() < 1e-14, "Y=1, eta=0: {ll}");

        let d0 = Dataset::point_process(vec![0], vec![], z.clone(), DMatrix::zeros(0, 0), z, &grid)
            .unwrap();
        let ll = loglik_counts(&d0, &DVector::from_element(1, 0.0)).unwrap();
        assert!((ll - (-1.0)).abs() < 1e-14, "Y=0, eta=0: {ll}");
    }

    #[test]
    fn poisson_loglik_matches_pmf_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let (dataset, _, _, _, state) = small_instance(MarkFamily::Gamma, 15, 3, 7, 4);
        let _ = rng.gen::<f64>();
        let ll = loglik_counts(&dataset, &state.eta).unwrap();
        // Direct Poisson pmf evaluation.
        let mut want = 0.0;
        for i in 0..dataset.n_pixels() {
            let lambda = dataset.exposure[i] * state.eta[i].exp();
            let y = dataset.counts[i] as f64;
            want += y * lambda.ln() - lambda - ln_gamma(y + 1.0);
        }
        assert!((ll - want).abs() < 1e-10, "{ll} vs {want}");
    }

    #[test]
    fn size_loglik_is_additive_and_empty_is_zero() {
        let (dataset, _, _, _, state) = small_instance(MarkFamily::Burr, 12, 3, 6, 5);
        let mark = MarkModel::new(state.theta).unwrap();
        let total = loglik_sizes(&dataset, &state.mu, &mark).unwrap();
        let by_hand: f64 = dataset
            .landslides
            .iter()
            .zip(state.mu.iter())
            .map(|(rec, &m)| mark.log_density(rec.size, m.exp()))
            .sum();
        assert!((total - by_hand).abs() < 1e-12);

        let grid = PixelGrid::regular(vec![0, 0], 1).unwrap();
        let empty = Dataset::point_process(
            vec![0, 0],
            vec![],
            DMatrix::zeros(2, 0),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(2, 0),
            &grid,
        )
        .unwrap();
        assert_eq!(loglik_sizes(&empty, &DVector::zeros(0), &mark).unwrap(), 0.0);
    }

    #[test]
    fn burr_single_landslide_loglik() {
        let grid = PixelGrid::regular(vec![0], 1).unwrap();
        let d = Dataset::point_process(
            vec![1],
            vec![Landslide { pixel: 0, size: 1.0 }],
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 0),
            &grid,
        )
        .unwrap();
        let mark = MarkModel::new(MarkParams::Burr { kappa: 1.0, c: 2.0 }).unwrap();
        let ll = loglik_sizes(&d, &DVector::zeros(1), &mark).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_posterior_term_differences_are_additive() {
        let (dataset, _, graph, config, state) = small_instance(MarkFamily::Gamma, 20, 5, 8, 6);
        let mark = MarkModel::new(state.theta).unwrap();
        let mut other = state.clone();
        other.gamma1 += 0.3;
        other.kappa_eta = 4.0;
        other.eta[0] += 0.5;
        other.mu[1] -= 0.4;

        let t1 = log_posterior_terms(&state, &dataset, &graph, &config, &mark).unwrap();
        let t2 = log_posterior_terms(&other, &dataset, &graph, &config, &mark).unwrap();
        let lp1 = log_posterior(&state, &dataset, &graph, &config).unwrap();
        let lp2 = log_posterior(&other, &dataset, &graph, &config).unwrap();
        let term_diff = (t2.count_loglik - t1.count_loglik)
            + (t2.size_loglik - t1.size_loglik)
            + (t2.eta_layer - t1.eta_layer)
            + (t2.mu_layer - t1.mu_layer)
            + (t2.icar_w1 - t1.icar_w1)
            + (t2.icar_w2 - t1.icar_w2)
            + (t2.count_priors - t1.count_priors)
            + (t2.size_priors - t1.size_priors);
        assert!(((lp2 - lp1) - term_diff).abs() < 1e-9);
    }

    #[test]
    fn beta_prior_term_present_only_when_free() {
        let (dataset, _, graph, mut config, mut state) =
            small_instance(MarkFamily::Gamma, 10, 3, 4, 7);
        state.beta = 0.0;
        config.beta_free = true;
        let with = log_posterior(&state, &dataset, &graph, &config).unwrap();
        config.beta_free = false;
        let without = log_posterior(&state, &dataset, &graph, &config).unwrap();
        let beta_prior_at_zero = normal_log_pdf(0.0, 100.0);
        assert!(((with - without) - beta_prior_at_zero).abs() < 1e-12);
    }

    #[test]
    fn raising_eta_at_zero_count_decreases_posterior() {
        let (dataset, _, graph, config, mut state) =
            small_instance(MarkFamily::Gamma, 10, 3, 4, 8);
        let pixel = (0..10).find(|&i| dataset.counts[i] == 0).unwrap();
        let m = linear_predictor_counts(&state, &dataset);
        state.eta[pixel] = m[pixel];
        let mut last = log_posterior(&state, &dataset, &graph, &config).unwrap();
        for step in 1..5 {
            state.eta[pixel] = m[pixel] + step as f64 * 0.5;
            let lp = log_posterior(&state, &dataset, &graph, &config).unwrap();
            assert!(lp < last, "posterior should strictly decrease");
            last = lp;
        }
    }

    #[test]
    fn gradients_match_finite_differences_every_family() {
        for family in MarkFamily::ALL {
            let (dataset, _, _graph, config, state) = small_instance(family, 20, 5, 8, 40);
            let mark = MarkModel::new(state.theta).unwrap();
            let h = 1e-5;

            let g = grad_eta(&state, &dataset, &config);
            let f_eta = |eta: &DVector<f64>| {
                let mut s = state.clone();
                s.eta = eta.clone();
                let ll = count_data_loglik(&dataset, &config, &s.eta).unwrap();
                let m = linear_predictor_counts(&s, &dataset);
                ll - 0.5 * s.kappa_eta * (&s.eta - m).norm_squared()
            };
            for i in 0..dataset.n_pixels() {
                let mut up = state.eta.clone();
                let mut dn = state.eta.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (f_eta(&up) - f_eta(&dn)) / (2.0 * h);
                assert!(
                    (g[i] - fd).abs() / fd.abs().max(1.0) < 1e-5,
                    "{family}: grad_eta[{i}] {} vs fd {fd}",
                    g[i]
                );
            }

            let g = grad_mu(&state, &dataset, &mark);
            let f_mu = |mu: &DVector<f64>| {
                let mut s = state.clone();
                s.mu = mu.clone();
                let ll = loglik_sizes(&dataset, &s.mu, &mark).unwrap();
                let m = linear_predictor_sizes(&s, &dataset);
                ll - 0.5 * s.kappa_mu * (&s.mu - m).norm_squared()
            };
            for j in 0..dataset.n_landslides() {
                let mut up = state.mu.clone();
                let mut dn = state.mu.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (f_mu(&up) - f_mu(&dn)) / (2.0 * h);
                assert!(
                    (g[j] - fd).abs() / fd.abs().max(1.0) < 1e-5,
                    "{family}: grad_mu[{j}] {} vs fd {fd}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn grad_mu_empty_dataset_is_empty() {
        let grid = PixelGrid::regular(vec![0, 0], 1).unwrap();
        let d = Dataset::point_process(
            vec![0, 0],
            vec![],
            DMatrix::zeros(2, 0),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(2, 0),
            &grid,
        )
        .unwrap();
        let state = LatentState {
            eta: DVector::zeros(2),
            mu: DVector::zeros(0),
            w1: DVector::zeros(1),
            w2: DVector::zeros(1),
            gamma1: 0.0,
            gamma2: 0.0,
            beta1: DVector::zeros(0),
            beta2: DVector::zeros(0),
            beta: 0.0,
            kappa_eta: 1.0,
            kappa_mu: 1.0,
            kappa_w1: 1.0,
            kappa_w2: 1.0,
            theta: MarkParams::Gamma { kappa: 1.0 },
        };
        let mark = MarkModel::new(state.theta).unwrap();
        assert_eq!(grad_mu(&state, &d, &mark).len(), 0);
    }

    #[test]
    fn conditional_mode_shrinks_as_fixed_precision_grows() {
        // With kappa_eta -> inf on a grid, the eta conditional mode collapses
        // onto the linear predictor.
        let (dataset, _, _, _, state) = small_instance(MarkFamily::Gamma, 20, 5, 8, 10);
        let m = linear_predictor_counts(&state, &dataset);
        let mode_norm = |kappa: f64| {
            // Damped per-pixel Newton on Y - e exp(eta) - kappa (eta - m) = 0.
            let mut total = 0.0;
            for i in 0..dataset.n_pixels() {
                let y = dataset.counts[i] as f64;
                let e = dataset.exposure[i];
                let mut x = m[i];
                for _ in 0..200 {
                    let f = y - e * x.exp() - kappa * (x - m[i]);
                    let df = -e * x.exp() - kappa;
                    let mut step = f / df;
                    if step.abs() > 1.0 {
                        step = step.signum();
                    }
                    x -= step;
                    if (f / df).abs() < 1e-14 {
                        break;
                    }
                }
                let g = y - e * x.exp() - kappa * (x - m[i]);
                assert!(g.abs() < 1e-8, "gradient at mode: {g}");
                total += (x - m[i]).powi(2);
            }
            total.sqrt()
        };
        let norms: Vec<f64> = [1e3, 1e5, 1e7].iter().map(|&k| mode_norm(k)).collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
        assert!(norms[2] < 1e-5);
    }

    #[test]
    fn base_model_count_side_ignores_size_perturbations() {
        let (dataset, _, graph, mut config, mut state) =
            small_instance(MarkFamily::Gamma, 16, 4, 7, 11);
        config.beta_free = false;
        state.beta = 0.0;
        let mark = MarkModel::new(state.theta).unwrap();
        let before = log_posterior_terms(&state, &dataset, &graph, &config, &mark).unwrap();

        state.w2[0] += 1.0;
        state.gamma2 -= 2.0;
        state.beta2[0] += 0.5;
        state.mu[0] += 0.3;
        state.theta = MarkParams::Gamma { kappa: 3.3 };
        let mark2 = MarkModel::new(state.theta).unwrap();
        let after = log_posterior_terms(&state, &dataset, &graph, &config, &mark2).unwrap();

        assert_eq!(before.count_loglik.to_bits(), after.count_loglik.to_bits());
        assert_eq!(before.eta_layer.to_bits(), after.eta_layer.to_bits());
        assert_eq!(before.icar_w1.to_bits(), after.icar_w1.to_bits());
        assert_eq!(before.count_priors.to_bits(), after.count_priors.to_bits());
    }

    #[test]
    fn submodel_table() {
        use Submodel::*;
        assert!(M1.iid_eta() && M1.iid_mu() && M1.beta_free());
        assert!(!M2.iid_eta() && !M2.iid_mu() && M2.beta_free());
        assert!(M3.iid_eta() && !M3.iid_mu() && M3.beta_free());
        assert!(!M4.iid_eta() && M4.iid_mu() && M4.beta_free());
        for m in [M1Base, M2Base, M3Base, M4Base] {
            assert!(!m.beta_free());
        }
        assert_eq!(Submodel::from_name("m1_0"), Some(M1Base));
        assert_eq!(Submodel::from_name("M4"), Some(M4));
        // The three flags span exactly the eight submodels.
        let mut combos = std::collections::HashSet::new();
        for m in Submodel::ALL {
            combos.insert((m.iid_eta(), m.iid_mu(), m.beta_free()));
        }
        assert_eq!(combos.len(), 8);
    }

    #[test]
    fn dataset_invariant_violations() {
        let grid = PixelGrid::regular(vec![0, 0], 1).unwrap();
        let z = DMatrix::zeros(2, 0);
        // Record on a pixel whose count is zero.
        let r = Dataset::point_process(
            vec![0, 1],
            vec![Landslide { pixel: 0, size: 1.0 }],
            z.clone(),
            DMatrix::zeros(1, 0),
            z.clone(),
            &grid,
        );
        assert!(r.is_err());
        // Count without a matching record.
        let r = Dataset::point_process(
            vec![2, 0],
            vec![Landslide { pixel: 0, size: 1.0 }],
            z.clone(),
            DMatrix::zeros(1, 0),
            z.clone(),
            &grid,
        );
        assert!(r.is_err());
        // Non-positive size.
        let r = Dataset::point_process(
            vec![1, 0],
            vec![Landslide { pixel: 0, size: 0.0 }],
            z.clone(),
            DMatrix::zeros(1, 0),
            z,
            &grid,
        );
        assert!(r.is_err());
    }

    #[test]
    fn areal_aggregation_totals_and_missing_sizes() {
        let graph = SlopeUnitGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        // Unit 0: pixels 0,1,2 with counts (2,0,1); unit 1: pixel 3 count 0;
        // unit 2: pixels 4,5 counts (0,1).
        let grid = PixelGrid::regular(vec![0, 0, 0, 1, 2, 2], 3).unwrap();
        let z1 = DMatrix::from_row_slice(6, 1, &[1.0, 3.0, 2.0, 5.0, 0.0, 4.0]);
        let z2_pixel = z1.clone();
        let landslides = vec![
            Landslide { pixel: 0, size: 2.0 },
            Landslide { pixel: 0, size: 3.0 },
            Landslide { pixel: 2, size: 4.0 },
            Landslide { pixel: 5, size: 5.0 },
        ];
        let counts = vec![2, 0, 1, 0, 0, 1];
        let z2 = DMatrix::from_fn(4, 1, |r, _| z1[(landslides[r].pixel, 0)]);
        let d = Dataset::point_process(counts, landslides, z1, z2, z2_pixel, &grid).unwrap();

        let (areal, areal_grid) = aggregate_to_areal(&d, &grid, &graph).unwrap();
        assert_eq!(areal.counts, vec![3, 0, 1]);
        // Sizes: unit 0 sums to 9, unit 1 missing (no record), unit 2 is 5.
        assert_eq!(areal.landslides.len(), 2);
        assert_eq!(areal.landslides[0].pixel, 0);
        assert_eq!(areal.landslides[0].size, 9.0);
        assert_eq!(areal.landslides[1].pixel, 2);
        assert_eq!(areal.landslides[1].size, 5.0);
        // Covariates averaged: unit 0 mean of (1,3,2) = 2.
        assert!((areal.z1[(0, 0)] - 2.0).abs() < 1e-14);
        // Exposure summed; projection is the identity.
        assert_eq!(areal_grid.exposure, vec![3.0, 1.0, 2.0]);
        assert_eq!(areal.projection.count_side, vec![0, 1, 2]);
        // Totals conserved.
        let total_counts: u32 = areal.counts.iter().sum();
        assert_eq!(total_counts, 4);
        let total_size: f64 = areal.landslides.iter().map(|l| l.size).sum();
        assert_eq!(total_size, 14.0);
        assert_eq!(areal.kind, DatasetKind::Areal);
    }
}
