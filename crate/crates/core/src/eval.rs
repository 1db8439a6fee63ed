//! Generative simulation, posterior prediction, cross-validation folds,
//! probabilistic scoring (AUC, absolute error, CRPS, DIC), and the
//! susceptibility / hazard products.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::IcarPriorSampler;
use crate::graph::{PixelGrid, SlopeUnitGraph};
use crate::marks::{MarkModel, MarkParams};
use crate::model::{Dataset, Landslide};
use crate::sampler::ChainOutput;

/// Fixed parameter configuration to simulate from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSpec {
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub beta: f64,
    pub kappa_eta: f64,
    pub kappa_mu: f64,
    pub kappa_w1: f64,
    pub kappa_w2: f64,
    pub theta: MarkParams,
}

/// A simulated dataset together with the latent fields that generated it.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

/// Simulates from the marked point process model: centered ICAR draws for
/// W1/W2 (proper-subspace Gaussian via eigendecomposition), Gaussian layers
/// for eta and mu, Poisson counts, and mark draws for the sizes.
pub fn simulate_dataset<R: Rng + ?Sized>(
    truth: &TruthSpec,
    graph: &SlopeUnitGraph,
    grid: &PixelGrid,
    z1: &DMatrix<f64>,
    z2_pixel: &DMatrix<f64>,
    rng: &mut R,
) -> Result<SimulatedData> {
    let n1 = grid.n_pixels();
    if z1.nrows() != n1 || z2_pixel.nrows() != n1 {
        return Err(Error::Dimension("covariate matrices must have one row per pixel".into()));
    }
    if z1.ncols() != truth.beta1.len() || z2_pixel.ncols() != truth.beta2.len() {
        return Err(Error::Dimension("covariate columns must match truth coefficient lengths".into()));
    }
    let mark = MarkModel::new(truth.theta)?;
    let prior = IcarPriorSampler::new(graph);
    let w1 = prior.sample(truth.kappa_w1, rng);
    let w2 = prior.sample(truth.kappa_w2, rng);

    let beta1 = DVector::from_column_slice(&truth.beta1);
    let beta2 = DVector::from_column_slice(&truth.beta2);
    let fixed1 = z1 * &beta1;
    let fixed2 = z2_pixel * &beta2;

    let sd_eta = truth.kappa_eta.powf(-0.5);
    let sd_mu = truth.kappa_mu.powf(-0.5);
    let mut eta = DVector::zeros(n1);
    let mut counts = vec![0u32; n1];
    let mut landslides = Vec::new();
    let mut mu_values = Vec::new();
    let mut z2_rows: Vec<usize> = Vec::new();
    for i in 0..n1 {
        let su = grid.su_index[i];
        let z: f64 = StandardNormal.sample(rng);
        eta[i] = truth.gamma1 + fixed1[i] + w1[su] + sd_eta * z;
        let lambda = grid.exposure[i] * eta[i].exp();
        let y = Poisson::new(lambda)
            .map_err(|e| Error::Numerical(format!("Poisson intensity at pixel {i}: {e}")))?
            .sample(rng) as u32;
        counts[i] = y;
        for _ in 0..y {
            let z: f64 = StandardNormal.sample(rng);
            let mu = truth.gamma2 + fixed2[i] + truth.beta * w1[su] + w2[su] + sd_mu * z;
            let size = mark.sample(mu.exp(), rng);
            landslides.push(Landslide { pixel: i, size });
            mu_values.push(mu);
            z2_rows.push(i);
        }
    }
    let z2 = DMatrix::from_fn(z2_rows.len(), z2_pixel.ncols(), |r, c| z2_pixel[(z2_rows[r], c)]);
    let dataset = Dataset::point_process(counts, landslides, z1.clone(), z2, z2_pixel.clone(), grid)?;
    Ok(SimulatedData { dataset, eta: eta.clone(), mu: DVector::from_vec(mu_values), w1, w2 })
}

/// Rebuilds per-draw eta values at arbitrary pixels from the stored draws of
/// (gamma1, beta1, W1, kappa_eta), including the iid Gaussian layer.
pub fn reconstruct_eta_draws<R: Rng + ?Sized>(
    chain: &ChainOutput,
    z1: &DMatrix<f64>,
    su: &[usize],
    rng: &mut R,
) -> Vec<DVector<f64>> {
    chain
        .draws
        .iter()
        .map(|d| {
            let fixed = z1 * &d.beta1;
            let sd = d.kappa_eta.powf(-0.5);
            DVector::from_fn(su.len(), |i, _| {
                let z: f64 = StandardNormal.sample(rng);
                d.gamma1 + fixed[i] + d.w1[su[i]] + sd * z
            })
        })
        .collect()
}

/// Rebuilds per-draw mu values at arbitrary pixels from the stored draws of
/// (gamma2, beta2, beta, W1, W2, kappa_mu), including the iid layer.
pub fn reconstruct_mu_draws<R: Rng + ?Sized>(
    chain: &ChainOutput,
    z2: &DMatrix<f64>,
    su: &[usize],
    rng: &mut R,
) -> Vec<DVector<f64>> {
    chain
        .draws
        .iter()
        .map(|d| {
            let fixed = z2 * &d.beta2;
            let sd = d.kappa_mu.powf(-0.5);
            DVector::from_fn(su.len(), |i, _| {
                let z: f64 = StandardNormal.sample(rng);
                d.gamma2 + fixed[i] + d.beta * d.w1[su[i]] + d.w2[su[i]] + sd * z
            })
        })
        .collect()
}

/// Pixel-level and slope-unit-level posterior predictive means.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub pixel_count_mean: Vec<f64>,
    pub pixel_size_mean: Vec<f64>,
    pub unit_count: Vec<f64>,
    pub unit_size: Vec<f64>,
}

/// Posterior predictive estimates: per pixel the mean over draws of
/// e_i exp(eta_i) for counts and of exp(mu_i) for sizes (mu rebuilt at pixel
/// level from the linear predictor draws), then aggregated to units by
/// summation.
pub fn posterior_predict<R: Rng + ?Sized>(
    chain: &ChainOutput,
    dataset: &Dataset,
    grid: &PixelGrid,
    n_units: usize,
    rng: &mut R,
) -> Result<Predictions> {
    if chain.draws.is_empty() {
        return Err(Error::Data("empty chain".into()));
    }
    let n1 = grid.n_pixels();
    let n_draws = chain.draws.len() as f64;
    let mut pixel_count_mean = vec![0.0; n1];
    for d in &chain.draws {
        if d.eta.len() != n1 {
            return Err(Error::Dimension("stored eta draws do not match the grid".into()));
        }
        for i in 0..n1 {
            pixel_count_mean[i] += grid.exposure[i] * d.eta[i].exp();
        }
    }
    for v in pixel_count_mean.iter_mut() {
        *v /= n_draws;
    }

    // Size predictor at pixel level: pixel-level covariate columns, with any
    // landslide-level extra columns at their standardized mean (zero).
    let p2 = chain.draws[0].beta2.len();
    let p2_pixel = dataset.z2_pixel.ncols();
    let mut z2 = DMatrix::zeros(n1, p2);
    for i in 0..n1 {
        for c in 0..p2_pixel.min(p2) {
            z2[(i, c)] = dataset.z2_pixel[(i, c)];
        }
    }
    let mu_draws = reconstruct_mu_draws(chain, &z2, &grid.su_index, rng);
    let mut pixel_size_mean = vec![0.0; n1];
    for draw in &mu_draws {
        for i in 0..n1 {
            pixel_size_mean[i] += draw[i].exp();
        }
    }
    for v in pixel_size_mean.iter_mut() {
        *v /= n_draws;
    }

    let mut unit_count = vec![0.0; n_units];
    let mut unit_size = vec![0.0; n_units];
    for i in 0..n1 {
        unit_count[grid.su_index[i]] += pixel_count_mean[i];
        unit_size[grid.su_index[i]] += pixel_size_mean[i];
    }
    Ok(Predictions { pixel_count_mean, pixel_size_mean, unit_count, unit_size })
}

/// Cross-validation design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoldMode {
    /// Hold out entire slope units.
    SlopeUnitKFold,
    /// Remove individual landslides (thinning the point process).
    Thinning,
}

/// Per-item fold labels in 0..k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub mode: FoldMode,
    pub k: usize,
    pub labels: Vec<usize>,
    pub seed: u64,
}

/// Thinning rule: item with uniform u lands in fold floor(u * k).
pub fn thinning_labels_from_uniforms(uniforms: &[f64], k: usize) -> Vec<usize> {
    uniforms.iter().map(|&u| ((u * k as f64) as usize).min(k - 1)).collect()
}

/// Builds a fold plan. Thinning mode draws one uniform per item and applies
/// the interval rule; slope-unit mode deals a shuffled unit list round-robin
/// into k near-equal folds. Deterministic for a fixed seed.
pub fn make_folds(mode: FoldMode, k: usize, n_items: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > n_items {
        return Err(Error::Config(format!("{k} folds exceed {n_items} items")));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let labels = match mode {
        FoldMode::Thinning => {
            let uniforms: Vec<f64> = (0..n_items).map(|_| rng.gen::<f64>()).collect();
            thinning_labels_from_uniforms(&uniforms, k)
        }
        FoldMode::SlopeUnitKFold => {
            let mut order: Vec<usize> = (0..n_items).collect();
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            let mut labels = vec![0usize; n_items];
            for (pos, &item) in order.iter().enumerate() {
                labels[item] = pos % k;
            }
            labels
        }
    };
    Ok(FoldPlan { mode, k, labels, seed })
}

/// Intensity re-adjustment after thinning: estimates from (k-1)/k of the
/// data are scaled back by k/(k-1).
pub fn thinning_factor(k: usize) -> f64 {
    k as f64 / (k as f64 - 1.0)
}

/// Multiplies intensity draws by the thinning factor in place.
pub fn thinning_adjust(draws: &mut [f64], k: usize) {
    let f = thinning_factor(k);
    for v in draws.iter_mut() {
        *v *= f;
    }
}

/// Mann-Whitney AUC with midrank tie correction. Returns None (with a log
/// message) when only one class is present or any score is non-finite.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return None;
    }
    if scores.iter().any(|s| !s.is_finite()) {
        log::warn!("AUC not applicable: non-finite scores present");
        return None;
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        log::warn!("AUC not applicable: a single class is present");
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Midrank for the tie group occupying ranks i+1..=j+1.
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Ensemble CRPS: mean |X - y| - 1/2 mean |X - X'| over the empirical
/// ensemble (all ordered pairs). O(n log n) via sorting.
pub fn crps_ensemble(draws: &[f64], observation: f64) -> Result<f64> {
    let n = draws.len();
    if n == 0 {
        return Err(Error::Data("CRPS needs a nonempty ensemble".into()));
    }
    let term1: f64 = draws.iter().map(|x| (x - observation).abs()).sum::<f64>() / n as f64;
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // sum_{i<j} (x_(j) - x_(i)) = sum_k x_(k) (2k - n + 1), 0-indexed.
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, &x)| x * (2.0 * k as f64 - n as f64 + 1.0))
        .sum();
    Ok(term1 - pair_sum / (n as f64 * n as f64))
}

/// DIC = D-bar + p_D with p_D = D-bar - D(theta-bar).
pub fn dic(deviance_draws: &[f64], deviance_at_mean: f64) -> Result<f64> {
    if deviance_draws.is_empty() {
        return Err(Error::Data("DIC needs deviance draws".into()));
    }
    if deviance_draws.iter().any(|d| !d.is_finite()) || !deviance_at_mean.is_finite() {
        return Err(Error::Numerical("non-finite deviance".into()));
    }
    let d_bar = deviance_draws.iter().sum::<f64>() / deviance_draws.len() as f64;
    let p_d = d_bar - deviance_at_mean;
    Ok(d_bar + p_d)
}

/// Posterior mean of 1 - exp(-e_i exp(eta_i)): the probability of at least
/// one event per pixel.
pub fn susceptibility(eta_draws: &[DVector<f64>], exposure: &[f64]) -> Result<Vec<f64>> {
    if eta_draws.is_empty() {
        return Err(Error::Data("susceptibility needs at least one draw".into()));
    }
    let n = exposure.len();
    let mut out = vec![0.0; n];
    for draw in eta_draws {
        if draw.len() != n {
            return Err(Error::Dimension("eta draw length mismatch".into()));
        }
        for i in 0..n {
            out[i] += 1.0 - (-exposure[i] * draw[i].exp()).exp();
        }
    }
    for v in out.iter_mut() {
        *v /= eta_draws.len() as f64;
    }
    Ok(out)
}

/// Hazard products: per-pixel posterior means of e_i exp(eta) exp(2 mu) and
/// the per-draw aggregate over a pixel subset, reported at quantiles.
#[derive(Debug, Clone)]
pub struct HazardSummary {
    pub pixel_mean: Vec<f64>,
    /// (probability, value) pairs of the aggregate distribution.
    pub aggregate_quantiles: Vec<(f64, f64)>,
    /// Per-draw aggregate series over the subset.
    pub aggregate_draws: Vec<f64>,
}

pub const HAZARD_QUANTILES: [f64; 7] = [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0];

/// Computes hazard from aligned per-draw eta and mu vectors (joint posterior
/// draws). The factor 2 on mu converts the sqrt-area size scale back to area.
pub fn hazard(
    eta_draws: &[DVector<f64>],
    mu_draws: &[DVector<f64>],
    exposure: &[f64],
    subset: &[usize],
    probs: &[f64],
) -> Result<HazardSummary> {
    if eta_draws.is_empty() || eta_draws.len() != mu_draws.len() {
        return Err(Error::Dimension("hazard needs aligned, nonempty draw sequences".into()));
    }
    let n = exposure.len();
    let n_draws = eta_draws.len();
    let mut pixel_mean = vec![0.0; n];
    let mut aggregate_draws = Vec::with_capacity(n_draws);
    for (eta, mu) in eta_draws.iter().zip(mu_draws.iter()) {
        if eta.len() != n || mu.len() != n {
            return Err(Error::Dimension("hazard draw length mismatch".into()));
        }
        let mut agg = 0.0;
        for i in 0..n {
            let h = exposure[i] * (eta[i] + 2.0 * mu[i]).exp();
            pixel_mean[i] += h;
        }
        for &i in subset {
            if i >= n {
                return Err(Error::Data(format!("subset pixel {i} out of range")));
            }
            agg += exposure[i] * (eta[i] + 2.0 * mu[i]).exp();
        }
        aggregate_draws.push(agg);
    }
    for v in pixel_mean.iter_mut() {
        *v /= n_draws as f64;
    }
    let mut sorted = aggregate_draws.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let aggregate_quantiles = probs.iter().map(|&p| (p, quantile_sorted(&sorted, p))).collect();
    Ok(HazardSummary { pixel_mean, aggregate_quantiles, aggregate_draws })
}

/// Type-7 empirical quantile of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior summary of one scalar parameter series.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParamSummary {
    pub median: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

pub fn summarize_series(values: &[f64]) -> ParamSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    ParamSummary {
        median: quantile_sorted(&sorted, 0.5),
        sd: var.sqrt(),
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
    }
}

/// Split-R-hat across chains (each chain split in half).
pub fn rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let mid = c.len() / 2;
        halves.push(&c[..mid]);
        halves.push(&c[mid..]);
    }
    let m = halves.len() as f64;
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0) as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(means.iter())
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (h.len() as f64 - 1.0))
        .sum::<f64>()
        / m;
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Monte Carlo standard error of the mean by batch means.
pub fn mcse(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        return f64::NAN;
    }
    let n_batches = (n as f64).sqrt().floor() as usize;
    let batch_size = n / n_batches;
    let used = n_batches * batch_size;
    let mean = values[..used].iter().sum::<f64>() / used as f64;
    let mut bvar = 0.0;
    for b in 0..n_batches {
        let bmean =
            values[b * batch_size..(b + 1) * batch_size].iter().sum::<f64>() / batch_size as f64;
        bvar += (bmean - mean).powi(2);
    }
    bvar *= batch_size as f64 / (n_batches as f64 - 1.0);
    (bvar / used as f64).sqrt()
}

/// Synthetic inputs for tests and the `simulate` subcommand.
pub mod synthetic {
    use super::*;

    /// A connected planar-ish unit graph: a grid skeleton plus random extra
    /// edges.
    pub fn random_unit_graph<R: Rng + ?Sized>(
        n_units: usize,
        extra_edges: usize,
        rng: &mut R,
    ) -> SlopeUnitGraph {
        let cols = (n_units as f64).sqrt().ceil() as usize;
        let mut pairs = Vec::new();
        for i in 0..n_units {
            if (i + 1) % cols != 0 && i + 1 < n_units {
                pairs.push((i, i + 1));
            }
            if i + cols < n_units {
                pairs.push((i, i + cols));
            }
        }
        let mut added = 0;
        while added < extra_edges {
            let a = rng.gen_range(0..n_units);
            let b = rng.gen_range(0..n_units);
            if a != b {
                pairs.push((a, b));
                added += 1;
            }
        }
        SlopeUnitGraph::from_edges(n_units, &pairs).expect("synthetic graph")
    }

    /// Random pixel-to-unit assignment with uneven unit sizes; the first
    /// n_units pixels guarantee every unit is populated.
    pub fn random_pixel_assignment<R: Rng + ?Sized>(
        n_pixels: usize,
        n_units: usize,
        rng: &mut R,
    ) -> Vec<usize> {
        assert!(n_pixels >= n_units);
        let weights: Vec<f64> = (0..n_units).map(|_| rng.gen_range(0.2f64..1.8)).collect();
        let total: f64 = weights.iter().sum();
        let mut su = Vec::with_capacity(n_pixels);
        for u in 0..n_units {
            su.push(u);
        }
        for _ in n_units..n_pixels {
            let mut t = rng.gen::<f64>() * total;
            let mut pick = n_units - 1;
            for (u, &w) in weights.iter().enumerate() {
                if t < w {
                    pick = u;
                    break;
                }
                t -= w;
            }
            su.push(pick);
        }
        su
    }

    /// Standard-normal covariate matrix (already standardized in law).
    pub fn standard_normal_matrix<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }
}
