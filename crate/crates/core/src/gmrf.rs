//! Gaussian Markov random field sampling on the slope-unit graph.
//!
//! The full conditionals of the ICAR vectors have precision
//! P = kappa * Q + diag(d) with Q = D - A sparse. After a reverse
//! Cuthill-McKee reordering the band of P is narrow, so a banded Cholesky
//! factorization gives exact draws in O(N * bandwidth^2).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::SlopeUnitGraph;

/// Reverse Cuthill-McKee ordering: BFS from a minimum-degree vertex per
/// component, neighbors visited by increasing degree, order reversed.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_order(graph: &SlopeUnitGraph) -> Vec<usize> {
    let n = graph.n_units();
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_by_key(|&u| graph.degrees()[u]);
    for &start in &starts {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = graph.neighbors(u).iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| graph.degrees()[v]);
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Sampler for conditionals N(P^{-1} b, P^{-1}) with P = kappa*Q + diag(d).
///
/// The graph structure (ordering, band layout, Q entries) is precomputed
/// once; each call assembles the band, factors, and draws.
#[derive(Debug, Clone)]
pub struct GmrfSampler {
    n: usize,
    perm: Vec<usize>,
    bandwidth: usize,
    // Off-diagonal Q entries per permuted column: (row offset, column) pairs.
    offdiag: Vec<(usize, usize)>,
    degrees: Vec<f64>, // permuted
    components: Vec<Vec<usize>>, // original indices grouped by component
}

impl GmrfSampler {
    pub fn new(graph: &SlopeUnitGraph) -> GmrfSampler {
        let n = graph.n_units();
        let perm = rcm_order(graph);
        let mut inv_perm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let mut bandwidth = 0usize;
        let mut offdiag = Vec::with_capacity(graph.edges().len());
        for &(a, b) in graph.edges() {
            let (lo, hi) = {
                let (x, y) = (inv_perm[a], inv_perm[b]);
                (x.min(y), x.max(y))
            };
            bandwidth = bandwidth.max(hi - lo);
            offdiag.push((hi - lo, lo));
        }
        let degrees: Vec<f64> = (0..n).map(|j| graph.degrees()[perm[j]] as f64).collect();
        let mut components = vec![Vec::new(); graph.n_components()];
        for (i, &c) in graph.component_labels().iter().enumerate() {
            components[c].push(i);
        }
        GmrfSampler { n, perm, bandwidth, offdiag, degrees, components }
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    fn assemble_band(&self, kappa: f64, data_diag: &[f64], jitter: &[f64]) -> Vec<f64> {
        let stride = self.bandwidth + 1;
        let mut band = vec![0.0; stride * self.n];
        for j in 0..self.n {
            let old = self.perm[j];
            band[j * stride] = kappa * self.degrees[j] + data_diag[old] + jitter[old];
        }
        for &(offset, col) in &self.offdiag {
            band[col * stride + offset] = -kappa;
        }
        band
    }

    /// Draws from N(P^{-1} b, P^{-1}) with P = kappa*Q + diag(data_diag).
    ///
    /// Connected components without any data mass get a tiny proper-prior
    /// jitter so the factorization exists; the caller is expected to
    /// hard-center the draw, which removes the jittered null direction.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        kappa: f64,
        data_diag: &[f64],
        linear: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let z: Vec<f64> = (0..self.n).map(|_| StandardNormal.sample(rng)).collect();
        self.sample_with_noise(kappa, data_diag, linear, &z)
    }

    /// Conditional mean P^{-1} b alone.
    pub fn conditional_mean(&self, kappa: f64, data_diag: &[f64], linear: &[f64]) -> Result<Vec<f64>> {
        self.sample_with_noise(kappa, data_diag, linear, &vec![0.0; self.n])
    }

    fn sample_with_noise(
        &self,
        kappa: f64,
        data_diag: &[f64],
        linear: &[f64],
        z: &[f64],
    ) -> Result<Vec<f64>> {
        if data_diag.len() != self.n || linear.len() != self.n {
            return Err(Error::Dimension(format!(
                "GMRF sampler expects vectors of length {}, got {} and {}",
                self.n,
                data_diag.len(),
                linear.len()
            )));
        }
        let mut jitter = vec![0.0; self.n];
        let mut weak = Vec::new();
        for members in &self.components {
            let has_data = members.iter().any(|&i| data_diag[i] > 0.0);
            if !has_data {
                for &i in members {
                    jitter[i] = kappa * 1e-8;
                }
                weak.push(members[0]);
            }
        }

        let mut extra = 0.0;
        for attempt in 0..3 {
            if attempt > 0 {
                extra = if extra == 0.0 { kappa * 1e-10 } else { extra * 1e4 };
            }
            let mut with_extra = jitter.clone();
            if extra > 0.0 {
                for v in with_extra.iter_mut() {
                    *v += extra;
                }
            }
            let mut band = self.assemble_band(kappa, data_diag, &with_extra);
            if banded_cholesky_in_place(&mut band, self.n, self.bandwidth).is_ok() {
                // mean = P^{-1} b; draw = mean + L^{-T} z
                let b_perm: Vec<f64> = (0..self.n).map(|j| linear[self.perm[j]]).collect();
                let mut y = forward_solve(&band, self.n, self.bandwidth, &b_perm);
                let mean = backward_solve(&band, self.n, self.bandwidth, &y);
                let z_perm: Vec<f64> = (0..self.n).map(|j| z[self.perm[j]]).collect();
                y = backward_solve(&band, self.n, self.bandwidth, &z_perm);
                let mut out = vec![0.0; self.n];
                for j in 0..self.n {
                    out[self.perm[j]] = mean[j] + y[j];
                }
                return Ok(out);
            }
        }
        let component = self
            .components
            .iter()
            .position(|members| members.iter().all(|&i| data_diag[i] <= 0.0))
            .unwrap_or(0);
        Err(Error::Numerical(format!(
            "banded Cholesky failed for GMRF conditional (kappa = {kappa}); suspect component {component}"
        )))
    }
}

// Lower-band storage: band[col * (bw+1) + r] = A[col + r, col], r = 0..=bw.
fn banded_cholesky_in_place(band: &mut [f64], n: usize, bw: usize) -> Result<()> {
    let stride = bw + 1;
    for j in 0..n {
        let mut d = band[j * stride];
        let k_start = j.saturating_sub(bw);
        for k in k_start..j {
            let l_jk = band[k * stride + (j - k)];
            d -= l_jk * l_jk;
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Numerical(format!("non-positive pivot at column {j}")));
        }
        let l_jj = d.sqrt();
        band[j * stride] = l_jj;
        let i_end = (j + bw).min(n - 1);
        for i in (j + 1)..=i_end {
            let mut s = band[j * stride + (i - j)];
            let k_start = i.saturating_sub(bw);
            for k in k_start..j {
                s -= band[k * stride + (i - k)] * band[k * stride + (j - k)];
            }
            band[j * stride + (i - j)] = s / l_jj;
        }
    }
    Ok(())
}

fn forward_solve(band: &[f64], n: usize, bw: usize, b: &[f64]) -> Vec<f64> {
    let stride = bw + 1;
    let mut y = vec![0.0; n];
    for j in 0..n {
        let mut s = b[j];
        let k_start = j.saturating_sub(bw);
        for k in k_start..j {
            s -= band[k * stride + (j - k)] * y[k];
        }
        y[j] = s / band[j * stride];
    }
    y
}

fn backward_solve(band: &[f64], n: usize, bw: usize, y: &[f64]) -> Vec<f64> {
    let stride = bw + 1;
    let mut x = vec![0.0; n];
    for j in (0..n).rev() {
        let mut s = y[j];
        let i_end = (j + bw).min(n - 1);
        for i in (j + 1)..=i_end {
            s -= band[j * stride + (i - j)] * x[i];
        }
        x[j] = s / band[j * stride];
    }
    x
}

/// Exact draws from the centered ICAR prior via eigendecomposition of Q,
/// excluding the per-component null directions. Used by the simulator.
#[derive(Debug, Clone)]
pub struct IcarPriorSampler {
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl IcarPriorSampler {
    pub fn new(graph: &SlopeUnitGraph) -> IcarPriorSampler {
        let q = graph.dense_precision();
        let n = graph.n_units();
        let eig = q.symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let tol = max_eig.max(1.0) * 1e-9;
        let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > tol).collect();
        let mut basis = DMatrix::zeros(n, keep.len());
        let mut eigenvalues = Vec::with_capacity(keep.len());
        for (col, &k) in keep.iter().enumerate() {
            basis.set_column(col, &eig.eigenvectors.column(k));
            eigenvalues.push(eig.eigenvalues[k]);
        }
        IcarPriorSampler { basis, eigenvalues }
    }

    /// One draw of W ~ N(0, (kappa Q)^+), centered per component.
    pub fn sample<R: Rng + ?Sized>(&self, kappa: f64, rng: &mut R) -> Vec<f64> {
        let mut w = nalgebra::DVector::zeros(self.basis.nrows());
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            let scale = 1.0 / (kappa * lambda).sqrt();
            w.axpy(z * scale, &self.basis.column(k).into_owned(), 1.0);
        }
        w.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_graph(n: usize, rng: &mut impl Rng) -> SlopeUnitGraph {
        let mut pairs = Vec::new();
        for a in 0..n - 1 {
            pairs.push((a, a + 1));
        }
        for _ in 0..n {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                pairs.push((a, b));
            }
        }
        SlopeUnitGraph::from_edges(n, &pairs).unwrap()
    }

    #[test]
    fn conditional_mean_matches_dense_solve() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        for _ in 0..15 {
            let n = rng.gen_range(4..40);
            let g = random_graph(n, &mut rng);
            let sampler = GmrfSampler::new(&g);
            let kappa = rng.gen_range(0.3..4.0);
            let data_diag: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
            let linear: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mean = sampler.conditional_mean(kappa, &data_diag, &linear).unwrap();

            let mut p = g.dense_precision() * kappa;
            for i in 0..n {
                p[(i, i)] += data_diag[i];
            }
            let b = nalgebra::DVector::from_column_slice(&linear);
            let dense = p.lu().solve(&b).unwrap();
            for i in 0..n {
                assert!(
                    (mean[i] - dense[i]).abs() < 1e-9 * (1.0 + dense[i].abs()),
                    "n={n}: mean[{i}] = {} vs dense {}",
                    mean[i],
                    dense[i]
                );
            }
        }
    }

    #[test]
    fn draw_covariance_matches_dense_inverse() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let g = SlopeUnitGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let sampler = GmrfSampler::new(&g);
        let kappa = 1.2;
        let data_diag = vec![0.8, 0.5, 1.5, 0.2];
        let linear = vec![0.3, -0.6, 1.0, 0.0];
        let n_draws = 40_000;
        let mut sums = vec![0.0; 4];
        let mut sq = vec![0.0; 4];
        for _ in 0..n_draws {
            let w = sampler.sample(kappa, &data_diag, &linear, &mut rng).unwrap();
            for i in 0..4 {
                sums[i] += w[i];
                sq[i] += w[i] * w[i];
            }
        }
        let mut p = g.dense_precision() * kappa;
        for i in 0..4 {
            p[(i, i)] += data_diag[i];
        }
        let cov = p.clone().try_inverse().unwrap();
        let mean = p.lu().solve(&nalgebra::DVector::from_column_slice(&linear)).unwrap();
        for i in 0..4 {
            let m = sums[i] / n_draws as f64;
            let v = sq[i] / n_draws as f64 - m * m;
            assert!((m - mean[i]).abs() < 0.02, "mean[{i}]: {m} vs {}", mean[i]);
            assert!((v - cov[(i, i)]).abs() < 0.05, "var[{i}]: {v} vs {}", cov[(i, i)]);
        }
    }

    #[test]
    fn no_data_component_reduces_to_centered_prior() {
        // Path of two units, no data: after centering, the draw is
        // s * (1, -1)/sqrt(2) with s ~ N(0, 1/(2 kappa)); var(w_0) = 1/(4 kappa).
        let g = SlopeUnitGraph::from_edges(2, &[(0, 1)]).unwrap();
        let sampler = GmrfSampler::new(&g);
        let kappa = 1.5;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n_draws = 40_000;
        let mut var0 = 0.0;
        let mut cov01 = 0.0;
        for _ in 0..n_draws {
            let mut w = sampler.sample(kappa, &[0.0, 0.0], &[0.0, 0.0], &mut rng).unwrap();
            g.hard_center(&mut w);
            var0 += w[0] * w[0];
            cov01 += w[0] * w[1];
        }
        var0 /= n_draws as f64;
        cov01 /= n_draws as f64;
        let want = 1.0 / (4.0 * kappa);
        assert!((var0 - want).abs() < 0.01, "var {var0} vs {want}");
        assert!((cov01 + want).abs() < 0.01, "cov {cov01} vs {}", -want);
    }

    #[test]
    fn prior_sampler_matches_pseudoinverse_covariance() {
        let g = SlopeUnitGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]).unwrap();
        let prior = IcarPriorSampler::new(&g);
        let kappa = 2.0;
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let n_draws = 40_000;
        let mut sum_sq = vec![0.0; 5];
        let mut sum = vec![0.0; 5];
        for _ in 0..n_draws {
            let w = prior.sample(kappa, &mut rng);
            let total: f64 = w.iter().sum();
            assert!(total.abs() < 1e-9, "prior draw not centered: {total}");
            for i in 0..5 {
                sum[i] += w[i];
                sum_sq[i] += w[i] * w[i];
            }
        }
        // Pseudo-inverse covariance via eigendecomposition.
        let q = g.dense_precision();
        let eig = q.symmetric_eigen();
        let mut cov = nalgebra::DMatrix::zeros(5, 5);
        for k in 0..5 {
            if eig.eigenvalues[k] > 1e-9 {
                let v = eig.eigenvectors.column(k);
                cov += v * v.transpose() / (kappa * eig.eigenvalues[k]);
            }
        }
        for i in 0..5 {
            let v = sum_sq[i] / n_draws as f64 - (sum[i] / n_draws as f64).powi(2);
            assert!((v - cov[(i, i)]).abs() < 0.02, "var[{i}] {v} vs {}", cov[(i, i)]);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let g = SlopeUnitGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let sampler = GmrfSampler::new(&g);
        let mut a = ChaCha12Rng::seed_from_u64(3);
        let mut b = ChaCha12Rng::seed_from_u64(3);
        let d = vec![1.0, 0.0, 2.0];
        let l = vec![0.5, 0.0, -1.0];
        assert_eq!(
            sampler.sample(1.0, &d, &l, &mut a).unwrap(),
            sampler.sample(1.0, &d, &l, &mut b).unwrap()
        );
    }
}
