//! Spatial bookkeeping: the pixel grid, the slope-unit adjacency graph with
//! its sparse ICAR precision Q = D - A, pairwise-difference quadratic form,
//! per-component hard-centering, and slope-unit projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the joint model a projection serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Counts,
    Sizes,
}

/// The fine-resolution grid: one record per pixel with its centroid,
/// relative exposure e_i > 0, and owning slope unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PixelGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub su_index: Vec<usize>,
    pub exposure: Vec<f64>,
}

impl PixelGrid {
    /// Builds a grid, validating that every pixel maps to a unit below
    /// `n_units` and has positive exposure.
    pub fn new(x: Vec<f64>, y: Vec<f64>, su_index: Vec<usize>, exposure: Vec<f64>, n_units: usize) -> Result<PixelGrid> {
        let n = su_index.len();
        if x.len() != n || y.len() != n || exposure.len() != n {
            return Err(Error::Dimension(format!(
                "pixel columns disagree: x {}, y {}, su {}, exposure {}",
                x.len(),
                y.len(),
                n,
                exposure.len()
            )));
        }
        for (i, &su) in su_index.iter().enumerate() {
            if su >= n_units {
                return Err(Error::Data(format!(
                    "pixel {i} references slope unit {su}, but only {n_units} units exist"
                )));
            }
        }
        for (i, &e) in exposure.iter().enumerate() {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::Data(format!("pixel {i} has non-positive exposure {e}")));
            }
        }
        Ok(PixelGrid { x, y, su_index, exposure })
    }

    /// Regular grid with unit exposure, pixels assigned by `su_index`.
    pub fn regular(su_index: Vec<usize>, n_units: usize) -> Result<PixelGrid> {
        let n = su_index.len();
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y = vec![0.0; n];
        PixelGrid::new(x, y, su_index, vec![1.0; n], n_units)
    }

    pub fn n_pixels(&self) -> usize {
        self.su_index.len()
    }
}

/// Slope-unit adjacency with its ICAR structure.
///
/// Immutable after construction; Q is kept implicitly as the (deduplicated,
/// symmetric) edge list plus degrees, which is all the pairwise-difference
/// form and the GMRF sampler need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeUnitGraph {
    n_units: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    degrees: Vec<usize>,
    component: Vec<usize>,
    n_components: usize,
}

impl SlopeUnitGraph {
    /// Builds the graph from undirected adjacency pairs. Duplicate pairs
    /// (in either orientation) are deduplicated; self-loops are rejected;
    /// isolated units are permitted but reported with a warning since their
    /// spatial effect is identified only through the likelihood.
    pub fn from_edges(n_units: usize, pairs: &[(usize, usize)]) -> Result<SlopeUnitGraph> {
        if n_units == 0 {
            return Err(Error::Data("graph needs at least one unit".into()));
        }
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            if a == b {
                return Err(Error::Data(format!("self-loop on unit {a} is not allowed")));
            }
            if a >= n_units || b >= n_units {
                return Err(Error::Data(format!(
                    "edge ({a}, {b}) references a unit outside 0..{n_units}"
                )));
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges.dedup();

        let mut adjacency = vec![Vec::new(); n_units];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let degrees: Vec<usize> = adjacency.iter().map(Vec::len).collect();
        let isolated = degrees.iter().filter(|&&d| d == 0).count();
        if isolated > 0 {
            log::warn!("{isolated} slope unit(s) have no neighbors; their spatial effects are identified only through the likelihood");
        }

        // Connected components by breadth-first search.
        let mut component = vec![usize::MAX; n_units];
        let mut n_components = 0;
        let mut queue = std::collections::VecDeque::new();
        for start in 0..n_units {
            if component[start] != usize::MAX {
                continue;
            }
            component[start] = n_components;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &adjacency[u] {
                    if component[v] == usize::MAX {
                        component[v] = n_components;
                        queue.push_back(v);
                    }
                }
            }
            n_components += 1;
        }

        Ok(SlopeUnitGraph { n_units, edges, adjacency, degrees, component, n_components })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    /// Undirected edges, each counted once with the smaller id first.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, unit: usize) -> &[usize] {
        &self.adjacency[unit]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Mean number of neighbors across all units.
    pub fn mean_degree(&self) -> f64 {
        self.degrees.iter().sum::<usize>() as f64 / self.n_units as f64
    }

    pub fn component_labels(&self) -> &[usize] {
        &self.component
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// rank(Q) = N - (number of connected components).
    pub fn rank(&self) -> usize {
        self.n_units - self.n_components
    }

    /// Pairwise-difference quadratic form: the sum over undirected edges of
    /// (w_i - w_j)^2, which equals w' Q w.
    pub fn icar_quad_form(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.n_units {
            return Err(Error::Dimension(format!(
                "quadratic form expects length {}, got {}",
                self.n_units,
                w.len()
            )));
        }
        Ok(self
            .edges
            .iter()
            .map(|&(i, j)| {
                let d = w[i] - w[j];
                d * d
            })
            .sum())
    }

    /// Subtracts the mean within each connected component in place, leaving
    /// the quadratic form unchanged.
    pub fn hard_center(&self, w: &mut [f64]) {
        debug_assert_eq!(w.len(), self.n_units);
        let mut sums = vec![0.0; self.n_components];
        let mut counts = vec![0usize; self.n_components];
        for (i, &c) in self.component.iter().enumerate() {
            sums[c] += w[i];
            counts[c] += 1;
        }
        for (i, &c) in self.component.iter().enumerate() {
            w[i] -= sums[c] / counts[c] as f64;
        }
    }

    /// As [`hard_center`](Self::hard_center), returning a new vector.
    pub fn hard_centered(&self, w: &[f64]) -> Vec<f64> {
        let mut out = w.to_vec();
        self.hard_center(&mut out);
        out
    }

    /// Dense Q = D - A, mainly for tests and small-problem oracles.
    pub fn dense_precision(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n_units;
        let mut q = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            q[(i, i)] = self.degrees[i] as f64;
        }
        for &(i, j) in &self.edges {
            q[(i, j)] = -1.0;
            q[(j, i)] = -1.0;
        }
        q
    }
}

/// Maps slope-unit vectors to the pixel level (counts side) and to the
/// per-landslide level (sizes side). Each implied indicator row has exactly
/// one nonzero entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Projection {
    pub count_side: Vec<usize>,
    pub size_side: Vec<usize>,
}

impl Projection {
    pub fn new(count_side: Vec<usize>, size_side: Vec<usize>, n_units: usize) -> Result<Projection> {
        for &su in count_side.iter().chain(size_side.iter()) {
            if su >= n_units {
                return Err(Error::Data(format!(
                    "projection references slope unit {su} outside 0..{n_units}"
                )));
            }
        }
        Ok(Projection { count_side, size_side })
    }

    /// Projects a slope-unit vector: output element j is w[su_index(j)].
    pub fn project(&self, w: &[f64], side: Side) -> Vec<f64> {
        let index = match side {
            Side::Counts => &self.count_side,
            Side::Sizes => &self.size_side,
        };
        index.iter().map(|&su| w[su]).collect()
    }
}
