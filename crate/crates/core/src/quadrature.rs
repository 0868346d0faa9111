//! Gauss quadrature rules built by Golub–Welsch.
//!
//! Nodes are the eigenvalues of the symmetric tridiagonal Jacobi matrix of
//! the orthogonal-polynomial recurrence, weights are `mu0 * v0^2` where `v0`
//! is the first component of the normalized eigenvector. Rules are computed
//! once per size and cached for the lifetime of the process.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Number of Gauss–Hermite nodes used for Gaussian expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSpec {
    pub nodes: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { nodes: 64 }
    }
}

impl QuadratureSpec {
    pub fn new(nodes: usize) -> crate::Result<Self> {
        if nodes < 2 {
            return Err(crate::Error::domain(format!(
                "quadrature needs at least 2 nodes, got {nodes}"
            )));
        }
        Ok(QuadratureSpec { nodes })
    }

    pub fn rule(&self) -> Arc<Rule> {
        gauss_hermite(self.nodes)
    }

    /// `E[f(G)]` for `G ~ N(0, 1)`.
    pub fn expect(&self, f: impl FnMut(f64) -> f64) -> f64 {
        self.rule().integrate(f)
    }
}

/// Nodes and weights of a quadrature rule, nodes ascending.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn golub_welsch(n: usize, off_diag: impl Fn(usize) -> f64, mu0: f64) -> Rule {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let beta = off_diag(k);
        jacobi[(k - 1, k)] = beta;
        jacobi[(k, k - 1)] = beta;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetric weight functions give symmetric rules; enforce it exactly.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1 * mu0 / total).collect(),
    }
}

/// Gauss–Hermite rule for the standard normal measure (probabilists' weight
/// `exp(-x^2/2)/sqrt(2 pi)`), so that `rule.integrate(f) ~ E[f(G)]`.
pub fn gauss_hermite(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(golub_welsch(n, |k| (k as f64).sqrt(), 1.0)))
        .clone()
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(n)
        .or_insert_with(|| {
            Arc::new(golub_welsch(
                n,
                |k| {
                    let k = k as f64;
                    k / (4.0 * k * k - 1.0).sqrt()
                },
                2.0,
            ))
        })
        .clone()
}
