//! Gauss–Hermite rules transformed to expectations under N(0, 1).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Default number of nodes per dimension.
pub const DEFAULT_NODES: usize = 64;

/// Monte Carlo fallback used when refinement of a rule does not settle for a
/// piecewise-smooth kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McFallback {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McFallback {
    fn default() -> Self {
        Self { samples: 1_000_000, seed: 0x00dd_ba11 }
    }
}

/// Nodes `u_k` and weights `w_k` with `Σ w_k f(u_k) ≈ E f(U)`, U ~ N(0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub mc_fallback: Option<McFallback>,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_hermite(DEFAULT_NODES)
    }
}

impl QuadratureRule {
    /// m-point rule, exact for polynomials of degree ≤ 2m − 1.
    pub fn gauss_hermite(m: usize) -> Self {
        let (x, w) = hermite_nodes(m);
        let nodes = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let weights = w.iter().map(|v| v / PI.sqrt()).collect();
        Self { nodes, weights, mc_fallback: Some(McFallback::default()) }
    }

    pub fn without_fallback(mut self) -> Self {
        self.mc_fallback = None;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// One-dimensional expectation `E f(U)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(u, w)| w * f(*u)).sum()
    }
}

/// Physicists' Gauss–Hermite nodes and weights for weight `exp(−x²)`, by
/// Newton iteration on the orthonormal recurrence.
fn hermite_nodes(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "a quadrature rule needs at least one node");
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let nf = m as f64;
    let half = m.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..half {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=m {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[m - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[m - 1 - i] = w[i];
    }
    if m % 2 == 1 {
        x[m / 2] = 0.0;
    }
    (x, w)
}
