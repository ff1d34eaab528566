//! Symmetric kernels H of order d, the built-in kernels of the statistical
//! applications, and the derived kernels used for conditional-variance
//! estimation.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest order accepted for a user kernel entering the variance pipeline.
pub const MAX_KERNEL_ORDER: usize = 4;
/// Largest order of any kernel object (symmetrizations of order-4 kernels).
pub const MAX_DERIVED_ORDER: usize = 2 * MAX_KERNEL_ORDER - 1;

const SELF_TEST_POINTS: usize = 64;
const SELF_TEST_PERMUTATIONS: usize = 8;
const SELF_TEST_TOL: f64 = 1e-12;
const SELF_TEST_SEED: u64 = 0x5eed_cafe;

pub type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    C0,
    /// Continuously differentiable off a null set, with a subgradient there
    /// (e.g. |x − y|).
    C1Piecewise,
    C1,
}

/// Metadata a kernel constructor asserts about its evaluation rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelClaims {
    pub symmetric: bool,
    pub even_each_coordinate: bool,
    /// q with |H(x)| ≤ C(1 + ‖x‖^q).
    pub growth_degree: f64,
    pub smoothness: Smoothness,
    /// r with H(cx) = |c|^r H(x), when H is homogeneous.
    pub homogeneity: Option<f64>,
}

/// A kernel H: ℝ^d → ℝ with the claims the limit theorems rely on.
///
/// `eval` must be pure. Claims of symmetry and evenness are checked on random
/// points at construction; they cannot be proved for arbitrary callables.
#[derive(Clone)]
pub struct Kernel {
    name: String,
    order: usize,
    eval: EvalFn,
    claims: KernelClaims,
    closed_form_rho: Option<EvalFn>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("order", &self.order)
            .field("claims", &self.claims)
            .field("closed_form_rho", &self.closed_form_rho.is_some())
            .finish()
    }
}

impl Kernel {
    pub fn new(name: impl Into<String>, order: usize, eval: EvalFn, claims: KernelClaims) -> Result<Self> {
        let name = name.into();
        if order == 0 || order > MAX_DERIVED_ORDER {
            return Err(Error::BadParam(format!("kernel order must lie in 1..={MAX_DERIVED_ORDER}, got {order}")));
        }
        if !(claims.growth_degree >= 0.0) {
            return Err(Error::BadParam("growth degree must be nonnegative".into()));
        }
        let kernel = Self { name, order, eval, claims, closed_form_rho: None };
        kernel.self_test()?;
        Ok(kernel)
    }

    /// Attach the closed form of `σ ↦ E H(σ₁U₁, …, σ_dU_d)`.
    pub fn with_closed_form_rho(mut self, rho: EvalFn) -> Self {
        self.closed_form_rho = Some(rho);
        self
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.order);
        (self.eval)(x)
    }

    #[inline]
    pub(crate) fn eval2(&self, a: f64, b: f64) -> f64 {
        (self.eval)(&[a, b])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn claims(&self) -> &KernelClaims {
        &self.claims
    }

    pub fn is_symmetric(&self) -> bool {
        self.claims.symmetric
    }

    pub fn is_even(&self) -> bool {
        self.claims.even_each_coordinate
    }

    pub fn growth_degree(&self) -> f64 {
        self.claims.growth_degree
    }

    pub fn smoothness(&self) -> Smoothness {
        self.claims.smoothness
    }

    pub fn homogeneity(&self) -> Option<f64> {
        self.claims.homogeneity
    }

    pub fn closed_form_rho(&self) -> Option<&EvalFn> {
        self.closed_form_rho.as_ref()
    }

    fn self_test(&self) -> Result<()> {
        let d = self.order;
        let mut rng = ChaCha8Rng::seed_from_u64(SELF_TEST_SEED);
        let mut idx: Vec<usize> = (0..d).collect();
        let mut y = vec![0.0; d];
        for _ in 0..SELF_TEST_POINTS {
            let x: Vec<f64> = (0..d).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
            let hx = self.eval(&x);
            let tol = SELF_TEST_TOL * (1.0 + hx.abs());
            if self.claims.symmetric && d > 1 {
                for _ in 0..SELF_TEST_PERMUTATIONS {
                    idx.shuffle(&mut rng);
                    for (slot, &i) in y.iter_mut().zip(&idx) {
                        *slot = x[i];
                    }
                    if (self.eval(&y) - hx).abs() > tol {
                        return Err(Error::KernelClaim { name: self.name.clone(), claim: "symmetry" });
                    }
                }
            }
            if self.claims.even_each_coordinate {
                for k in 0..d {
                    y.copy_from_slice(&x);
                    y[k] = -y[k];
                    if (self.eval(&y) - hx).abs() > tol {
                        return Err(Error::KernelClaim { name: self.name.clone(), claim: "evenness" });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Absolute moment `m_p = E|N(0,1)|^p`.
pub fn abs_moment(p: f64) -> f64 {
    if p == p.trunc() && (0.0..=340.0).contains(&p) {
        let k = p as u32;
        if k.is_multiple_of(2) {
            // (p − 1)!!
            (1..k).step_by(2).map(f64::from).product()
        } else {
            // √(2/π) · (p − 1)!!
            (2.0 / PI).sqrt() * (2..k).step_by(2).map(f64::from).product::<f64>()
        }
    } else {
        2f64.powf(p / 2.0) * libm::tgamma((p + 1.0) / 2.0) / PI.sqrt()
    }
}

fn power_fn(exponent: f64) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
    if exponent == exponent.trunc() && exponent.abs() < 64.0 {
        let k = exponent as i32;
        Arc::new(move |v: f64| v.abs().powi(k))
    } else {
        Arc::new(move |v: f64| v.abs().powf(exponent))
    }
}

fn smoothness_of_power(r: f64) -> Smoothness {
    if r > 1.0 {
        Smoothness::C1
    } else if r == 1.0 {
        Smoothness::C1Piecewise
    } else {
        Smoothness::C0
    }
}

/// ½(|x − y| + |x + y|): the Gini kernel made even in each coordinate.
pub fn gini_even() -> Kernel {
    let k = Kernel::new(
        "gini_even",
        2,
        Arc::new(|x: &[f64]| 0.5 * ((x[0] - x[1]).abs() + (x[0] + x[1]).abs())),
        KernelClaims {
            symmetric: true,
            even_each_coordinate: true,
            growth_degree: 1.0,
            smoothness: Smoothness::C1Piecewise,
            homogeneity: Some(1.0),
        },
    )
    .expect("built-in kernel passes its self-test");
    let m1 = abs_moment(1.0);
    k.with_closed_form_rho(Arc::new(move |s: &[f64]| m1 * (s[0] * s[0] + s[1] * s[1]).sqrt()))
}

/// ½(|x − y|^{2p} + |x + y|^{2p}), p > 1.
pub fn lp_power(p: f64) -> Result<Kernel> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::BadParam(format!("lp_power needs p > 1, got {p}")));
    }
    let pow = power_fn(2.0 * p);
    let k = Kernel::new(
        format!("lp_power(p={p})"),
        2,
        Arc::new(move |x: &[f64]| 0.5 * (pow(x[0] - x[1]) + pow(x[0] + x[1]))),
        KernelClaims {
            symmetric: true,
            even_each_coordinate: true,
            growth_degree: 2.0 * p,
            smoothness: Smoothness::C1,
            homogeneity: Some(2.0 * p),
        },
    )?;
    let m2p = abs_moment(2.0 * p);
    Ok(k.with_closed_form_rho(Arc::new(move |s: &[f64]| m2p * (s[0] * s[0] + s[1] * s[1]).powf(p))))
}

/// x² + y².
pub fn sum_of_squares() -> Kernel {
    Kernel::new(
        "sum_of_squares",
        2,
        Arc::new(|x: &[f64]| x[0] * x[0] + x[1] * x[1]),
        KernelClaims {
            symmetric: true,
            even_each_coordinate: true,
            growth_degree: 2.0,
            smoothness: Smoothness::C1,
            homogeneity: Some(2.0),
        },
    )
    .expect("built-in kernel passes its self-test")
    .with_closed_form_rho(Arc::new(|s: &[f64]| s[0] * s[0] + s[1] * s[1]))
}

/// |x|^r + |y|^r, r > 0.
pub fn abs_power(r: f64) -> Result<Kernel> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::BadParam(format!("abs_power needs r > 0, got {r}")));
    }
    let pow = power_fn(r);
    let pow2 = pow.clone();
    let k = Kernel::new(
        format!("abs_power(r={r})"),
        2,
        Arc::new(move |x: &[f64]| pow(x[0]) + pow(x[1])),
        KernelClaims {
            symmetric: true,
            even_each_coordinate: true,
            growth_degree: r,
            smoothness: smoothness_of_power(r),
            homogeneity: Some(r),
        },
    )?;
    let mr = abs_moment(r);
    Ok(k.with_closed_form_rho(Arc::new(move |s: &[f64]| mr * (pow2(s[0]) + pow2(s[1])))))
}

/// |x y|^r, r > 0.
pub fn product_power(r: f64) -> Result<Kernel> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::BadParam(format!("product_power needs r > 0, got {r}")));
    }
    let pow = power_fn(r);
    let pow2 = pow.clone();
    let k = Kernel::new(
        format!("product_power(r={r})"),
        2,
        Arc::new(move |x: &[f64]| pow(x[0] * x[1])),
        KernelClaims {
            symmetric: true,
            even_each_coordinate: true,
            growth_degree: 2.0 * r,
            smoothness: smoothness_of_power(r),
            homogeneity: Some(2.0 * r),
        },
    )?;
    let mr = abs_moment(r);
    Ok(k.with_closed_form_rho(Arc::new(move |s: &[f64]| mr * mr * pow2(s[0] * s[1]))))
}

/// A built-in kernel addressed by name, as it appears in configuration files
/// (`kernel = "lp_power"`, `p = 2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(rename = "kernel")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

impl KernelSpec {
    pub fn named(name: &str) -> Self {
        Self { name: name.to_string(), p: None, r: None }
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = Some(p);
        self
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 5] = ["gini_even", "lp_power", "sum_of_squares", "abs_power", "product_power"];

pub fn builtin(spec: &KernelSpec) -> Result<Kernel> {
    let need = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| Error::BadParam(format!("kernel `{}` needs parameter `{what}`", spec.name)))
    };
    match spec.name.as_str() {
        "gini_even" => Ok(gini_even()),
        "lp_power" => lp_power(need(spec.p, "p")?),
        "sum_of_squares" => Ok(sum_of_squares()),
        "abs_power" => abs_power(need(spec.r, "r")?),
        "product_power" => product_power(need(spec.r, "r")?),
        other => Err(Error::UnknownKernel(other.to_string())),
    }
}

/// All k-subsets of 0..n in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// One distinct term `H(x_pivot, x_A) H(x_pivot, x_B)` of the symmetrized G₁.
#[derive(Debug, Clone)]
struct SplitTerm {
    pivot: usize,
    left: Vec<usize>,
    right: Vec<usize>,
}

fn check_variance_ready(h: &Kernel) -> Result<()> {
    if !h.is_symmetric() {
        return Err(Error::BadParam(format!("kernel `{}` must be symmetric", h.name())));
    }
    if h.order() > MAX_KERNEL_ORDER {
        return Err(Error::BadParam(format!("kernel order {} exceeds the cap {MAX_KERNEL_ORDER}", h.order())));
    }
    Ok(())
}

/// The symmetrization G̃₁ of `G₁(x) = H(x₁, x₂, …, x_d) H(x₁, x_{d+1}, …, x_{2d−1})`.
///
/// Because H is symmetric, a permutation only matters through which argument
/// is shared and how the remaining 2d − 2 split into two blocks, so the
/// (2d − 1)! average collapses to an average over those distinct splits.
pub fn make_g1(h: &Kernel) -> Result<Kernel> {
    check_variance_ready(h)?;
    let d = h.order();
    let order = 2 * d - 1;
    let mut terms = Vec::new();
    for pivot in 0..order {
        let rest: Vec<usize> = (0..order).filter(|&i| i != pivot).collect();
        if d == 1 {
            terms.push(SplitTerm { pivot, left: vec![], right: vec![] });
            continue;
        }
        // fix rest[0] in the left block so each unordered split appears once
        for tail in combinations(rest.len() - 1, d - 2) {
            let mut left = vec![rest[0]];
            left.extend(tail.iter().map(|&i| rest[i + 1]));
            let right: Vec<usize> = rest.iter().copied().filter(|i| !left.contains(i)).collect();
            terms.push(SplitTerm { pivot, left, right });
        }
    }
    let inner = h.clone();
    let scale = 1.0 / terms.len() as f64;
    let eval: EvalFn = Arc::new(move |x: &[f64]| {
        let mut a = [0.0f64; MAX_KERNEL_ORDER];
        let mut b = [0.0f64; MAX_KERNEL_ORDER];
        let mut total = 0.0;
        for term in &terms {
            a[0] = x[term.pivot];
            b[0] = x[term.pivot];
            for (k, &i) in term.left.iter().enumerate() {
                a[k + 1] = x[i];
            }
            for (k, &i) in term.right.iter().enumerate() {
                b[k + 1] = x[i];
            }
            total += inner.eval(&a[..d]) * inner.eval(&b[..d]);
        }
        total * scale
    });
    let c = h.claims();
    Kernel::new(
        format!("g1[{}]", h.name()),
        order,
        eval,
        KernelClaims {
            symmetric: true,
            even_each_coordinate: c.even_each_coordinate,
            growth_degree: 2.0 * c.growth_degree,
            smoothness: c.smoothness,
            homogeneity: c.homogeneity.map(|r| 2.0 * r),
        },
    )
}

/// G̃₂(x; y): `G₂(x; y) = H(x₁, y₁, …, y_{d−1}) H(x₂, y_d, …, y_{2d−2})`
/// averaged over all permutations of the y arguments.
#[derive(Clone)]
pub struct G2Kernel {
    inner: Kernel,
    splits: Vec<(Vec<usize>, Vec<usize>)>,
}

impl fmt::Debug for G2Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("G2Kernel").field("inner", &self.inner.name()).field("splits", &self.splits.len()).finish()
    }
}

impl G2Kernel {
    /// Order of the inner kernel H.
    pub fn inner_order(&self) -> usize {
        self.inner.order()
    }

    /// Number of y arguments, 2d − 2.
    pub fn y_len(&self) -> usize {
        2 * self.inner.order() - 2
    }

    pub fn eval(&self, x: [f64; 2], y: &[f64]) -> f64 {
        let d = self.inner.order();
        debug_assert_eq!(y.len(), 2 * d - 2);
        let mut a = [0.0f64; MAX_KERNEL_ORDER];
        let mut b = [0.0f64; MAX_KERNEL_ORDER];
        a[0] = x[0];
        b[0] = x[1];
        let mut total = 0.0;
        for (left, right) in &self.splits {
            for (k, &i) in left.iter().enumerate() {
                a[k + 1] = y[i];
            }
            for (k, &i) in right.iter().enumerate() {
                b[k + 1] = y[i];
            }
            total += self.inner.eval(&a[..d]) * self.inner.eval(&b[..d]);
        }
        total / self.splits.len() as f64
    }
}

/// Build G̃₂ by averaging over which d − 1 of the y's accompany x₁.
pub fn make_g2(h: &Kernel) -> Result<G2Kernel> {
    check_variance_ready(h)?;
    let d = h.order();
    let ylen = 2 * d - 2;
    let splits = combinations(ylen, d - 1)
        .into_iter()
        .map(|left| {
            let right = (0..ylen).filter(|i| !left.contains(i)).collect();
            (left, right)
        })
        .collect();
    Ok(G2Kernel { inner: h.clone(), splits })
}
