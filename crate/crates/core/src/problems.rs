//! Synthetic problems with exact gradients and their stochastic oracles.
//!
//! Three oracle shapes are supported:
//!
//! * [`StochasticProblem`]: `min f(x)` with sampled gradients `grad f(x; xi)`.
//! * [`CompositionalProblem`]: `min f(g(x))` with sampled `g`, `Jg` and `grad f`.
//! * [`FiniteSumProblem`]: `min (1/n) sum_i f_i(x)` with per-component gradients.
//!
//! Noise is additive and independent of the query point, and every
//! [`SampleToken`] freezes the realised noise. Evaluating the same token at two
//! points therefore gives gradients whose difference is exactly the noiseless
//! difference, which is what the two-point STORM corrections rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian, DenseMatrix, DenseVector, RngStream};

/// Frozen randomness for one stochastic gradient query.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleToken {
    /// Additive noise vector added to the exact gradient.
    Noise(DenseVector),
    /// A single component index of a finite sum (0-based).
    Component(usize),
}

/// Problem constants, as far as they are known for the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    pub name: String,
    pub dim: usize,
    /// Mean-square smoothness constant of the sampled gradients.
    pub smoothness: f64,
    /// Per-coordinate noise standard deviation (0 for exact oracles).
    pub sigma: f64,
    /// Bound on `E||grad f(x; xi) - grad f(x)||^2`, when meaningful.
    pub variance_bound: Option<f64>,
    /// `f(x_1) - inf f`, or an upper bound on it.
    pub delta_f: f64,
    /// Mean-square Lipschitz constant of sampled values (compositional only).
    pub value_lipschitz: Option<f64>,
    /// Number of components (finite sums only).
    pub components: Option<usize>,
}

/// Anything with a value and an exact gradient.
pub trait Objective {
    fn dim(&self) -> usize;
    fn objective(&self, x: &DenseVector) -> Result<f64>;
    fn true_grad(&self, x: &DenseVector) -> Result<DenseVector>;
}

pub trait StochasticProblem: Objective + Send + Sync {
    fn meta(&self) -> &ProblemMeta;
    fn initial_point(&self) -> DenseVector;
    fn draw(&self, rng: &mut RngStream) -> SampleToken;
    /// Sampled gradient at `x`; a pure function of `(token, x)`.
    fn grad_at(&self, token: &SampleToken, x: &DenseVector) -> Result<DenseVector>;
}

/// Inner-function sample `zeta`: frozen noise for `g(x; zeta)` and `Jg(x; zeta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSample {
    pub value_noise: DenseVector,
    pub jacobian_noise: DenseMatrix,
}

/// Outer-function sample `xi`: frozen noise for `grad f(u; xi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterSample {
    pub noise: DenseVector,
}

pub trait CompositionalProblem: Objective + Send + Sync {
    fn meta(&self) -> &ProblemMeta;
    fn initial_point(&self) -> DenseVector;
    fn inner_dim(&self) -> usize;
    /// Radius of the ball the iterates must stay in, if any.
    fn domain_radius(&self) -> Option<f64>;
    fn draw_inner(&self, rng: &mut RngStream) -> InnerSample;
    fn draw_outer(&self, rng: &mut RngStream) -> OuterSample;
    fn inner_true(&self, x: &DenseVector) -> Result<DenseVector>;
    fn inner_value(&self, sample: &InnerSample, x: &DenseVector) -> Result<DenseVector>;
    /// Jacobian of `g`, stored `inner_dim x dim`.
    fn inner_jacobian(&self, sample: &InnerSample, x: &DenseVector) -> Result<DenseMatrix>;
    fn outer_grad(&self, sample: &OuterSample, u: &DenseVector) -> Result<DenseVector>;
}

pub trait FiniteSumProblem: Objective + Send + Sync {
    fn meta(&self) -> &ProblemMeta;
    fn initial_point(&self) -> DenseVector;
    fn n(&self) -> usize;
    /// Gradient of component `i` (0-based).
    fn component_grad(&self, i: usize, x: &DenseVector) -> Result<DenseVector>;

    /// Exact average of all component gradients.
    fn full_grad(&self, x: &DenseVector) -> Result<DenseVector> {
        let n = self.n();
        let mut acc = DenseVector::zeros(self.dim());
        for i in 0..n {
            acc.add_scaled(1.0, &self.component_grad(i, x)?)?;
        }
        Ok(acc.scale(1.0 / n as f64))
    }
}

fn check_point(dim: usize, x: &DenseVector) -> Result<()> {
    if x.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: x.dim(),
        });
    }
    Ok(())
}

fn noise_of(token: &SampleToken) -> Result<&DenseVector> {
    match token {
        SampleToken::Noise(v) => Ok(v),
        SampleToken::Component(_) => Err(Error::invalid(
            "token",
            "component token passed to an additive-noise oracle",
        )),
    }
}

/// Random orthonormal matrix from Gram-Schmidt on a Gaussian matrix.
fn random_orthonormal(rng: &mut RngStream, dim: usize) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        for q in &cols {
            let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= proj * qi;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    DenseMatrix::from_fn(dim, dim, |i, j| cols[j][i])
}

// ---------------------------------------------------------------------------
// Noisy quadratic
// ---------------------------------------------------------------------------

/// `f(x) = 1/2 x^T A x + b^T x` with `A = Q diag(lambda) Q^T`.
#[derive(Debug, Clone)]
pub struct NoisyQuadratic {
    a: DenseMatrix,
    basis: DenseMatrix,
    spectrum: Vec<f64>,
    b: DenseVector,
    sigma: f64,
    x0: DenseVector,
    meta: ProblemMeta,
}

/// Quadratic with spectrum spread linearly over `[mu, l]`, a random rotation,
/// a random linear term and additive `N(0, sigma^2 I)` oracle noise.
pub fn make_noisy_quadratic(
    dim: usize,
    l: f64,
    mu: f64,
    sigma: f64,
    seed: u64,
) -> Result<NoisyQuadratic> {
    if dim == 0 {
        return Err(Error::invalid("dim", "must be at least 1"));
    }
    if !(mu > 0.0 && mu <= l && l.is_finite()) {
        return Err(Error::invalid(
            "spectrum",
            format!("need 0 < mu <= L, got mu = {mu}, L = {l}"),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("must be >= 0, got {sigma}")));
    }
    let root = RngStream::new(seed, "noisy_quadratic");
    let basis = random_orthonormal(&mut root.child("basis"), dim);
    let spectrum: Vec<f64> = (0..dim)
        .map(|i| {
            if dim == 1 {
                l
            } else {
                l - (l - mu) * i as f64 / (dim - 1) as f64
            }
        })
        .collect();
    let b = gaussian(&mut root.child("offset"), dim, 1.0);
    let mut problem = NoisyQuadratic::assemble(basis, spectrum, b, sigma);
    let direction = gaussian(&mut root.child("start"), dim, 1.0);
    let start = problem.minimizer().add(&direction)?;
    problem = problem.with_initial_point(start)?;
    Ok(problem)
}

impl NoisyQuadratic {
    fn assemble(basis: DenseMatrix, spectrum: Vec<f64>, b: DenseVector, sigma: f64) -> Self {
        let dim = spectrum.len();
        let a = DenseMatrix::from_fn(dim, dim, |i, j| {
            (0..dim)
                .map(|k| basis.get(i, k) * spectrum[k] * basis.get(j, k))
                .sum()
        });
        let l = spectrum.iter().cloned().fold(0.0, f64::max);
        let meta = ProblemMeta {
            name: "noisy_quadratic".into(),
            dim,
            smoothness: l,
            sigma,
            variance_bound: Some(sigma * sigma * dim as f64),
            delta_f: 0.0,
            value_lipschitz: None,
            components: None,
        };
        NoisyQuadratic {
            a,
            basis,
            spectrum,
            b,
            sigma,
            x0: DenseVector::zeros(dim),
            meta,
        }
    }

    /// Replaces the linear term `b`.
    pub fn with_offset(self, b: DenseVector) -> Result<Self> {
        check_point(self.spectrum.len(), &b)?;
        let x0 = self.x0.clone();
        NoisyQuadratic::assemble(self.basis, self.spectrum, b, self.sigma).with_initial_point(x0)
    }

    pub fn with_initial_point(mut self, x0: DenseVector) -> Result<Self> {
        check_point(self.spectrum.len(), &x0)?;
        let f_star = self.objective(&self.minimizer())?;
        self.meta.delta_f = self.objective(&x0)? - f_star;
        self.x0 = x0;
        Ok(self)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn offset(&self) -> &DenseVector {
        &self.b
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// `x* = -A^{-1} b`.
    pub fn minimizer(&self) -> DenseVector {
        let coords = self.basis.matvec_t(&self.b).expect("dims");
        let scaled = DenseVector::from_fn(coords.dim(), |k| -coords[k] / self.spectrum[k]);
        self.basis.matvec(&scaled).expect("dims")
    }
}

impl Objective for NoisyQuadratic {
    fn dim(&self) -> usize {
        self.spectrum.len()
    }

    fn objective(&self, x: &DenseVector) -> Result<f64> {
        let ax = self.a.matvec(x)?;
        Ok(0.5 * x.dot(&ax)? + self.b.dot(x)?)
    }

    fn true_grad(&self, x: &DenseVector) -> Result<DenseVector> {
        self.a.matvec(x)?.add(&self.b)
    }
}

impl StochasticProblem for NoisyQuadratic {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }

    fn initial_point(&self) -> DenseVector {
        self.x0.clone()
    }

    fn draw(&self, rng: &mut RngStream) -> SampleToken {
        SampleToken::Noise(gaussian(rng, self.dim(), self.sigma))
    }

    fn grad_at(&self, token: &SampleToken, x: &DenseVector) -> Result<DenseVector> {
        let noise = noise_of(token)?;
        self.true_grad(x)?.add(noise)
    }
}

// ---------------------------------------------------------------------------
// Smooth non-convex separable objective
// ---------------------------------------------------------------------------

pub const NONCONVEX_RIDGE: f64 = 1e-2;

/// `f(x) = sum_j c_j log(1 + x_j^2) + eps/2 ||x||^2`.
#[derive(Debug, Clone)]
pub struct NonconvexSmooth {
    coefficients: Vec<f64>,
    ridge: f64,
    sigma: f64,
    x0: DenseVector,
    meta: ProblemMeta,
}

pub fn make_nonconvex_smooth(dim: usize, sigma: f64, seed: u64) -> Result<NonconvexSmooth> {
    if dim == 0 {
        return Err(Error::invalid("dim", "must be at least 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("must be >= 0, got {sigma}")));
    }
    let root = RngStream::new(seed, "nonconvex_smooth");
    let mut coef_rng = root.child("coefficients");
    let coefficients: Vec<f64> = (0..dim).map(|_| coef_rng.uniform_in(0.5, 2.0)).collect();
    let mut start_rng = root.child("start");
    // Start outside the locally convex region |x_j| < 1/sqrt(3).
    let x0 = DenseVector::from_fn(dim, |_| {
        let magnitude = start_rng.uniform_in(1.0, 3.0);
        if start_rng.uniform() < 0.5 {
            -magnitude
        } else {
            magnitude
        }
    });
    NonconvexSmooth::new(coefficients, NONCONVEX_RIDGE, sigma)?.with_initial_point(x0)
}

impl NonconvexSmooth {
    pub fn new(coefficients: Vec<f64>, ridge: f64, sigma: f64) -> Result<Self> {
        if let Some((index, &value)) = coefficients.iter().enumerate().find(|(_, c)| **c <= 0.0) {
            return Err(Error::NonPositive { index, value });
        }
        if coefficients.is_empty() {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if ridge < 0.0 {
            return Err(Error::invalid("ridge", "must be >= 0"));
        }
        let dim = coefficients.len();
        let l = coefficients.iter().map(|c| 2.0 * c).fold(0.0, f64::max) + ridge;
        let meta = ProblemMeta {
            name: "nonconvex_smooth".into(),
            dim,
            smoothness: l,
            sigma,
            variance_bound: Some(sigma * sigma * dim as f64),
            delta_f: 0.0,
            value_lipschitz: None,
            components: None,
        };
        Ok(NonconvexSmooth {
            coefficients,
            ridge,
            sigma,
            x0: DenseVector::zeros(dim),
            meta,
        })
    }

    /// The minimum value is 0 at the origin, so `delta_f = f(x0)`.
    pub fn with_initial_point(mut self, x0: DenseVector) -> Result<Self> {
        check_point(self.coefficients.len(), &x0)?;
        self.meta.delta_f = self.objective(&x0)?;
        self.x0 = x0;
        Ok(self)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }
}

impl Objective for NonconvexSmooth {
    fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn objective(&self, x: &DenseVector) -> Result<f64> {
        check_point(self.dim(), x)?;
        Ok(self
            .coefficients
            .iter()
            .zip(x.iter())
            .map(|(c, xj)| c * (xj * xj).ln_1p() + 0.5 * self.ridge * xj * xj)
            .sum())
    }

    fn true_grad(&self, x: &DenseVector) -> Result<DenseVector> {
        check_point(self.dim(), x)?;
        Ok(DenseVector::from_fn(self.dim(), |j| {
            let xj = x[j];
            2.0 * self.coefficients[j] * xj / (1.0 + xj * xj) + self.ridge * xj
        }))
    }
}

impl StochasticProblem for NonconvexSmooth {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }

    fn initial_point(&self) -> DenseVector {
        self.x0.clone()
    }

    fn draw(&self, rng: &mut RngStream) -> SampleToken {
        SampleToken::Noise(gaussian(rng, self.dim(), self.sigma))
    }

    fn grad_at(&self, token: &SampleToken, x: &DenseVector) -> Result<DenseVector> {
        let noise = noise_of(token)?;
        self.true_grad(x)?.add(noise)
    }
}

// ---------------------------------------------------------------------------
// Robust regression finite sum
// ---------------------------------------------------------------------------

/// `l(r) = r^2 / (1 + r^2)`.
pub fn robust_loss(r: f64) -> f64 {
    let r2 = r * r;
    r2 / (1.0 + r2)
}

/// `l'(r) = 2r / (1 + r^2)^2`.
pub fn robust_loss_derivative(r: f64) -> f64 {
    let d = 1.0 + r * r;
    2.0 * r / (d * d)
}

/// `F(x) = (1/n) sum_i l(a_i^T x - b_i)` with the bounded non-convex loss `l`.
#[derive(Debug, Clone)]
pub struct RobustRegression {
    features: DenseMatrix,
    targets: Vec<f64>,
    x0: DenseVector,
    meta: ProblemMeta,
}

/// Synthetic robust regression: `a_i ~ N(0, I/d)`, `b_i = a_i^T w + 0.5 e_i`
/// with a hidden `w ~ N(0, I)`, and starting point `x_1 = 0`.
pub fn make_finite_sum(n: usize, dim: usize, seed: u64) -> Result<RobustRegression> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if dim == 0 {
        return Err(Error::invalid("dim", "must be at least 1"));
    }
    let root = RngStream::new(seed, "robust_regression");
    let features = DenseMatrix::gaussian(&mut root.child("features"), n, dim, 1.0 / (dim as f64).sqrt());
    let hidden = gaussian(&mut root.child("hidden"), dim, 1.0);
    let mut noise = root.child("noise");
    let clean = features.matvec(&hidden)?;
    let targets = (0..n).map(|i| clean[i] + 0.5 * noise.standard_normal()).collect();
    RobustRegression::new(features, targets, DenseVector::zeros(dim))
}

impl RobustRegression {
    pub fn new(features: DenseMatrix, targets: Vec<f64>, x0: DenseVector) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                actual: targets.len(),
            });
        }
        if features.rows() == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        check_point(features.cols(), &x0)?;
        // |l''| <= 2, so each component is 2||a_i||^2-smooth.
        let l = (0..features.rows())
            .map(|i| 2.0 * features.row(i).iter().map(|a| a * a).sum::<f64>())
            .fold(0.0, f64::max);
        let mut problem = RobustRegression {
            meta: ProblemMeta {
                name: "robust_regression".into(),
                dim: features.cols(),
                smoothness: l,
                sigma: 0.0,
                variance_bound: None,
                delta_f: 0.0,
                value_lipschitz: None,
                components: Some(features.rows()),
            },
            features,
            targets,
            x0,
        };
        // F >= 0, so F(x_1) bounds the initial gap.
        problem.meta.delta_f = problem.objective(&problem.x0)?;
        Ok(problem)
    }

    fn residual(&self, i: usize, x: &DenseVector) -> f64 {
        self.features
            .row(i)
            .iter()
            .zip(x.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            - self.targets[i]
    }
}

impl Objective for RobustRegression {
    fn dim(&self) -> usize {
        self.features.cols()
    }

    fn objective(&self, x: &DenseVector) -> Result<f64> {
        check_point(self.dim(), x)?;
        let n = self.targets.len();
        Ok((0..n).map(|i| robust_loss(self.residual(i, x))).sum::<f64>() / n as f64)
    }

    fn true_grad(&self, x: &DenseVector) -> Result<DenseVector> {
        self.full_grad(x)
    }
}

impl FiniteSumProblem for RobustRegression {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }

    fn initial_point(&self) -> DenseVector {
        self.x0.clone()
    }

    fn n(&self) -> usize {
        self.targets.len()
    }

    fn component_grad(&self, i: usize, x: &DenseVector) -> Result<DenseVector> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange { index: i, n: self.n() });
        }
        check_point(self.dim(), x)?;
        let slope = robust_loss_derivative(self.residual(i, x));
        Ok(DenseVector::new(
            self.features.row(i).iter().map(|a| slope * a).collect(),
        ))
    }
}

/// A finite sum is also a stochastic problem: a sample is a uniform component.
impl StochasticProblem for RobustRegression {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }

    fn initial_point(&self) -> DenseVector {
        self.x0.clone()
    }

    fn draw(&self, rng: &mut RngStream) -> SampleToken {
        SampleToken::Component(rng.index(self.n()))
    }

    fn grad_at(&self, token: &SampleToken, x: &DenseVector) -> Result<DenseVector> {
        match token {
            SampleToken::Component(i) => self.component_grad(*i, x),
            SampleToken::Noise(_) => Err(Error::invalid(
                "token",
                "noise token passed to a finite-sum oracle",
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Linear-quadratic composite
// ---------------------------------------------------------------------------

pub const COMPOSITE_RADIUS: f64 = 1e3;

/// `F(x) = f(g(x))` with `g(x) = Mx + c` and `f(u) = 1/2 ||u||^2`.
///
/// Sampled values and Jacobians carry independent additive noise (`zeta`), and
/// the outer gradient `u + noise` carries its own noise (`xi`).
#[derive(Debug, Clone)]
pub struct LinearQuadraticComposite {
    m: DenseMatrix,
    c: DenseVector,
    sigma: f64,
    stationary: DenseVector,
    x0: DenseVector,
    meta: ProblemMeta,
}

/// `M ~ N(0, 1/dim)` entries; `c = -M z` for a hidden `z`, so `F* = 0`.
pub fn make_compositional(
    dim: usize,
    mid_dim: usize,
    sigma: f64,
    seed: u64,
) -> Result<LinearQuadraticComposite> {
    if dim == 0 || mid_dim == 0 {
        return Err(Error::invalid("dim", "dims must be at least 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("must be >= 0, got {sigma}")));
    }
    let root = RngStream::new(seed, "linear_quadratic_composite");
    let m = DenseMatrix::gaussian(&mut root.child("map"), mid_dim, dim, 1.0 / (dim as f64).sqrt());
    let z = gaussian(&mut root.child("hidden"), dim, 1.0);
    let c = m.matvec(&z)?.scale(-1.0);
    let start = z.add(&gaussian(&mut root.child("start"), dim, 1.0))?;
    LinearQuadraticComposite::new(m, c, sigma, start).map(|mut p| {
        p.stationary = z;
        p
    })
}

impl LinearQuadraticComposite {
    pub fn new(m: DenseMatrix, c: DenseVector, sigma: f64, x0: DenseVector) -> Result<Self> {
        check_point(m.rows(), &c)?;
        check_point(m.cols(), &x0)?;
        let norm_sq = m.spectral_norm_sq();
        let outer_bound = norm_sq.sqrt() * COMPOSITE_RADIUS + c.norm();
        let (dim, mid) = (m.cols(), m.rows());
        let mut problem = LinearQuadraticComposite {
            meta: ProblemMeta {
                name: "linear_quadratic_composite".into(),
                dim,
                // grad f is 1-Lipschitz and Jg is constant.
                smoothness: 1.0,
                sigma,
                variance_bound: Some(sigma * sigma * (mid * dim).max(mid) as f64),
                delta_f: 0.0,
                // max of ||M||^2 (for g) and the squared Lipschitz constant of f
                // over the admissible ball.
                value_lipschitz: Some(norm_sq.max(outer_bound * outer_bound)),
                components: None,
            },
            stationary: DenseVector::zeros(dim),
            m,
            c,
            sigma,
            x0,
        };
        // F >= 0, so F(x_1) bounds the initial gap.
        problem.meta.delta_f = problem.objective(&problem.x0)?;
        Ok(problem)
    }

    pub fn with_initial_point(mut self, x0: DenseVector) -> Result<Self> {
        check_point(self.m.cols(), &x0)?;
        self.meta.delta_f = self.objective(&x0)?;
        self.x0 = x0;
        Ok(self)
    }

    pub fn map(&self) -> &DenseMatrix {
        &self.m
    }

    /// A point with `Mx + c = 0` (only meaningful for generated instances).
    pub fn stationary_point(&self) -> &DenseVector {
        &self.stationary
    }
}

impl Objective for LinearQuadraticComposite {
    fn dim(&self) -> usize {
        self.m.cols()
    }

    fn objective(&self, x: &DenseVector) -> Result<f64> {
        Ok(0.5 * self.inner_true(x)?.norm_sq())
    }

    fn true_grad(&self, x: &DenseVector) -> Result<DenseVector> {
        self.m.matvec_t(&self.inner_true(x)?)
    }
}

impl CompositionalProblem for LinearQuadraticComposite {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }

    fn initial_point(&self) -> DenseVector {
        self.x0.clone()
    }

    fn inner_dim(&self) -> usize {
        self.m.rows()
    }

    fn domain_radius(&self) -> Option<f64> {
        Some(COMPOSITE_RADIUS)
    }

    fn draw_inner(&self, rng: &mut RngStream) -> InnerSample {
        let value_noise = gaussian(rng, self.m.rows(), self.sigma);
        let jacobian_noise = DenseMatrix::gaussian(rng, self.m.rows(), self.m.cols(), self.sigma);
        InnerSample {
            value_noise,
            jacobian_noise,
        }
    }

    fn draw_outer(&self, rng: &mut RngStream) -> OuterSample {
        OuterSample {
            noise: gaussian(rng, self.m.rows(), self.sigma),
        }
    }

    fn inner_true(&self, x: &DenseVector) -> Result<DenseVector> {
        self.m.matvec(x)?.add(&self.c)
    }

    fn inner_value(&self, sample: &InnerSample, x: &DenseVector) -> Result<DenseVector> {
        self.inner_true(x)?.add(&sample.value_noise)
    }

    fn inner_jacobian(&self, sample: &InnerSample, x: &DenseVector) -> Result<DenseMatrix> {
        check_point(self.m.cols(), x)?;
        self.m.add(&sample.jacobian_noise)
    }

    fn outer_grad(&self, sample: &OuterSample, u: &DenseVector) -> Result<DenseVector> {
        u.add(&sample.noise)
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Gradient scale below which the absolute error is reported instead of the
/// relative one.
pub const GRAD_CHECK_FLOOR: f64 = 1e-12;

/// Worst coordinatewise error between central differences of the objective
/// and `true_grad`, relative to the gradient scale
/// `max(||grad||_inf, ||fd||_inf)`.
///
/// Normalizing by the scale of the whole gradient rather than by each
/// coordinate keeps near-zero coordinates from turning rounding noise into
/// large relative errors. When the scale is at most [`GRAD_CHECK_FLOOR`]
/// (a stationary point) the absolute error is returned.
pub fn grad_check<P: Objective + ?Sized>(problem: &P, x: &DenseVector, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("h", format!("must be > 0, got {h}")));
    }
    let analytic = problem.true_grad(x)?;
    let mut probe = x.clone().into_inner();
    let mut numeric = Vec::with_capacity(x.dim());
    for j in 0..x.dim() {
        let orig = probe[j];
        probe[j] = orig + h;
        let plus = problem.objective(&DenseVector::new(probe.clone()))?;
        probe[j] = orig - h;
        let minus = problem.objective(&DenseVector::new(probe.clone()))?;
        probe[j] = orig;
        numeric.push((plus - minus) / (2.0 * h));
    }
    let inf_norm = |v: &[f64]| v.iter().fold(0.0, |m: f64, c| m.max(c.abs()));
    let scale = inf_norm(analytic.as_slice()).max(inf_norm(&numeric));
    let worst = analytic
        .iter()
        .zip(&numeric)
        .fold(0.0, |m: f64, (a, n)| m.max((a - n).abs()));
    Ok(if scale <= GRAD_CHECK_FLOOR {
        worst
    } else {
        worst / scale
    })
}

/// Adapts closures into an [`Objective`], mainly for checks and tests.
pub struct FnObjective<F, G> {
    dim: usize,
    value: F,
    gradient: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&DenseVector) -> f64,
    G: Fn(&DenseVector) -> DenseVector,
{
    pub fn new(dim: usize, value: F, gradient: G) -> Self {
        FnObjective {
            dim,
            value,
            gradient,
        }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&DenseVector) -> f64,
    G: Fn(&DenseVector) -> DenseVector,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn objective(&self, x: &DenseVector) -> Result<f64> {
        check_point(self.dim, x)?;
        Ok((self.value)(x))
    }

    fn true_grad(&self, x: &DenseVector) -> Result<DenseVector> {
        check_point(self.dim, x)?;
        Ok((self.gradient)(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_point(rng: &mut RngStream, dim: usize, scale: f64) -> DenseVector {
        gaussian(rng, dim, scale)
    }

    #[test]
    fn scalar_identity_quadratic() {
        let p = make_noisy_quadratic(1, 1.0, 1.0, 0.0, 3)
            .unwrap()
            .with_offset(DenseVector::zeros(1))
            .unwrap();
        for x in [-2.0, 0.0, 0.5, 7.0] {
            let g = p.true_grad(&DenseVector::new(vec![x])).unwrap();
            assert!((g[0] - x).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn quadratic_rejects_bad_spectrum() {
        assert!(make_noisy_quadratic(3, 1.0, 2.0, 0.0, 1).is_err());
        assert!(make_noisy_quadratic(3, 1.0, 0.0, 0.0, 1).is_err());
        assert!(make_noisy_quadratic(3, 1.0, 0.5, -1.0, 1).is_err());
    }

    #[test]
    fn quadratic_spectrum_within_bounds() {
        let p = make_noisy_quadratic(6, 4.0, 0.5, 1.0, 1).unwrap();
        assert!(p.spectrum().iter().all(|&l| (0.5..=4.0).contains(&l)));
        let g = p.true_grad(&p.minimizer()).unwrap();
        assert!(g.norm() < 1e-12);
        assert!(p.meta().delta_f > 0.0);
    }

    #[test]
    fn same_token_difference_is_noiseless() {
        let p = make_noisy_quadratic(5, 4.0, 0.5, 2.0, 8).unwrap();
        let mut rng = RngStream::new(1, "tok");
        let x = random_point(&mut rng, 5, 1.0);
        let y = random_point(&mut rng, 5, 1.0);
        let token = p.draw(&mut rng);
        let diff = p.grad_at(&token, &x).unwrap().sub(&p.grad_at(&token, &y).unwrap()).unwrap();
        let exact = p.matrix().matvec(&x.sub(&y).unwrap()).unwrap();
        for j in 0..5 {
            assert!((diff[j] - exact[j]).abs() < 1e-12);
        }
        // Same-token purity.
        assert_eq!(p.grad_at(&token, &x).unwrap(), p.grad_at(&token, &x).unwrap());
    }

    #[test]
    fn quadratic_oracle_unbiased() {
        let p = make_noisy_quadratic(4, 4.0, 0.5, 1.0, 2).unwrap();
        let x = p.initial_point();
        let truth = p.true_grad(&x).unwrap();
        let mut rng = RngStream::new(7, "mc");
        let samples = 10_000;
        let mut acc = DenseVector::zeros(4);
        for _ in 0..samples {
            let t = p.draw(&mut rng);
            acc.add_scaled(1.0, &p.grad_at(&t, &x).unwrap()).unwrap();
        }
        let mean = acc.scale(1.0 / samples as f64);
        for j in 0..4 {
            assert!((mean[j] - truth[j]).abs() <= 3.0 * 1.0 / 100.0);
        }
    }

    #[test]
    fn nonconvex_stationary_origin_and_scalar_case() {
        let p = make_nonconvex_smooth(7, 0.5, 4).unwrap();
        assert_eq!(p.true_grad(&DenseVector::zeros(7)).unwrap(), DenseVector::zeros(7));
        let scalar = NonconvexSmooth::new(vec![1.0], 0.0, 0.0).unwrap();
        let g = scalar.true_grad(&DenseVector::new(vec![1.0])).unwrap();
        assert_eq!(g[0], 1.0);
        let g = scalar.true_grad(&DenseVector::new(vec![3.0])).unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15);
        let l = p.meta().smoothness;
        let expect = p.coefficients().iter().map(|c| 2.0 * c).fold(0.0, f64::max) + NONCONVEX_RIDGE;
        assert_eq!(l, expect);
    }

    #[test]
    fn nonconvex_rejects_nonpositive_coefficients() {
        assert!(matches!(
            NonconvexSmooth::new(vec![1.0, 0.0], 0.0, 0.0),
            Err(Error::NonPositive { index: 1, .. })
        ));
    }

    #[test]
    fn nonconvex_grad_check() {
        let p = make_nonconvex_smooth(10, 1.0, 5).unwrap();
        let mut rng = RngStream::new(12, "pts");
        for _ in 0..100 {
            let x = random_point(&mut rng, 10, 2.0);
            let err = grad_check(&p, &x, 1e-5).unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn grad_check_affine_and_quadratic() {
        let lin = FnObjective::new(
            3,
            |x: &DenseVector| 2.0 * x[0] - 3.0 * x[1] + 0.5 * x[2] + 1.0,
            |_: &DenseVector| DenseVector::new(vec![2.0, -3.0, 0.5]),
        );
        let x = DenseVector::new(vec![0.25, -0.5, 2.0]);
        // Differences of an affine function are exact up to cancellation
        // error, which grows like eps / h.
        for h in [0.5, 1.0] {
            assert!(grad_check(&lin, &x, h).unwrap() <= 1e-12);
        }
        assert!(grad_check(&lin, &x, 1e-6).unwrap() <= 1e-8);
        let quad = make_noisy_quadratic(5, 2.0, 1.0, 0.0, 9).unwrap();
        let err = grad_check(&quad, &quad.initial_point(), 1e-4).unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn grad_check_flags_wrong_gradients_and_stationary_points() {
        let wrong = FnObjective::new(
            2,
            |x: &DenseVector| x[0] * x[0] + x[1],
            |x: &DenseVector| DenseVector::new(vec![2.0 * x[0], 1.01]),
        );
        let err = grad_check(&wrong, &DenseVector::new(vec![0.1, 0.0]), 1e-5).unwrap();
        assert!(err > 1e-3, "{err}");
        // At a stationary point the absolute error is reported.
        let bowl = FnObjective::new(
            1,
            |x: &DenseVector| x[0] * x[0],
            |x: &DenseVector| DenseVector::new(vec![2.0 * x[0]]),
        );
        assert!(grad_check(&bowl, &DenseVector::zeros(1), 1e-3).unwrap() <= 1e-12);
    }

    #[test]
    fn grad_check_rejects_bad_step() {
        let p = make_nonconvex_smooth(2, 0.0, 1).unwrap();
        assert!(grad_check(&p, &DenseVector::zeros(2), 0.0).is_err());
    }

    #[test]
    fn robust_loss_derivative_matches_finite_differences() {
        let h = 1e-5;
        for k in -40..=40 {
            let r = k as f64 * 0.1 + 0.03;
            let fd = (robust_loss(r + h) - robust_loss(r - h)) / (2.0 * h);
            let an = robust_loss_derivative(r);
            assert!((fd - an).abs() / an.abs().max(fd.abs()) < 1e-6, "r = {r}");
        }
    }

    #[test]
    fn finite_sum_full_grad_is_component_mean() {
        let p = make_finite_sum(17, 6, 3).unwrap();
        let mut rng = RngStream::new(4, "pts");
        for _ in 0..20 {
            let x = random_point(&mut rng, 6, 1.5);
            let full = p.full_grad(&x).unwrap();
            let mut manual = vec![0.0; 6];
            for i in 0..17 {
                let g = p.component_grad(i, &x).unwrap();
                for j in 0..6 {
                    manual[j] += g[j];
                }
            }
            for j in 0..6 {
                assert!((full[j] - manual[j] / 17.0).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn finite_sum_singleton() {
        let p = make_finite_sum(1, 4, 1).unwrap();
        let x = DenseVector::new(vec![0.3, -0.2, 1.0, 0.0]);
        assert_eq!(p.full_grad(&x).unwrap(), p.component_grad(0, &x).unwrap());
        assert!(matches!(
            p.component_grad(1, &x),
            Err(Error::IndexOutOfRange { index: 1, n: 1 })
        ));
    }

    #[test]
    fn composite_hand_chain_rule() {
        let m = DenseMatrix::from_rows(vec![vec![2.0]]).unwrap();
        let p = LinearQuadraticComposite::new(
            m,
            DenseVector::zeros(1),
            0.0,
            DenseVector::new(vec![1.0]),
        )
        .unwrap();
        assert_eq!(p.true_grad(&DenseVector::new(vec![1.0])).unwrap()[0], 4.0);
    }

    #[test]
    fn composite_stationary_point() {
        let p = make_compositional(6, 3, 0.0, 2).unwrap();
        let g = p.true_grad(p.stationary_point()).unwrap();
        assert!(g.norm() < 1e-12);
        let inner = p.inner_true(p.stationary_point()).unwrap();
        assert!(inner.norm() < 1e-12);
    }
}
