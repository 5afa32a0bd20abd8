//! Loss models, the one-step adaptation operator, the constraint set, and
//! curvature-constant bookkeeping.
//!
//! The flagship model is the regularized quadratic
//! `l(w, (x, y)) = (w.x - y)^2 + reg * |w|^2`, which is strongly convex with
//! a constant Hessian. The abstract [`LossModel`] interface admits other
//! twice-differentiable losses; only the quadratic ships with tests.

use crate::error::{Error, Result};
use crate::rng::{purpose, stream};
use crate::task_model::{sample_point, Sample, TaskSpec};
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Twice-differentiable per-sample loss.
///
/// The evaluation methods assume `w` and `z` share the model dimension;
/// batch-level entry points validate once up front.
pub trait LossModel: Sync {
    fn value(&self, w: &ArrayView1<f64>, z: &Sample) -> f64;
    fn gradient(&self, w: &ArrayView1<f64>, z: &Sample) -> Array1<f64>;
    fn hessian(&self, w: &ArrayView1<f64>, z: &Sample) -> Array2<f64>;

    /// Hessian-vector product; override when the Hessian has structure worth
    /// exploiting.
    fn hessian_vec(&self, w: &ArrayView1<f64>, z: &Sample, v: &ArrayView1<f64>) -> Array1<f64> {
        self.hessian(w, z).dot(v)
    }

    /// Strong convexity modulus, exact for the model.
    fn strong_convexity(&self) -> f64;

    /// Smoothness bound over the feature envelope `{ |x| <= x_max }`.
    fn smoothness_bound(&self, x_max: f64) -> f64;

    /// Lipschitz constant of the Hessian in `w`.
    fn hessian_lipschitz(&self) -> f64;
}

/// `(w.x - y)^2 + reg * |w|^2`.
#[derive(Debug, Clone, Copy)]
pub struct RegularizedQuadratic {
    pub reg: f64,
}

impl RegularizedQuadratic {
    pub fn new(reg: f64) -> Result<Self> {
        if !(reg >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "regularization must be nonnegative, got {reg}"
            )));
        }
        Ok(RegularizedQuadratic { reg })
    }
}

impl LossModel for RegularizedQuadratic {
    fn value(&self, w: &ArrayView1<f64>, z: &Sample) -> f64 {
        let resid = w.dot(&z.x) - z.y;
        resid * resid + self.reg * w.dot(w)
    }

    fn gradient(&self, w: &ArrayView1<f64>, z: &Sample) -> Array1<f64> {
        let resid = w.dot(&z.x) - z.y;
        let mut g = &z.x * (2.0 * resid);
        g.scaled_add(2.0 * self.reg, w);
        g
    }

    fn hessian(&self, _w: &ArrayView1<f64>, z: &Sample) -> Array2<f64> {
        let d = z.x.len();
        let mut h = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                h[[i, j]] = 2.0 * z.x[i] * z.x[j];
            }
            h[[i, i]] += 2.0 * self.reg;
        }
        h
    }

    fn hessian_vec(&self, _w: &ArrayView1<f64>, z: &Sample, v: &ArrayView1<f64>) -> Array1<f64> {
        let xv = z.x.dot(v);
        let mut out = &z.x * (2.0 * xv);
        out.scaled_add(2.0 * self.reg, v);
        out
    }

    fn strong_convexity(&self) -> f64 {
        2.0 * self.reg
    }

    fn smoothness_bound(&self, x_max: f64) -> f64 {
        2.0 * (x_max * x_max + self.reg)
    }

    fn hessian_lipschitz(&self) -> f64 {
        0.0
    }
}

fn check_dims(w: &ArrayView1<f64>, z: &Sample) -> Result<()> {
    if w.len() != z.x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: z.x.len(),
        });
    }
    Ok(())
}

/// Checked quadratic loss value.
pub fn quad_value(w: &ArrayView1<f64>, z: &Sample, reg: f64) -> Result<f64> {
    check_dims(w, z)?;
    Ok(RegularizedQuadratic::new(reg)?.value(w, z))
}

/// Checked quadratic loss gradient `2(w.x - y)x + 2 reg w`.
pub fn quad_gradient(w: &ArrayView1<f64>, z: &Sample, reg: f64) -> Result<Array1<f64>> {
    check_dims(w, z)?;
    Ok(RegularizedQuadratic::new(reg)?.gradient(w, z))
}

/// Checked quadratic loss Hessian `2 x x^T + 2 reg I`.
pub fn quad_hessian(w: &ArrayView1<f64>, z: &Sample, reg: f64) -> Result<Array2<f64>> {
    check_dims(w, z)?;
    Ok(RegularizedQuadratic::new(reg)?.hessian(w, z))
}

/// Mean loss value over a batch.
pub fn batch_value(loss: &dyn LossModel, w: &ArrayView1<f64>, batch: &[Sample]) -> f64 {
    batch.iter().map(|z| loss.value(w, z)).sum::<f64>() / batch.len() as f64
}

/// Mean loss gradient over a batch.
pub fn batch_gradient(loss: &dyn LossModel, w: &ArrayView1<f64>, batch: &[Sample]) -> Array1<f64> {
    let mut g = Array1::zeros(w.len());
    for z in batch {
        g += &loss.gradient(w, z);
    }
    g / batch.len() as f64
}

/// Mean Hessian-vector product over a batch.
pub fn batch_hessian_vec(
    loss: &dyn LossModel,
    w: &ArrayView1<f64>,
    batch: &[Sample],
    v: &ArrayView1<f64>,
) -> Array1<f64> {
    let mut out = Array1::zeros(w.len());
    for z in batch {
        out += &loss.hessian_vec(w, z, v);
    }
    out / batch.len() as f64
}

/// One stochastic-gradient adaptation step `w - alpha * mean gradient`.
///
/// The adapted point is evaluated directly and is deliberately not projected
/// back onto the constraint set.
pub fn adapt(
    w: &ArrayView1<f64>,
    batch: &[Sample],
    alpha: f64,
    loss: &dyn LossModel,
) -> Result<Array1<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for z in batch {
        check_dims(w, z)?;
    }
    let mut out = w.to_owned();
    out.scaled_add(-alpha, &batch_gradient(loss, w, batch));
    Ok(out)
}

/// Closed Euclidean ball `{ w : |w - center| <= radius }`.
///
/// An infinite radius is the sentinel for an unconstrained problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub radius: f64,
    pub center: Array1<f64>,
}

impl ConstraintSet {
    pub fn ball(radius: f64, dim: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "constraint radius must be positive, got {radius}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidDimension { dim: 0 });
        }
        Ok(ConstraintSet {
            radius,
            center: Array1::zeros(dim),
        })
    }

    pub fn unconstrained(dim: usize) -> Result<Self> {
        Self::ball(f64::INFINITY, dim)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, w: &ArrayView1<f64>, tol: f64) -> bool {
        if self.radius.is_infinite() {
            return true;
        }
        let diff = w - &self.center;
        diff.dot(&diff).sqrt() <= self.radius + tol
    }
}

/// Euclidean projection onto the ball: radial scaling of the excess.
pub fn project(w: &ArrayView1<f64>, set: &ConstraintSet) -> Array1<f64> {
    debug_assert_eq!(w.len(), set.dim());
    if set.radius.is_infinite() {
        return w.to_owned();
    }
    let diff = w - &set.center;
    let norm = diff.dot(&diff).sqrt();
    if norm <= set.radius {
        w.to_owned()
    } else {
        &set.center + &(diff * (set.radius / norm))
    }
}

/// The curvature quintuple governing admissibility checks and bounds:
/// strong convexity, smoothness, gradient bound, Hessian Lipschitz constant,
/// and value bound, all over the constraint set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConstants {
    pub mu: f64,
    pub smooth: f64,
    pub grad_bound: f64,
    pub hess_lip: f64,
    pub value_bound: f64,
}

impl LossConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::InvalidConfig("mu must be positive".into()));
        }
        if self.mu > self.smooth {
            return Err(Error::InvalidConfig(
                "strong convexity cannot exceed smoothness".into(),
            ));
        }
        if !(self.grad_bound > 0.0) || !(self.value_bound > 0.0) || !(self.hess_lip >= 0.0) {
            return Err(Error::InvalidConfig(
                "gradient/value bounds must be positive, Hessian Lipschitz nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Smoothness of the post-adaptation loss, `4L + 2 alpha rho G`.
    pub fn meta_smoothness(&self, alpha: f64) -> f64 {
        4.0 * self.smooth + 2.0 * alpha * self.hess_lip * self.grad_bound
    }

    /// Strong convexity of the post-adaptation loss at admissible inner
    /// stepsizes, `mu / 8`.
    pub fn meta_strong_convexity(&self) -> f64 {
        self.mu / 8.0
    }

    /// Per-round contraction modulus of a coupled meta-gradient step:
    /// `2 mu (2L + rho alpha G) / (16 (2L + rho alpha G) + mu)`.
    pub fn coupling_contraction(&self, alpha: f64) -> f64 {
        let half_smooth = 2.0 * self.smooth + self.hess_lip * alpha * self.grad_bound;
        2.0 * self.mu * half_smooth / (16.0 * half_smooth + self.mu)
    }
}

/// Largest inner stepsize under which the post-adaptation loss keeps its
/// curvature envelope: `min(1/(2L), mu/(8 rho G))`.
pub fn admissible_alpha(c: &LossConstants) -> f64 {
    let smooth_cap = 1.0 / (2.0 * c.smooth);
    if c.hess_lip == 0.0 {
        smooth_cap
    } else {
        smooth_cap.min(c.mu / (8.0 * c.hess_lip * c.grad_bound))
    }
}

/// Draw a point uniformly from the constraint ball.
pub fn sample_in_ball(set: &ConstraintSet, rng: &mut ChaCha12Rng) -> Array1<f64> {
    let d = set.dim();
    let mut dir = Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let norm = dir.dot(&dir).sqrt().max(1e-300);
    dir /= norm;
    let u: f64 = rng.random();
    let r = set.radius * u.powf(1.0 / d as f64);
    &set.center + &(dir * r)
}

/// Resolve the loss constants for a task family over a constraint set.
///
/// Strong convexity, smoothness, and the Hessian Lipschitz constant come
/// from the model itself; the smoothness envelope truncates the Gaussian
/// feature norm at its 99.999th percentile because the unbounded support
/// admits no global constant. The gradient and value bounds are empirical
/// suprema over `probes` random `(w, z)` pairs, inflated by a 1.2 safety
/// factor.
pub fn compute_constants(
    loss: &dyn LossModel,
    set: &ConstraintSet,
    tasks: &[TaskSpec],
    probes: usize,
    seed: u64,
) -> Result<LossConstants> {
    if tasks.is_empty() || probes == 0 {
        return Err(Error::InvalidConfig(
            "need at least one task and one probe".into(),
        ));
    }
    if set.radius.is_infinite() {
        return Err(Error::InvalidConfig(
            "constants require a bounded constraint set".into(),
        ));
    }
    let d = tasks[0].dim();
    if set.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: set.dim(),
        });
    }
    let chi = ChiSquared::new(d as f64).expect("positive dof");
    let chi_tail = chi.inverse_cdf(0.99999);
    let x_max = tasks
        .iter()
        .map(|t| {
            let mean_norm = t.mean.dot(&t.mean).sqrt();
            mean_norm + (t.feature_cov_scale * chi_tail).sqrt()
        })
        .fold(0.0, f64::max);

    let mut rng = stream(seed, &[purpose::CONSTANTS]);
    let mut grad_sup: f64 = 0.0;
    let mut value_sup: f64 = 0.0;
    for _ in 0..probes {
        let w = sample_in_ball(set, &mut rng);
        let task = &tasks[rng.random_range(0..tasks.len())];
        let z = sample_point(task, &mut rng);
        let g = loss.gradient(&w.view(), &z);
        grad_sup = grad_sup.max(g.dot(&g).sqrt());
        value_sup = value_sup.max(loss.value(&w.view(), &z).abs());
    }

    let constants = LossConstants {
        mu: loss.strong_convexity(),
        smooth: loss.smoothness_bound(x_max),
        grad_bound: 1.2 * grad_sup,
        hess_lip: loss.hessian_lipschitz(),
        value_bound: 1.2 * value_sup,
    };
    constants.validate()?;
    Ok(constants)
}
