//! Small numerical utilities shared across the crate: order-stable parallel
//! reduction, mean/variance accumulation, finite differences, a dense
//! symmetric eigensolver, least-squares fits, adaptive quadrature, and
//! combination (un)ranking.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use std::ops::Range;

/// Fixed chunk width for parallel reductions. Partial results are computed
/// per chunk (possibly in parallel) and folded in chunk order, so sums are
/// bit-identical for any thread count.
pub const CHUNK: usize = 4096;

/// Sum `eval(range)` over `0..n` split into fixed-width chunks, folding the
/// partials in chunk order.
pub fn ordered_chunk_sum<T, F>(n: usize, eval: F) -> Option<T>
where
    T: Send + std::ops::Add<Output = T>,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    if n == 0 {
        return None;
    }
    let ranges: Vec<Range<usize>> = (0..n)
        .step_by(CHUNK)
        .map(|start| start..(start + CHUNK).min(n))
        .collect();
    let partials: Vec<T> = ranges.into_par_iter().map(eval).collect();
    partials.into_iter().reduce(|a, b| a + b)
}

/// Streaming mean/variance accumulator (Welford updates, mergeable with
/// Chan's formula so chunked reductions stay exact for constant inputs).
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanAcc {
    mean: f64,
    m2: f64,
    count: u64,
}

impl MeanAcc {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Biased (population) variance.
    pub fn population_variance(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.m2 / self.count as f64).max(0.0)
    }

    /// Unbiased sample variance. Zero for fewer than two observations.
    pub fn sample_variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2 / (self.count - 1) as f64).max(0.0)
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.sample_variance() / self.count as f64).sqrt()
    }
}

impl std::ops::Add for MeanAcc {
    type Output = MeanAcc;
    fn add(self, rhs: MeanAcc) -> MeanAcc {
        if self.count == 0 {
            return rhs;
        }
        if rhs.count == 0 {
            return self;
        }
        let count = self.count + rhs.count;
        let (na, nb) = (self.count as f64, rhs.count as f64);
        let delta = rhs.mean - self.mean;
        MeanAcc {
            mean: self.mean + delta * (nb / count as f64),
            m2: self.m2 + rhs.m2 + delta * delta * (na * nb / count as f64),
            count,
        }
    }
}

/// Central finite-difference gradient of `f` at `w`.
pub fn fd_gradient<F: Fn(&ArrayView1<f64>) -> f64>(f: &F, w: &ArrayView1<f64>, h: f64) -> Array1<f64> {
    let d = w.len();
    let mut grad = Array1::zeros(d);
    let mut wp = w.to_owned();
    for j in 0..d {
        let step = h * (1.0 + w[j].abs());
        wp[j] = w[j] + step;
        let fp = f(&wp.view());
        wp[j] = w[j] - step;
        let fm = f(&wp.view());
        wp[j] = w[j];
        grad[j] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Central finite-difference Hessian of `f` at `w`, symmetrized.
pub fn fd_hessian<F: Fn(&ArrayView1<f64>) -> f64>(f: &F, w: &ArrayView1<f64>, h: f64) -> Array2<f64> {
    let d = w.len();
    let mut hess = Array2::zeros((d, d));
    let mut wp = w.to_owned();
    for i in 0..d {
        for j in i..d {
            let hi = h * (1.0 + w[i].abs());
            let hj = h * (1.0 + w[j].abs());
            if i == j {
                let f0 = f(&w.view());
                wp[i] = w[i] + hi;
                let fp = f(&wp.view());
                wp[i] = w[i] - hi;
                let fm = f(&wp.view());
                wp[i] = w[i];
                hess[[i, i]] = (fp - 2.0 * f0 + fm) / (hi * hi);
            } else {
                wp[i] = w[i] + hi;
                wp[j] = w[j] + hj;
                let fpp = f(&wp.view());
                wp[j] = w[j] - hj;
                let fpm = f(&wp.view());
                wp[i] = w[i] - hi;
                wp[j] = w[j] + hj;
                let fmp = f(&wp.view());
                wp[j] = w[j] - hj;
                let fmm = f(&wp.view());
                wp[i] = w[i];
                wp[j] = w[j];
                let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
                hess[[i, j]] = v;
                hess[[j, i]] = v;
            }
        }
    }
    hess
}

/// Eigenvalues of a dense symmetric matrix by cyclic Jacobi rotations,
/// returned in ascending order. Intended for small matrices.
pub fn sym_eigenvalues(mat: &Array2<f64>) -> Vec<f64> {
    let d = mat.nrows();
    assert_eq!(d, mat.ncols(), "matrix must be square");
    let mut a = mat.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + a.iter().map(|x| x.abs()).fold(0.0, f64::max)) {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a[[i, i]]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

/// Ordinary least-squares line fit `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope, from the residual variance.
    pub slope_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|xi| (xi - mx) * (xi - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| {
                let r = yi - (slope * xi + intercept);
                r * r
            })
            .sum();
        (ss_res / ((nf - 2.0) * sxx)).sqrt()
    } else {
        0.0
    };
    Some(LineFit {
        slope,
        intercept,
        slope_se,
    })
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`, subdividing around the
/// given interior split points first (used to seed well-separated modes).
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, splits: &[f64], tol: f64) -> f64 {
    let mut knots: Vec<f64> = vec![a, b];
    knots.extend(splits.iter().copied().filter(|s| *s > a && *s < b));
    knots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    knots.dedup();
    let mut total = 0.0;
    for pair in knots.windows(2) {
        total += simpson_segment(f, pair[0], pair[1], tol, 48);
    }
    total
}

fn simpson_rule<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn simpson_segment<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let whole = simpson_rule(f, a, b);
    let mid = 0.5 * (a + b);
    let left = simpson_rule(f, a, mid);
    let right = simpson_rule(f, mid, b);
    let refined = left + right;
    if depth == 0 || (refined - whole).abs() <= 15.0 * tol {
        refined + (refined - whole) / 15.0
    } else {
        simpson_segment(f, a, mid, tol / 2.0, depth - 1)
            + simpson_segment(f, mid, b, tol / 2.0, depth - 1)
    }
}

/// Binomial coefficient with saturation, wide enough for every enumeration
/// the estimators perform.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// The `rank`-th k-combination of `0..n` in lexicographic order.
pub fn unrank_combination(n: usize, k: usize, mut rank: u128) -> Vec<usize> {
    debug_assert!(rank < binomial(n, k));
    let mut combo = Vec::with_capacity(k);
    let mut next = 0;
    for slot in 0..k {
        let mut c = next;
        loop {
            let below = binomial(n - 1 - c, k - 1 - slot);
            if rank < below {
                combo.push(c);
                next = c + 1;
                break;
            }
            rank -= below;
            c += 1;
        }
    }
    combo
}
