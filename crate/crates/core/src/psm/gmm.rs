//! Gaussian-mixture pairwise potentials over 2D joint offsets.

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariance regularization added to every cluster, in px².
pub const COVARIANCE_EPS: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const SCORE_FLOOR: f64 = 1e-300;
/// Independent k-means++ runs per mixture fit.
pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub weight: f64,
    precision: Matrix2<f64>,
}

impl GaussianComponent {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>, weight: f64) -> Result<GaussianComponent> {
        let sym = 0.5 * (cov + cov.transpose());
        if !(weight > 0.0) || sym.determinant() <= 0.0 || sym[(0, 0)] <= 0.0 {
            return Err(Error::InvalidParameter(
                "mixture component needs positive weight and positive-definite covariance".into(),
            ));
        }
        let precision = sym.try_inverse().ok_or(Error::Singular("component covariance"))?;
        Ok(GaussianComponent {
            mean,
            cov: sym,
            weight,
            precision,
        })
    }

    /// Log of `weight * exp(-½ (d-μ)ᵀ Σ⁻¹ (d-μ))`.
    #[inline]
    fn log_term(&self, d: Vector2<f64>) -> f64 {
        let r = d - self.mean;
        self.weight.ln() - 0.5 * r.dot(&(self.precision * r))
    }
}

/// Mixture over the offset `d = xi - xj` of one edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmBinary {
    pub components: Vec<GaussianComponent>,
    pub alpha: f64,
}

impl GmmBinary {
    /// Floored mixture score at offset `xi - xj`.
    pub fn eval(&self, xi: Vector2<f64>, xj: Vector2<f64>) -> f64 {
        self.eval_offset(xi - xj)
    }

    pub fn eval_offset(&self, d: Vector2<f64>) -> f64 {
        let s: f64 = self
            .components
            .iter()
            .map(|c| {
                let r = d - c.mean;
                c.weight * (-0.5 * r.dot(&(c.precision * r))).exp()
            })
            .sum();
        s.max(SCORE_FLOOR)
    }

    /// Natural log of the mixture, evaluated with log-sum-exp so that it
    /// stays informative far from every component.
    pub fn log_eval_offset(&self, d: Vector2<f64>) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut terms = [0.0f64; 32];
        let many = self.components.len() > terms.len();
        let mut buf = Vec::new();
        let logs: &mut [f64] = if many {
            buf.resize(self.components.len(), 0.0);
            &mut buf
        } else {
            &mut terms[..self.components.len()]
        };
        for (l, c) in logs.iter_mut().zip(&self.components) {
            *l = c.log_term(d);
            best = best.max(*l);
        }
        if best == f64::NEG_INFINITY {
            return SCORE_FLOOR.ln();
        }
        let s: f64 = logs.iter().map(|l| (l - best).exp()).sum();
        best + s.ln()
    }
}

/// k-means with k-means++ seeding. Returns centers and assignments; centers
/// that end up empty are dropped and assignments renumbered.
pub fn kmeans(points: &[Vector2<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<Vector2<f64>>, Vec<usize>) {
    assert!(!points.is_empty() && k > 0);
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if *d > 0.0 && target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        if d2[pick] <= 0.0 {
            // rounding walked past the last positive entry
            pick = d2.iter().rposition(|d| *d > 0.0).expect("total > 0");
        }
        let c = points[pick];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }

    let mut assign = vec![0usize; points.len()];
    for iter in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (ci, c) in centers.iter().enumerate() {
                let d = (p - c).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let mut sums = vec![Vector2::zeros(); centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (a, p) in assign.iter().zip(points) {
            sums[*a] += p;
            counts[*a] += 1;
        }
        for ((c, s), n) in centers.iter_mut().zip(&sums).zip(&counts) {
            if *n > 0 {
                *c = s / *n as f64;
            }
        }
    }

    let mut counts = vec![0usize; centers.len()];
    for a in &assign {
        counts[*a] += 1;
    }
    let mut remap = vec![usize::MAX; centers.len()];
    let mut kept = Vec::new();
    for (i, c) in centers.iter().enumerate() {
        if counts[i] > 0 {
            remap[i] = kept.len();
            kept.push(*c);
        }
    }
    for a in assign.iter_mut() {
        *a = remap[*a];
    }
    (kept, assign)
}

/// Sum of squared distances to the assigned centers.
fn inertia(points: &[Vector2<f64>], centers: &[Vector2<f64>], assign: &[usize]) -> f64 {
    points.iter().zip(assign).map(|(p, &a)| (p - centers[a]).norm_squared()).sum()
}

/// Lowest-inertia result of [`KMEANS_RESTARTS`] seeded runs; the earliest
/// run wins ties.
fn best_kmeans(points: &[Vector2<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<Vector2<f64>>, Vec<usize>) {
    let mut best = kmeans(points, k, rng);
    let mut best_inertia = inertia(points, &best.0, &best.1);
    for _ in 1..KMEANS_RESTARTS {
        let run = kmeans(points, k, rng);
        let i = inertia(points, &run.0, &run.1);
        if i < best_inertia {
            best = run;
            best_inertia = i;
        }
    }
    best
}

/// Fits one mixture to the offsets of a single edge.
pub fn fit_binary(offsets: &[Vector2<f64>], c: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<GmmBinary> {
    if offsets.is_empty() {
        return Err(Error::InvalidParameter("no offsets to fit".into()));
    }
    if c == 0 {
        return Err(Error::InvalidParameter("component count must be positive".into()));
    }
    let k = if offsets.len() < c {
        log::warn!("only {} offsets for {} components; reducing", offsets.len(), c);
        offsets.len()
    } else {
        c
    };
    let (centers, assign) = best_kmeans(offsets, k, rng);
    let n = offsets.len() as f64;
    let mut components = Vec::with_capacity(centers.len());
    for ci in 0..centers.len() {
        let members: Vec<&Vector2<f64>> = offsets
            .iter()
            .zip(&assign)
            .filter(|(_, a)| **a == ci)
            .map(|(p, _)| p)
            .collect();
        let m = members.len() as f64;
        let mean = members.iter().fold(Vector2::zeros(), |acc, p| acc + *p) / m;
        let mut cov = Matrix2::zeros();
        for p in &members {
            let r = *p - mean;
            cov += r * r.transpose();
        }
        cov /= m;
        cov += Matrix2::identity() * COVARIANCE_EPS;
        components.push(GaussianComponent::new(mean, cov, (m / n).powf(alpha))?);
    }
    Ok(GmmBinary { components, alpha })
}

/// Fits one mixture per edge, each with its own generator split from `seed`.
pub fn fit_binaries(offsets: &[Vec<Vector2<f64>>], c: usize, alpha: f64, seed: u64) -> Result<Vec<GmmBinary>> {
    offsets
        .iter()
        .enumerate()
        .map(|(e, off)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64);
            fit_binary(off, c, alpha, &mut rng)
        })
        .collect()
}
