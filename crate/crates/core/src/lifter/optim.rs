//! Line-search minimizer for sums of fourth-root terms.
//!
//! Every energy here has the form `Σ c (‖r(θ)‖² + ε)^¼`. The search
//! direction solves the reweighted Gauss-Newton system
//! `(Σ w Jᵀ J) d = -g` with `w = c/2 (‖r‖² + ε)^-¾`, falling back to the
//! negative gradient, and the step length is chosen by Armijo backtracking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            armijo_c: 1e-4,
            backtrack: 0.5,
        }
    }
}

/// Value, gradient and reweighted Gauss-Newton matrix accumulated over
/// fourth-root terms.
#[derive(Debug, Clone)]
pub(crate) struct RootSum {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl RootSum {
    pub fn new(n: usize) -> RootSum {
        RootSum {
            value: 0.0,
            grad: DVector::zeros(n),
            hess: DMatrix::zeros(n, n),
        }
    }

    /// Adds `coef (‖r‖² + eps)^¼` whose residual has Jacobian `j`.
    pub fn add(&mut self, coef: f64, eps: f64, r: &DVector<f64>, j: &DMatrix<f64>) {
        let s = r.norm_squared() + eps;
        self.value += coef * s.powf(0.25);
        let w = 0.5 * coef * s.powf(-0.75);
        self.grad.gemv_tr(w, j, r, 1.0);
        self.hess.gemm_tr(w, j, j, 1.0);
    }

    /// As [`RootSum::add`] with an identity Jacobian.
    pub fn add_identity(&mut self, coef: f64, eps: f64, r: &DVector<f64>) {
        let s = r.norm_squared() + eps;
        self.value += coef * s.powf(0.25);
        let w = 0.5 * coef * s.powf(-0.75);
        self.grad.axpy(w, r, 1.0);
        for i in 0..r.len() {
            self.hess[(i, i)] += w;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.value *= k;
        self.grad *= k;
        self.hess *= k;
    }

    pub fn accumulate(&mut self, other: &RootSum) {
        self.value += other.value;
        self.grad += &other.grad;
        self.hess += &other.hess;
    }
}

pub(crate) trait Objective {
    type State: Clone;

    /// Energy at `state`; `+∞` where undefined.
    fn value(&self, state: &Self::State) -> f64;

    /// Local model in step coordinates, `None` where undefined.
    fn linearize(&self, state: &Self::State) -> Option<RootSum>;

    fn retract(&self, state: &Self::State, step: &DVector<f64>) -> Self::State;
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome<S> {
    pub state: S,
    pub value: f64,
    #[allow(dead_code)]
    pub iterations: usize,
}

pub(crate) fn minimize<O: Objective>(obj: &O, init: O::State, settings: &OptimizerSettings) -> Outcome<O::State> {
    let mut state = init;
    let mut f = obj.value(&state);
    let mut iterations = 0;
    while iterations < settings.max_iterations && f.is_finite() {
        let Some(lin) = obj.linearize(&state) else { break };
        let g = &lin.grad;
        if g.norm() <= settings.gradient_tolerance {
            break;
        }
        iterations += 1;
        let mut d = newton_direction(&lin).unwrap_or_else(|| -g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            d = -g;
            slope = -g.norm_squared();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = obj.retract(&state, &(&d * alpha));
            let fc = obj.value(&cand);
            if fc <= f + settings.armijo_c * alpha * slope {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= settings.backtrack;
        }
        let Some((next, fn_)) = accepted else { break };
        let progress = f - fn_;
        state = next;
        f = fn_;
        if progress <= 1e-15 * f.abs() {
            break;
        }
    }
    Outcome {
        state,
        value: f,
        iterations,
    }
}

fn newton_direction(lin: &RootSum) -> Option<DVector<f64>> {
    let n = lin.grad.len();
    let scale = (0..n).map(|i| lin.hess[(i, i)]).fold(0.0f64, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let mut h = lin.hess.clone();
    for i in 0..n {
        h[(i, i)] += 1e-12 * scale;
    }
    let d = h.cholesky()?.solve(&(-&lin.grad));
    d.iter().all(|v| v.is_finite()).then_some(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Σ_k (‖θ - p_k‖² + ε)^¼ in the plane.
    struct Points(Vec<DVector<f64>>);

    impl Objective for Points {
        type State = DVector<f64>;

        fn value(&self, s: &DVector<f64>) -> f64 {
            self.0.iter().map(|p| ((s - p).norm_squared() + 1e-12).powf(0.25)).sum()
        }

        fn linearize(&self, s: &DVector<f64>) -> Option<RootSum> {
            let mut acc = RootSum::new(2);
            for p in &self.0 {
                acc.add_identity(1.0, 1e-12, &(s - p));
            }
            Some(acc)
        }

        fn retract(&self, s: &DVector<f64>, step: &DVector<f64>) -> DVector<f64> {
            s + step
        }
    }

    #[test]
    fn single_point_is_reached() {
        let obj = Points(vec![DVector::from_vec(vec![3.0, -4.0])]);
        let out = minimize(&obj, DVector::zeros(2), &OptimizerSettings::default());
        assert!((out.state - &obj.0[0]).norm() < 1e-6);
    }

    #[test]
    fn never_increases_the_energy() {
        let obj = Points(vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![10.0, 0.0]),
            DVector::from_vec(vec![0.0, 7.0]),
        ]);
        let init = DVector::from_vec(vec![-5.0, 20.0]);
        let f0 = obj.value(&init);
        let out = minimize(&obj, init, &OptimizerSettings::default());
        assert!(out.value <= f0);
        assert!(out.value <= obj.value(&DVector::from_vec(vec![1.0, 1.0])));
    }

    #[test]
    fn root_sum_gradient_matches_differences() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 0.0, 4.0]);
        let target = DVector::from_vec(vec![0.2, -0.7, 1.1]);
        let f = |t: &DVector<f64>| {
            let mut a = RootSum::new(2);
            a.add(0.7, 1e-12, &(&j * t - &target), &j);
            a
        };
        let t = DVector::from_vec(vec![0.4, -0.1]);
        let g = f(&t).grad;
        for i in 0..2 {
            let mut e = DVector::zeros(2);
            e[i] = 1e-6;
            let fd = (f(&(&t + &e)).value - f(&(&t - &e)).value) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0));
        }
    }
}
