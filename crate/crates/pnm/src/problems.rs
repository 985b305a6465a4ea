//! Benchmark initial-value problems with black-box data functions.
//!
//! Each problem wraps its forcing `f`, initial condition `g` and boundary
//! condition `h` in counted, memoised callables: evaluation budgets are the
//! quantity of interest when comparing against classical methods, so a node
//! can never be charged twice. Counters are atomic; a problem instance is
//! intended to be owned by one solve (use [`PDEProblem::clone_fresh`] for
//! an independent instance with zeroed counters).

use crate::error::{Error, Result};
use crate::operators::DiffTerm;
use crate::solver::StrategyKind;
use serde::Serialize;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Evaluation counts of the black-box data functions since construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EvalCounts {
    pub f: u64,
    pub g: u64,
    pub h: u64,
}

#[derive(Default)]
struct Memo2 {
    cache: Mutex<HashMap<(u64, u64), f64>>,
    count: AtomicU64,
}

#[derive(Default)]
struct Memo1 {
    cache: Mutex<HashMap<u64, f64>>,
    count: AtomicU64,
}

/// A nonlinear initial-value problem `D u = f` on `[t0, t1] x [x0, x1]` with
/// Dirichlet boundary data, decomposed as `D = P + Q` where `P` is the
/// constant-coefficient linear part and the nonlinearity `Q` is carried by a
/// linearisation strategy.
pub struct PDEProblem {
    pub t_span: (f64, f64),
    pub x_span: (f64, f64),
    /// Constant-coefficient linear part `P` of the operator.
    pub p_terms: Vec<DiffTerm>,
    pub strategy_hint: StrategyKind,
    /// Named problem constants (for reporting and baselines).
    pub params: Vec<(String, f64)>,
    f: Fn2,
    g: Fn1,
    h: Fn2,
    truth: Option<Fn2>,
    memo_f: Memo2,
    memo_g: Memo1,
    memo_h: Memo2,
    caching: bool,
}

impl std::fmt::Debug for PDEProblem {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("PDEProblem")
            .field("t_span", &self.t_span)
            .field("x_span", &self.x_span)
            .field("p_terms", &self.p_terms)
            .field("strategy_hint", &self.strategy_hint)
            .field("counts", &self.eval_counts())
            .finish()
    }
}

impl PDEProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        t_span: (f64, f64),
        x_span: (f64, f64),
        p_terms: Vec<DiffTerm>,
        strategy_hint: StrategyKind,
        f: Fn2,
        g: Fn1,
        h: Fn2,
        truth: Option<Fn2>,
    ) -> Self {
        PDEProblem {
            t_span,
            x_span,
            p_terms,
            strategy_hint,
            params: Vec::new(),
            f,
            g,
            h,
            truth,
            memo_f: Memo2::default(),
            memo_g: Memo1::default(),
            memo_h: Memo2::default(),
            caching: true,
        }
    }

    /// Fresh instance sharing the underlying closures with zeroed counters
    /// and an empty memo cache.
    pub fn clone_fresh(&self) -> Self {
        PDEProblem {
            t_span: self.t_span,
            x_span: self.x_span,
            p_terms: self.p_terms.clone(),
            strategy_hint: self.strategy_hint,
            params: self.params.clone(),
            f: Arc::clone(&self.f),
            g: Arc::clone(&self.g),
            h: Arc::clone(&self.h),
            truth: self.truth.clone(),
            memo_f: Memo2::default(),
            memo_g: Memo1::default(),
            memo_h: Memo2::default(),
            caching: self.caching,
        }
    }

    /// Disables memoisation (counters still count every call). Used by the
    /// fine reference solver whose node set would not fit in a cache.
    pub fn without_caching(mut self) -> Self {
        self.caching = false;
        self
    }

    fn param(mut self, name: &str, value: f64) -> Self {
        self.params.push((name.to_string(), value));
        self
    }

    pub fn param_value(&self, name: &str) -> Option<f64> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    /// Forcing term, counted and memoised; rejects non-finite values.
    pub fn f(&self, t: f64, x: f64) -> Result<f64> {
        let key = (t.to_bits(), x.to_bits());
        if self.caching {
            if let Some(v) = self.memo_f.cache.lock().unwrap().get(&key) {
                return Ok(*v);
            }
        }
        let v = (self.f)(t, x);
        self.memo_f.count.fetch_add(1, Ordering::Relaxed);
        if !v.is_finite() {
            return Err(Error::NonFiniteEvaluation { which: "f", t, x });
        }
        if self.caching {
            self.memo_f.cache.lock().unwrap().insert(key, v);
        }
        Ok(v)
    }

    /// Initial condition, counted and memoised.
    pub fn g(&self, x: f64) -> Result<f64> {
        let key = x.to_bits();
        if self.caching {
            if let Some(v) = self.memo_g.cache.lock().unwrap().get(&key) {
                return Ok(*v);
            }
        }
        let v = (self.g)(x);
        self.memo_g.count.fetch_add(1, Ordering::Relaxed);
        if !v.is_finite() {
            return Err(Error::NonFiniteEvaluation {
                which: "g",
                t: self.t_span.0,
                x,
            });
        }
        if self.caching {
            self.memo_g.cache.lock().unwrap().insert(key, v);
        }
        Ok(v)
    }

    /// Boundary condition, counted and memoised.
    pub fn h(&self, t: f64, x: f64) -> Result<f64> {
        let key = (t.to_bits(), x.to_bits());
        if self.caching {
            if let Some(v) = self.memo_h.cache.lock().unwrap().get(&key) {
                return Ok(*v);
            }
        }
        let v = (self.h)(t, x);
        self.memo_h.count.fetch_add(1, Ordering::Relaxed);
        if !v.is_finite() {
            return Err(Error::NonFiniteEvaluation { which: "h", t, x });
        }
        if self.caching {
            self.memo_h.cache.lock().unwrap().insert(key, v);
        }
        Ok(v)
    }

    /// Closed-form solution when one exists.
    pub fn truth(&self, t: f64, x: f64) -> Option<f64> {
        self.truth.as_ref().map(|u| u(t, x))
    }

    pub fn has_truth(&self) -> bool {
        self.truth.is_some()
    }

    pub fn eval_counts(&self) -> EvalCounts {
        EvalCounts {
            f: self.memo_f.count.load(Ordering::Relaxed),
            g: self.memo_g.count.load(Ordering::Relaxed),
            h: self.memo_h.count.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counts(&self) {
        self.memo_f.count.store(0, Ordering::Relaxed);
        self.memo_g.count.store(0, Ordering::Relaxed);
        self.memo_h.count.store(0, Ordering::Relaxed);
        self.memo_f.cache.lock().unwrap().clear();
        self.memo_g.cache.lock().unwrap().clear();
        self.memo_h.cache.lock().unwrap().clear();
    }

    /// g and h must agree at the space-time corners.
    pub fn check_compatibility(&self) -> Result<()> {
        let t0 = self.t_span.0;
        for x in [self.x_span.0, self.x_span.1] {
            let gv = self.g(x)?;
            let hv = self.h(t0, x)?;
            if (gv - hv).abs() > 1e-8 {
                return Err(Error::Config(format!(
                    "incompatible initial/boundary data at (t0, {x}): g = {gv}, h = {hv}"
                )));
            }
        }
        Ok(())
    }
}

/// Homogeneous Burgers problem: `du/dt + u du/dx - alpha d2u/dx2 = 0` on
/// `[0, 30] x [0, 2pi]` with the closed-form travelling solution used as
/// ground truth.
pub fn burgers_homogeneous() -> PDEProblem {
    let (a, b, k, alpha, t_end) = (1.0, 2.0, 1.0, 0.02, 30.0);
    let truth = move |t: f64, x: f64| {
        let decay = (-alpha * k * k * t).exp();
        2.0 * alpha * a * k * decay * (k * x).sin() / (b + a * decay * (k * x).cos())
    };
    PDEProblem::custom(
        (0.0, t_end),
        (0.0, 2.0 * std::f64::consts::PI),
        vec![DiffTerm::new(1.0, 1, 0), DiffTerm::new(-alpha, 0, 2)],
        StrategyKind::LagMean,
        Arc::new(|_, _| 0.0),
        Arc::new(move |x| truth(0.0, x)),
        Arc::new(|_, _| 0.0),
        Some(Arc::new(truth)),
    )
    .param("alpha", alpha)
    .param("a", a)
    .param("b", b)
    .param("k", k)
}

/// Barenblatt self-similar solution of the porous medium equation with k = 2.
pub fn barenblatt(t: f64, x: f64) -> f64 {
    (t.powf(-1.0 / 3.0) * (1.0 - x * x / (12.0 * t.powf(2.0 / 3.0)))).max(0.0)
}

/// Porous medium problem (`k = 2`): `du/dt - 2 (du/dx)^2 - 2 u d2u/dx2 = 0`
/// on `[2, 10] x [-10, 10]`. `P = d/dt`; both nonlinear terms are carried by
/// the linearisation strategy. The kinked initial condition is evaluated
/// exactly, no smoothing.
pub fn porous_medium() -> PDEProblem {
    let t0 = 2.0;
    PDEProblem::custom(
        (t0, 10.0),
        (-10.0, 10.0),
        vec![DiffTerm::new(1.0, 1, 0)],
        StrategyKind::PorousQ1,
        Arc::new(|_, _| 0.0),
        Arc::new(move |x| barenblatt(t0, x)),
        Arc::new(|_, _| 0.0),
        Some(Arc::new(barenblatt)),
    )
    .param("k", 2.0)
    .param("t0", t0)
}

/// Forced Burgers problem: `du/dt + u du/dx - d2u/dx2 = f` on `[0, 30] x [0, 1]`
/// with zero initial and boundary data and an oscillatory, kinked forcing.
/// No closed-form truth; a reference solver supplies it.
pub fn burgers_forced() -> PDEProblem {
    let pi = std::f64::consts::PI;
    let f = move |t: f64, x: f64| {
        10.0 * (6.0 * pi * x).sin() * (3.0 * pi * t).cos()
            + 2.0 * ((3.0 * pi * x).sin() * (6.0 * pi * t).cos()).abs()
    };
    PDEProblem::custom(
        (0.0, 30.0),
        (0.0, 1.0),
        vec![DiffTerm::new(1.0, 1, 0), DiffTerm::new(-1.0, 0, 2)],
        StrategyKind::LagMean,
        Arc::new(f),
        Arc::new(|_| 0.0),
        Arc::new(|_, _| 0.0),
        None,
    )
    .param("alpha", 1.0)
}

/// Problems addressable by string identifier from configuration.
pub fn problem_by_id(id: &str) -> Result<PDEProblem> {
    match id {
        "burgers" => Ok(burgers_homogeneous()),
        "porous" => Ok(porous_medium()),
        "burgers_forced" => Ok(burgers_forced()),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

pub const PROBLEM_IDS: [&str; 3] = ["burgers", "porous", "burgers_forced"];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};

    #[test]
    fn burgers_truth_spot_values() {
        let p = burgers_homogeneous();
        // plug the constants into the closed form
        assert_abs_diff_eq!(p.truth(0.0, std::f64::consts::FRAC_PI_2).unwrap(), 0.02);
        for t in [0.0, 3.0, 17.5, 30.0] {
            assert_abs_diff_eq!(p.truth(t, 0.0).unwrap(), 0.0);
        }
        // initial-condition consistency
        assert_abs_diff_eq!(
            p.g(std::f64::consts::FRAC_PI_2).unwrap(),
            p.truth(0.0, std::f64::consts::FRAC_PI_2).unwrap()
        );
        p.check_compatibility().unwrap();
    }

    #[test]
    fn burgers_truth_satisfies_pde() {
        let p = burgers_homogeneous();
        let alpha = p.param_value("alpha").unwrap();
        let u = |t: f64, x: f64| p.truth(t, x).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let h = 1e-4;
        for _ in 0..100 {
            let t = rng.gen_range(0.5..29.5);
            let x = rng.gen_range(0.5..5.5);
            let ut = (u(t + h, x) - u(t - h, x)) / (2.0 * h);
            let ux = (u(t, x + h) - u(t, x - h)) / (2.0 * h);
            let uxx = (u(t, x + h) - 2.0 * u(t, x) + u(t, x - h)) / (h * h);
            let residual = ut + u(t, x) * ux - alpha * uxx;
            assert!(residual.abs() < 1e-4, "residual {residual} at ({t}, {x})");
        }
    }

    #[test]
    fn porous_truth_and_support() {
        let p = porous_medium();
        assert_abs_diff_eq!(p.truth(2.0, 0.0).unwrap(), 2.0f64.powf(-1.0 / 3.0));
        assert_abs_diff_eq!(p.truth(2.0, 0.0).unwrap(), 0.79370, epsilon = 1e-5);
        // vanishes outside x^2 >= 12 t^(2/3)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let t: f64 = rng.gen_range(2.0..10.0);
            let edge = (12.0 * t.powf(2.0 / 3.0)).sqrt();
            let x = edge + rng.gen_range(0.0..3.0);
            assert_eq!(p.truth(t, x).unwrap(), 0.0);
            assert_eq!(p.truth(t, -x).unwrap(), 0.0);
        }
        p.check_compatibility().unwrap();
    }

    #[test]
    fn barenblatt_residual_inside_support() {
        // finite-difference residual of d/dt u - d2/dx2 (u^2) inside the support
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let h = 1e-3;
        for _ in 0..100 {
            let t: f64 = rng.gen_range(2.5..9.5);
            let edge = (12.0 * t.powf(2.0 / 3.0)).sqrt();
            let x = rng.gen_range(-0.8..0.8) * (edge - 0.5);
            let ut = (barenblatt(t + h, x) - barenblatt(t - h, x)) / (2.0 * h);
            let sq = |t: f64, x: f64| barenblatt(t, x).powi(2);
            let uxx2 = (sq(t, x + h) - 2.0 * sq(t, x) + sq(t, x - h)) / (h * h);
            let residual = ut - uxx2;
            assert!(residual.abs() < 1e-4, "residual {residual} at ({t}, {x})");
        }
    }

    #[test]
    fn porous_mass_is_time_invariant() {
        // analytic mass 4(3^{1/2} - 3^{-1/2}) = 8/sqrt(3) at any t
        let analytic = 8.0 / 3.0f64.sqrt();
        for t in [2.0, 5.0, 10.0] {
            let m = 20001;
            let mass: f64 = (0..m)
                .map(|j| -10.0 + 20.0 * j as f64 / (m - 1) as f64)
                .map(|x| barenblatt(t, x) * 20.0 / (m - 1) as f64)
                .sum();
            assert_abs_diff_eq!(mass, analytic, epsilon = 1e-4);
        }
    }

    #[test]
    fn forced_spot_values() {
        let p = burgers_forced();
        // f(0, 0.25) = -10 + sqrt(2)
        assert_relative_eq!(
            p.f(0.0, 0.25).unwrap(),
            -10.0 + std::f64::consts::SQRT_2,
            max_relative = 1e-12
        );
        assert_abs_diff_eq!(p.f(0.0, 0.25).unwrap(), -8.5858, epsilon = 1e-4);
        for t in [0.0, 0.4, 11.0] {
            assert_abs_diff_eq!(p.f(t, 0.0).unwrap(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.g(t / 31.0).unwrap(), 0.0);
        }
        p.check_compatibility().unwrap();
    }

    #[test]
    fn forcing_structure_at_midpoint() {
        // sin(3 pi / 2) = -1 and sin(6 pi / 2) = 0, so f(t, 1/2) = 2 |cos(6 pi t)|
        let p = burgers_forced();
        let pi = std::f64::consts::PI;
        for i in 0..20 {
            let t = 0.173 * i as f64;
            assert_relative_eq!(
                p.f(t, 0.5).unwrap(),
                2.0 * (6.0 * pi * t).cos().abs(),
                max_relative = 1e-10,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn counters_and_memoisation() {
        let p = burgers_forced();
        assert_eq!(p.eval_counts(), EvalCounts { f: 0, g: 0, h: 0 });
        p.f(0.5, 0.5).unwrap();
        p.f(0.5, 0.5).unwrap();
        p.g(0.25).unwrap();
        p.h(1.0, 0.0).unwrap();
        p.h(1.0, 0.0).unwrap();
        assert_eq!(p.eval_counts(), EvalCounts { f: 1, g: 1, h: 1 });
        let fresh = p.clone_fresh();
        assert_eq!(fresh.eval_counts(), EvalCounts { f: 0, g: 0, h: 0 });
        p.reset_counts();
        assert_eq!(p.eval_counts(), EvalCounts { f: 0, g: 0, h: 0 });
        // without caching every call counts
        let nc = p.clone_fresh().without_caching();
        nc.f(0.5, 0.5).unwrap();
        nc.f(0.5, 0.5).unwrap();
        assert_eq!(nc.eval_counts().f, 2);
    }

    #[test]
    fn non_finite_evaluation_reports_node() {
        let p = PDEProblem::custom(
            (0.0, 1.0),
            (0.0, 1.0),
            vec![DiffTerm::new(1.0, 1, 0)],
            StrategyKind::LagMean,
            Arc::new(|_, _| f64::NAN),
            Arc::new(|_| 0.0),
            Arc::new(|_, _| 0.0),
            None,
        );
        match p.f(0.5, 0.25).unwrap_err() {
            Error::NonFiniteEvaluation { which: "f", t, x } => {
                assert_eq!((t, x), (0.5, 0.25));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn problem_ids_resolve() {
        for id in PROBLEM_IDS {
            assert!(problem_by_id(id).is_ok());
        }
        assert!(matches!(
            problem_by_id("nope"),
            Err(Error::UnknownProblem(_))
        ));
    }
}
