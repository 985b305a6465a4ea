//! Gaussian process state with sequential assimilation of exact
//! linear-functional observations.
//!
//! Conditioning is noise-free; the representation is a cumulative Gram
//! matrix in blockwise-Cholesky form, extended in place as batches arrive.
//! Each batch costs one triangular solve against the history (quadratic in
//! history size) plus a dense factorisation of its conditional covariance
//! (cubic in batch size). The squared Mahalanobis norm of a batch under its
//! predictive distribution is a by-product of the same triangular solve, and
//! feeds the closed-form amplitude estimate.

use crate::error::{Error, Result};
use crate::kernels::{Point, TensorKernel};
use crate::linalg::{cholesky_dense, dot, packed_forward_solve, PackedLower};
use crate::operators::{functional_cross_cov_unchecked, LinearFunctional};
use ndarray::Array2;
use serde::Serialize;
use std::sync::Arc;

/// Prior mean of the field. Operator atoms can only be applied to `Zero`;
/// a custom mean is a black box and supports point evaluations only.
#[derive(Clone)]
pub enum PriorMean {
    Zero,
    Custom(Arc<dyn Fn(Point) -> f64 + Send + Sync>),
}

impl PriorMean {
    fn apply(&self, f: &LinearFunctional) -> Result<f64> {
        match self {
            PriorMean::Zero => Ok(0.0),
            PriorMean::Custom(m) => f.apply_to_values(|p| m(p)),
        }
    }
}

impl std::fmt::Debug for PriorMean {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriorMean::Zero => write!(f, "PriorMean::Zero"),
            PriorMean::Custom(_) => write!(f, "PriorMean::Custom(..)"),
        }
    }
}

/// Escalation schedule for the conditioning aid added to a batch's Schur
/// complement diagonal, relative to the batch's mean Gram diagonal. Jitter is
/// reported, never modelled.
#[derive(Debug, Clone, Copy)]
pub struct JitterPolicy {
    pub initial_rel: f64,
    pub max_rel: f64,
    pub factor: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            initial_rel: 1e-10,
            max_rel: 1e-6,
            factor: 10.0,
        }
    }
}

/// One jitter escalation, surfaced in reports.
#[derive(Debug, Clone, Serialize)]
pub struct JitterEvent {
    pub label: String,
    /// Relative level that made the factorisation succeed.
    pub relative_level: f64,
}

#[derive(Debug, Clone, Copy)]
struct MleTerm {
    maha_sq: f64,
    count: usize,
}

/// Normalisation of the amplitude estimate: the printed formula divides the
/// summed squared Mahalanobis norms by the number of time steps; the
/// per-observation switch divides by the total number of differential
/// observations instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MleNormalisation {
    PerStep,
    PerObservation,
}

/// Gaussian process over (t, x) conditioned on exact linear-functional
/// observations. The kernel is held at unit amplitude; callers rescale
/// posterior covariances by the estimated amplitude squared.
#[derive(Debug, Clone)]
pub struct GpState {
    kernel: TensorKernel,
    prior_mean: PriorMean,
    observations: Vec<(LinearFunctional, f64)>,
    factor: PackedLower,
    /// `L^{-1} (y - m0)` for the assimilated observations.
    alpha: Vec<f64>,
    /// Running per-axis maximum derivative order over assimilated functionals.
    max_orders: (u32, u32),
    mle_terms: Vec<MleTerm>,
    jitter: JitterPolicy,
    jitter_events: Vec<JitterEvent>,
}

impl GpState {
    /// Empty observation set; predictions equal the prior.
    pub fn new(prior_mean: PriorMean, kernel: TensorKernel) -> Self {
        Self::with_jitter(prior_mean, kernel, JitterPolicy::default())
    }

    pub fn with_jitter(prior_mean: PriorMean, kernel: TensorKernel, jitter: JitterPolicy) -> Self {
        GpState {
            kernel,
            prior_mean,
            observations: Vec::new(),
            factor: PackedLower::new(),
            alpha: Vec::new(),
            max_orders: (0, 0),
            mle_terms: Vec::new(),
            jitter,
            jitter_events: Vec::new(),
        }
    }

    pub fn kernel(&self) -> &TensorKernel {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[(LinearFunctional, f64)] {
        &self.observations
    }

    pub fn jitter_events(&self) -> &[JitterEvent] {
        &self.jitter_events
    }

    pub fn mle_term_count(&self) -> usize {
        self.mle_terms.len()
    }

    fn check_budget(&self, f: &LinearFunctional) -> Result<()> {
        let (ft, fx) = f.max_orders();
        let (mt, mx) = self.max_orders;
        // worst pairing of the new functional: against the running maxima or itself
        self.kernel
            .validate_orders(ft + mt.max(ft), fx + mx.max(fx))
    }

    /// Cross-covariance block between the history and `fs`, stored
    /// column-major (`len() x fs.len()`). Columns are independent and
    /// assembled in parallel.
    fn cross_block(&self, fs: &[LinearFunctional]) -> Vec<f64> {
        use rayon::prelude::*;
        let n = self.len();
        let mut b = vec![0.0; n * fs.len()];
        if n == 0 {
            return b;
        }
        b.par_chunks_mut(n)
            .zip(fs.par_iter())
            .for_each(|(col, f)| {
                for (i, (obs, _)) in self.observations.iter().enumerate() {
                    col[i] = functional_cross_cov_unchecked(&self.kernel, obs, f);
                }
            });
        b
    }

    /// Assimilates a batch of exact observations `(functional, value)` and
    /// returns the batch's squared Mahalanobis norm under its predictive
    /// distribution (conditional on everything assimilated before it).
    /// When `record_mle` is set the norm is pushed onto the amplitude
    /// accumulator. `label` names the batch in errors and jitter reports.
    pub fn assimilate(
        &mut self,
        batch: &[(LinearFunctional, f64)],
        record_mle: bool,
        label: &str,
    ) -> Result<f64> {
        let k = batch.len();
        if k == 0 {
            return Ok(0.0);
        }
        for (f, _) in batch {
            self.check_budget(f)?;
        }
        let fs: Vec<LinearFunctional> = batch.iter().map(|(f, _)| f.clone()).collect();
        let n = self.len();

        // X = L^{-1} B, column-major
        let mut x = self.cross_block(&fs);
        self.factor.forward_solve_block(&mut x, k);

        // Schur complement S = C - X^T X and batch scale
        let mut s = vec![0.0; k * k];
        let mut diag_mean = 0.0;
        for i in 0..k {
            for j in 0..=i {
                let c = functional_cross_cov_unchecked(&self.kernel, &fs[i], &fs[j]);
                let v = c - dot(&x[i * n..(i + 1) * n], &x[j * n..(j + 1) * n]);
                s[i * k + j] = v;
                s[j * k + i] = v;
                if i == j {
                    diag_mean += c;
                }
            }
        }
        diag_mean /= k as f64;
        let scale = if diag_mean > 0.0 { diag_mean } else { 1.0 };

        // factor S with jitter escalation
        let mut lc = cholesky_dense(&s, k);
        if lc.is_none() {
            let mut rel = self.jitter.initial_rel;
            loop {
                let mut sj = s.clone();
                for i in 0..k {
                    sj[i * k + i] += rel * scale;
                }
                if let Some(f) = cholesky_dense(&sj, k) {
                    lc = Some(f);
                    self.jitter_events.push(JitterEvent {
                        label: label.to_string(),
                        relative_level: rel,
                    });
                    break;
                }
                if rel >= self.jitter.max_rel {
                    return Err(Error::IllConditioned {
                        label: label.to_string(),
                    });
                }
                rel *= self.jitter.factor;
            }
        }
        let lc = lc.unwrap();

        // residual against the batch's predictive mean
        let mut r = Vec::with_capacity(k);
        for (c, (f, y)) in batch.iter().enumerate() {
            let m0 = self.prior_mean.apply(f)?;
            let pred = m0 + dot(&x[c * n..(c + 1) * n], &self.alpha);
            r.push(y - pred);
        }
        packed_forward_solve(&lc, k, &mut r);
        let maha_sq = dot(&r, &r);

        // extend factor and solved residual
        let mut row = Vec::with_capacity(n + k);
        for (c, (f, y)) in batch.iter().enumerate() {
            row.clear();
            row.extend_from_slice(&x[c * n..(c + 1) * n]);
            let start = c * (c + 1) / 2;
            row.extend_from_slice(&lc[start..start + c + 1]);
            self.factor.push_row(&row);
            self.alpha.push(r[c]);
            self.observations.push((f.clone(), *y));
        }
        for f in &fs {
            let (ft, fx) = f.max_orders();
            self.max_orders = (self.max_orders.0.max(ft), self.max_orders.1.max(fx));
        }

        if record_mle {
            self.mle_terms.push(MleTerm {
                maha_sq,
                count: k,
            });
        }
        Ok(maha_sq)
    }

    fn check_predict_budget(&self, fs: &[LinearFunctional]) -> Result<()> {
        let (mt, mx) = self.max_orders;
        for f in fs {
            let (ft, fx) = f.max_orders();
            self.kernel.validate_orders(ft + mt.max(ft), fx + mx.max(fx))?;
        }
        Ok(())
    }

    /// Posterior means and full posterior covariance at unit amplitude;
    /// callers rescale the covariance by the squared amplitude estimate.
    pub fn predict(&self, fs: &[LinearFunctional]) -> Result<(Vec<f64>, Array2<f64>)> {
        self.check_predict_budget(fs)?;
        let k = fs.len();
        let n = self.len();
        if k == 0 {
            return Ok((Vec::new(), Array2::zeros((0, 0))));
        }
        let mut x = self.cross_block(fs);
        self.factor.forward_solve_block(&mut x, k);
        let means = self.means_from_solved(fs, &x, n)?;
        let mut cov = Array2::zeros((k, k));
        for i in 0..k {
            for j in 0..=i {
                let c = functional_cross_cov_unchecked(&self.kernel, &fs[i], &fs[j]);
                let v = c - dot(&x[i * n..(i + 1) * n], &x[j * n..(j + 1) * n]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok((means, cov))
    }

    fn means_from_solved(
        &self,
        fs: &[LinearFunctional],
        x: &[f64],
        n: usize,
    ) -> Result<Vec<f64>> {
        fs.iter()
            .enumerate()
            .map(|(c, f)| {
                Ok(self.prior_mean.apply(f)? + dot(&x[c * n..(c + 1) * n], &self.alpha))
            })
            .collect()
    }

    /// Posterior means only. Uses the fully solved weight vector
    /// `K^{-1}(y - m0)`, so each functional costs one cross-covariance pass
    /// instead of a triangular solve.
    pub fn predict_means(&self, fs: &[LinearFunctional]) -> Result<Vec<f64>> {
        self.check_predict_budget(fs)?;
        let mut beta = self.alpha.clone();
        self.factor.backward_solve(&mut beta);
        fs.iter()
            .map(|f| {
                let mut acc = self.prior_mean.apply(f)?;
                for (i, (obs, _)) in self.observations.iter().enumerate() {
                    acc += functional_cross_cov_unchecked(&self.kernel, obs, f) * beta[i];
                }
                Ok(acc)
            })
            .collect()
    }

    /// Posterior means and pointwise variances (diagonal only), at unit
    /// amplitude. Negative rounding residue is clamped to zero.
    pub fn predict_mean_and_var(&self, fs: &[LinearFunctional]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_predict_budget(fs)?;
        let k = fs.len();
        let n = self.len();
        let mut x = self.cross_block(fs);
        self.factor.forward_solve_block(&mut x, k);
        let means = self.means_from_solved(fs, &x, n)?;
        let mut vars = Vec::with_capacity(k);
        for (c, f) in fs.iter().enumerate() {
            let prior = functional_cross_cov_unchecked(&self.kernel, f, f);
            let xc = &x[c * n..(c + 1) * n];
            vars.push((prior - dot(xc, xc)).max(0.0));
        }
        Ok((means, vars))
    }

    /// Closed-form amplitude estimate from the accumulated differential-data
    /// Mahalanobis norms: `sigma_hat^2 = (1/n) sum_i maha_i` for `PerStep`
    /// (no division by the batch size), or divided by the total observation
    /// count for `PerObservation`.
    pub fn amplitude_mle(&self, n_steps: usize, norm: MleNormalisation) -> Result<f64> {
        if self.mle_terms.is_empty() {
            return Err(Error::EmptyMleAccumulator);
        }
        if self.mle_terms.len() != n_steps {
            return Err(Error::MleStepMismatch {
                expected: n_steps,
                found: self.mle_terms.len(),
            });
        }
        let total: f64 = self.mle_terms.iter().map(|t| t.maha_sq).sum();
        let denom = match norm {
            MleNormalisation::PerStep => n_steps as f64,
            MleNormalisation::PerObservation => {
                self.mle_terms.iter().map(|t| t.count).sum::<usize>() as f64
            }
        };
        Ok((total / denom).sqrt())
    }
}
