//! Accuracy and calibration statistics over grid fields, and log-log
//! convergence-slope estimation across sweeps.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::Serialize;

/// One sweep-cell result; serialises to one CSV line.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub n: usize,
    pub m: usize,
    pub e_inf: f64,
    pub z: f64,
    pub sigma_hat: f64,
    pub runtime_s: f64,
    pub f_evals: u64,
    pub g_evals: u64,
    pub h_evals: u64,
    pub jitter_events: usize,
}

pub const CSV_HEADER: &str =
    "n,m,e_inf,z,sigma_hat,runtime_s,f_evals,g_evals,h_evals,jitter_events";

impl MetricRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{},{},{},{}",
            self.n,
            self.m,
            self.e_inf,
            self.z,
            self.sigma_hat,
            self.runtime_s,
            self.f_evals,
            self.g_evals,
            self.h_evals,
            self.jitter_events
        )
    }
}

fn check_shapes(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// `max over grid nodes of |mean - truth|`.
pub fn sup_error(mean_field: &Array2<f64>, truth_field: &Array2<f64>) -> Result<f64> {
    check_shapes(mean_field, truth_field)?;
    Ok(mean_field
        .iter()
        .zip(truth_field.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Z-score over a grid, with bookkeeping on floor clipping.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ZScore {
    pub value: f64,
    /// Nodes whose denominator was clipped at the floor.
    pub clipped: usize,
    /// Exactly-interpolated nodes (zero std, negligible error) skipped.
    pub skipped: usize,
    /// Set when the amplitude is zero but some error is not: the score is
    /// reported as the +inf sentinel.
    pub infinite_sentinel: bool,
}

/// `max over grid nodes of |mean - truth| / max(sigma_hat * std, floor * sigma_hat * max(std))`.
///
/// `std_field` is at unit amplitude; `sigma_hat` scales it. Nodes where the
/// std is exactly zero and the error below 1e-12 are assimilated exact
/// constraints and are skipped. Denominators below the floor are clipped,
/// since the posterior std vanishes at assimilated constraints where the
/// ratio would divide by zero on the data grid.
pub fn z_score(
    mean_field: &Array2<f64>,
    std_field: &Array2<f64>,
    sigma_hat: f64,
    truth_field: &Array2<f64>,
    floor: f64,
) -> Result<ZScore> {
    check_shapes(mean_field, truth_field)?;
    check_shapes(mean_field, std_field)?;
    let max_std = std_field.iter().cloned().fold(0.0, f64::max);
    let floor_den = floor * sigma_hat * max_std;
    let mut out = ZScore {
        value: 0.0,
        clipped: 0,
        skipped: 0,
        infinite_sentinel: false,
    };
    for ((m, s), u) in mean_field
        .iter()
        .zip(std_field.iter())
        .zip(truth_field.iter())
    {
        let num = (m - u).abs();
        if *s == 0.0 && num < 1e-12 {
            out.skipped += 1;
            continue;
        }
        let den = (sigma_hat * s).max(floor_den);
        if den == 0.0 {
            if num > 0.0 {
                out.infinite_sentinel = true;
                out.value = f64::INFINITY;
            } else {
                out.skipped += 1;
            }
            continue;
        }
        if sigma_hat * s < floor_den {
            out.clipped += 1;
        }
        out.value = out.value.max(num / den);
    }
    Ok(out)
}

/// Sweep axis for slope fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Fit `log e_inf` against `log n`, grouped by fixed `m`.
    N,
    /// Fit `log e_inf` against `log m`, grouped by fixed `n`.
    M,
}

/// A fitted log-log slope for one fixed value of the other axis.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    pub fixed: usize,
    pub slope: f64,
}

/// Least-squares slope of `log e_inf` vs `log(axis size)` per fixed
/// other-axis value. Every group present must have at least 3 rows.
pub fn convergence_slopes(rows: &[MetricRow], axis: SweepAxis) -> Result<Vec<SlopeFit>> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let (fixed, var) = match axis {
            SweepAxis::N => (r.m, r.n),
            SweepAxis::M => (r.n, r.m),
        };
        groups
            .entry(fixed)
            .or_default()
            .push(((var as f64).ln(), r.e_inf.ln()));
    }
    let mut out = Vec::new();
    for (fixed, pts) in groups {
        if pts.len() < 3 {
            return Err(Error::InsufficientRows(pts.len()));
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        out.push(SlopeFit { fixed, slope });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::arr2;

    fn row(n: usize, m: usize, e_inf: f64) -> MetricRow {
        MetricRow {
            n,
            m,
            e_inf,
            z: 1.0,
            sigma_hat: 1.0,
            runtime_s: 0.0,
            f_evals: 0,
            g_evals: 0,
            h_evals: 0,
            jitter_events: 0,
        }
    }

    #[test]
    fn sup_error_basics() {
        let a = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = a.clone();
        assert_eq!(sup_error(&a, &b).unwrap(), 0.0);
        let c = a.mapv(|v| v + 0.25);
        assert_abs_diff_eq!(sup_error(&a, &c).unwrap(), 0.25);
        assert_abs_diff_eq!(
            sup_error(&a, &c).unwrap(),
            sup_error(&c, &a).unwrap()
        );
        let bad = arr2(&[[1.0, 2.0, 3.0]]);
        assert!(matches!(
            sup_error(&a, &bad),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn z_score_basics() {
        let mean = arr2(&[[1.2]]);
        let truth = arr2(&[[1.0]]);
        let std = arr2(&[[0.1]]);
        let z = z_score(&mean, &std, 1.0, &truth, 1e-6).unwrap();
        assert_relative_eq!(z.value, 2.0, max_relative = 1e-12);
        // mean == truth -> 0
        let z0 = z_score(&truth, &std, 1.0, &truth, 1e-6).unwrap();
        assert_eq!(z0.value, 0.0);
        // doubling sigma_hat halves Z
        let z2 = z_score(&mean, &std, 2.0, &truth, 1e-6).unwrap();
        assert_relative_eq!(z2.value, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn z_score_skips_exact_constraints_and_clips_floor() {
        let mean = arr2(&[[1.0, 2.0], [0.5, 0.0]]);
        let truth = arr2(&[[1.0, 2.0 + 0.3], [0.5, 0.0]]);
        let std = arr2(&[[0.0, 1.0], [1e-12, 0.0]]);
        let z = z_score(&mean, &std, 1.0, &truth, 1e-6).unwrap();
        assert_eq!(z.skipped, 2);
        assert_eq!(z.clipped, 1);
        assert_relative_eq!(z.value, 0.3, max_relative = 1e-12);
    }

    #[test]
    fn z_score_zero_amplitude_sentinel() {
        let mean = arr2(&[[1.0]]);
        let truth = arr2(&[[0.0]]);
        let std = arr2(&[[0.5]]);
        let z = z_score(&mean, &std, 0.0, &truth, 1e-6).unwrap();
        assert!(z.infinite_sentinel);
        assert!(z.value.is_infinite());
        // zero amplitude with zero error is fine
        let z0 = z_score(&truth, &std, 0.0, &truth, 1e-6).unwrap();
        assert!(!z0.infinite_sentinel);
        assert_eq!(z0.value, 0.0);
    }

    #[test]
    fn z_invariant_under_joint_rescaling() {
        let mean = arr2(&[[1.3, 0.2], [0.9, 2.0]]);
        let truth = arr2(&[[1.0, 0.4], [1.1, 1.5]]);
        let std = arr2(&[[0.2, 0.3], [0.15, 0.4]]);
        let z1 = z_score(&mean, &std, 1.7, &truth, 1e-6).unwrap();
        let c = 3.9;
        let mean_s = truth.clone() + (mean.clone() - truth.clone()) * c;
        let z2 = z_score(&mean_s, &std.mapv(|v| v * c), 1.7, &truth, 1e-6).unwrap();
        assert_relative_eq!(z1.value, z2.value, max_relative = 1e-12);
    }

    #[test]
    fn slopes_on_synthetic_data() {
        // e_inf = c / n exactly -> slope -1
        let rows: Vec<MetricRow> = [9, 17, 33, 65]
            .iter()
            .map(|&n| row(n, 65, 2.0 / n as f64))
            .collect();
        let fits = convergence_slopes(&rows, SweepAxis::N).unwrap();
        assert_eq!(fits.len(), 1);
        assert_eq!(fits[0].fixed, 65);
        assert_abs_diff_eq!(fits[0].slope, -1.0, epsilon = 1e-6);
        // constant error -> slope 0
        let flat: Vec<MetricRow> = [9, 17, 33].iter().map(|&n| row(n, 65, 0.5)).collect();
        let fits = convergence_slopes(&flat, SweepAxis::N).unwrap();
        assert_abs_diff_eq!(fits[0].slope, 0.0, epsilon = 1e-12);
        // too few rows
        assert!(matches!(
            convergence_slopes(&flat[..2], SweepAxis::N),
            Err(Error::InsufficientRows(2))
        ));
    }

    #[test]
    fn e_inf_grid_monotone_under_refinement() {
        // sampling two fixed continuous fields on nested grids never
        // decreases the grid supremum
        let f = |t: f64, x: f64| (3.0 * t).sin() * (2.0 * x).cos();
        let g = |t: f64, x: f64| 0.7 * (2.9 * t + 0.2).sin() * (2.1 * x).cos();
        let sample = |k: usize| {
            let n = 4 * k + 1;
            let a = Array2::from_shape_fn((n, n), |(i, j)| {
                f(i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64)
            });
            let b = Array2::from_shape_fn((n, n), |(i, j)| {
                g(i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64)
            });
            sup_error(&a, &b).unwrap()
        };
        let coarse = sample(1);
        let mid = sample(2);
        let fine = sample(4);
        assert!(coarse <= mid + 1e-15);
        assert!(mid <= fine + 1e-15);
    }

    #[test]
    fn csv_line_schema() {
        let r = row(9, 17, 0.5);
        let line = r.csv_line();
        assert_eq!(line.split(',').count(), CSV_HEADER.split(',').count());
        assert!(line.starts_with("9,17,0.5,1,1,"));
    }
}
