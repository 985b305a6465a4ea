//! Classical finite-difference comparators: Crank-Nicolson with a lagged
//! nonlinear term for the Burgers family, and a refine-factor reference
//! solution with a Richardson convergence estimate for problems without a
//! closed-form truth.

use crate::error::{Error, Result};
use crate::problems::PDEProblem;
use crate::solver::{Grid, StrategyKind};
use ndarray::Array2;

/// A field of values on a grid produced by a finite-difference run.
#[derive(Debug, Clone)]
pub struct FDField {
    pub grid: Grid,
    /// Time-major values: `[i][j]` is `(t_i, x_j)`.
    pub values: Array2<f64>,
}

struct BurgersForm {
    alpha: f64,
    advection: f64,
}

/// The operator must be `d/dt - alpha d2/dx2` with the advective
/// nonlinearity `u du/dx` carried by the lag-mean strategy.
fn burgers_form(problem: &PDEProblem) -> Result<BurgersForm> {
    if problem.strategy_hint != StrategyKind::LagMean {
        return Err(Error::UnsupportedOperator(format!(
            "{:?} nonlinearity",
            problem.strategy_hint
        )));
    }
    let mut alpha = 0.0;
    let mut saw_dt = false;
    for term in &problem.p_terms {
        match term.orders {
            (1, 0) if term.coeff == 1.0 => saw_dt = true,
            (0, 2) => alpha = -term.coeff,
            _ => {
                return Err(Error::UnsupportedOperator(format!(
                    "term {:?}",
                    term.orders
                )))
            }
        }
    }
    if !saw_dt || alpha < 0.0 {
        return Err(Error::UnsupportedOperator("missing d/dt or negative diffusivity".into()));
    }
    let advection = problem.param_value("advection").unwrap_or(1.0);
    Ok(BurgersForm { alpha, advection })
}

fn thomas_solve(
    lo: &[f64],
    di: &[f64],
    up: &[f64],
    rhs: &mut [f64],
    step: usize,
) -> Result<()> {
    let m = di.len();
    let mut cp = vec![0.0; m];
    if di[0].abs() < 1e-300 {
        return Err(Error::SingularTridiagonal { step });
    }
    cp[0] = up[0] / di[0];
    rhs[0] /= di[0];
    for j in 1..m {
        let den = di[j] - lo[j] * cp[j - 1];
        if den.abs() < 1e-300 {
            return Err(Error::SingularTridiagonal { step });
        }
        cp[j] = up[j] / den;
        rhs[j] = (rhs[j] - lo[j] * rhs[j - 1]) / den;
    }
    for j in (0..m - 1).rev() {
        rhs[j] -= cp[j] * rhs[j + 1];
    }
    Ok(())
}

/// Crank-Nicolson on the Burgers family: theta = 1/2 averaging of the
/// diffusion and forcing, the advective coefficient `u` in `u du/dx` lagged
/// wholly to the previous time level, centred spatial stencils, Dirichlet
/// rows pinned to `h`. The forcing vector is assembled on the full grid
/// before the boundary rows are pinned, so the evaluation budget equals the
/// grid size exactly.
pub fn crank_nicolson(problem: &PDEProblem, grid: &Grid) -> Result<FDField> {
    grid.validate()?;
    let form = burgers_form(problem)?;
    let n = grid.n();
    let m = grid.m();
    let dt = grid.delta_t();
    let dx = grid.x_nodes[1] - grid.x_nodes[0];
    let r = form.alpha * dt / (2.0 * dx * dx);

    let mut values = Array2::zeros((n, m));
    for j in 0..m {
        values[(0, j)] = if j == 0 || j == m - 1 {
            problem.h(grid.t_nodes[0], grid.x_nodes[j])?
        } else {
            problem.g(grid.x_nodes[j])?
        };
    }

    let mut lo = vec![0.0; m];
    let mut di = vec![0.0; m];
    let mut up = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for i in 0..n - 1 {
        let ti = grid.t_nodes[i];
        let tip = grid.t_nodes[i + 1];
        let mut fi = Vec::with_capacity(m);
        let mut fip = Vec::with_capacity(m);
        for j in 0..m {
            fi.push(problem.f(ti, grid.x_nodes[j])?);
            fip.push(problem.f(tip, grid.x_nodes[j])?);
        }
        for j in 0..m {
            if j == 0 || j == m - 1 {
                lo[j] = 0.0;
                up[j] = 0.0;
                di[j] = 1.0;
                rhs[j] = problem.h(tip, grid.x_nodes[j])?;
                continue;
            }
            let u = values[(i, j)];
            let lag = form.advection * u;
            let c = dt * lag / (4.0 * dx);
            di[j] = 1.0 + 2.0 * r;
            lo[j] = -r - c;
            up[j] = -r + c;
            rhs[j] = u
                + r * (values[(i, j + 1)] - 2.0 * u + values[(i, j - 1)])
                - c * (values[(i, j + 1)] - values[(i, j - 1)])
                + dt / 2.0 * (fi[j] + fip[j]);
        }
        thomas_solve(&lo, &di, &up, &mut rhs, i)?;
        for j in 0..m {
            values[(i + 1, j)] = rhs[j];
        }
    }
    Ok(FDField {
        grid: grid.clone(),
        values,
    })
}

/// Crank-Nicolson at an arbitrary resolution, storing the field only at an
/// aligned subsample of the fine grid. Memory stays bounded while the fine
/// run streams row by row.
fn crank_nicolson_subsampled(
    problem: &PDEProblem,
    n_fine: usize,
    m_fine: usize,
    t_stride: usize,
    x_stride: usize,
) -> Result<(Vec<f64>, Vec<f64>, Array2<f64>)> {
    let form = burgers_form(problem)?;
    let (t0, t1) = problem.t_span;
    let (x0, x1) = problem.x_span;
    let dt = (t1 - t0) / (n_fine - 1) as f64;
    let dx = (x1 - x0) / (m_fine - 1) as f64;
    let t_at = |i: usize| {
        if i == n_fine - 1 {
            t1
        } else {
            t0 + dt * i as f64
        }
    };
    let x_at = |j: usize| {
        if j == m_fine - 1 {
            x1
        } else {
            x0 + dx * j as f64
        }
    };
    let r = form.alpha * dt / (2.0 * dx * dx);

    let n_store = (n_fine - 1) / t_stride + 1;
    let m_store = (m_fine - 1) / x_stride + 1;
    let mut stored = Array2::zeros((n_store, m_store));

    let mut u: Vec<f64> = (0..m_fine)
        .map(|j| {
            if j == 0 || j == m_fine - 1 {
                problem.h(t0, x_at(j))
            } else {
                problem.g(x_at(j))
            }
        })
        .collect::<Result<_>>()?;
    for js in 0..m_store {
        stored[(0, js)] = u[js * x_stride];
    }

    let mut fi: Vec<f64> = (0..m_fine)
        .map(|j| problem.f(t0, x_at(j)))
        .collect::<Result<_>>()?;
    let mut lo = vec![0.0; m_fine];
    let mut di = vec![0.0; m_fine];
    let mut up = vec![0.0; m_fine];
    let mut rhs = vec![0.0; m_fine];
    for i in 0..n_fine - 1 {
        let tip = t_at(i + 1);
        let fip: Vec<f64> = (0..m_fine)
            .map(|j| problem.f(tip, x_at(j)))
            .collect::<Result<_>>()?;
        for j in 0..m_fine {
            if j == 0 || j == m_fine - 1 {
                lo[j] = 0.0;
                up[j] = 0.0;
                di[j] = 1.0;
                rhs[j] = problem.h(tip, x_at(j))?;
                continue;
            }
            let lag = form.advection * u[j];
            let c = dt * lag / (4.0 * dx);
            di[j] = 1.0 + 2.0 * r;
            lo[j] = -r - c;
            up[j] = -r + c;
            rhs[j] = u[j] + r * (u[j + 1] - 2.0 * u[j] + u[j - 1])
                - c * (u[j + 1] - u[j - 1])
                + dt / 2.0 * (fi[j] + fip[j]);
        }
        thomas_solve(&lo, &di, &up, &mut rhs, i)?;
        u.copy_from_slice(&rhs);
        fi = fip;
        if (i + 1) % t_stride == 0 {
            let is = (i + 1) / t_stride;
            for js in 0..m_store {
                stored[(is, js)] = u[js * x_stride];
            }
        }
    }
    let t_nodes = (0..n_store).map(|i| t_at(i * t_stride)).collect();
    let x_nodes = (0..m_store).map(|j| x_at(j * x_stride)).collect();
    Ok((t_nodes, x_nodes, stored))
}

/// A truth substitute built from a fine Crank-Nicolson field, with the
/// sup-difference between the `refine` and `2 * refine` runs retained as a
/// conservative estimate of its own error.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    t_nodes: Vec<f64>,
    x_nodes: Vec<f64>,
    values: Array2<f64>,
    pub est_truth_error: f64,
    pub refine: usize,
}

impl ReferenceSolution {
    /// Bilinear interpolation of the stored field. Experiment grids nested in
    /// the base grid hit stored nodes exactly.
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let (i, wt) = locate(&self.t_nodes, t);
        let (j, wx) = locate(&self.x_nodes, x);
        let v00 = self.values[(i, j)];
        let v01 = self.values[(i, j + 1)];
        let v10 = self.values[(i + 1, j)];
        let v11 = self.values[(i + 1, j + 1)];
        (1.0 - wt) * ((1.0 - wx) * v00 + wx * v01) + wt * ((1.0 - wx) * v10 + wx * v11)
    }

    /// Fails unless the estimated truth error is below `fraction` of the
    /// smallest error being measured against this reference.
    pub fn richardson_gate(&self, smallest_e_inf: f64, fraction: f64) -> Result<()> {
        let allowed = fraction * smallest_e_inf;
        if self.est_truth_error >= allowed {
            return Err(Error::ReferenceNotConverged {
                estimated: self.est_truth_error,
                allowed,
            });
        }
        Ok(())
    }
}

fn locate(nodes: &[f64], v: f64) -> (usize, f64) {
    let n = nodes.len();
    if v <= nodes[0] {
        return (0, 0.0);
    }
    if v >= nodes[n - 1] {
        return (n - 2, 1.0);
    }
    let mut lo = 0;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if nodes[mid] <= v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = (v - nodes[lo]) / (nodes[lo + 1] - nodes[lo]);
    (lo, w)
}

/// Builds the reference by running Crank-Nicolson at `refine` and
/// `2 * refine` times the base grid resolution, comparing the two on a
/// common subsample, and keeping the finer field as the evaluator.
/// Memoisation is disabled on the internal problem clone: the fine node set
/// would not fit in a cache, and the clone's counters are separate from any
/// budget comparison.
pub fn reference_solution(
    problem: &PDEProblem,
    base: (usize, usize),
    refine: usize,
) -> Result<ReferenceSolution> {
    if refine < 4 {
        return Err(Error::Config(format!(
            "reference refine factor must be >= 4, got {refine}"
        )));
    }
    let (n_base, m_base) = base;
    let p = problem.clone_fresh().without_caching();
    let store = refine.min(8);
    let sizes = |r: usize| ((n_base - 1) * r + 1, (m_base - 1) * r + 1);

    let (n1, m1) = sizes(refine);
    let (tn, xn, coarse) =
        crank_nicolson_subsampled(&p, n1, m1, refine / store, refine / store)?;
    let (n2, m2) = sizes(2 * refine);
    let (tn2, xn2, fine) =
        crank_nicolson_subsampled(&p, n2, m2, 2 * refine / store, 2 * refine / store)?;
    debug_assert_eq!(tn.len(), tn2.len());
    debug_assert_eq!(xn.len(), xn2.len());

    let mut est = 0.0f64;
    for i in 0..coarse.nrows() {
        for j in 0..coarse.ncols() {
            est = est.max((coarse[(i, j)] - fine[(i, j)]).abs());
        }
    }
    Ok(ReferenceSolution {
        t_nodes: tn2,
        x_nodes: xn2,
        values: fine,
        est_truth_error: est,
        refine,
    })
}

/// Sup-differences between consecutive time refinements at fixed spatial
/// resolution, compared on the coarsest run's nodes. Doubling resolutions
/// shrink these by the scheme's convergence order; a diagnostic for the
/// Richardson machinery behind [`reference_solution`].
pub fn time_refinement_diffs(
    problem: &PDEProblem,
    m_fixed: usize,
    n_levels: &[usize],
) -> Result<Vec<f64>> {
    let p = problem.clone_fresh().without_caching();
    let n0 = n_levels[0];
    let mut prev: Option<Array2<f64>> = None;
    let mut diffs = Vec::new();
    for &n in n_levels {
        debug_assert_eq!((n - 1) % (n0 - 1), 0);
        let stride = (n - 1) / (n0 - 1);
        let (_, _, field) = crank_nicolson_subsampled(&p, n, m_fixed, stride, 1)?;
        if let Some(a) = prev.take() {
            let mut d = 0.0f64;
            for i in 0..a.nrows() {
                for j in 0..a.ncols() {
                    d = d.max((a[(i, j)] - field[(i, j)]).abs());
                }
            }
            diffs.push(d);
        }
        prev = Some(field);
    }
    Ok(diffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::DiffTerm;
    use crate::problems::{burgers_forced, porous_medium};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn heat_problem(advection: bool) -> PDEProblem {
        let pi = std::f64::consts::PI;
        let mut p = PDEProblem::custom(
            (0.0, 0.1),
            (0.0, 1.0),
            vec![DiffTerm::new(1.0, 1, 0), DiffTerm::new(-1.0, 0, 2)],
            StrategyKind::LagMean,
            Arc::new(|_, _| 0.0),
            Arc::new(move |x| (pi * x).sin()),
            Arc::new(|_, _| 0.0),
            Some(Arc::new(move |t: f64, x: f64| {
                (-pi * pi * t).exp() * (pi * x).sin()
            })),
        );
        if !advection {
            p.params.push(("advection".to_string(), 0.0));
        }
        p
    }

    fn zero_problem() -> PDEProblem {
        PDEProblem::custom(
            (0.0, 1.0),
            (0.0, 1.0),
            vec![DiffTerm::new(1.0, 1, 0), DiffTerm::new(-1.0, 0, 2)],
            StrategyKind::LagMean,
            Arc::new(|_, _| 0.0),
            Arc::new(|_| 0.0),
            Arc::new(|_, _| 0.0),
            None,
        )
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let p = zero_problem();
        let grid = Grid::for_problem(&p, 9, 9).unwrap();
        let field = crank_nicolson(&p, &grid).unwrap();
        for v in field.values.iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn heat_equation_accuracy() {
        let p = heat_problem(false);
        let grid = Grid::for_problem(&p, 641, 161).unwrap();
        let field = crank_nicolson(&p, &grid).unwrap();
        // t = 0.1 is the last level, x = 0.5 the middle node
        let got = field.values[(640, 80)];
        let want = p.truth(0.1, 0.5).unwrap();
        assert!(
            (got - want).abs() < 1e-3,
            "heat error {} too large",
            (got - want).abs()
        );
    }

    #[test]
    fn second_order_convergence_on_heat() {
        let p = heat_problem(false);
        let err_at = |n: usize, m: usize| {
            let grid = Grid::for_problem(&p, n, m).unwrap();
            let field = crank_nicolson(&p, &grid).unwrap();
            let mut e = 0.0f64;
            for i in 0..n {
                for j in 0..m {
                    let want = p.truth(grid.t_nodes[i], grid.x_nodes[j]).unwrap();
                    e = e.max((field.values[(i, j)] - want).abs());
                }
            }
            e
        };
        let e1 = err_at(41, 21);
        let e2 = err_at(81, 41);
        let ratio = e1 / e2;
        assert!(
            (3.0..=5.0).contains(&ratio),
            "convergence ratio {ratio} outside [3, 5]"
        );
    }

    #[test]
    fn unconditional_stability_on_lattice() {
        // single-mode initial data: the sup-norm must never grow, whatever
        // the step sizes
        let pi = std::f64::consts::PI;
        for &n in &[3usize, 6, 11] {
            for &m in &[6usize, 41] {
                let mut p = PDEProblem::custom(
                    (0.0, 2.0),
                    (0.0, 1.0),
                    vec![DiffTerm::new(1.0, 1, 0), DiffTerm::new(-1.0, 0, 2)],
                    StrategyKind::LagMean,
                    Arc::new(|_, _| 0.0),
                    Arc::new(move |x| (pi * x).sin()),
                    Arc::new(|_, _| 0.0),
                    None,
                );
                p.params.push(("advection".into(), 0.0));
                let grid = Grid::for_problem(&p, n, m).unwrap();
                let field = crank_nicolson(&p, &grid).unwrap();
                let mut prev = f64::INFINITY;
                for i in 0..n {
                    let sup = (0..m)
                        .map(|j| field.values[(i, j)].abs())
                        .fold(0.0f64, f64::max);
                    assert!(
                        sup <= prev + 1e-12,
                        "sup-norm grew at level {i}: {prev} -> {sup} (n={n}, m={m})"
                    );
                    prev = sup;
                }
            }
        }
    }

    #[test]
    fn rejects_non_burgers_operator() {
        let p = porous_medium();
        let grid = Grid::for_problem(&p, 5, 5).unwrap();
        assert!(matches!(
            crank_nicolson(&p, &grid),
            Err(Error::UnsupportedOperator(_))
        ));
    }

    #[test]
    fn forcing_budget_covers_full_grid() {
        let p = burgers_forced();
        let grid = Grid::for_problem(&p, 9, 17).unwrap();
        crank_nicolson(&p, &grid).unwrap();
        assert_eq!(p.eval_counts().f, 9 * 17);
    }

    #[test]
    fn reference_zero_problem_is_zero() {
        let p = zero_problem();
        let r = reference_solution(&p, (5, 5), 4).unwrap();
        assert_eq!(r.est_truth_error, 0.0);
        for &t in &[0.0, 0.33, 1.0] {
            for &x in &[0.0, 0.5, 1.0] {
                assert_eq!(r.eval(t, x), 0.0);
            }
        }
    }

    #[test]
    fn reference_matches_h_at_boundary() {
        let p = burgers_forced();
        let r = reference_solution(&p, (5, 9), 4).unwrap();
        for &t in &[0.0, 7.5, 30.0] {
            assert_abs_diff_eq!(r.eval(t, 0.0), 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(r.eval(t, 1.0), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn reference_rejects_small_refine() {
        let p = burgers_forced();
        assert!(reference_solution(&p, (5, 5), 2).is_err());
    }

    #[test]
    fn richardson_gate_thresholds() {
        let p = zero_problem();
        let mut r = reference_solution(&p, (5, 5), 4).unwrap();
        r.est_truth_error = 0.05;
        assert!(r.richardson_gate(1.0, 0.1).is_ok());
        assert!(matches!(
            r.richardson_gate(0.2, 0.1),
            Err(Error::ReferenceNotConverged { .. })
        ));
    }
}
