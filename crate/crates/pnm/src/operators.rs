//! Linear differential operators anchored at points, and linear functionals
//! built from them (point evaluations, operator-at-a-point rows, quadrature
//! sums). Functionals are immutable values; cross-covariance evaluation under
//! a tensor kernel is pure and thread-safe.

use crate::error::{Error, Result};
use crate::kernels::{Point, TensorKernel};
use serde::{Deserialize, Serialize};

/// One term of a linear differential operator: `coeff * d_t^{a_t} d_x^{a_x}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffTerm {
    pub coeff: f64,
    /// (time order, space order)
    pub orders: (u32, u32),
}

impl DiffTerm {
    pub fn new(coeff: f64, dt_order: u32, dx_order: u32) -> Self {
        DiffTerm {
            coeff,
            orders: (dt_order, dx_order),
        }
    }

    /// Pure value term (identity operator).
    pub fn value(coeff: f64) -> Self {
        DiffTerm::new(coeff, 0, 0)
    }
}

/// One anchored atom of a functional: `weight * sum_terms coeff * d^orders u(anchor)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub anchor: Point,
    pub terms: Vec<DiffTerm>,
    pub weight: f64,
}

/// A linear functional of the unknown field: a weighted sum of differential
/// operators applied at anchor points. Evaluation against any field is linear
/// by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFunctional {
    pub atoms: Vec<Atom>,
}

impl LinearFunctional {
    /// The functional `u -> u(z)`.
    pub fn point_eval(z: Point) -> Self {
        LinearFunctional {
            atoms: vec![Atom {
                anchor: z,
                terms: vec![DiffTerm::value(1.0)],
                weight: 1.0,
            }],
        }
    }

    /// The functional `u -> sum_terms coeff * d_t^{a_t} d_x^{a_x} u(z)`.
    pub fn operator_at(terms: Vec<DiffTerm>, z: Point) -> Self {
        LinearFunctional {
            atoms: vec![Atom {
                anchor: z,
                terms,
                weight: 1.0,
            }],
        }
    }

    /// Trapezoidal-rule functional `u -> sum_j w_j u(t_anchor, x_j)` over the
    /// given strictly increasing nodes. Interior weights are
    /// `(x_{j+1} - x_{j-1})/2`, endpoint weights half the adjacent spacing.
    pub fn quadrature(x_nodes: &[f64], t_anchor: f64) -> Result<Self> {
        if x_nodes.len() < 2 {
            return Err(Error::TooFewQuadratureNodes(x_nodes.len()));
        }
        if x_nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::NonIncreasingQuadratureNodes);
        }
        let m = x_nodes.len();
        let atoms = (0..m)
            .map(|j| {
                let w = if j == 0 {
                    (x_nodes[1] - x_nodes[0]) / 2.0
                } else if j == m - 1 {
                    (x_nodes[m - 1] - x_nodes[m - 2]) / 2.0
                } else {
                    (x_nodes[j + 1] - x_nodes[j - 1]) / 2.0
                };
                Atom {
                    anchor: Point::new(t_anchor, x_nodes[j]),
                    terms: vec![DiffTerm::value(1.0)],
                    weight: w,
                }
            })
            .collect();
        Ok(LinearFunctional { atoms })
    }

    /// Quadrature weights of [`LinearFunctional::quadrature`] without the functional wrapper.
    pub fn trapezoid_weights(x_nodes: &[f64]) -> Result<Vec<f64>> {
        Ok(Self::quadrature(x_nodes, 0.0)?
            .atoms
            .into_iter()
            .map(|a| a.weight)
            .collect())
    }

    /// Scales the functional by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for a in &mut out.atoms {
            a.weight *= c;
        }
        out
    }

    /// The sum functional `self + other`.
    pub fn plus(&self, other: &Self) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        LinearFunctional { atoms }
    }

    /// Largest (time, space) derivative order appearing in any term.
    pub fn max_orders(&self) -> (u32, u32) {
        let mut mt = 0;
        let mut mx = 0;
        for a in &self.atoms {
            for term in &a.terms {
                mt = mt.max(term.orders.0);
                mx = mx.max(term.orders.1);
            }
        }
        (mt, mx)
    }

    /// Applies the functional to a plain (point-value) field. Only valid when
    /// every term is a pure value term; used for prior means and mass checks.
    pub fn apply_to_values(&self, field: impl Fn(Point) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for a in &self.atoms {
            for term in &a.terms {
                if term.orders != (0, 0) {
                    return Err(Error::PriorMeanNotDifferentiable);
                }
                acc += a.weight * term.coeff * field(a.anchor);
            }
        }
        Ok(acc)
    }
}

/// Cross-covariance `Cov(lambda U, lambda' U)` under the tensor kernel:
/// the bilinear expansion over atom and term pairs of
/// `w w' c c' * cross_cov(orders, orders', anchor, anchor')`.
pub fn functional_cross_cov(
    kernel: &TensorKernel,
    lambda: &LinearFunctional,
    lambda_p: &LinearFunctional,
) -> Result<f64> {
    let (lt, lx) = lambda.max_orders();
    let (rt, rx) = lambda_p.max_orders();
    kernel.validate_orders(lt + rt, lx + rx)?;
    Ok(functional_cross_cov_unchecked(kernel, lambda, lambda_p))
}

/// Orders must already be within the kernel budget.
///
/// Within one atom pair every term pair shares the same coordinate offsets,
/// so the per-axis derivative values are cached by total order; the
/// right-argument sign `(-1)^{c_t + c_x}` is applied per pair. Finite kernels
/// make NaN a safe "unset" sentinel.
#[inline]
pub(crate) fn functional_cross_cov_unchecked(
    kernel: &TensorKernel,
    lambda: &LinearFunctional,
    lambda_p: &LinearFunctional,
) -> f64 {
    let mut acc = 0.0;
    let mut kt = [f64::NAN; 8];
    let mut kx = [f64::NAN; 8];
    for a in &lambda.atoms {
        for b in &lambda_p.atoms {
            let w = a.weight * b.weight;
            if w == 0.0 {
                continue;
            }
            let dt = a.anchor.t - b.anchor.t;
            let dx = a.anchor.x - b.anchor.x;
            kt.fill(f64::NAN);
            kx.fill(f64::NAN);
            let mut inner = 0.0;
            for ta in &a.terms {
                for tb in &b.terms {
                    let ot = (ta.orders.0 + tb.orders.0) as usize;
                    let ox = (ta.orders.1 + tb.orders.1) as usize;
                    if kt[ot].is_nan() {
                        kt[ot] = kernel.time_factor().deriv_unchecked(ot as u32, dt);
                    }
                    if kx[ox].is_nan() {
                        kx[ox] = kernel.space_factor().deriv_unchecked(ox as u32, dx);
                    }
                    let sign = if (tb.orders.0 + tb.orders.1) % 2 == 1 {
                        -1.0
                    } else {
                        1.0
                    };
                    inner += ta.coeff * tb.coeff * sign * kt[ot] * kx[ox];
                }
            }
            acc += w * inner;
        }
    }
    acc
}
