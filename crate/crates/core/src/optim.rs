//! Dense Levenberg-Marquardt and linear least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A nonlinear least-squares problem `min 1/2 ||r(x)||^2`.
///
/// Residual evaluations that fail (for example a point projecting behind the
/// camera) should return non-finite entries; the solver rejects such steps.
pub trait LeastSquaresProblem {
    fn num_params(&self) -> usize;
    fn num_residuals(&self) -> usize;
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Optional Jacobian hook. Defaults to central differences.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        numeric_jacobian(self, x)
    }
}

/// Adapts a closure into a [`LeastSquaresProblem`].
pub struct FnProblem<F> {
    params: usize,
    residuals: usize,
    f: F,
}

impl<F> FnProblem<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    pub fn new(params: usize, residuals: usize, f: F) -> Self {
        Self {
            params,
            residuals,
            f,
        }
    }
}

impl<F> LeastSquaresProblem for FnProblem<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn num_params(&self) -> usize {
        self.params
    }

    fn num_residuals(&self) -> usize {
        self.residuals
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }
}

/// Central-difference step for parameter value `x`.
pub fn difference_step(x: f64, scale: f64) -> f64 {
    scale.max(scale * x.abs())
}

/// Central-difference Jacobian with step `h_i = max(1e-6, 1e-6 |x_i|)`.
pub fn numeric_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    numeric_jacobian_with_step(problem, x, 1e-6)
}

/// Central-difference Jacobian with step `h_i = max(scale, scale |x_i|)`.
pub fn numeric_jacobian_with_step<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    scale: f64,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut jac = DMatrix::zeros(problem.num_residuals(), n);
    let mut probe = x.clone();
    for i in 0..n {
        let h = difference_step(x[i], scale);
        probe[i] = x[i] + h;
        let plus = problem.residuals(&probe);
        probe[i] = x[i] - h;
        let minus = problem.residuals(&probe);
        probe[i] = x[i];
        if plus.len() != jac.nrows() || minus.len() != jac.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "residual length {} / {}, expected {}",
                plus.len(),
                minus.len(),
                jac.nrows()
            )));
        }
        if !plus.iter().chain(minus.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteResidual);
        }
        jac.set_column(i, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 0.1,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            cost_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Step,
    Cost,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub solution: DVector<f64>,
    /// `1/2 sum r^2` at the solution.
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Damping above which the solver gives up on a singular system.
const MAX_DAMPING: f64 = 1e10;

fn half_squared_norm(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// Levenberg-Marquardt with Marquardt (`diag(J^T J)`) scaling.
pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    opts: &LmOptions,
) -> Result<LmResult> {
    let n = problem.num_params();
    let m = problem.num_residuals();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries, expected {n}",
            x0.len()
        )));
    }
    if m < n {
        return Err(Error::DimensionMismatch(format!(
            "{m} residuals < {n} parameters"
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput(
            "initial parameters are not finite".into(),
        ));
    }

    let mut x = x0.clone();
    let mut r = problem.residuals(&x);
    if r.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "residual length {}, expected {m}",
            r.len()
        )));
    }
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteResidual);
    }
    let mut cost = half_squared_norm(&r);
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = opts.initial_damping;

    let finish = |x: DVector<f64>,
                  cost: f64,
                  iterations: usize,
                  termination: Termination,
                  history: Vec<f64>| {
        Ok(LmResult {
            solution: x,
            cost,
            initial_cost,
            iterations,
            termination,
            cost_history: history,
        })
    };

    if cost == 0.0 {
        return finish(x, cost, 0, Termination::Cost, history);
    }

    for iteration in 1..=opts.max_iterations {
        let jac = problem.jacobian(&x)?;
        let gradient = jac.tr_mul(&r);
        if gradient.amax() < opts.gradient_tolerance {
            return finish(x, cost, iteration - 1, Termination::Gradient, history);
        }
        let jtj = jac.tr_mul(&jac);
        let diag_floor = jtj.diagonal().amax().max(1.0) * 1e-15;

        loop {
            let mut damped = jtj.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let step = match damped.cholesky() {
                Some(chol) => chol.solve(&(-&gradient)),
                None => {
                    if lambda >= MAX_DAMPING {
                        return Err(Error::SingularNormalEquations);
                    }
                    lambda *= opts.damping_increase;
                    continue;
                }
            };
            if !step.iter().all(|v| v.is_finite()) {
                if lambda >= MAX_DAMPING {
                    return Err(Error::SingularNormalEquations);
                }
                lambda *= opts.damping_increase;
                continue;
            }

            if step.norm() < opts.step_tolerance * (x.norm() + opts.step_tolerance) {
                return finish(x, cost, iteration, Termination::Step, history);
            }

            let candidate = &x + &step;
            let r_new = problem.residuals(&candidate);
            let cost_new = if r_new.iter().all(|v| v.is_finite()) {
                half_squared_norm(&r_new)
            } else {
                f64::INFINITY
            };

            if cost_new < cost {
                let decrease = cost - cost_new;
                x = candidate;
                r = r_new;
                cost = cost_new;
                history.push(cost);
                lambda = (lambda * opts.damping_decrease).max(1e-15);
                if cost == 0.0 || decrease <= opts.cost_tolerance * cost {
                    return finish(x, cost, iteration, Termination::Cost, history);
                }
                break;
            }

            if lambda >= MAX_DAMPING {
                // No descent possible even with tiny steps: numerically converged.
                return finish(x, cost, iteration, Termination::Step, history);
            }
            lambda *= opts.damping_increase;
        }
    }
    finish(
        x,
        cost,
        opts.max_iterations,
        Termination::MaxIterations,
        history,
    )
}

/// Least-squares solution of `A x = b` via Householder QR.
pub fn linear_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "A has {m} rows, b has {}",
            b.len()
        )));
    }
    if m < n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "need rows >= cols > 0, got {m}x{n}"
        )));
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite entries in least-squares system".into(),
        ));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let largest = r.diagonal().amax();
    if largest == 0.0 || r.diagonal().iter().any(|d| d.abs() < 1e-12 * largest) {
        return Err(Error::RankDeficient);
    }
    let qtb = qr.q().tr_mul(b);
    r.solve_upper_triangular(&qtb).ok_or(Error::RankDeficient)
}
