//! Small dense semidefinite programs by a primal log-barrier method.
//!
//! Solves
//!
//! ```text
//! minimize cᵀy  subject to  F₀ + Σ yᵢFᵢ ⪰ 0,  aₖᵀy + bₖ ≥ 0
//! ```
//!
//! with strict feasibility obtained from a phase-one problem. Every
//! variable is additionally boxed by `|yᵢ| ≤ R` so both phases stay bounded.
//! All arithmetic is sequential and deterministic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// `constant + coeffs · y ≥ 0`, labelled for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInequality {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearInequality {
    fn value(&self, y: &DVector<f64>) -> f64 {
        self.constant + self.coeffs.iter().map(|&(i, a)| a * y[i]).sum::<f64>()
    }
}

/// `F₀ + Σ yᵢFᵢ ⪰ 0` with symmetric coefficient matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMatrixInequality {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl LinearMatrixInequality {
    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (i, f) in self.coeffs.iter().enumerate() {
            if y[i] != 0.0 {
                m += f * y[i];
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub objective: DVector<f64>,
    pub lmi: LinearMatrixInequality,
    pub linear: Vec<LinearInequality>,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    /// Stop when the barrier duality-gap bound `m/t` drops below
    /// `gap_tol · (1 + |cᵀy|)`.
    pub gap_tol: f64,
    pub box_radius: f64,
    pub barrier_growth: f64,
    pub max_newton_per_stage: usize,
    pub max_stages: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            box_radius: 1e4,
            barrier_growth: 10.0,
            max_newton_per_stage: 200,
            max_stages: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdpOutcome {
    Optimal { y: DVector<f64>, value: f64 },
    /// No strictly feasible point exists. `constraint` names the most
    /// violated constraint at the phase-one optimum, `residual` its value.
    Infeasible { constraint: String, residual: f64 },
}

pub fn solve(problem: &SdpProblem, opts: &SdpOptions) -> Result<SdpOutcome> {
    let n = problem.objective.len();
    if problem.lmi.coeffs.len() != n {
        return Err(Error::invalid("LMI coefficient count does not match the variable count"));
    }
    let k = problem.lmi.constant.nrows();
    if problem.lmi.constant.ncols() != k || problem.lmi.coeffs.iter().any(|f| f.shape() != (k, k)) {
        return Err(Error::invalid("LMI matrices must be square and of equal size"));
    }
    let mut linear = Vec::with_capacity(problem.linear.len());
    for row in &problem.linear {
        if row.coeffs.iter().any(|&(i, _)| i >= n) {
            return Err(Error::invalid(format!("constraint {} references an unknown variable", row.name)));
        }
        let coeffs: Vec<(usize, f64)> = row.coeffs.iter().copied().filter(|&(_, a)| a != 0.0).collect();
        if coeffs.is_empty() {
            // Constant rows carry no information once checked.
            if row.constant < 0.0 {
                return Ok(SdpOutcome::Infeasible { constraint: row.name.clone(), residual: row.constant });
            }
            continue;
        }
        linear.push(LinearInequality { name: row.name.clone(), coeffs, constant: row.constant });
    }
    let r = opts.box_radius;
    for i in 0..n {
        linear.push(LinearInequality { name: format!("box_upper[{i}]"), coeffs: vec![(i, -1.0)], constant: r });
        linear.push(LinearInequality { name: format!("box_lower[{i}]"), coeffs: vec![(i, 1.0)], constant: r });
    }

    let y0 = match phase_one(problem, &linear, n, opts)? {
        Ok(y) => y,
        Err(infeasible) => return Ok(infeasible),
    };
    let barrier = Barrier { lmi: &problem.lmi, linear: &linear, objective: problem.objective.clone() };
    let y = barrier.minimize(y0, None, opts)?;
    let value = problem.objective.dot(&y);
    Ok(SdpOutcome::Optimal { y, value })
}

/// Finds a strictly feasible point, or reports infeasibility.
fn phase_one(
    problem: &SdpProblem,
    linear: &[LinearInequality],
    n: usize,
    opts: &SdpOptions,
) -> Result<std::result::Result<DVector<f64>, SdpOutcome>> {
    let y = DVector::zeros(n);
    let k = problem.lmi.constant.nrows();
    let lmi_min = min_eigenvalue(&problem.lmi.eval(&y));
    let lin_min = linear.iter().map(|r| r.value(&y)).fold(f64::INFINITY, f64::min);
    if lmi_min > 0.0 && lin_min > 0.0 {
        return Ok(Ok(y));
    }

    // Extra variable s shifts every non-box constraint: F + sI ⪰ 0, g + s ≥ 0.
    let s = n;
    let mut coeffs = problem.lmi.coeffs.clone();
    coeffs.push(DMatrix::identity(k, k));
    let lmi = LinearMatrixInequality { constant: problem.lmi.constant.clone(), coeffs };
    let mut shifted: Vec<LinearInequality> = linear
        .iter()
        .map(|row| {
            let mut row = row.clone();
            if !row.name.starts_with("box_") {
                row.coeffs.push((s, 1.0));
            }
            row
        })
        .collect();
    let s0 = (-lmi_min).max(-lin_min).max(0.0) + 1.0;
    shifted.push(LinearInequality { name: "shift_floor".into(), coeffs: vec![(s, 1.0)], constant: 1.0 });
    shifted.push(LinearInequality { name: "shift_cap".into(), coeffs: vec![(s, -1.0)], constant: 2.0 * s0 + 1.0 });
    let mut objective = DVector::zeros(n + 1);
    objective[s] = 1.0;
    let mut start = DVector::zeros(n + 1);
    start[s] = s0;

    let barrier = Barrier { lmi: &lmi, linear: &shifted, objective };
    let ys = barrier.minimize(start, Some(s), opts)?;
    if ys[s] < 0.0 {
        return Ok(Ok(ys.rows(0, n).into_owned()));
    }

    // Report the worst original constraint at the phase-one point.
    let y = ys.rows(0, n).into_owned();
    let mut worst = ("lmi".to_string(), min_eigenvalue(&problem.lmi.eval(&y)));
    for row in linear.iter().filter(|r| !r.name.starts_with("box_")) {
        let v = row.value(&y);
        if v < worst.1 {
            worst = (row.name.clone(), v);
        }
    }
    log::debug!("phase one stalled at s = {:.3e}", ys[s]);
    Ok(Err(SdpOutcome::Infeasible { constraint: worst.0, residual: worst.1.min(-ys[s]) }))
}

struct Barrier<'a> {
    lmi: &'a LinearMatrixInequality,
    linear: &'a [LinearInequality],
    objective: DVector<f64>,
}

impl Barrier<'_> {
    fn num_constraints(&self) -> f64 {
        (self.lmi.constant.nrows() + self.linear.len()) as f64
    }

    /// `t·cᵀy − log det F(y) − Σ log gₖ(y)`, or `None` outside the domain.
    fn value(&self, y: &DVector<f64>, t: f64) -> Option<f64> {
        let chol = Cholesky::new(self.lmi.eval(y))?;
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut v = t * self.objective.dot(y) - logdet;
        for row in self.linear {
            let g = row.value(y);
            if g <= 0.0 {
                return None;
            }
            v -= g.ln();
        }
        v.is_finite().then_some(v)
    }

    fn newton_system(&self, y: &DVector<f64>, t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = y.len();
        let chol = Cholesky::<f64, Dyn>::new(self.lmi.eval(y))?;
        let l = chol.l();
        // Sᵢ = L⁻¹FᵢL⁻ᵀ, so tr(F⁻¹Fᵢ) = tr Sᵢ and tr(F⁻¹FᵢF⁻¹Fⱼ) = ⟨Sᵢ, Sⱼ⟩.
        let s: Vec<DMatrix<f64>> = self
            .lmi
            .coeffs
            .iter()
            .map(|f| {
                let x = l.solve_lower_triangular(f).expect("Cholesky factor is nonsingular");
                l.solve_lower_triangular(&x.transpose()).expect("Cholesky factor is nonsingular")
            })
            .collect();
        let mut grad = &self.objective * t;
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            grad[i] -= s[i].trace();
            for j in 0..=i {
                let v = s[i].dot(&s[j]);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        for row in self.linear {
            let gk = row.value(y);
            for &(i, a) in &row.coeffs {
                grad[i] -= a / gk;
                for &(j, b) in &row.coeffs {
                    hess[(i, j)] += a * b / (gk * gk);
                }
            }
        }
        Some((grad, hess))
    }

    /// Path-following from a strictly feasible `y`. With `stop_below`, the
    /// run ends as soon as that variable is negative after a centering step.
    fn minimize(&self, mut y: DVector<f64>, stop_below: Option<usize>, opts: &SdpOptions) -> Result<DVector<f64>> {
        let m = self.num_constraints();
        let mut t = 1.0;
        for _ in 0..opts.max_stages {
            self.center(&mut y, t, opts)?;
            if let Some(s) = stop_below {
                if y[s] < 0.0 {
                    return Ok(y);
                }
            }
            let obj = self.objective.dot(&y);
            if m / t < opts.gap_tol * (1.0 + obj.abs()) {
                return Ok(y);
            }
            t *= opts.barrier_growth;
        }
        if stop_below.is_some() {
            return Ok(y);
        }
        Err(Error::SolverFailure("barrier method did not reach the requested gap".into()))
    }

    /// Largest `α` keeping `y + α·step` feasible, if bounded.
    fn max_step(&self, y: &DVector<f64>, step: &DVector<f64>) -> Option<f64> {
        let mut alpha = f64::INFINITY;
        for row in self.linear {
            let rate: f64 = row.coeffs.iter().map(|&(i, a)| a * step[i]).sum();
            if rate < 0.0 {
                alpha = alpha.min(row.value(y) / -rate);
            }
        }
        let chol = Cholesky::new(self.lmi.eval(y))?;
        let l = chol.l();
        let mut df = DMatrix::zeros(l.nrows(), l.ncols());
        for (i, f) in self.lmi.coeffs.iter().enumerate() {
            if step[i] != 0.0 {
                df += f * step[i];
            }
        }
        let x = l.solve_lower_triangular(&df)?;
        let sd = l.solve_lower_triangular(&x.transpose())?;
        let lmin = min_eigenvalue(&sd);
        if lmin < 0.0 {
            alpha = alpha.min(-1.0 / lmin);
        }
        alpha.is_finite().then_some(alpha)
    }

    fn center(&self, y: &mut DVector<f64>, t: f64, opts: &SdpOptions) -> Result<()> {
        let mut current = self
            .value(y, t)
            .ok_or_else(|| Error::InternalError("barrier iterate left the feasible region".into()))?;
        for _ in 0..opts.max_newton_per_stage {
            let (grad, hess) = self
                .newton_system(y, t)
                .ok_or_else(|| Error::InternalError("LMI lost definiteness during centering".into()))?;
            let step = solve_spd(&hess, &(-&grad))
                .ok_or_else(|| Error::SolverFailure("singular Newton system".into()))?;
            let decrement = -grad.dot(&step);
            if decrement / 2.0 <= 1e-8 {
                return Ok(());
            }
            let mut alpha = self.max_step(y, &step).map_or(1.0, |a| (0.99 * a).min(1.0));
            loop {
                let trial = &*y + &step * alpha;
                if let Some(v) = self.value(&trial, t) {
                    // Slack for round-off in large barrier values.
                    let slack = 1e-13 * current.abs();
                    if v <= current - 0.25 * alpha * decrement + slack {
                        *y = trial;
                        current = v;
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-10 {
                    // No further progress possible at this precision.
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}

fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Some(c.solve(rhs));
    }
    let scale = h.diagonal().amax().max(1.0);
    let mut reg = 1e-14 * scale;
    for _ in 0..8 {
        let shifted = h + DMatrix::identity(h.nrows(), h.ncols()) * reg;
        if let Some(c) = Cholesky::new(shifted) {
            return Some(c.solve(rhs));
        }
        reg *= 100.0;
    }
    None
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}
