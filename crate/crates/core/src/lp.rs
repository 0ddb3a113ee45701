//! Dense bounded-variable primal simplex.
//!
//! Small, deterministic LP solver used for the relaxations inside the
//! branch-and-bound. Every structural variable needs at least one finite
//! bound. Rows become equalities against a "row activity" variable carrying
//! the row bounds; rows whose activity starts outside its bounds get an
//! artificial variable that phase one drives to zero.
//!
//! Pricing is Dantzig's rule, switching to Bland's rule for the iteration
//! after a degenerate pivot.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

/// `coeffs · x (sense) rhs`, with sparse coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

/// `min objective · x` subject to rows and variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LinearRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    pub max_iterations: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            pivot_tol: 1e-9,
            max_iterations: 50_000,
        }
    }
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            lower: vec![0.0; num_vars],
            upper: vec![f64::INFINITY; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: RowSense, rhs: f64) {
        self.rows.push(LinearRow { coeffs, sense, rhs });
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        self.solve_with(&LpOptions::default())
    }

    pub fn solve_with(&self, opts: &LpOptions) -> Result<LpOutcome> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::invalid("bound vectors do not match objective length"));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] + opts.feasibility_tol {
                return Ok(LpOutcome::Infeasible);
            }
            if !self.lower[j].is_finite() && !self.upper[j].is_finite() {
                return Err(Error::invalid(format!("variable {j} is free; a finite bound is required")));
            }
        }
        for row in &self.rows {
            if row.coeffs.iter().any(|&(j, _)| j >= n) {
                return Err(Error::invalid("row references an unknown variable"));
            }
        }
        Tableau::build(self, opts).run(self, opts)
    }
}

struct Tableau {
    m: usize,
    cols: usize,
    n_struct: usize,
    first_art: usize,
    tab: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    x: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl Tableau {
    fn build(lp: &LinearProgram, opts: &LpOptions) -> Self {
        let n = lp.num_vars();
        let m = lp.rows.len();
        let mut lb = lp.lower.clone();
        let mut ub = lp.upper.clone();
        // Clamp crossed-within-tolerance bounds.
        for j in 0..n {
            if lb[j] > ub[j] {
                ub[j] = lb[j];
            }
        }
        let mut x: Vec<f64> = (0..n).map(|j| if lb[j].is_finite() { lb[j] } else { ub[j] }).collect();

        let mut activity = vec![0.0; m];
        let mut row_bounds = Vec::with_capacity(m);
        for (i, row) in lp.rows.iter().enumerate() {
            activity[i] = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            row_bounds.push(match row.sense {
                RowSense::Le => (f64::NEG_INFINITY, row.rhs),
                RowSense::Ge => (row.rhs, f64::INFINITY),
                RowSense::Eq => (row.rhs, row.rhs),
            });
        }
        let needs_art: Vec<bool> = (0..m)
            .map(|i| {
                let (lo, hi) = row_bounds[i];
                let tol = opts.feasibility_tol * (1.0 + activity[i].abs());
                activity[i] < lo - tol || activity[i] > hi + tol
            })
            .collect();
        let n_art = needs_art.iter().filter(|&&b| b).count();
        let first_art = n + m;
        let cols = n + m + n_art;

        x.resize(cols, 0.0);
        lb.resize(cols, 0.0);
        ub.resize(cols, 0.0);
        let mut tab = vec![0.0; m * cols];
        let mut basis = vec![0; m];
        let mut is_basic = vec![false; cols];
        let mut art = first_art;
        for (i, row) in lp.rows.iter().enumerate() {
            let r = n + i;
            let (lo, hi) = row_bounds[i];
            lb[r] = lo;
            ub[r] = hi;
            let line = &mut tab[i * cols..(i + 1) * cols];
            if !needs_art[i] {
                // r_i − a_i·x = 0 with r_i basic.
                for &(j, a) in &row.coeffs {
                    line[j] -= a;
                }
                line[r] = 1.0;
                x[r] = activity[i];
                basis[i] = r;
            } else {
                let target = if activity[i] > hi { hi } else { lo };
                let d = if target > activity[i] { 1.0 } else { -1.0 };
                // (a_i·x − r_i + d·art) / d = 0 with art basic.
                for &(j, a) in &row.coeffs {
                    line[j] += a / d;
                }
                line[r] = -1.0 / d;
                line[art] = 1.0;
                x[r] = target;
                x[art] = (target - activity[i]).abs();
                lb[art] = 0.0;
                ub[art] = f64::INFINITY;
                basis[i] = art;
                art += 1;
            }
            is_basic[basis[i]] = true;
        }
        Tableau { m, cols, n_struct: n, first_art, tab, basis, is_basic, x, lb, ub }
    }

    fn run(mut self, lp: &LinearProgram, opts: &LpOptions) -> Result<LpOutcome> {
        let mut iterations = 0;
        if self.first_art < self.cols {
            let mut cost = vec![0.0; self.cols];
            for c in cost.iter_mut().skip(self.first_art) {
                *c = 1.0;
            }
            if self.optimize(&cost, false, opts, &mut iterations)? == Phase::Unbounded {
                return Err(Error::SolverFailure("phase one reported unbounded".into()));
            }
            let infeasibility: f64 = self.x[self.first_art..].iter().sum();
            let scale = 1.0 + lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
            if infeasibility > opts.feasibility_tol * scale {
                return Ok(LpOutcome::Infeasible);
            }
            for j in self.first_art..self.cols {
                self.ub[j] = 0.0;
            }
        }
        let mut cost = vec![0.0; self.cols];
        cost[..self.n_struct].copy_from_slice(&lp.objective);
        if self.optimize(&cost, true, opts, &mut iterations)? == Phase::Unbounded {
            return Ok(LpOutcome::Unbounded);
        }
        let x: Vec<f64> = self.x[..self.n_struct].to_vec();
        let value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        Ok(LpOutcome::Optimal { value, x })
    }

    #[allow(clippy::needless_range_loop)]
    fn optimize(
        &mut self,
        cost: &[f64],
        skip_artificials: bool,
        opts: &LpOptions,
        iterations: &mut usize,
    ) -> Result<Phase> {
        let cols = self.cols;
        let mut bland = false;
        let mut reduced = vec![0.0; cols];
        loop {
            if *iterations >= opts.max_iterations {
                return Err(Error::SolverFailure(format!(
                    "simplex iteration limit ({}) reached",
                    opts.max_iterations
                )));
            }
            *iterations += 1;

            reduced.copy_from_slice(cost);
            for i in 0..self.m {
                let cb = cost[self.basis[i]];
                if cb != 0.0 {
                    let line = &self.tab[i * cols..(i + 1) * cols];
                    for (r, t) in reduced.iter_mut().zip(line) {
                        *r -= cb * t;
                    }
                }
            }

            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..cols {
                if self.is_basic[j] || self.ub[j] - self.lb[j] <= 0.0 {
                    continue;
                }
                if skip_artificials && j >= self.first_art {
                    continue;
                }
                let d = reduced[j];
                let at_lower = self.x[j] <= self.lb[j];
                let at_upper = self.x[j] >= self.ub[j];
                let dir = if d < -opts.optimality_tol && !at_upper {
                    1.0
                } else if d > opts.optimality_tol && !at_lower {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if d.abs() > best {
                    best = d.abs();
                    entering = Some((j, dir));
                }
            }
            let Some((j, dir)) = entering else {
                return Ok(Phase::Optimal);
            };

            let mut theta = self.ub[j] - self.lb[j];
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let alpha = self.tab[i * cols + j] * dir;
                let b = self.basis[i];
                let limit = if alpha > opts.pivot_tol {
                    if self.lb[b].is_finite() {
                        ((self.x[b] - self.lb[b]) / alpha).max(0.0)
                    } else {
                        continue;
                    }
                } else if alpha < -opts.pivot_tol {
                    if self.ub[b].is_finite() {
                        ((self.ub[b] - self.x[b]) / -alpha).max(0.0)
                    } else {
                        continue;
                    }
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit < theta,
                    Some((r, a)) => {
                        if limit < theta - 1e-12 {
                            true
                        } else if limit <= theta + 1e-12 {
                            if bland {
                                b < self.basis[r]
                            } else {
                                alpha.abs() > a.abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    theta = limit.min(theta);
                    leave = Some((i, alpha));
                }
            }
            if !theta.is_finite() {
                return Ok(Phase::Unbounded);
            }

            for i in 0..self.m {
                let t = self.tab[i * cols + j];
                if t != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= t * dir * theta;
                }
            }
            match leave {
                None => {
                    self.x[j] = if dir > 0.0 { self.ub[j] } else { self.lb[j] };
                }
                Some((r, alpha)) => {
                    self.x[j] += dir * theta;
                    let out = self.basis[r];
                    self.x[out] = if alpha > 0.0 { self.lb[out] } else { self.ub[out] };
                    self.pivot(r, j);
                }
            }
            bland = theta <= 1e-12;
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.tab[r * cols + j];
        for v in &mut self.tab[r * cols..(r + 1) * cols] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.tab[r * cols..(r + 1) * cols].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.tab[i * cols + j];
            if f != 0.0 {
                let line = &mut self.tab[i * cols..(i + 1) * cols];
                for (v, pr) in line.iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                line[j] = 0.0;
            }
        }
        let out = self.basis[r];
        self.is_basic[out] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Phase {
    Optimal,
    Unbounded,
}
