//! Observer gain synthesis and certificate checking.
//!
//! The gain `L_o = P⁻¹H₁ − P⁻¹H₂` comes from
//!
//! ```text
//! min ρ  s.t.  P diagonal ≻ 0,  PA − (H₁ − H₂)C ≥ 0 (elementwise),  H₁, H₂ ≥ 0,
//!
//!     ⎡ P − I    0     (PA_o)ᵀ ⎤
//!     ⎢   0     ρI      D̂ᵀ    ⎥ ≻ 0,   D̂ = [P|B|, P|F|, H₁ + H₂, P]
//!     ⎣ PA_o    D̂       P     ⎦
//! ```
//!
//! Strict inequalities are enforced with a margin `eps`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::split_matrix;
use crate::sdp::{self, min_eigenvalue, LinearInequality, LinearMatrixInequality, SdpOptions, SdpOutcome, SdpProblem};

/// Discrete-time model `x⁺ = Ax + Bu + Fg(x) + w`, `y = Cx + v`.
///
/// The NN sees `yᵒ = C_o y`, where `C_o = [0 | I_ℓ | 0]` selects
/// `co_len` consecutive outputs starting at `co_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    #[serde(with = "matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub f: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub c: DMatrix<f64>,
    pub co_offset: usize,
    pub co_len: usize,
}

impl SystemModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        f: DMatrix<f64>,
        c: DMatrix<f64>,
        co_offset: usize,
        co_len: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::invalid("A must be square"));
        }
        for (name, m) in [("B", &b), ("F", &f)] {
            if m.nrows() != n {
                return Err(Error::invalid(format!("{name} must have {n} rows")));
            }
        }
        if c.ncols() != n {
            return Err(Error::invalid(format!("C must have {n} columns")));
        }
        if co_offset + co_len > c.nrows() {
            return Err(Error::invalid("output selector exceeds the number of outputs"));
        }
        for (name, m) in [("A", &a), ("B", &b), ("F", &f), ("C", &c)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { a, b, f, c, co_offset, co_len })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn s(&self) -> usize {
        self.f.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// `q = m + s + p + n`, the size of the stacked disturbance `ξ`.
    pub fn q(&self) -> usize {
        self.m() + self.s() + self.p() + self.n()
    }

    pub fn co_matrix(&self) -> DMatrix<f64> {
        let mut co = DMatrix::zeros(self.co_len, self.p());
        for i in 0..self.co_len {
            co[(i, self.co_offset + i)] = 1.0;
        }
        co
    }

    pub fn observability_rank(&self) -> usize {
        let n = self.n();
        let p = self.p();
        let mut obs = DMatrix::zeros(n * p, n);
        let mut block = self.c.clone();
        for k in 0..n {
            obs.view_mut((k * p, 0), (p, n)).copy_from(&block);
            block = &block * &self.a;
        }
        let sv = obs.singular_values();
        let tol = sv.max() * 1e-10 * (n * p) as f64;
        sv.iter().filter(|&&s| s > tol).count()
    }

    pub fn is_observable(&self) -> bool {
        self.observability_rank() == self.n()
    }
}

/// Gain and SDP variables proving the observer's H∞ bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverCertificate {
    #[serde(with = "matrix_rows")]
    pub l_o: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub l_o_pos: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub l_o_neg: DMatrix<f64>,
    /// Diagonal of `P`.
    pub p: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub h1: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub h2: DMatrix<f64>,
    pub rho: f64,
    pub eps: f64,
}

impl ObserverCertificate {
    /// Recovers the gains from `(P, H₁, H₂)`.
    pub fn from_variables(p: Vec<f64>, h1: DMatrix<f64>, h2: DMatrix<f64>, rho: f64, eps: f64) -> Result<Self> {
        if p.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::invalid("P must have a positive diagonal"));
        }
        if h1.nrows() != p.len() || h2.shape() != h1.shape() {
            return Err(Error::invalid("H₁, H₂ must be n×p"));
        }
        let scale = |h: &DMatrix<f64>| DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] / p[i]);
        let l_o_pos = scale(&h1);
        let l_o_neg = scale(&h2);
        let l_o = &l_o_pos - &l_o_neg;
        Ok(Self { l_o, l_o_pos, l_o_neg, p, h1, h2, rho, eps })
    }

    pub fn p_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.p))
    }

    /// `A_o = A − L_oC`.
    pub fn a_o(&self, model: &SystemModel) -> DMatrix<f64> {
        &model.a - &self.l_o * &model.c
    }

    /// `D = [|B|, |F|, L⁺ + L⁻, I]`, the width-dynamics input matrix.
    pub fn d_matrix(&self, model: &SystemModel) -> Result<DMatrix<f64>> {
        let n = model.n();
        let mut d = DMatrix::zeros(n, model.q());
        let mut col = 0;
        for block in [
            split_matrix(&model.b)?.abs,
            split_matrix(&model.f)?.abs,
            &self.l_o_pos + &self.l_o_neg,
            DMatrix::identity(n, n),
        ] {
            d.view_mut((0, col), (n, block.ncols())).copy_from(&block);
            col += block.ncols();
        }
        Ok(d)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// The block matrix of the synthesis LMI for given variables.
pub fn lmi_matrix(model: &SystemModel, p: &[f64], h1: &DMatrix<f64>, h2: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    let n = model.n();
    let q = model.q();
    let pm = DMatrix::from_diagonal(&DVector::from_column_slice(p));
    let pa_o = &pm * &model.a - (h1 - h2) * &model.c;
    let b_abs = split_matrix(&model.b)?.abs;
    let f_abs = split_matrix(&model.f)?.abs;
    let mut d_hat = DMatrix::zeros(n, q);
    let mut col = 0;
    for block in [&pm * b_abs, &pm * f_abs, h1 + h2, pm.clone()] {
        d_hat.view_mut((0, col), (n, block.ncols())).copy_from(&block);
        col += block.ncols();
    }
    let size = 2 * n + q;
    let mut m = DMatrix::zeros(size, size);
    m.view_mut((0, 0), (n, n)).copy_from(&(&pm - DMatrix::identity(n, n)));
    m.view_mut((n, n), (q, q)).copy_from(&(DMatrix::identity(q, q) * rho));
    m.view_mut((n + q, 0), (n, n)).copy_from(&pa_o);
    m.view_mut((0, n + q), (n, n)).copy_from(&pa_o.transpose());
    m.view_mut((n + q, n), (n, q)).copy_from(&d_hat);
    m.view_mut((n, n + q), (q, n)).copy_from(&d_hat.transpose());
    m.view_mut((n + q, n + q), (n, n)).copy_from(&pm);
    Ok(m)
}

/// Variable layout `[ρ, P₁..Pₙ, H₁ (row-major), H₂ (row-major)]`.
struct Layout {
    n: usize,
    p: usize,
}

impl Layout {
    fn len(&self) -> usize {
        1 + self.n + 2 * self.n * self.p
    }

    fn unpack(&self, y: &DVector<f64>) -> (f64, Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (n, p) = (self.n, self.p);
        let rho = y[0];
        let pd = y.rows(1, n).iter().copied().collect();
        let h1 = DMatrix::from_fn(n, p, |i, j| y[1 + n + i * p + j]);
        let h2 = DMatrix::from_fn(n, p, |i, j| y[1 + n + n * p + i * p + j]);
        (rho, pd, h1, h2)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    pub eps: f64,
    pub sdp: SdpOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { eps: 1e-6, sdp: SdpOptions::default() }
    }
}

pub fn synthesize(model: &SystemModel, eps: f64) -> Result<ObserverCertificate> {
    synthesize_with(model, &SynthesisOptions { eps, ..Default::default() })
}

pub fn synthesize_with(model: &SystemModel, opts: &SynthesisOptions) -> Result<ObserverCertificate> {
    let eps = opts.eps;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("eps must be positive"));
    }
    if !model.is_observable() {
        return Err(Error::invalid(format!(
            "(A, C) is not observable (rank {} < {})",
            model.observability_rank(),
            model.n()
        )));
    }
    let (n, p) = (model.n(), model.p());
    let layout = Layout { n, p };
    let nv = layout.len();

    // Every constraint is affine in y, so coefficients follow from
    // evaluations at the origin and at unit vectors.
    let lmi_at = |y: &DVector<f64>| -> Result<DMatrix<f64>> {
        let (rho, pd, h1, h2) = layout.unpack(y);
        lmi_matrix(model, &pd, &h1, &h2, rho)
    };
    let nonneg_at = |y: &DVector<f64>| -> DMatrix<f64> {
        let (_, pd, h1, h2) = layout.unpack(y);
        let pm = DMatrix::from_diagonal(&DVector::from_vec(pd));
        &pm * &model.a - (h1 - h2) * &model.c
    };
    let zero = DVector::zeros(nv);
    let lmi0 = lmi_at(&zero)?;
    let nonneg0 = nonneg_at(&zero);
    let size = lmi0.nrows();
    let mut coeffs = Vec::with_capacity(nv);
    let mut nonneg_coeffs = Vec::with_capacity(nv);
    for k in 0..nv {
        let mut e = zero.clone();
        e[k] = 1.0;
        coeffs.push(lmi_at(&e)? - &lmi0);
        nonneg_coeffs.push(nonneg_at(&e) - &nonneg0);
    }
    let lmi = LinearMatrixInequality { constant: lmi0 - DMatrix::identity(size, size) * eps, coeffs };

    let mut linear = vec![LinearInequality { name: "rho".into(), coeffs: vec![(0, 1.0)], constant: -eps }];
    for i in 0..n {
        linear.push(LinearInequality { name: format!("P[{i}]"), coeffs: vec![(1 + i, 1.0)], constant: -eps });
    }
    for i in 0..n {
        for j in 0..n {
            let row: Vec<(usize, f64)> =
                (0..nv).map(|k| (k, nonneg_coeffs[k][(i, j)])).filter(|&(_, a)| a != 0.0).collect();
            linear.push(LinearInequality {
                name: format!("(PA - (H1 - H2)C)[{i},{j}]"),
                coeffs: row,
                constant: nonneg0[(i, j)],
            });
        }
    }
    for k in 0..2 * n * p {
        let which = if k < n * p { "H1" } else { "H2" };
        let (i, j) = ((k % (n * p)) / p, k % p);
        linear.push(LinearInequality { name: format!("{which}[{i},{j}]"), coeffs: vec![(1 + n + k, 1.0)], constant: 0.0 });
    }
    let mut objective = DVector::zeros(nv);
    objective[0] = 1.0;

    let problem = SdpProblem { objective, lmi, linear };
    match sdp::solve(&problem, &opts.sdp)? {
        SdpOutcome::Infeasible { constraint, residual } => Err(Error::SynthesisInfeasible { constraint, residual }),
        SdpOutcome::Optimal { y, .. } => {
            let (rho, pd, h1, h2) = layout.unpack(&y);
            let cert = ObserverCertificate::from_variables(pd, h1, h2, rho, eps)?;
            let report = verify_certificate(model, &cert)?;
            log::info!("observer synthesized: rho = {rho:.6}, lmi margin = {:.3e}", report.lmi_min_eigenvalue);
            Ok(cert)
        }
    }
}

/// Independently recomputed residuals of a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `min_ij (PA − (H₁ − H₂)C)_ij`; must be ≥ 0.
    pub nonnegativity: f64,
    /// Smallest eigenvalue of the block LMI; must be ≥ eps.
    pub lmi_min_eigenvalue: f64,
    /// `min_i P_ii`; must be ≥ eps.
    pub p_min: f64,
    pub rho: f64,
    /// Smallest entry of `H₁` and `H₂`.
    pub h_min: f64,
    /// `min_ij (A − L_oC)_ij`.
    pub a_o_min: f64,
    /// `max |L_o − P⁻¹(H₁ − H₂)|`.
    pub gain_mismatch: f64,
}

impl ResidualReport {
    /// Each violated check, named. Empty when the certificate is valid for
    /// margin `eps` (strict constraints compared against `eps − 1e-8`).
    pub fn violations(&self, eps: f64) -> Vec<String> {
        let strict = eps - 1e-8;
        let mut out = Vec::new();
        if self.nonnegativity < -1e-10 {
            out.push(format!("PA - (H1 - H2)C has entry {:.3e} < 0", self.nonnegativity));
        }
        if self.lmi_min_eigenvalue < strict {
            out.push(format!("LMI minimum eigenvalue {:.3e} < eps", self.lmi_min_eigenvalue));
        }
        if self.p_min < strict {
            out.push(format!("P minimum {:.3e} < eps", self.p_min));
        }
        if self.rho < strict {
            out.push(format!("rho {:.3e} < eps", self.rho));
        }
        if self.h_min < -1e-10 {
            out.push(format!("H has entry {:.3e} < 0", self.h_min));
        }
        if self.a_o_min < -1e-10 {
            out.push(format!("A_o has entry {:.3e} < 0", self.a_o_min));
        }
        if self.gain_mismatch > 1e-9 {
            out.push(format!("L_o differs from P^-1(H1 - H2) by {:.3e}", self.gain_mismatch));
        }
        out
    }

    pub fn is_valid(&self, eps: f64) -> bool {
        self.violations(eps).is_empty()
    }
}

pub fn verify_certificate(model: &SystemModel, cert: &ObserverCertificate) -> Result<ResidualReport> {
    let (n, p) = (model.n(), model.p());
    if cert.p.len() != n || cert.h1.shape() != (n, p) || cert.h2.shape() != (n, p) || cert.l_o.shape() != (n, p) {
        return Err(Error::invalid("certificate dimensions do not match the model"));
    }
    let pm = cert.p_matrix();
    let nonneg = &pm * &model.a - (&cert.h1 - &cert.h2) * &model.c;
    let lmi = lmi_matrix(model, &cert.p, &cert.h1, &cert.h2, cert.rho)?;
    let p_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, cert.p.iter().map(|v| 1.0 / v)));
    let gain = &p_inv * (&cert.h1 - &cert.h2);
    Ok(ResidualReport {
        nonnegativity: nonneg.min(),
        lmi_min_eigenvalue: min_eigenvalue(&lmi),
        p_min: cert.p.iter().copied().fold(f64::INFINITY, f64::min),
        rho: cert.rho,
        h_min: cert.h1.min().min(cert.h2.min()),
        a_o_min: cert.a_o(model).min(),
        gain_mismatch: (&cert.l_o - gain).amax(),
    })
}

/// `δx'ᵀPδx' − δxᵀPδx + δxᵀδx − ρξᵀξ` with `δx' = A_oδx + Dξ`.
pub fn lyapunov_decrement(cert: &ObserverCertificate, model: &SystemModel, dx: &DVector<f64>, xi: &DVector<f64>) -> Result<f64> {
    if dx.len() != model.n() || xi.len() != model.q() {
        return Err(Error::invalid(format!(
            "expected δx of length {} and ξ of length {}",
            model.n(),
            model.q()
        )));
    }
    let pm = cert.p_matrix();
    let next = cert.a_o(model) * dx + cert.d_matrix(model)? * xi;
    Ok(next.dot(&(&pm * &next)) - dx.dot(&(&pm * dx)) + dx.dot(dx) - cert.rho * xi.dot(xi))
}

/// The quadratic form of [`lyapunov_decrement`] as a symmetric matrix in
/// `ζ = [δx; ξ]`.
pub fn decrement_form(cert: &ObserverCertificate, model: &SystemModel) -> Result<DMatrix<f64>> {
    let n = model.n();
    let q = model.q();
    let mut g = DMatrix::zeros(n, n + q);
    g.view_mut((0, 0), (n, n)).copy_from(&cert.a_o(model));
    g.view_mut((0, n), (n, q)).copy_from(&cert.d_matrix(model)?);
    let pm = cert.p_matrix();
    let mut k = g.transpose() * &pm * &g;
    let mut base = DMatrix::zeros(n + q, n + q);
    base.view_mut((0, 0), (n, n)).copy_from(&(&pm - DMatrix::identity(n, n)));
    base.view_mut((n, n), (q, q)).copy_from(&(DMatrix::identity(q, q) * cert.rho));
    k -= base;
    Ok((&k + k.transpose()) * 0.5)
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        (m.nrows(), m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let (nrows, ncols, rows) = <(usize, usize, Vec<Vec<f64>>)>::deserialize(d)?;
        if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("matrix rows do not match the declared shape"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model() -> SystemModel {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        SystemModel::new(one(0.5), one(1.0), one(0.0), one(1.0), 0, 1).unwrap()
    }

    /// Smallest ρ on a grid of (L, P) for which the LMI is PSD (eps = 0).
    fn grid_rho(model: &SystemModel) -> f64 {
        let mut best = f64::INFINITY;
        for li in 0..=50 {
            let l = 0.5 * li as f64 / 50.0;
            for pi in 0..=40 {
                let p = 1.0 + 2.0 * pi as f64 / 40.0;
                let h1 = DMatrix::from_element(1, 1, p * l);
                let h2 = DMatrix::zeros(1, 1);
                let feasible = |rho: f64| min_eigenvalue(&lmi_matrix(model, &[p], &h1, &h2, rho).unwrap()) >= 0.0;
                if !feasible(100.0) {
                    continue;
                }
                let (mut lo, mut hi) = (0.0, 100.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if feasible(mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                best = best.min(hi);
            }
        }
        best
    }

    #[test]
    fn scalar_system_matches_grid_search() {
        let model = scalar_model();
        let cert = synthesize(&model, 1e-6).unwrap();
        let grid = grid_rho(&model);
        assert!((grid - 2.25).abs() < 1e-6, "grid {grid}");
        assert!(cert.rho <= grid + 1e-4 && cert.rho >= grid - 1e-3, "rho {} vs grid {grid}", cert.rho);
        let report = verify_certificate(&model, &cert).unwrap();
        assert!(report.is_valid(1e-6), "{:?}", report.violations(1e-6));
        assert!(0.5 - cert.l_o[(0, 0)] >= -1e-10);
    }

    #[test]
    fn uncorrectable_negative_entry_is_infeasible() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, -0.1, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let model = SystemModel::new(a, b, DMatrix::zeros(2, 1), DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), 0, 1).unwrap();
        assert!(model.is_observable());
        match synthesize(&model, 1e-6) {
            Err(Error::SynthesisInfeasible { constraint, residual }) => {
                assert!(residual < 0.0);
                assert!(constraint.contains("[1,0]"), "{constraint}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unobservable_model_is_rejected() {
        let model = SystemModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            0,
            1,
        )
        .unwrap();
        assert!(!model.is_observable());
        assert!(matches!(synthesize(&model, 1e-6), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn certificate_json_round_trip() {
        let model = scalar_model();
        let cert = synthesize(&model, 1e-6).unwrap();
        let back = ObserverCertificate::from_json(&cert.to_json().unwrap()).unwrap();
        assert_eq!(back, cert);
        let m = serde_json::to_string(&model).unwrap();
        assert_eq!(serde_json::from_str::<SystemModel>(&m).unwrap(), model);
    }
}
