//! Adaptive cruise control model.
//!
//! State `x = [p_l, v_l, a_l, p_e, v_e, a_e]` (lead and ego position,
//! velocity, acceleration), outputs `y = [p_e, v_e, h, ṽ]` with headway
//! `h = p_l − p_e` and relative velocity `ṽ = v_l − v_e`. The controller
//! reads `[v_set, t_gap, v_e, h, ṽ]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthesis::SystemModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccParams {
    /// Quadratic drag coefficient.
    pub mu: f64,
    pub t_gap: f64,
    pub d_still: f64,
    pub v_set: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        Self { mu: 1e-4, t_gap: 1.4, d_still: 10.0, v_set: 30.0 }
    }
}

/// `ẋ = A_c x + B_c u + F_c g(x) + w_c`, `y = Cx + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub co_offset: usize,
    pub co_len: usize,
    /// `w_c = w_direction · u_l`.
    pub w_direction: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccModel {
    pub continuous: ContinuousModel,
    /// `r = [v_set, t_gap]`.
    pub reference: DVector<f64>,
    /// States entering `g(x) = [v_l², v_e²]`.
    pub nonlinear_states: Vec<usize>,
    pub x0: DVector<f64>,
    pub params: AccParams,
}

pub const P_L: usize = 0;
pub const V_L: usize = 1;
pub const A_L: usize = 2;
pub const P_E: usize = 3;
pub const V_E: usize = 4;
pub const A_E: usize = 5;

/// Output indices.
pub const Y_H: usize = 2;
pub const Y_V_REL: usize = 3;

pub fn build_acc_model(params: &AccParams) -> AccModel {
    let mut a = DMatrix::zeros(6, 6);
    a[(P_L, V_L)] = 1.0;
    a[(V_L, A_L)] = 1.0;
    a[(A_L, A_L)] = -2.0;
    a[(P_E, V_E)] = 1.0;
    a[(V_E, A_E)] = 1.0;
    a[(A_E, A_E)] = -2.0;
    let mut b = DMatrix::zeros(6, 1);
    b[(A_E, 0)] = 2.0;
    let mut f = DMatrix::zeros(6, 2);
    f[(A_L, 0)] = -params.mu;
    f[(A_E, 1)] = -params.mu;
    let mut c = DMatrix::zeros(4, 6);
    c[(0, P_E)] = 1.0;
    c[(1, V_E)] = 1.0;
    c[(Y_H, P_L)] = 1.0;
    c[(Y_H, P_E)] = -1.0;
    c[(Y_V_REL, V_L)] = 1.0;
    c[(Y_V_REL, V_E)] = -1.0;
    let mut w_direction = DVector::zeros(6);
    w_direction[A_L] = 2.0;
    AccModel {
        continuous: ContinuousModel { a, b, f, c, co_offset: 1, co_len: 3, w_direction },
        reference: DVector::from_vec(vec![params.v_set, params.t_gap]),
        nonlinear_states: vec![V_L, V_E],
        x0: DVector::from_vec(vec![50.0, 20.0, 0.0, 10.0, 20.0, 0.0]),
        params: *params,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    #[default]
    Euler,
    /// Zero-order hold on `u`, `g` and `w`.
    Zoh,
}

/// Discrete model plus the discrete disturbance direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub model: SystemModel,
    pub w_direction: DVector<f64>,
}

pub fn discretize(cont: &ContinuousModel, t_s: f64, method: Discretization) -> Result<DiscreteModel> {
    if !(t_s > 0.0 && t_s.is_finite()) {
        return Err(Error::invalid(format!("sampling time must be positive, got {t_s}")));
    }
    let n = cont.a.nrows();
    let (a, gamma) = match method {
        Discretization::Euler => (DMatrix::identity(n, n) + &cont.a * t_s, DMatrix::identity(n, n) * t_s),
        Discretization::Zoh => {
            // exp([[A, I], [0, 0]]·t) = [[e^{At}, ∫₀ᵗ e^{Aτ}dτ], [0, I]]
            let mut aug = DMatrix::zeros(2 * n, 2 * n);
            aug.view_mut((0, 0), (n, n)).copy_from(&(&cont.a * t_s));
            aug.view_mut((0, n), (n, n)).copy_from(&(DMatrix::identity(n, n) * t_s));
            let e = aug.exp();
            (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, n)).into_owned())
        }
    };
    let model = SystemModel::new(a, &gamma * &cont.b, &gamma * &cont.f, cont.c.clone(), cont.co_offset, cont.co_len)?;
    Ok(DiscreteModel { model, w_direction: &gamma * &cont.w_direction })
}
