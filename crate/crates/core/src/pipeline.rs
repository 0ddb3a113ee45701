//! One observer step: NN and nonlinearity intervals, the interval-observer
//! recursion, one-step prediction, safety flags and fault alarms.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envelope::{nonlinear_interval, NonlinearTerm};
use crate::error::{Error, Result};
use crate::interval::{propagate_affine, IntervalVector};
use crate::milp::{output_interval_with, MilpOptions, SolveStatus};
use crate::network::{an_bounds, FeedforwardNetwork};
use crate::synthesis::{ObserverCertificate, SystemModel};

/// Slack for alarm and containment comparisons.
pub const ALARM_TOL: f64 = 1e-9;

/// Observer box `[x̲_t, x̄_t]` at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub bounds: IntervalVector,
    pub step: usize,
}

impl ObserverState {
    pub fn initial(bounds: IntervalVector) -> Self {
        Self { bounds, step: 0 }
    }
}

/// Per-step bounds on the process disturbance `w_t` and the noise `v_t`.
/// Steps past the end of either schedule reuse its last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceBounds {
    w: Vec<IntervalVector>,
    v: Vec<IntervalVector>,
}

impl DisturbanceBounds {
    pub fn new(w: Vec<IntervalVector>, v: Vec<IntervalVector>) -> Result<Self> {
        if w.is_empty() || v.is_empty() {
            return Err(Error::invalid("disturbance schedules must be nonempty"));
        }
        if w.iter().any(|b| b.dim() != w[0].dim()) || v.iter().any(|b| b.dim() != v[0].dim()) {
            return Err(Error::invalid("disturbance schedule dimensions vary over time"));
        }
        Ok(Self { w, v })
    }

    pub fn constant(w: IntervalVector, v: IntervalVector) -> Self {
        Self { w: vec![w], v: vec![v] }
    }

    pub fn w_at(&self, t: usize) -> &IntervalVector {
        &self.w[t.min(self.w.len() - 1)]
    }

    pub fn v_at(&self, t: usize) -> &IntervalVector {
        &self.v[t.min(self.v.len() - 1)]
    }
}

/// Scalar fault signal of the physical time `τ = t·t_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FaultSignal {
    /// `amplitude · sin(angular_frequency · τ)`.
    Sine { amplitude: f64, angular_frequency: f64 },
    /// `value` for `τ ≥ start`, zero before.
    Step { value: f64, start: f64 },
}

impl FaultSignal {
    pub fn at(&self, tau: f64) -> f64 {
        match *self {
            FaultSignal::Sine { amplitude, angular_frequency } => amplitude * (angular_frequency * tau).sin(),
            FaultSignal::Step { value, start } => {
                if tau >= start {
                    value
                } else {
                    0.0
                }
            }
        }
    }
}

/// A fault injected on one actuator channel or one output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFault {
    pub channel: usize,
    pub signal: FaultSignal,
}

/// Additive actuator faults `f_a` and sensor faults `F_s f_s`. Each sensor
/// fault is one column of `F_s` selecting its output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultProfile {
    pub actuator: Vec<ChannelFault>,
    pub sensor: Vec<ChannelFault>,
}

impl FaultProfile {
    pub fn is_empty(&self) -> bool {
        self.actuator.is_empty() && self.sensor.is_empty()
    }

    /// The `p × s_f` distribution matrix `F_s`.
    pub fn sensor_distribution(&self, p: usize) -> Result<DMatrix<f64>> {
        let mut fs = DMatrix::zeros(p, self.sensor.len());
        for (k, fault) in self.sensor.iter().enumerate() {
            if fault.channel >= p {
                return Err(Error::invalid(format!("sensor fault on output {} of {p}", fault.channel)));
            }
            fs[(fault.channel, k)] = 1.0;
        }
        Ok(fs)
    }

    pub fn validate(&self, m: usize, p: usize) -> Result<()> {
        if let Some(f) = self.actuator.iter().find(|f| f.channel >= m) {
            return Err(Error::invalid(format!("actuator fault on channel {} of {m}", f.channel)));
        }
        self.sensor_distribution(p).map(|_| ())
    }
}

/// `u = u_nominal + f_a(τ)`, `y = y_nominal + F_s f_s(τ)`.
pub fn apply_faults(
    profile: &FaultProfile,
    u_nominal: &DVector<f64>,
    y_nominal: &DVector<f64>,
    tau: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    profile.validate(u_nominal.len(), y_nominal.len())?;
    let mut u = u_nominal.clone();
    for f in &profile.actuator {
        u[f.channel] += f.signal.at(tau);
    }
    let mut y = y_nominal.clone();
    for f in &profile.sensor {
        y[f.channel] += f.signal.at(tau);
    }
    Ok((u, y))
}

/// Bounds on one state or output component; `None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyLimit {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl SafetyLimit {
    fn check(&self, lo: f64, hi: f64) -> Safety {
        let ok = self.lower.is_none_or(|l| lo >= l) && self.upper.is_none_or(|u| hi <= u);
        if ok {
            Safety::Safe
        } else {
            Safety::Undefined
        }
    }
}

/// `h ≥ t_gap · v + d_still`, judged with the lowest headway and the
/// highest speed in the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadwayRule {
    pub headway_output: usize,
    pub speed_state: usize,
    pub t_gap: f64,
    pub d_still: f64,
}

impl HeadwayRule {
    pub fn check(&self, headway: (f64, f64), speed: (f64, f64)) -> Safety {
        if headway.0 >= self.t_gap * speed.1 + self.d_still {
            Safety::Safe
        } else {
            Safety::Undefined
        }
    }
}

/// Safe sets for states and outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetySpec {
    pub states: Vec<SafetyLimit>,
    pub outputs: Vec<SafetyLimit>,
    pub headway: Option<HeadwayRule>,
}

impl SafetySpec {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let check = |limits: &[SafetyLimit], dim: usize, what: &str| -> Result<()> {
            for l in limits {
                if l.index >= dim {
                    return Err(Error::invalid(format!("{what} safety limit on index {} of {dim}", l.index)));
                }
                if let (Some(lo), Some(hi)) = (l.lower, l.upper) {
                    if !(lo <= hi) {
                        return Err(Error::invalid(format!("{what} safety limit [{lo}, {hi}] is empty")));
                    }
                }
            }
            Ok(())
        };
        check(&self.states, n, "state")?;
        check(&self.outputs, p, "output")?;
        if let Some(h) = &self.headway {
            if h.headway_output >= p || h.speed_state >= n {
                return Err(Error::invalid("headway rule references an unknown output or state"));
            }
        }
        Ok(())
    }
}

/// Safety is either proven or undefined; a box that leaves the safe set
/// does not prove the system unsafe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Safety {
    Safe,
    Undefined,
}

/// Per-limit verdicts, in limit order, plus the headway rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyFlags {
    pub limits: Vec<Safety>,
    pub headway: Option<Safety>,
}

impl SafetyFlags {
    pub fn all_safe(&self) -> bool {
        self.limits.iter().chain(self.headway.iter()).all(|s| *s == Safety::Safe)
    }
}

/// Interval inclusion of each limited state in its safe interval.
pub fn check_state_safety(state_box: &IntervalVector, spec: &SafetySpec) -> Vec<Safety> {
    spec.states
        .iter()
        .map(|l| {
            let (lo, hi) = state_box.component(l.index);
            l.check(lo, hi)
        })
        .collect()
}

pub fn check_output_safety(output_box: &IntervalVector, spec: &SafetySpec) -> Vec<Safety> {
    spec.outputs
        .iter()
        .map(|l| {
            let (lo, hi) = output_box.component(l.index);
            l.check(lo, hi)
        })
        .collect()
}

/// `y_t = Cx_t + v_t`.
pub fn measured_output(model: &SystemModel, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != model.n() || v.len() != model.p() {
        return Err(Error::invalid("state or noise dimension does not match the model"));
    }
    Ok(&model.c * x + v)
}

/// `x_{t+1} = Ax_t + Bu_t + Fg(x_t) + w_t` with the exact `g`.
pub fn plant_step(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    g: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != model.n() || u.len() != model.m() || g.len() != model.s() || w.len() != model.n() {
        return Err(Error::invalid("plant step dimensions do not match the model"));
    }
    Ok(&model.a * x + &model.b * u + &model.f * g + w)
}

/// `[C⁺x̲ − C⁻x̄ + v̲, C⁺x̄ − C⁻x̲ + v̄]`.
pub fn output_box(state_box: &IntervalVector, v: &IntervalVector, c: &DMatrix<f64>) -> Result<IntervalVector> {
    propagate_affine(c, state_box)?.add(v)
}

/// Predicted `y_{t+1}` from the next observer box and the noise bounds at `t+1`.
pub fn predict_output_box(next_box: &IntervalVector, v_next: &IntervalVector, c: &DMatrix<f64>) -> Result<IntervalVector> {
    output_box(next_box, v_next, c)
}

/// `[r_t; C_o ỹ]` where `ỹ` is the output box of the current state box.
pub fn nn_input_box(
    state_box: &IntervalVector,
    v: &IntervalVector,
    model: &SystemModel,
    reference: &DVector<f64>,
) -> Result<IntervalVector> {
    let y = output_box(state_box, v, &model.c)?;
    let selected: Vec<usize> = (model.co_offset..model.co_offset + model.co_len).collect();
    Ok(IntervalVector::point(reference.clone()).concat(&y.select(&selected)))
}

/// The controller input `[r_t; C_o y_t]` for a realised output.
pub fn nn_input(model: &SystemModel, y: &DVector<f64>, reference: &DVector<f64>) -> DVector<f64> {
    let yo = y.rows(model.co_offset, model.co_len);
    DVector::from_iterator(reference.len() + model.co_len, reference.iter().chain(yo.iter()).copied())
}

/// One step of the interval observer:
///
/// ```text
/// x̄⁺ = A_o x̄ + B⁺f̄ − B⁻f̲ + F⁺ḡ − F⁻g̲ + L_o y − L⁺v̲ + L⁻v̄ + w̄
/// x̲⁺ = A_o x̲ + B⁺f̲ − B⁻f̄ + F⁺g̲ − F⁻ḡ + L_o y − L⁺v̄ + L⁻v̲ + w̲
/// ```
///
/// `A_o` is split as well, which coincides with the above whenever the
/// certificate makes it nonnegative.
#[allow(clippy::too_many_arguments)]
pub fn observer_step(
    cert: &ObserverCertificate,
    model: &SystemModel,
    state: &ObserverState,
    y: &DVector<f64>,
    f_box: &IntervalVector,
    g_box: &IntervalVector,
    w: &IntervalVector,
    v: &IntervalVector,
) -> Result<ObserverState> {
    let n = model.n();
    if state.bounds.dim() != n || y.len() != model.p() || w.dim() != n || v.dim() != model.p() {
        return Err(Error::invalid("observer step dimensions do not match the model"));
    }
    let a_part = propagate_affine(&cert.a_o(model), &state.bounds)?;
    let b_part = propagate_affine(&model.b, f_box)?;
    let f_part = propagate_affine(&model.f, g_box)?;
    let ly = &cert.l_o * y;
    let noise_upper = &cert.l_o_neg * v.upper() - &cert.l_o_pos * v.lower();
    let noise_lower = &cert.l_o_neg * v.lower() - &cert.l_o_pos * v.upper();
    let upper = a_part.upper() + b_part.upper() + f_part.upper() + &ly + noise_upper + w.upper();
    let lower = a_part.lower() + b_part.lower() + f_part.lower() + &ly + noise_lower + w.lower();
    let bounds = IntervalVector::new(lower, upper)
        .map_err(|e| Error::InternalError(format!("observer bounds crossed at step {}: {e}", state.step)))?;
    Ok(ObserverState { bounds, step: state.step + 1 })
}

/// Per-channel `u ∉ [f̲ − tol, f̄ + tol]`.
pub fn detect_actuator_fault(u: &DVector<f64>, f_box: &IntervalVector) -> Vec<bool> {
    (0..u.len())
        .map(|i| {
            let (lo, hi) = f_box.component(i);
            u[i] < lo - ALARM_TOL || u[i] > hi + ALARM_TOL
        })
        .collect()
}

/// Per-element escape of `y^o_t` from the box predicted at `t − 1`.
/// `None` without a prediction (warm-up).
pub fn detect_output_fault(yo: &DVector<f64>, predicted: Option<&IntervalVector>) -> Option<Vec<bool>> {
    let pred = predicted?;
    Some(
        (0..yo.len())
            .map(|i| {
                let (lo, hi) = pred.component(i);
                yo[i] < lo - ALARM_TOL || yo[i] > hi + ALARM_TOL
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundingMethod {
    /// Layerwise interval arithmetic.
    An,
    /// Exact MILP output range.
    Op,
}

impl BoundingMethod {
    pub fn label(self) -> &'static str {
        match self {
            BoundingMethod::An => "an",
            BoundingMethod::Op => "op",
        }
    }
}

/// NN output box by the chosen method.
#[derive(Debug, Clone, PartialEq)]
pub struct NnBounds {
    pub bounds: IntervalVector,
    /// Branch-and-bound nodes over all solves (zero for AN).
    pub nodes: usize,
    /// Some solve stopped at its budget; `bounds` is still sound.
    pub budget_exhausted: bool,
}

pub fn nn_bounds(
    net: &FeedforwardNetwork,
    input: &IntervalVector,
    method: BoundingMethod,
    milp: &MilpOptions,
) -> Result<NnBounds> {
    match method {
        BoundingMethod::An => Ok(NnBounds { bounds: an_bounds(net, input)?, nodes: 0, budget_exhausted: false }),
        BoundingMethod::Op => {
            let (bounds, results) = output_interval_with(net, input, milp)?;
            if let Some(r) = results.iter().find(|r| r.status == SolveStatus::Infeasible) {
                return Err(Error::InternalError(format!("bound MILP infeasible on a nonempty box: {r:?}")));
            }
            Ok(NnBounds {
                bounds,
                nodes: results.iter().map(|r| r.nodes_explored).sum(),
                budget_exhausted: results.iter().any(|r| r.status == SolveStatus::IterationLimit),
            })
        }
    }
}

/// Everything the observer learned in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub t: usize,
    /// `[x̲_t, x̄_t]`.
    pub state_box: IntervalVector,
    /// `[x̲_{t+1}, x̄_{t+1}]`, the one-step-ahead state prediction.
    pub next_box: IntervalVector,
    /// Predicted `y_{t+1}`.
    pub predicted_output: IntervalVector,
    pub nn_input: IntervalVector,
    pub f_box: IntervalVector,
    pub g_box: IntervalVector,
    pub state_safety: SafetyFlags,
    pub predicted_state_safety: SafetyFlags,
    pub predicted_output_safety: SafetyFlags,
    pub actuator_alarm: Vec<bool>,
    /// `None` during warm-up.
    pub output_alarm: Option<Vec<bool>>,
    pub nn_nodes: usize,
    pub budget_exhausted: bool,
    pub nn_time: Duration,
    pub step_time: Duration,
}

impl StepReport {
    pub fn any_actuator_alarm(&self) -> bool {
        self.actuator_alarm.iter().any(|&a| a)
    }

    pub fn any_output_alarm(&self) -> bool {
        self.output_alarm.as_ref().is_some_and(|a| a.iter().any(|&x| x))
    }
}

/// Runtime interval observer with its safety monitor.
#[derive(Debug, Clone)]
pub struct IntervalObserver {
    pub model: SystemModel,
    pub cert: ObserverCertificate,
    pub net: FeedforwardNetwork,
    pub terms: Vec<NonlinearTerm>,
    pub method: BoundingMethod,
    pub milp: MilpOptions,
    pub safety: SafetySpec,
    state: ObserverState,
    prediction: Option<IntervalVector>,
}

impl IntervalObserver {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: SystemModel,
        cert: ObserverCertificate,
        net: FeedforwardNetwork,
        terms: Vec<NonlinearTerm>,
        method: BoundingMethod,
        milp: MilpOptions,
        safety: SafetySpec,
        initial: IntervalVector,
    ) -> Result<Self> {
        let (n, p) = (model.n(), model.p());
        if initial.dim() != n {
            return Err(Error::invalid(format!("initial box has dimension {}, expected {n}", initial.dim())));
        }
        if cert.l_o.shape() != (n, p) {
            return Err(Error::invalid("certificate gain does not match the model"));
        }
        if terms.len() != model.s() || terms.iter().any(|t| t.state_index >= n) {
            return Err(Error::invalid("nonlinear terms do not match the model"));
        }
        if net.output_dim() != model.m() {
            return Err(Error::invalid("network outputs do not match the model inputs"));
        }
        safety.validate(n, p)?;
        Ok(Self { model, cert, net, terms, method, milp, safety, state: ObserverState::initial(initial), prediction: None })
    }

    pub fn state(&self) -> &ObserverState {
        &self.state
    }

    fn safety_of_state(&self, bx: &IntervalVector, v: &IntervalVector) -> Result<SafetyFlags> {
        let headway = match &self.safety.headway {
            Some(rule) => {
                let y = output_box(bx, v, &self.model.c)?;
                Some(rule.check(y.component(rule.headway_output), bx.component(rule.speed_state)))
            }
            None => None,
        };
        Ok(SafetyFlags { limits: check_state_safety(bx, &self.safety), headway })
    }

    /// Processes the measured output `y` and applied control `u` of step `t`
    /// and advances the box to `t + 1`.
    pub fn step(
        &mut self,
        dist: &DisturbanceBounds,
        reference: &DVector<f64>,
        y: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<StepReport> {
        let started = Instant::now();
        let t = self.state.step;
        let v = dist.v_at(t);
        let g_box = nonlinear_interval(&self.terms, &self.state.bounds)?;
        let nn_input = nn_input_box(&self.state.bounds, v, &self.model, reference)?;
        let nn_started = Instant::now();
        let nn = nn_bounds(&self.net, &nn_input, self.method, &self.milp)?;
        let nn_time = nn_started.elapsed();
        let next = observer_step(&self.cert, &self.model, &self.state, y, &nn.bounds, &g_box, dist.w_at(t), v)?;
        let v_next = dist.v_at(t + 1);
        let predicted_output = predict_output_box(&next.bounds, v_next, &self.model.c)?;

        let actuator_alarm = detect_actuator_fault(u, &nn.bounds);
        let selected: Vec<usize> = (self.model.co_offset..self.model.co_offset + self.model.co_len).collect();
        let yo = DVector::from_iterator(selected.len(), selected.iter().map(|&i| y[i]));
        let previous = self.prediction.as_ref().map(|p| p.select(&selected));
        let output_alarm = detect_output_fault(&yo, previous.as_ref());

        let state_safety = self.safety_of_state(&self.state.bounds, v)?;
        let predicted_state_safety = self.safety_of_state(&next.bounds, v_next)?;
        let predicted_output_safety = SafetyFlags {
            limits: check_output_safety(&predicted_output, &self.safety),
            headway: self.safety.headway.map(|rule| {
                rule.check(predicted_output.component(rule.headway_output), next.bounds.component(rule.speed_state))
            }),
        };

        let report = StepReport {
            t,
            state_box: self.state.bounds.clone(),
            next_box: next.bounds.clone(),
            predicted_output: predicted_output.clone(),
            nn_input,
            f_box: nn.bounds,
            g_box,
            state_safety,
            predicted_state_safety,
            predicted_output_safety,
            actuator_alarm,
            output_alarm,
            nn_nodes: nn.nodes,
            budget_exhausted: nn.budget_exhausted,
            nn_time,
            step_time: started.elapsed(),
        };
        self.state = next;
        self.prediction = Some(predicted_output);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{build_envelope, ElementaryFunction};
    use crate::scenario::acc::{build_acc_model, discretize, AccParams, Discretization};

    fn acc_model() -> SystemModel {
        let acc = build_acc_model(&AccParams::default());
        discretize(&acc.continuous, 0.1, Discretization::Euler).unwrap().model
    }

    /// A certificate with `L = 0`; sound whenever `A ≥ 0`.
    fn zero_gain(model: &SystemModel) -> ObserverCertificate {
        let (n, p) = (model.n(), model.p());
        ObserverCertificate::from_variables(vec![1.0; n], DMatrix::zeros(n, p), DMatrix::zeros(n, p), 1.0, 1e-6)
            .unwrap()
    }

    fn square_terms() -> Vec<NonlinearTerm> {
        let env = build_envelope(&ElementaryFunction::square(), (-20.0, 80.0), 20).unwrap();
        [1, 4].iter().map(|&i| NonlinearTerm { state_index: i, envelope: env.clone(), monotone: false }).collect()
    }

    #[test]
    fn measured_output_examples() {
        let model = acc_model();
        let zero = measured_output(&model, &DVector::zeros(6), &DVector::zeros(4)).unwrap();
        assert_eq!(zero, DVector::zeros(4));
        let x0 = DVector::from_vec(vec![50.0, 20.0, 0.0, 10.0, 20.0, 0.0]);
        let y = measured_output(&model, &x0, &DVector::zeros(4)).unwrap();
        assert_eq!(y.as_slice(), &[10.0, 20.0, 40.0, 0.0]);
        let v = DVector::from_vec(vec![0.001, -0.001, 0.0005, -0.0002]);
        let noisy = measured_output(&model, &x0, &v).unwrap();
        assert!((noisy - y).amax() <= 0.001 + 1e-12);
        assert!(measured_output(&model, &DVector::zeros(5), &DVector::zeros(4)).is_err());
    }

    #[test]
    fn degenerate_nn_input_box() {
        let model = acc_model();
        let x = DVector::from_vec(vec![50.0, 20.0, 0.0, 10.0, 20.0, 0.0]);
        let r = DVector::from_vec(vec![30.0, 1.4]);
        let z = nn_input_box(&IntervalVector::point(x.clone()), &IntervalVector::point(DVector::zeros(4)), &model, &r)
            .unwrap();
        assert!(z.is_degenerate());
        assert_eq!(z.lower().as_slice(), &[30.0, 1.4, 20.0, 40.0, 0.0]);
        assert_eq!(nn_input(&model, &(&model.c * &x), &r), z.lower().clone());
    }

    #[test]
    fn full_selector_matches_output_box() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]);
        let model = SystemModel::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::zeros(2, 0), c, 0, 2)
            .unwrap();
        let bx = IntervalVector::from_slices(&[-1.0, 0.0], &[1.0, 2.0]).unwrap();
        let v = IntervalVector::from_slices(&[-0.1, -0.2], &[0.1, 0.2]).unwrap();
        let z = nn_input_box(&bx, &v, &model, &DVector::zeros(0)).unwrap();
        assert_eq!(z, output_box(&bx, &v, &model.c).unwrap());
    }

    #[test]
    fn identity_output_prediction_shifts_by_noise() {
        let bx = IntervalVector::from_slices(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        let v = IntervalVector::from_slices(&[-0.5, -0.25], &[0.5, 0.25]).unwrap();
        let y = predict_output_box(&bx, &v, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(y.lower().as_slice(), &[0.5, 1.75]);
        assert_eq!(y.upper().as_slice(), &[3.5, 4.25]);
        let pt = predict_output_box(
            &IntervalVector::point(DVector::from_vec(vec![1.0, 2.0])),
            &IntervalVector::point(DVector::zeros(2)),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(pt.is_degenerate());
    }

    #[test]
    fn degenerate_observer_step_is_exact() {
        let model = acc_model();
        let acc = build_acc_model(&AccParams::default());
        let cert = zero_gain(&model);
        let x = acc.x0.clone();
        let u = DVector::from_vec(vec![0.7]);
        let g = DVector::from_vec(vec![x[1] * x[1], x[4] * x[4]]);
        let w = DVector::from_vec(vec![0.0, 0.0, 0.2, 0.0, 0.0, 0.0]);
        let next = plant_step(&model, &x, &u, &g, &w).unwrap();
        let state = ObserverState::initial(IntervalVector::point(x.clone()));
        let y = measured_output(&model, &x, &DVector::zeros(4)).unwrap();
        let out = observer_step(
            &cert,
            &model,
            &state,
            &y,
            &IntervalVector::point(u),
            &IntervalVector::point(g),
            &IntervalVector::point(w),
            &IntervalVector::point(DVector::zeros(4)),
        )
        .unwrap();
        assert_eq!(out.step, 1);
        assert!((out.bounds.lower() - &next).amax() < 1e-12);
        assert!((out.bounds.upper() - &next).amax() < 1e-12);
    }

    #[test]
    fn widening_inputs_widens_the_next_box() {
        let model = acc_model();
        let cert = zero_gain(&model);
        let x0 = build_acc_model(&AccParams::default()).x0;
        let tight = IntervalVector::symmetric(&x0, &DVector::from_element(6, 0.5)).unwrap();
        let wide = IntervalVector::symmetric(&x0, &DVector::from_element(6, 1.0)).unwrap();
        let y = &model.c * &x0;
        let f = |r: f64| IntervalVector::from_slices(&[-r], &[r]).unwrap();
        let g = IntervalVector::from_slices(&[300.0, 300.0], &[500.0, 500.0]).unwrap();
        let w = IntervalVector::point(DVector::zeros(6));
        let v = IntervalVector::symmetric(&DVector::zeros(4), &DVector::from_element(4, 1e-3)).unwrap();
        let a = observer_step(&cert, &model, &ObserverState::initial(tight), &y, &f(0.5), &g, &w, &v).unwrap();
        let b = observer_step(&cert, &model, &ObserverState::initial(wide), &y, &f(1.0), &g, &w, &v).unwrap();
        assert!(a.bounds.is_subset_of(&b.bounds, 0.0));
        assert!(b.bounds.width().iter().zip(a.bounds.width().iter()).all(|(wb, wa)| wb >= wa));
    }

    #[test]
    fn safety_is_tri_state() {
        let spec = SafetySpec {
            states: vec![SafetyLimit { index: 0, lower: Some(0.0), upper: Some(10.0) }],
            outputs: vec![],
            headway: None,
        };
        let inside = IntervalVector::from_slices(&[1.0], &[9.0]).unwrap();
        let straddle = IntervalVector::from_slices(&[-1.0], &[9.0]).unwrap();
        assert_eq!(check_state_safety(&inside, &spec), vec![Safety::Safe]);
        assert_eq!(check_state_safety(&straddle, &spec), vec![Safety::Undefined]);
        let rule = HeadwayRule { headway_output: 2, speed_state: 4, t_gap: 1.4, d_still: 10.0 };
        assert_eq!(rule.check((40.0, 41.0), (19.0, 21.0)), Safety::Safe);
        assert_eq!(rule.check((38.0, 41.0), (19.0, 21.0)), Safety::Undefined);
    }

    #[test]
    fn actuator_alarm_examples() {
        let f = IntervalVector::from_slices(&[-1.0], &[1.0]).unwrap();
        assert_eq!(detect_actuator_fault(&DVector::from_vec(vec![0.5]), &f), vec![false]);
        assert_eq!(detect_actuator_fault(&DVector::from_vec(vec![1.01]), &f), vec![true]);
        assert_eq!(detect_actuator_fault(&DVector::from_vec(vec![1.0 + 1e-12]), &f), vec![false]);
    }

    #[test]
    fn output_alarm_examples() {
        let pred = IntervalVector::from_slices(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let y = DVector::from_vec(vec![0.5, 0.5]);
        assert_eq!(detect_output_fault(&y, None), None);
        assert_eq!(detect_output_fault(&y, Some(&pred)), Some(vec![false, false]));
        let shifted = DVector::from_vec(vec![0.5, 2.5]);
        assert_eq!(detect_output_fault(&shifted, Some(&pred)), Some(vec![false, true]));
    }

    #[test]
    fn plant_step_examples() {
        let model = acc_model();
        let z = plant_step(&model, &DVector::zeros(6), &DVector::zeros(1), &DVector::zeros(2), &DVector::zeros(6))
            .unwrap();
        assert_eq!(z, DVector::zeros(6));
        let linear = SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.9]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.5]),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            0,
            1,
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let next = plant_step(&linear, &x, &DVector::from_vec(vec![2.0]), &DVector::from_vec(vec![7.0]), &DVector::zeros(2))
            .unwrap();
        assert_eq!(next.as_slice(), &[1.2, 2.8]);
    }

    #[test]
    fn fault_injection() {
        let u = DVector::from_vec(vec![1.0]);
        let y = DVector::from_vec(vec![10.0, 20.0, 40.0, 0.0]);
        let empty = FaultProfile::default();
        assert_eq!(apply_faults(&empty, &u, &y, 3.0).unwrap(), (u.clone(), y.clone()));
        let sine = |a: f64, w: f64| FaultSignal::Sine { amplitude: a, angular_frequency: w };
        let actuator = FaultProfile {
            actuator: vec![ChannelFault { channel: 0, signal: sine(0.3, 0.5 * std::f64::consts::PI) }],
            sensor: vec![],
        };
        let (ua, ya) = apply_faults(&actuator, &u, &y, 1.0).unwrap();
        assert!((ua[0] - 1.3).abs() < 1e-12);
        assert_eq!(ya, y);
        let sensor = FaultProfile {
            actuator: vec![],
            sensor: vec![ChannelFault { channel: 2, signal: sine(5.0, 0.2 * std::f64::consts::PI) }],
        };
        let (us, ys) = apply_faults(&sensor, &u, &y, 2.5).unwrap();
        assert_eq!(us, u);
        let diff = ys - &y;
        assert!((diff[2] - 5.0).abs() < 1e-12);
        assert_eq!(diff.iter().filter(|d| **d != 0.0).count(), 1);
        let fs = sensor.sensor_distribution(4).unwrap();
        assert_eq!(fs.shape(), (4, 1));
        assert_eq!(fs[(2, 0)], 1.0);
        let bad = FaultProfile { actuator: vec![ChannelFault { channel: 3, signal: sine(1.0, 1.0) }], sensor: vec![] };
        assert!(apply_faults(&bad, &u, &y, 0.0).is_err());
    }

    #[test]
    fn step_fault_signal() {
        let s = FaultSignal::Step { value: 2.0, start: 1.0 };
        assert_eq!(s.at(0.5), 0.0);
        assert_eq!(s.at(1.0), 2.0);
    }

    #[test]
    fn observer_warm_up_then_predictions() {
        let model = acc_model();
        let acc = build_acc_model(&AccParams::default());
        let cert = zero_gain(&model);
        let net = crate::network::acc_controller();
        let x0 = acc.x0.clone();
        let init = IntervalVector::symmetric(&x0, &DVector::from_element(6, 1.0)).unwrap();
        let mut obs = IntervalObserver::new(
            model.clone(),
            cert,
            net.clone(),
            square_terms(),
            BoundingMethod::An,
            MilpOptions::default(),
            SafetySpec::default(),
            init,
        )
        .unwrap();
        let dist = DisturbanceBounds::constant(
            IntervalVector::point(DVector::zeros(6)),
            IntervalVector::point(DVector::zeros(4)),
        );
        let y = &model.c * &x0;
        let u = net.forward(&nn_input(&model, &y, &acc.reference)).unwrap();
        let r0 = obs.step(&dist, &acc.reference, &y, &u).unwrap();
        assert_eq!(r0.output_alarm, None);
        assert!(!r0.any_actuator_alarm());
        assert!(r0.f_box.contains(&u, 0.0));
        let g = nonlinear_value_of(&x0);
        let x1 = plant_step(&model, &x0, &u, &g, &DVector::zeros(6)).unwrap();
        assert!(r0.next_box.contains(&x1, 1e-9));
        let y1 = &model.c * &x1;
        let u1 = net.forward(&nn_input(&model, &y1, &acc.reference)).unwrap();
        let r1 = obs.step(&dist, &acc.reference, &y1, &u1).unwrap();
        assert_eq!(r1.output_alarm, Some(vec![false, false, false]));
        assert_eq!(obs.state().step, 2);
    }

    fn nonlinear_value_of(x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[1] * x[1], x[4] * x[4]])
    }
}
