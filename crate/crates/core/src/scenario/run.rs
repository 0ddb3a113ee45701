//! Scenario orchestration: model construction, certificate, the closed-loop
//! simulation with one or two observers, and the run summary.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::envelope::{build_envelope, nonlinear_value, refine_with_prior, FunctionKind, NonlinearTerm};
use crate::error::{Error, Result};
use crate::interval::{propagate_affine, IntervalVector};
use crate::milp::MilpOptions;
use crate::network::{self, FeedforwardNetwork};
use crate::pipeline::{
    apply_faults, measured_output, nn_input, plant_step, BoundingMethod, DisturbanceBounds, HeadwayRule,
    IntervalObserver, SafetySpec, StepReport, ALARM_TOL,
};
use crate::scenario::acc::{build_acc_model, discretize, ContinuousModel, Y_H};
use crate::scenario::config::{MethodChoice, ModelConfig, NonlinearityConfig, ScenarioConfig};
use crate::synthesis::{lyapunov_decrement, synthesize, verify_certificate, ObserverCertificate, SystemModel};

/// Process exit codes of a scenario run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    Unsound,
    SynthesisInfeasible,
    BudgetExhausted,
    ConfigError,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Unsound => 1,
            ExitStatus::SynthesisInfeasible => 2,
            ExitStatus::BudgetExhausted => 3,
            ExitStatus::ConfigError => 4,
        }
    }

    /// Classifies an error aborting a run.
    pub fn for_error(err: &Error) -> Self {
        match err {
            Error::InternalError(_) => ExitStatus::Unsound,
            Error::SynthesisInfeasible { .. } | Error::SolverFailure(_) => ExitStatus::SynthesisInfeasible,
            _ => ExitStatus::ConfigError,
        }
    }
}

/// A scenario with its model, network and envelopes built.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    /// Directory relative paths in the config resolve against.
    pub base: Option<PathBuf>,
    pub continuous: ContinuousModel,
    pub model: SystemModel,
    /// Discrete `w = w_direction · u_l`.
    pub w_direction: DVector<f64>,
    pub reference: DVector<f64>,
    pub x0: DVector<f64>,
    pub initial: IntervalVector,
    pub terms: Vec<NonlinearTerm>,
    pub net: FeedforwardNetwork,
    pub safety: SafetySpec,
    pub state_names: Vec<String>,
    pub output_names: Vec<String>,
}

/// Envelope settings for the ACC drag terms `v_l²`, `v_e²`.
pub fn default_acc_nonlinearities() -> Vec<NonlinearityConfig> {
    [1, 4]
        .into_iter()
        .map(|state| NonlinearityConfig {
            state,
            function: FunctionKind::Square,
            h: 20,
            domain: (-20.0, 80.0),
            floor: Some(0.0),
            ceiling: None,
            monotone: false,
        })
        .collect()
}

/// Resolves `builtin:acc`, `builtin:small` or a network JSON file.
pub fn load_network(spec: &str, base: Option<&Path>) -> Result<FeedforwardNetwork> {
    match spec {
        "builtin:acc" => Ok(network::acc_controller()),
        "builtin:small" => Ok(network::appendix_small()),
        path => {
            let path = ScenarioConfig::resolve(base, Path::new(path));
            FeedforwardNetwork::load(&path)
                .map_err(|e| Error::Config(format!("cannot load network {}: {e}", path.display())))
        }
    }
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn prepare(config: &ScenarioConfig, base: Option<&Path>) -> Result<PreparedScenario> {
    config.validate()?;
    let cfg_err = |e: Error| match e {
        Error::InvalidInput(msg) => Error::Config(msg),
        other => other,
    };
    let (continuous, reference, x0, nonlinear_states, default_nl, default_safety, state_names, output_names) =
        match &config.model {
            ModelConfig::Acc { params } => {
                let acc = build_acc_model(params);
                let safety = SafetySpec {
                    headway: Some(HeadwayRule {
                        headway_output: Y_H,
                        speed_state: crate::scenario::acc::V_E,
                        t_gap: params.t_gap,
                        d_still: params.d_still,
                    }),
                    ..SafetySpec::default()
                };
                let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
                (
                    acc.continuous,
                    acc.reference,
                    acc.x0,
                    acc.nonlinear_states,
                    default_acc_nonlinearities(),
                    safety,
                    names(&["p_l", "v_l", "a_l", "p_e", "v_e", "a_e"]),
                    names(&["p_e", "v_e", "h", "v_rel"]),
                )
            }
            ModelConfig::Inline(m) => {
                let a = m.a_matrix()?;
                let n = a.nrows();
                let c = m.c_matrix()?;
                if m.w_direction.len() != n || m.x0.len() != n {
                    return Err(Error::Config(format!("w_direction and x0 need {n} entries")));
                }
                let cont = ContinuousModel {
                    a,
                    b: m.b_matrix()?,
                    f: m.f_matrix()?,
                    c: c.clone(),
                    co_offset: m.co_offset,
                    co_len: m.co_len,
                    w_direction: DVector::from_column_slice(&m.w_direction),
                };
                (
                    cont,
                    DVector::from_column_slice(&m.reference),
                    m.x0_vector(),
                    m.nonlinear_states.clone(),
                    Vec::new(),
                    SafetySpec::default(),
                    numbered("x", n),
                    numbered("y", c.nrows()),
                )
            }
        };
    let discrete = discretize(&continuous, config.t_s, config.discretization).map_err(cfg_err)?;
    let model = discrete.model;
    let (n, p) = (model.n(), model.p());

    let nonlinearities = if config.nonlinearity.is_empty() { default_nl } else { config.nonlinearity.clone() };
    let states: Vec<usize> = nonlinearities.iter().map(|nl| nl.state).collect();
    if states != nonlinear_states {
        return Err(Error::Config(format!(
            "nonlinearities are declared on states {states:?} but the model uses {nonlinear_states:?}"
        )));
    }
    let terms = nonlinearities
        .iter()
        .map(|nl| {
            let env = build_envelope(&nl.function.function(), nl.domain, nl.h).map_err(cfg_err)?;
            let envelope = refine_with_prior(&env, nl.floor, nl.ceiling);
            Ok(NonlinearTerm { state_index: nl.state, envelope, monotone: nl.monotone })
        })
        .collect::<Result<Vec<_>>>()?;

    let initial = match &config.initial {
        Some(b) => IntervalVector::from_slices(&b.lower, &b.upper).map_err(cfg_err)?,
        None => IntervalVector::symmetric(&x0, &DVector::from_element(n, 1.0))?,
    };
    if initial.dim() != n {
        return Err(Error::Config(format!("initial box needs {n} entries")));
    }
    let net = load_network(&config.controller.network, base)?;
    if net.input_dim() != reference.len() + model.co_len || net.output_dim() != model.m() {
        return Err(Error::Config(format!(
            "network maps {} → {}, the loop needs {} → {}",
            net.input_dim(),
            net.output_dim(),
            reference.len() + model.co_len,
            model.m()
        )));
    }
    let safety = config.safety.clone().unwrap_or(default_safety);
    safety.validate(n, p).map_err(cfg_err)?;
    config.faults.validate(model.m(), p).map_err(cfg_err)?;

    Ok(PreparedScenario {
        config: config.clone(),
        base: base.map(Path::to_path_buf),
        continuous,
        model,
        w_direction: discrete.w_direction,
        reference,
        x0,
        initial,
        terms,
        net,
        safety,
        state_names,
        output_names,
    })
}

/// Where the certificate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateSource {
    Synthesized,
    Loaded,
}

/// Loads the configured certificate (checking it against the model) or
/// synthesizes one.
pub fn certificate(prepared: &PreparedScenario) -> Result<(ObserverCertificate, CertificateSource)> {
    match &prepared.config.synthesis.certificate {
        Some(path) => {
            let path = ScenarioConfig::resolve(prepared.base.as_deref(), path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read certificate {}: {e}", path.display())))?;
            let cert = ObserverCertificate::from_json(&text)
                .map_err(|e| Error::Config(format!("malformed certificate {}: {e}", path.display())))?;
            if cert.l_o.shape() != (prepared.model.n(), prepared.model.p()) {
                return Err(Error::Config("certificate does not match the model dimensions".into()));
            }
            let report = verify_certificate(&prepared.model, &cert)?;
            if let Some(v) = report.violations(cert.eps).first() {
                return Err(Error::SynthesisInfeasible { constraint: v.clone(), residual: f64::NAN });
            }
            Ok((cert, CertificateSource::Loaded))
        }
        None => Ok((synthesize(&prepared.model, prepared.config.synthesis.eps)?, CertificateSource::Synthesized)),
    }
}

/// One observer's view of the run.
#[derive(Debug, Clone)]
pub struct ObserverTrace {
    pub method: BoundingMethod,
    pub steps: Vec<StepReport>,
    /// `x_t ∈ [x̲_t, x̄_t]` and `x_{t+1} ∈ [x̲_{t+1}, x̄_{t+1}]`.
    pub inside: Vec<bool>,
    /// Lyapunov decrement along the realised widths.
    pub decrements: Vec<f64>,
}

/// The closed-loop trajectory shared by all observers.
#[derive(Debug, Clone)]
pub struct Trace {
    pub t_s: f64,
    pub state_names: Vec<String>,
    pub output_names: Vec<String>,
    /// `x_0 … x_H`.
    pub x: Vec<DVector<f64>>,
    /// Measured (possibly faulty) outputs.
    pub y: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub lead: Vec<f64>,
    pub observers: Vec<ObserverTrace>,
    pub faulty: bool,
    /// Outputs the controller reads.
    pub yo_names: Vec<String>,
}

impl Trace {
    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn observer(&self, method: BoundingMethod) -> Option<&ObserverTrace> {
        self.observers.iter().find(|o| o.method == method)
    }
}

fn methods(choice: MethodChoice) -> Vec<BoundingMethod> {
    match choice {
        MethodChoice::An => vec![BoundingMethod::An],
        MethodChoice::Op => vec![BoundingMethod::Op],
        MethodChoice::Both => vec![BoundingMethod::An, BoundingMethod::Op],
    }
}

/// Runs the closed loop for the configured horizon.
#[allow(clippy::needless_range_loop)]
pub fn simulate(prepared: &PreparedScenario, cert: &ObserverCertificate) -> Result<Trace> {
    let cfg = &prepared.config;
    let model = &prepared.model;
    let (n, p) = (model.n(), model.p());
    let milp = MilpOptions {
        node_budget: cfg.controller.node_budget,
        time_budget: cfg.controller.time_budget_ms.map(Duration::from_millis),
    };
    let mut observers = methods(cfg.controller.method)
        .into_iter()
        .map(|m| {
            IntervalObserver::new(
                model.clone(),
                cert.clone(),
                prepared.net.clone(),
                prepared.terms.clone(),
                m,
                milp,
                prepared.safety.clone(),
                prepared.initial.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let beta = cfg.lead.band;
    let lead: Vec<f64> = (0..=cfg.horizon).map(|t| cfg.lead.at(t as f64 * cfg.t_s)).collect();
    let w_column = DMatrix::from_column_slice(n, 1, prepared.w_direction.as_slice());
    let w_schedule = lead
        .iter()
        .map(|&ul| propagate_affine(&w_column, &IntervalVector::from_slices(&[ul - beta], &[ul + beta])?))
        .collect::<Result<Vec<_>>>()?;
    let b = cfg.noise.bound;
    let v_box = IntervalVector::symmetric(&DVector::zeros(p), &DVector::from_element(p, b))?;
    let dist = DisturbanceBounds::new(w_schedule, vec![v_box.clone()])?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = prepared.x0.clone();
    let mut trace = Trace {
        t_s: cfg.t_s,
        state_names: prepared.state_names.clone(),
        output_names: prepared.output_names.clone(),
        x: vec![x.clone()],
        y: Vec::with_capacity(cfg.horizon),
        u: Vec::with_capacity(cfg.horizon),
        lead: lead[..cfg.horizon].to_vec(),
        observers: observers
            .iter()
            .map(|o| ObserverTrace { method: o.method, steps: Vec::new(), inside: Vec::new(), decrements: Vec::new() })
            .collect(),
        faulty: !cfg.faults.is_empty(),
        yo_names: prepared.output_names[model.co_offset..model.co_offset + model.co_len].to_vec(),
    };

    for t in 0..cfg.horizon {
        let tau = t as f64 * cfg.t_s;
        let v = DVector::from_fn(p, |_, _| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 });
        let y_clean = measured_output(model, &x, &v)?;
        let u_zero = DVector::zeros(model.m());
        let (_, y) = apply_faults(&cfg.faults, &u_zero, &y_clean, tau)?;
        let u_nominal = prepared.net.forward(&nn_input(model, &y, &prepared.reference))?;
        let (u, _) = apply_faults(&cfg.faults, &u_nominal, &y_clean, tau)?;

        let g = nonlinear_value(&prepared.terms, &x);
        let w = &prepared.w_direction * lead[t];
        let x_next = plant_step(model, &x, &u, &g, &w)?;

        for (obs, out) in observers.iter_mut().zip(trace.observers.iter_mut()) {
            let report = obs.step(&dist, &prepared.reference, &y, &u)?;
            out.inside.push(report.state_box.contains(&x, ALARM_TOL) && report.next_box.contains(&x_next, ALARM_TOL));
            let xi: Vec<f64> = report
                .f_box
                .width()
                .iter()
                .chain(report.g_box.width().iter())
                .chain(v_box.width().iter())
                .chain(dist.w_at(t).width().iter())
                .copied()
                .collect();
            out.decrements
                .push(lyapunov_decrement(cert, model, &report.state_box.width(), &DVector::from_vec(xi))?);
            out.steps.push(report);
        }
        trace.y.push(y);
        trace.u.push(u);
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::InternalError(format!("plant state became non-finite at step {t}")));
        }
        x = x_next;
        trace.x.push(x.clone());
    }
    Ok(trace)
}

/// Per-observer run statistics.
#[derive(Debug, Clone, Serialize)]
pub struct ObserverSummary {
    pub method: BoundingMethod,
    pub unsound_steps: usize,
    pub first_unsound_step: Option<usize>,
    pub actuator_alarm_steps: usize,
    pub first_actuator_alarm: Option<usize>,
    /// Alarm steps per element of `y^o`.
    pub output_alarm_steps: Vec<usize>,
    pub first_output_alarm: Option<usize>,
    pub headway_alarm_steps: usize,
    pub state_undefined_steps: usize,
    pub predicted_output_undefined_steps: usize,
    pub mean_control_width: Vec<f64>,
    pub max_decrement: f64,
    pub budget_exhausted_steps: usize,
    pub total_nodes: usize,
    pub nn_time_total_s: f64,
    pub step_time_total_s: f64,
}

/// Comparison of the two bounding methods on the shared trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct DominanceSummary {
    pub steps: usize,
    /// Steps where every OP control bound lies inside the AN bound.
    pub control_within: usize,
    /// Steps where the OP control interval is narrower by more than 1e-6.
    pub control_strictly_tighter: usize,
    /// Steps where the OP observer box lies inside the AN box.
    pub box_within: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub horizon: usize,
    pub t_s: f64,
    pub discretization: crate::scenario::acc::Discretization,
    pub faults_injected: bool,
    pub rho: f64,
    pub certificate: CertificateSource,
    pub observers: Vec<ObserverSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dominance: Option<DominanceSummary>,
    pub synthesis_time_s: f64,
    pub exit_status: ExitStatus,
    pub exit_code: i32,
}

fn first(flags: impl Iterator<Item = bool>) -> Option<usize> {
    flags.enumerate().find(|(_, f)| *f).map(|(t, _)| t)
}

pub fn summarize_observer(trace: &ObserverTrace, co_offset: usize) -> ObserverSummary {
    let steps = &trace.steps;
    let yo_len = steps.iter().find_map(|s| s.output_alarm.as_ref().map(Vec::len)).unwrap_or(0);
    let mut output_alarm_steps = vec![0; yo_len];
    for s in steps {
        if let Some(a) = &s.output_alarm {
            for (i, &flag) in a.iter().enumerate() {
                output_alarm_steps[i] += usize::from(flag);
            }
        }
    }
    let h_index = Y_H.checked_sub(co_offset);
    let headway_alarm_steps = steps
        .iter()
        .filter(|s| {
            h_index.is_some_and(|i| s.output_alarm.as_ref().is_some_and(|a| a.get(i).copied().unwrap_or(false)))
        })
        .count();
    let m = steps.first().map_or(0, |s| s.f_box.dim());
    let mean_control_width = (0..m)
        .map(|j| steps.iter().map(|s| s.f_box.width()[j]).sum::<f64>() / steps.len().max(1) as f64)
        .collect();
    ObserverSummary {
        method: trace.method,
        unsound_steps: trace.inside.iter().filter(|i| !**i).count(),
        first_unsound_step: first(trace.inside.iter().map(|i| !i)),
        actuator_alarm_steps: steps.iter().filter(|s| s.any_actuator_alarm()).count(),
        first_actuator_alarm: first(steps.iter().map(StepReport::any_actuator_alarm)),
        output_alarm_steps,
        first_output_alarm: first(steps.iter().map(StepReport::any_output_alarm)),
        headway_alarm_steps,
        state_undefined_steps: steps.iter().filter(|s| !s.state_safety.all_safe()).count(),
        predicted_output_undefined_steps: steps.iter().filter(|s| !s.predicted_output_safety.all_safe()).count(),
        mean_control_width,
        max_decrement: trace.decrements.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        budget_exhausted_steps: steps.iter().filter(|s| s.budget_exhausted).count(),
        total_nodes: steps.iter().map(|s| s.nn_nodes).sum(),
        nn_time_total_s: steps.iter().map(|s| s.nn_time).sum::<Duration>().as_secs_f64(),
        step_time_total_s: steps.iter().map(|s| s.step_time).sum::<Duration>().as_secs_f64(),
    }
}

pub fn dominance(trace: &Trace) -> Option<DominanceSummary> {
    let an = trace.observer(BoundingMethod::An)?;
    let op = trace.observer(BoundingMethod::Op)?;
    let mut out = DominanceSummary { steps: an.steps.len(), control_within: 0, control_strictly_tighter: 0, box_within: 0 };
    for (a, o) in an.steps.iter().zip(&op.steps) {
        out.control_within += usize::from(o.f_box.is_subset_of(&a.f_box, ALARM_TOL));
        let (wa, wo) = (a.f_box.width(), o.f_box.width());
        out.control_strictly_tighter += usize::from(wo.iter().zip(wa.iter()).all(|(o, a)| *o < a - 1e-6));
        out.box_within += usize::from(o.next_box.is_subset_of(&a.next_box, ALARM_TOL));
    }
    Some(out)
}

/// Exit status of a completed run. Soundness is only a contract in
/// fault-free runs; faults legitimately push the state out of the box.
pub fn exit_status(trace: &Trace) -> ExitStatus {
    if !trace.faulty && trace.observers.iter().any(|o| o.inside.iter().any(|i| !i)) {
        return ExitStatus::Unsound;
    }
    if trace.observers.iter().any(|o| o.steps.iter().any(|s| s.budget_exhausted)) {
        return ExitStatus::BudgetExhausted;
    }
    ExitStatus::Success
}

pub fn summarize(
    prepared: &PreparedScenario,
    trace: &Trace,
    cert: &ObserverCertificate,
    source: CertificateSource,
    synthesis_time: Duration,
) -> RunSummary {
    let cfg = &prepared.config;
    let status = exit_status(trace);
    RunSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        horizon: cfg.horizon,
        t_s: cfg.t_s,
        discretization: cfg.discretization,
        faults_injected: trace.faulty,
        rho: cert.rho,
        certificate: source,
        observers: trace.observers.iter().map(|o| summarize_observer(o, prepared.model.co_offset)).collect(),
        dominance: dominance(trace),
        synthesis_time_s: synthesis_time.as_secs_f64(),
        exit_status: status,
        exit_code: status.code(),
    }
}

/// Everything a completed run produced.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub prepared: PreparedScenario,
    pub certificate: ObserverCertificate,
    pub trace: Trace,
    pub summary: RunSummary,
    pub files: Vec<PathBuf>,
}

/// Loads, runs and writes a scenario. `out_dir` overrides the configured
/// output directory.
pub fn run_scenario(config: &ScenarioConfig, base: Option<&Path>, out_dir: Option<&Path>) -> Result<ScenarioOutcome> {
    let prepared = prepare(config, base)?;
    let started = Instant::now();
    let (cert, source) = certificate(&prepared)?;
    let synthesis_time = started.elapsed();
    log::info!("certificate {source:?}: rho = {:.6}", cert.rho);
    let trace = simulate(&prepared, &cert)?;
    let summary = summarize(&prepared, &trace, &cert, source, synthesis_time);
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => ScenarioConfig::resolve(base, &config.output.dir),
    };
    let files = crate::scenario::trace::write_outputs(&dir, &prepared, &trace, &summary, &cert)?;
    Ok(ScenarioOutcome { prepared, certificate: cert, trace, summary, files })
}
