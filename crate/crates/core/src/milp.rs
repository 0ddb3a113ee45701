//! Exact output bounds of a ReLU network by mixed-integer programming.
//!
//! Every unstable neuron `z = relu(ẑ)` with pre-activation bounds
//! `l̂ < 0 < û` is encoded with a binary `σ`:
//!
//! ```text
//! z ≥ ẑ,  z ≥ 0,  z ≤ σ·û,  z ≤ ẑ − (1 − σ)·l̂,  σ ∈ {0, 1}
//! ```
//!
//! Stable neurons are substituted (`z = ẑ` or `z = 0`). The program is
//! solved by depth-first branch-and-bound over the binaries with LP
//! relaxations from [`crate::lp`].

use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalVector;
use crate::lp::{LinearProgram, LpOutcome, RowSense};
use crate::network::{preactivation_bounds, FeedforwardNetwork, LayerBounds, NeuronPhase};

pub const INTEGRALITY_TOL: f64 = 1e-6;
pub const INCUMBENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Min => 1.0,
            Sense::Max => -1.0,
        }
    }
}

/// Role of a row in the encoding, tagged with its `(layer, neuron)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Active neuron: `z = ẑ`.
    Identity,
    /// `z ≥ ẑ`
    AbovePreactivation,
    /// `z ≥ 0`
    AboveZero,
    /// `z ≤ σ·û`
    BelowBinary,
    /// `z ≤ ẑ − (1 − σ)·l̂`
    BelowShiftedPreactivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowTag {
    pub layer: usize,
    pub neuron: usize,
    pub kind: ConstraintKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binary {
    pub layer: usize,
    pub neuron: usize,
    pub var: usize,
}

/// The MILP for one output component and one sense.
///
/// Variables are laid out as `z₀, z₁, …, z_{L−1}` followed by one `σ` per
/// unstable neuron. The LP objective is always minimized; for `Max` it is
/// negated.
#[derive(Debug, Clone)]
pub struct MilpEncoding {
    lp: LinearProgram,
    tags: Vec<RowTag>,
    binaries: Vec<Binary>,
    layer_offsets: Vec<usize>,
    input_dim: usize,
    output_index: usize,
    offset: f64,
    sense: Sense,
    net: FeedforwardNetwork,
}

impl MilpEncoding {
    pub fn binaries(&self) -> &[Binary] {
        &self.binaries
    }

    pub fn num_binaries(&self) -> usize {
        self.binaries.len()
    }

    pub fn row_tags(&self) -> &[RowTag] {
        &self.tags
    }

    pub fn linear_program(&self) -> &LinearProgram {
        &self.lp
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn output_index(&self) -> usize {
        self.output_index
    }

    /// Index of the variable for neuron `neuron` of hidden layer `layer`
    /// (layers counted from 1; layer 0 is the input).
    pub fn var_index(&self, layer: usize, neuron: usize) -> usize {
        self.layer_offsets[layer] + neuron
    }

    /// Overrides the bounds of one input variable. Crossed bounds make every
    /// relaxation infeasible.
    pub fn restrict_input(&mut self, i: usize, lower: f64, upper: f64) -> Result<()> {
        if i >= self.input_dim {
            return Err(Error::invalid(format!("input index {i} out of range")));
        }
        self.lp.lower[i] = lower;
        self.lp.upper[i] = upper;
        Ok(())
    }

    fn input_box(&self) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_column_slice(&self.lp.lower[..self.input_dim]),
            DVector::from_column_slice(&self.lp.upper[..self.input_dim]),
        )
    }

    /// Converts a minimized LP value back to the requested sense.
    fn to_sense(&self, lp_value: f64) -> f64 {
        self.sense.sign() * lp_value + self.offset
    }
}

/// Builds the encoding of `net` over `input` for output `output_index`.
pub fn encode(
    net: &FeedforwardNetwork,
    input: &IntervalVector,
    bounds: &LayerBounds,
    output_index: usize,
    sense: Sense,
) -> Result<MilpEncoding> {
    if output_index >= net.output_dim() {
        return Err(Error::invalid(format!(
            "output index {output_index} out of range for {} outputs",
            net.output_dim()
        )));
    }
    if input.dim() != net.input_dim() {
        return Err(Error::invalid(format!(
            "input box has dimension {} but network expects {}",
            input.dim(),
            net.input_dim()
        )));
    }
    let hidden = net.hidden_sizes();
    if bounds.pre_lower.len() != hidden.len()
        || bounds.pre_lower.iter().zip(&hidden).any(|(b, &h)| b.len() != h)
    {
        return Err(Error::invalid("layer bounds do not match the network"));
    }

    let mut layer_offsets = vec![0];
    let mut n_cont = net.input_dim();
    for &h in &hidden {
        layer_offsets.push(n_cont);
        n_cont += h;
    }
    let n_bin = bounds.num_unstable();
    let mut lp = LinearProgram::new(n_cont + n_bin);
    for i in 0..net.input_dim() {
        lp.lower[i] = input.lower()[i];
        lp.upper[i] = input.upper()[i];
    }

    let mut tags = Vec::new();
    let mut binaries = Vec::new();
    for (li, &size) in hidden.iter().enumerate() {
        let layer = li + 1;
        let w = &net.weights()[li];
        let b = &net.biases()[li];
        let prev = layer_offsets[li];
        for k in 0..size {
            let z = layer_offsets[layer] + k;
            let (l, u) = (bounds.pre_lower[li][k], bounds.pre_upper[li][k]);
            // z − W_k·z_prev, the left side shared by the pre-activation rows.
            let affine = |extra: Vec<(usize, f64)>| {
                let mut c: Vec<(usize, f64)> = vec![(z, 1.0)];
                c.extend((0..w.ncols()).filter(|&j| w[(k, j)] != 0.0).map(|j| (prev + j, -w[(k, j)])));
                c.extend(extra);
                c
            };
            let tag = |kind| RowTag { layer, neuron: k, kind };
            match NeuronPhase::classify(l, u) {
                NeuronPhase::Inactive => {
                    lp.lower[z] = 0.0;
                    lp.upper[z] = 0.0;
                }
                NeuronPhase::Active => {
                    lp.lower[z] = l;
                    lp.upper[z] = u;
                    lp.add_row(affine(vec![]), RowSense::Eq, b[k]);
                    tags.push(tag(ConstraintKind::Identity));
                }
                NeuronPhase::Unstable => {
                    let s = n_cont + binaries.len();
                    binaries.push(Binary { layer, neuron: k, var: s });
                    lp.lower[z] = 0.0;
                    lp.upper[z] = u;
                    lp.lower[s] = 0.0;
                    lp.upper[s] = 1.0;
                    lp.add_row(affine(vec![]), RowSense::Ge, b[k]);
                    tags.push(tag(ConstraintKind::AbovePreactivation));
                    lp.add_row(vec![(z, 1.0)], RowSense::Ge, 0.0);
                    tags.push(tag(ConstraintKind::AboveZero));
                    lp.add_row(vec![(z, 1.0), (s, -u)], RowSense::Le, 0.0);
                    tags.push(tag(ConstraintKind::BelowBinary));
                    lp.add_row(affine(vec![(s, -l)]), RowSense::Le, b[k] - l);
                    tags.push(tag(ConstraintKind::BelowShiftedPreactivation));
                }
            }
        }
    }

    let last = net.num_layers() - 1;
    let w_out = &net.weights()[last];
    let sign = sense.sign();
    let top = layer_offsets[last];
    for j in 0..w_out.ncols() {
        lp.objective[top + j] = sign * w_out[(output_index, j)];
    }

    Ok(MilpEncoding {
        lp,
        tags,
        binaries,
        layer_offsets,
        input_dim: net.input_dim(),
        output_index,
        offset: net.biases()[last][output_index],
        sense,
        net: net.clone(),
    })
}

/// Outcome of one LP relaxation.
#[derive(Debug, Clone, PartialEq)]
pub enum Relaxation {
    /// `value` is in the encoding's sense: a lower bound for `Min`, an upper
    /// bound for `Max`. `x` is the LP point.
    Bounded { value: f64, x: Vec<f64> },
    Infeasible,
}

/// Solves the LP relaxation with some binaries fixed. `fixed[k]` refers to
/// `enc.binaries()[k]`.
pub fn relaxation_bound(enc: &MilpEncoding, fixed: &[Option<bool>]) -> Result<Relaxation> {
    if fixed.len() != enc.binaries.len() {
        return Err(Error::invalid(format!(
            "{} fixings given for {} binaries",
            fixed.len(),
            enc.binaries.len()
        )));
    }
    let mut lp = enc.lp.clone();
    for (b, f) in enc.binaries.iter().zip(fixed) {
        if let Some(on) = f {
            let v = if *on { 1.0 } else { 0.0 };
            lp.lower[b.var] = v;
            lp.upper[b.var] = v;
        }
    }
    match lp.solve()? {
        LpOutcome::Optimal { value, x } => Ok(Relaxation::Bounded { value: enc.to_sense(value), x }),
        LpOutcome::Infeasible => Ok(Relaxation::Infeasible),
        LpOutcome::Unbounded => Err(Error::InternalError("bounded MILP relaxation reported unbounded".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// Result of one bound computation.
///
/// For `IterationLimit` the value is a valid (possibly loose) bound taken
/// over the incumbent and all open nodes, and `incumbent` holds the best
/// achieved objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub value: f64,
    pub witness: DVector<f64>,
    pub status: SolveStatus,
    pub nodes_explored: usize,
    pub incumbent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpOptions {
    pub node_budget: usize,
    pub time_budget: Option<Duration>,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self { node_budget: 100_000, time_budget: None }
    }
}

struct Node {
    fixed: Vec<Option<bool>>,
    // Parent relaxation value in minimization form.
    bound: f64,
}

pub fn solve_bound(enc: &MilpEncoding) -> Result<BoundResult> {
    solve_bound_with(enc, &MilpOptions::default())
}

pub fn solve_bound_with(enc: &MilpEncoding, opts: &MilpOptions) -> Result<BoundResult> {
    let (lo, hi) = enc.input_box();
    if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
        return Ok(BoundResult {
            value: f64::NAN,
            witness: lo,
            status: SolveStatus::Infeasible,
            nodes_explored: 0,
            incumbent: None,
        });
    }
    let evaluate = |z0: &DVector<f64>| -> Result<f64> { Ok(enc.net.forward(z0)?[enc.output_index]) };
    if lo == hi {
        let value = evaluate(&lo)?;
        return Ok(BoundResult {
            value,
            witness: lo,
            status: SolveStatus::Optimal,
            nodes_explored: 0,
            incumbent: Some(value),
        });
    }

    let start = Instant::now();
    // Work in minimization form: `sign · value`.
    let sign = enc.sense.sign();
    let min_form = |v: f64| sign * v;
    let mut best_witness = (&lo + &hi) * 0.5;
    let mut best = min_form(evaluate(&best_witness)?);
    let mut stack = vec![Node { fixed: vec![None; enc.binaries.len()], bound: f64::NEG_INFINITY }];
    let mut nodes = 0;
    let mut root_infeasible = true;

    while let Some(node) = stack.pop() {
        let out_of_time = opts.time_budget.is_some_and(|b| start.elapsed() >= b);
        if nodes >= opts.node_budget || out_of_time {
            let open = stack.iter().map(|n| n.bound).fold(node.bound, f64::min);
            let bound = open.min(best);
            log::debug!("branch-and-bound budget exhausted after {nodes} nodes");
            return Ok(BoundResult {
                value: sign * bound,
                witness: best_witness,
                status: SolveStatus::IterationLimit,
                nodes_explored: nodes,
                incumbent: Some(sign * best),
            });
        }
        nodes += 1;
        if node.bound >= best - INCUMBENT_TOL {
            continue;
        }
        let (value, x) = match relaxation_bound(enc, &node.fixed)? {
            Relaxation::Infeasible => continue,
            Relaxation::Bounded { value, x } => (min_form(value), x),
        };
        root_infeasible = false;

        let z0 = DVector::from_fn(enc.input_dim, |i, _| x[i].clamp(lo[i], hi[i]));
        let achieved = min_form(evaluate(&z0)?);
        if achieved < best {
            best = achieved;
            best_witness = z0;
        }
        if value >= best - INCUMBENT_TOL {
            continue;
        }

        let mut branch: Option<(usize, f64)> = None;
        let mut best_frac = INTEGRALITY_TOL;
        for (k, b) in enc.binaries.iter().enumerate() {
            if node.fixed[k].is_some() {
                continue;
            }
            let s = x[b.var];
            let frac = s.min(1.0 - s);
            if frac > best_frac {
                best_frac = frac;
                branch = Some((k, s));
            }
        }
        let Some((k, s)) = branch else {
            // Integral relaxation: its point is a true network evaluation and
            // the heuristic above has already recorded it.
            continue;
        };
        let first = s >= 0.5;
        for on in [!first, first] {
            let mut fixed = node.fixed.clone();
            fixed[k] = Some(on);
            stack.push(Node { fixed, bound: value });
        }
    }

    if root_infeasible {
        return Ok(BoundResult {
            value: f64::NAN,
            witness: best_witness,
            status: SolveStatus::Infeasible,
            nodes_explored: nodes,
            incumbent: None,
        });
    }
    let value = sign * best;
    Ok(BoundResult {
        value,
        witness: best_witness,
        status: SolveStatus::Optimal,
        nodes_explored: nodes,
        incumbent: Some(value),
    })
}

/// Exact output box (OP method) with default options.
pub fn output_interval(net: &FeedforwardNetwork, input: &IntervalVector) -> Result<IntervalVector> {
    Ok(output_interval_with(net, input, &MilpOptions::default())?.0)
}

/// Exact output box together with the per-solve results, ordered
/// `[min₀, max₀, min₁, max₁, …]`.
pub fn output_interval_with(
    net: &FeedforwardNetwork,
    input: &IntervalVector,
    opts: &MilpOptions,
) -> Result<(IntervalVector, Vec<BoundResult>)> {
    let bounds = preactivation_bounds(net, input)?;
    let m = net.output_dim();
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::zeros(m);
    let mut results = Vec::with_capacity(2 * m);
    for j in 0..m {
        for sense in [Sense::Min, Sense::Max] {
            let enc = encode(net, input, &bounds, j, sense)?;
            let r = solve_bound_with(&enc, opts)?;
            if r.status == SolveStatus::Infeasible {
                return Err(Error::InternalError(format!("output {j} bound problem is infeasible")));
            }
            match sense {
                Sense::Min => lower[j] = r.value,
                Sense::Max => upper[j] = r.value,
            }
            results.push(r);
        }
    }
    Ok((IntervalVector::new(lower, upper)?, results))
}
