//! Feedforward ReLU controllers: exact evaluation, interval-arithmetic
//! pre-activation bounds, and the auxiliary-network output enclosure.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{split_matrix, IntervalVector};

/// `z_i = relu(W_i z_{i-1} + b_i)` for the hidden layers, affine output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardNetwork {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl FeedforwardNetwork {
    /// Validates the dimension chain. At least one hidden layer is required.
    pub fn new(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self> {
        if weights.len() != biases.len() {
            return Err(Error::invalid(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        if weights.len() < 2 {
            return Err(Error::invalid("network needs a hidden layer and an output layer"));
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() == 0 || w.ncols() == 0 {
                return Err(Error::invalid(format!("layer {} has an empty weight matrix", i + 1)));
            }
            if w.nrows() != b.len() {
                return Err(Error::invalid(format!(
                    "layer {}: {} rows but bias of length {}",
                    i + 1,
                    w.nrows(),
                    b.len()
                )));
            }
            if i > 0 && w.ncols() != weights[i - 1].nrows() {
                return Err(Error::invalid(format!(
                    "layer {} expects {} inputs but layer {} has {} neurons",
                    i + 1,
                    w.ncols(),
                    i,
                    weights[i - 1].nrows()
                )));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {} has non-finite parameters", i + 1)));
            }
        }
        Ok(Self { weights, biases })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: NetworkFile = serde_json::from_str(text)?;
        let mut weights = Vec::with_capacity(raw.weights.len());
        for (i, rows) in raw.weights.iter().enumerate() {
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(Error::invalid(format!("layer {} has ragged rows", i + 1)));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            weights.push(DMatrix::from_row_slice(rows.len(), ncols, &flat));
        }
        let biases = raw.biases.into_iter().map(DVector::from_vec).collect();
        Self::new(weights, biases)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let raw = NetworkFile {
            weights: self
                .weights
                .iter()
                .map(|w| w.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            biases: self.biases.iter().map(|b| b.iter().copied().collect()).collect(),
        };
        serde_json::to_string_pretty(&raw).expect("network serializes")
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    /// Number of affine layers `L`.
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].nrows()
    }

    /// Neuron counts of the hidden layers.
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.weights[..self.weights.len() - 1].iter().map(DMatrix::nrows).collect()
    }

    fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, z0: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(z0.len())?;
        let last = self.weights.len() - 1;
        let mut z = z0.clone();
        for (w, b) in self.weights[..last].iter().zip(&self.biases) {
            z = (w * z + b).map(relu);
        }
        Ok(&self.weights[last] * z + &self.biases[last])
    }

    /// Hidden-layer pre-activations `ẑ_i` for a concrete input.
    pub fn preactivations(&self, z0: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        self.check_input(z0.len())?;
        let last = self.weights.len() - 1;
        let mut z = z0.clone();
        let mut out = Vec::with_capacity(last);
        for (w, b) in self.weights[..last].iter().zip(&self.biases) {
            let pre = w * z + b;
            z = pre.map(relu);
            out.push(pre);
        }
        Ok(out)
    }
}

pub(crate) fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Interval-arithmetic bounds of every hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub pre_lower: Vec<DVector<f64>>,
    pub pre_upper: Vec<DVector<f64>>,
    pub post_lower: Vec<DVector<f64>>,
    pub post_upper: Vec<DVector<f64>>,
}

impl LayerBounds {
    pub fn phase(&self, layer: usize, neuron: usize) -> NeuronPhase {
        NeuronPhase::classify(self.pre_lower[layer][neuron], self.pre_upper[layer][neuron])
    }

    pub fn phases(&self) -> Vec<Vec<NeuronPhase>> {
        (0..self.pre_lower.len())
            .map(|i| (0..self.pre_lower[i].len()).map(|j| self.phase(i, j)).collect())
            .collect()
    }

    pub fn num_unstable(&self) -> usize {
        self.phases().iter().flatten().filter(|p| **p == NeuronPhase::Unstable).count()
    }
}

/// Stability of a ReLU over its pre-activation interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeuronPhase {
    /// `l̂ ≥ 0`: the neuron is the identity.
    Active,
    /// `û ≤ 0`: the neuron outputs zero.
    Inactive,
    Unstable,
}

impl NeuronPhase {
    pub fn classify(pre_lower: f64, pre_upper: f64) -> Self {
        if pre_lower >= 0.0 {
            NeuronPhase::Active
        } else if pre_upper <= 0.0 {
            NeuronPhase::Inactive
        } else {
            NeuronPhase::Unstable
        }
    }
}

/// Pre-activation bounds `l̂_i, û_i` by interval arithmetic with
/// `W̄ = W⁺`, `W̲ = −W⁻`.
pub fn preactivation_bounds(net: &FeedforwardNetwork, input: &IntervalVector) -> Result<LayerBounds> {
    net.check_input(input.dim())?;
    let hidden = net.num_layers() - 1;
    let mut lo = input.lower().clone();
    let mut hi = input.upper().clone();
    let mut bounds = LayerBounds {
        pre_lower: Vec::with_capacity(hidden),
        pre_upper: Vec::with_capacity(hidden),
        post_lower: Vec::with_capacity(hidden),
        post_upper: Vec::with_capacity(hidden),
    };
    for i in 0..hidden {
        let split = split_matrix(&net.weights[i])?;
        let pre_lo = &split.pos * &lo - &split.neg * &hi + &net.biases[i];
        let pre_hi = &split.pos * &hi - &split.neg * &lo + &net.biases[i];
        lo = pre_lo.map(relu);
        hi = pre_hi.map(relu);
        bounds.pre_lower.push(pre_lo);
        bounds.pre_upper.push(pre_hi);
        bounds.post_lower.push(lo.clone());
        bounds.post_upper.push(hi.clone());
    }
    Ok(bounds)
}

/// Auxiliary-network (AN) enclosure of the network output.
///
/// Lower chain: `z̲_i = φ(W̲_i z̄_{i−1} + W̄_i z̲_{i−1} + b_i)`; upper chain
/// swaps the roles of `z̲` and `z̄`. The output layer is the same affine
/// expression without the activation.
pub fn an_bounds(net: &FeedforwardNetwork, input: &IntervalVector) -> Result<IntervalVector> {
    net.check_input(input.dim())?;
    let last = net.num_layers() - 1;
    let mut z_lo = input.lower().clone();
    let mut z_hi = input.upper().clone();
    for i in 0..=last {
        let split = split_matrix(&net.weights[i])?;
        let w_upper = &split.pos;
        let w_lower = -&split.neg;
        let next_lo = &w_lower * &z_hi + w_upper * &z_lo + &net.biases[i];
        let next_hi = &w_lower * &z_lo + w_upper * &z_hi + &net.biases[i];
        if i == last {
            return IntervalVector::new(next_lo, next_hi);
        }
        z_lo = next_lo.map(relu);
        z_hi = next_hi.map(relu);
    }
    unreachable!("loop returns at the output layer")
}

/// Small 3→5→2 network used for exactness checks.
pub fn appendix_small() -> FeedforwardNetwork {
    FeedforwardNetwork::from_json(include_str!("../data/appendix_small.json"))
        .expect("embedded network is valid")
}

/// 5→20→1 adaptive cruise control network with inputs
/// `[v_set, t_gap, v_e, h, ṽ]`.
pub fn acc_controller() -> FeedforwardNetwork {
    FeedforwardNetwork::from_json(include_str!("../data/acc_controller.json"))
        .expect("embedded network is valid")
}
