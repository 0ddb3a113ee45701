//! Interval observers for systems driven by ReLU network controllers.
//!
//! The crate bounds the controller output (cheap interval propagation or an
//! exact mixed-integer program), encloses scalar nonlinearities with
//! piecewise-linear envelopes, synthesizes observer gains from a
//! semidefinite program, and runs the resulting observer for safety
//! monitoring and fault detection.

pub mod envelope;
pub mod error;
pub mod interval;
pub mod lp;
pub mod milp;
pub mod network;
pub mod pipeline;
pub mod scenario;
pub mod sdp;
pub mod synthesis;

pub use envelope::{
    build_envelope, propagate_through_f, refine_with_prior, runtime_interval_general, runtime_interval_monotonic,
    ElementaryEnvelope, ElementaryFunction, NonlinearTerm,
};
pub use error::{Error, Result};
pub use interval::{propagate_affine, split_matrix, width, IntervalVector, MatrixSplit};
pub use milp::{
    encode, output_interval, output_interval_with, relaxation_bound, solve_bound, solve_bound_with, BoundResult,
    MilpEncoding, MilpOptions, Sense, SolveStatus,
};
pub use network::{an_bounds, preactivation_bounds, FeedforwardNetwork, LayerBounds, NeuronPhase};
pub use synthesis::{
    lyapunov_decrement, synthesize, verify_certificate, ObserverCertificate, ResidualReport, SystemModel,
};
