//! Self-gated activation functions with expandable gating ranges, gated linear
//! units, a finite-difference gradient oracle, and a small double-precision
//! transformer with hand-written backpropagation for desk-scale experiments.

pub mod activations;
pub mod dataio;
pub mod error;
pub mod gatecore;
pub mod glu;
pub mod gradcheck;
pub mod nanonet;
pub mod rng;

pub use activations::{act_backward, act_forward, alpha_init, effective_gate, ActGrad, ActivationSpec, RangeParam, RangeShape};
pub use error::{Error, Result};
pub use gatecore::{erf_core, gate_deriv, gate_eval, rescale, GateKind, Interval};
pub use glu::{glu_backward, glu_forward, GluGrad, GluOrder, GluSpec};
