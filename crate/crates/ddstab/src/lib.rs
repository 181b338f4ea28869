//! Data-driven stabilization of SISO feedback-linearizable systems under
//! sampled-data control, with the machinery to certify it empirically.
//!
//! The pipeline: simulate the plant exactly between samples ([`plant`]),
//! approximate it over one sample with a Taylor-truncated affine model
//! ([`lift`]), reconstruct the state and the lifted drive α + βu from a
//! window of outputs by least squares ([`estimator`]), design a virtual gain
//! with a Lyapunov certificate and adapt the real input toward it without
//! ever reading α or β ([`controller`]), close the loop ([`simloop`]) and
//! turn traces into quantitative certificates ([`analysis`]). Ready-made
//! experiment presets live in [`scenarios`]; the command-line front end in
//! [`cli`].

pub mod analysis;
pub mod cli;
pub mod controller;
pub mod estimator;
pub mod lift;
pub mod numerics;
pub mod parallel;
pub mod plant;
pub mod scenarios;
pub mod simloop;

pub use controller::{design_gain, static_oracle_input, step_controller, ControllerState, GainDesign};
pub use estimator::{build_stack, Estimate, EstimatorConfig, ObservabilityStack};
pub use plant::{NormalFormPlant, OperatingBox};
pub use simloop::{run, run_oracle, RunConfig, Trace};
