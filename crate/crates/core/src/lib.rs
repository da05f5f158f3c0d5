//! World-model agents with multi-source transfer learning at desk scale.
//!
//! The crate provides a small reverse-mode autodiff engine, a Dreamer-style
//! agent (world model plus actor and value learned in imagination), a suite
//! of pixel-rendered control domains, the transfer machinery (fractional
//! blending, modular transfer plans, a frozen shared encoder, meta reward
//! models over stored sources) and the experiment protocols around them.

pub mod behavior;
pub mod checkpoint;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod nets;
pub mod tensor;
pub mod transfer;
pub mod worldmodel;

pub use error::{Error, Result};
pub use nets::{build_agent, ModelSpec, NamedParamSet, ParamRole};
pub use tensor::{RngStream, Tape, Tensor, Var};
