//! Lung-ventilator waveform-tracking benchmark.
//!
//! The pipeline: simulate a ground-truth lung ([`dynamics`]), tune a PID
//! baseline by grid search ([`pid`]), collect exploration data around it
//! ([`explore`]), fit a differentiable neural simulator of inspiratory
//! dynamics ([`simlearn`]), train a residual PID+network controller by
//! backpropagating through the simulator rollout ([`policy`]), and compare
//! everything on the plant ([`bench`]).

pub mod bench;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod explore;
pub mod nnet;
pub mod pid;
pub mod policy;
pub mod simlearn;

pub use error::{Result, VentError};
