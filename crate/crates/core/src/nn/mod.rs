//! Minimal dense neural-network toolkit: autodiff graph, parameters,
//! optimiser, layers and a finite-difference gradient checker.

pub mod gradcheck;
mod graph;
pub mod layers;
mod optim;
mod params;

pub use graph::{masked_softmax, sigmoid, Gradients, Graph, Matrix, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Manifest, ParameterStore};
