//! Real- and imaginary-time evolution of periodic transverse-field Ising
//! rings with a binary multiscale entanglement renormalization ansatz.
//!
//! Each Trotter gate is absorbed by re-optimizing only the tensors inside
//! its causal cone, so one gate costs `O(log L)` and one time step
//! `O(L log L)`.

pub mod checkpoint;
pub mod cli;
pub mod cone;
pub mod config;
pub mod driver;
pub mod evolution;
pub mod exact;
pub mod mera;
pub mod model;
pub mod network;
pub mod observables;
pub mod tensor;
pub mod ti;

pub use mera::{MeraGeometry, MeraState};
pub use tensor::{Tensor, C64};
