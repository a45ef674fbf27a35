//! Distributed second-order sliding mode load-frequency control on a
//! nonlinear multi-area power network, with economic dispatch and numerical
//! verification of the closed loop.

pub mod analysis;
pub mod case_study;
pub mod controller;
pub mod dispatch;
pub mod dynamics;
pub mod graph;
pub mod network;
pub mod simulator;

pub use nalgebra;
