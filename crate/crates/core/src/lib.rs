//! Topometric semantic mapping and hierarchical path planning from word
//! instructions.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the scalar for the common case.

pub mod baselines;
pub mod concept;
pub mod error;
pub mod eval;
pub mod grid_map;
pub mod learner;
pub mod linalg;
pub mod planner;
pub mod render;
pub mod scalar;
pub mod search;
pub mod synth;
pub mod topo_graph;

pub use error::{Error, Result};

pub type ConceptModel = concept::ConceptModel<f64>;
pub type ConceptModelF32 = concept::ConceptModel<f32>;
pub type Hyperparameters = concept::Hyperparameters<f64>;
pub type HyperparametersF32 = concept::Hyperparameters<f32>;
pub type CostMap = grid_map::CostMap<f64>;
pub type CostMapF32 = grid_map::CostMap<f32>;
pub type TopoGraph = topo_graph::TopoGraph<f64>;
pub type TopoGraphF32 = topo_graph::TopoGraph<f32>;
pub type PlanResult = planner::PlanResult<f64>;
pub type PlanResultF32 = planner::PlanResult<f32>;
pub type LearnResult = learner::LearnResult<f64>;
pub type LearnResultF32 = learner::LearnResult<f32>;
