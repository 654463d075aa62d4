pub mod balancer;
pub mod cosmology;
pub mod domain;
pub mod force;
pub mod harness;
pub mod mesh;
pub mod orchestrator;
pub mod transport;
pub mod tree;
