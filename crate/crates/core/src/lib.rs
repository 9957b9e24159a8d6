pub mod active;
pub mod assignment;
pub mod data_bench;
pub mod geometry;
pub mod pipeline;
pub mod simplex_qp;
pub mod spectral;
pub mod subspace;
