pub mod analytics;
pub mod cells;
pub mod cli;
pub mod error;
pub mod exceedance;
pub mod geometry;
pub mod knn;
pub mod lemma_verify;
pub mod quadrature;
pub mod sampling;
