pub mod engine;
pub mod models;
pub mod data;
pub mod augment;
pub mod eval;
pub mod train;
