pub mod fault;
pub mod store;
pub mod vault;
pub mod templates;
pub mod engine;
pub mod gate;
pub mod cli;
