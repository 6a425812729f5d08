pub mod cli;
pub mod collect;
pub mod detect;
pub mod fuzz;
pub mod models;
pub mod profile;
pub mod report;
pub mod runner;
pub mod stats;
pub mod store;
pub mod subjects;
