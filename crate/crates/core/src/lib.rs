pub mod backend;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod harness;
pub mod pool;
pub mod reflect;
pub mod schedule;
pub mod simbench;
pub mod score;
pub mod skilldoc;
pub mod trainer;
