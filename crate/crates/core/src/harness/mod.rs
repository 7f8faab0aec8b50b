//! Training, evaluation, benchmarking and gradient-check tooling behind the
//! `echomsa` binary.

pub mod bench;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod report;
pub mod run;
pub mod schedule;
pub mod train;

pub use config::RunConfig;
pub use schedule::ScheduleConfig;
