//! Scenario loading, the discrete-event kernel, and run artifacts.

pub mod kernel;
pub mod scenario;
pub mod trace;

pub use kernel::{run, Kernel, RunOutput};
pub use scenario::{load_scenario, Scenario};
