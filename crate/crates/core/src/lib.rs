//! Flow-matching motion planning: expert B-spline data from CMA-ES, a
//! three-headed motion-field network trained by second-order conditional
//! flow matching, and cost-guided RK4 sampling.

pub mod envs;
pub mod error;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod net;
pub mod optimizer;
pub mod rng;
pub mod sampler;
pub mod splines;

pub use error::{Error, Result};
