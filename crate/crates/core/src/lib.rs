pub mod batch;
pub mod cokriging;
pub mod criteria;
pub mod design;
pub mod error;
pub mod harness;
pub(crate) mod gp;
pub mod kernels;
pub mod kriging;
pub mod loocv;
pub mod mf_sequential;
pub mod mle;
pub mod problems;
pub mod seeds;

pub use error::{Error, Result};
