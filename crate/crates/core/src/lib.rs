//! Ambulance fleet dispatch: a Markov-chain preparedness metric, dispatch and
//! reassignment policies, and a discrete-event simulator to compare them.

pub mod arrivals;
pub mod assignment;
pub mod citymodel;
pub mod ctmc;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod policies;
pub mod reporting;
pub mod setup;
pub mod simulator;

pub use error::{Error, Result};
