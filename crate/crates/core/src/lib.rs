//! Planar laboratory for adaptive force-impedance control driven by a learned
//! force predictive model.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`]: the 3-link planar arm plant with penalty contact and
//!   scripted disturbances.
//! * [`motion`]: via-point movement primitive used as the motion velocity source.
//! * [`control`]: velocity-source composition, impedance law, torque mapping
//!   and the adaptive/recovery gain schedule.
//! * [`model`]: bidirectional GRU with a mixture-density head, trained by
//!   negative log-likelihood with hand-written backpropagation.
//! * [`detector`]: sliding windows, score / abnormal score and mode decisions.
//! * [`harness`]: scenario configuration, closed-loop runs, metrics, CSV logs
//!   and the command line front end.

pub mod control;
pub mod detector;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod model;
pub mod motion;

pub use error::{Error, Result};
