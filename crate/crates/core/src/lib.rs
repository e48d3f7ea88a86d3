//! Gradient queue boosting.
//!
//! A bounded queue of recent raw gradients supplies per-coordinate mean and
//! standard deviation. Each incoming gradient coordinate is rescaled by its
//! clamped z-score, so rare ("sparse") components are amplified by up to `rho`
//! and frequently repeated ("monotonous") components are damped by down to
//! `1/rho`. The crate provides:
//!
//! - [`queue`]: the queue, its statistics, the boost operator and the
//!   variable queue-length controller.
//! - [`optim`]: SGD with momentum and Adam, each with optional boosting.
//! - [`cluster`]: k-means over per-sample features and population-weighted
//!   boosted aggregation of cluster mean gradients.
//! - [`analysis`]: closed forms for momentum under a periodic sparse signal,
//!   the direction-following thresholds, batch-composition error cases and
//!   the boost magnitude `zeta`, each paired with a step-by-step simulator.
//! - [`nn`]: a two-filter line detector with exact per-sample gradients and a
//!   synthetic line dataset.
//! - [`experiment`]: configuration and runners behind the `gradqueue` binary.
//!
//! ```
//! use grad_queue::queue::{BoostConfig, GradQueue};
//!
//! let mut queue = GradQueue::new(5).unwrap();
//! for g in [1.0, 1.0, 1.0, 1.0] {
//!     queue.push(&[g]).unwrap();
//! }
//! let cfg = BoostConfig::default();
//! // a repeated value is damped, a spike is amplified
//! assert_eq!(queue.boost(&[1.0], &cfg).unwrap(), vec![1.0 / 3.0]);
//! assert_eq!(queue.boost(&[-4.0], &cfg).unwrap(), vec![-12.0]);
//! ```

pub mod analysis;
pub mod cluster;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod optim;
pub mod queue;

pub use error::{Error, Result};
