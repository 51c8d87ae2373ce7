//! Sequential transmission of k-bit messages over a binary symmetric channel
//! with full noiseless feedback.
//!
//! The transmitter and receiver share one posterior over all 2^k messages,
//! stored as groups of equal posterior indexed by Hamming distance to the
//! systematic output and a combinadic rank. Each step the list is split into
//! two sets of nearly equal probability and the transmitter sends the label
//! of the true message's set.

pub mod channel;
pub mod codec;
pub mod combinadics;
pub mod count;
pub mod error;
pub mod group;
pub mod harness;
pub mod oracle;
pub mod partition;
pub mod stopping;
pub mod tail;

pub use error::{Error, Result};
