//! Beam training for 60 GHz links with uniform linear arrays: the classic
//! per-beam sector sweep and beam coding, where several beams are trained in
//! one packet field and separated by orthogonal codes.

pub mod array;
pub mod channel;
pub mod coding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod packets;
pub mod protocols;

pub use error::{Error, Result};
