#![no_std]
extern crate alloc;

pub mod diff;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod rng;

pub use diff::{Graph, Tensor, Var};
pub use error::{Error, Result};
pub mod augment;
pub mod corpus;
pub mod eval;
pub mod synth;
pub mod trainer;
