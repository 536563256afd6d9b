use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },
    #[error("l2_normalize: vector norm below {eps:e}")]
    Degenerate { eps: f64 },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("split: {0}")]
    Split(String),
    #[error("config: {0}")]
    Config(String),
    #[error("augmentation linkage: unmatched records {0:?}")]
    Linkage(Vec<String>),
    #[error("non-finite loss component {component} = {value}")]
    NonFiniteLoss { component: &'static str, value: f64 },
    #[error("numeric fault at step {step}: {detail}")]
    NumericFault { step: usize, detail: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(alloc::format!($($arg)*))
    };
}
pub(crate) use contract;
