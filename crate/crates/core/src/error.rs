use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid tensor shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("graph input `{0}` was not bound")]
    UnboundInput(String),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("feature width {actual} does not match configured {expected}")]
    FeatureWidth { expected: usize, actual: usize },
    #[error("source modality does not match the model")]
    ModalityMismatch,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("edit position {position} out of range for text of {len} characters")]
    EditPosition { position: usize, len: usize },
    #[error("session is {actual}, expected {expected}")]
    BadState {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("truncation to {requested} characters exceeds hypothesis of {len}")]
    BadTruncation { requested: usize, len: usize },
    #[error("hypothesis does not start with the feedback prefix")]
    PrefixViolated,
}
