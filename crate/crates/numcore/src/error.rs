use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("rows have unequal lengths")]
    RaggedRows,
    #[error("shape mismatch at node {node:?}: {detail}")]
    Shape { node: Option<usize>, detail: String },
    #[error("graph declares {expected} inputs, got {actual}")]
    InputCount { expected: usize, actual: usize },
    #[error("non-finite value produced at node {node}")]
    NonFinite { node: usize },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("upstream gradient shape {actual:?} does not match output shape {expected:?}")]
    UpstreamShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite gradient for parameter {param}; step rejected")]
    NonFiniteGradient { param: usize },
    #[error("optimizer holds {expected} moment slots, got {actual} parameters")]
    ParamCount { expected: usize, actual: usize },
}
