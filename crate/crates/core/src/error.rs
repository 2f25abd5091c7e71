use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimMismatch { op: &'static str, detail: String },

    #[error("softmax group {group} is empty")]
    EmptySoftmaxGroup { group: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file {path}: {detail}")]
    MalformedFile { path: String, detail: String },

    #[error("edge index {index} out of range for {nodes} nodes (line {line})")]
    EdgeIndexOutOfRange {
        index: usize,
        nodes: usize,
        line: usize,
    },

    #[error("feature row count mismatch between modalities: visual {visual}, textual {textual}")]
    ModalityRowMismatch { visual: usize, textual: usize },

    #[error("invalid {what}: {detail}")]
    InvalidParameter { what: &'static str, detail: String },

    #[error("edge rewiring infeasible in mode {mode}: no valid swap found within the attempt budget")]
    RewireInfeasible { mode: &'static str },

    #[error("{what} size {size} exceeds the dense-solve guard {max}; use the iterative smoothing path instead")]
    SizeGuard {
        what: &'static str,
        size: usize,
        max: usize,
    },

    #[error("trajectory step {step} out of range (depth {depth})")]
    StepOutOfRange { step: usize, depth: usize },

    #[error("dataset has no category ids; purity diagnostics unavailable")]
    MissingCategories,

    #[error("query node set is empty")]
    EmptyQuerySet,

    #[error("batch node {node} is missing from the gallery; its positive pair cannot be scored")]
    BatchNotInGallery { node: usize },

    #[error("non-finite loss in term {term}")]
    NonFiniteLoss { term: &'static str },

    #[error("linear solve failed: matrix is singular at pivot {pivot}")]
    SingularMatrix { pivot: usize },

    #[error("unsupported option {what}: {detail}")]
    Unsupported { what: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
