use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("batch norm in train mode needs at least two values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("label {label} is not among the active classes")]
    InactiveLabel { label: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape was recorded without gradient tracking")]
    NotRecorded,
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("genotype violates bounds: {0}")]
    OutOfBounds(String),
    #[error("genotype parse error: {0}")]
    Parse(String),
    #[error("no code of the genotype can be mutated (every range has size 1)")]
    FrozenSearchSpace,
    #[error("cannot decode genotype: {0}")]
    Decode(String),
    #[error("parameter limit {limit} is infeasible: minimum reachable count is {minimum}")]
    InfeasibleBudget { limit: usize, minimum: usize },
    #[error("unknown classifier head: {0}")]
    UnknownHead(String),
    #[error("duplicate class id {0}")]
    DuplicateClass(usize),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("replay buffer capacity {capacity} is smaller than the {classes} classes seen")]
    BufferTooSmall { capacity: usize, classes: usize },
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("similarity undefined: {0}")]
    Similarity(String),
    #[error("record error: {0}")]
    Record(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
