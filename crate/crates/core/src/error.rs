use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure surfaced by the toolkit. Each variant carries a stable
/// machine-readable code (see [`Error::code`]) used by the CLI and in JSON.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty shape")]
    EmptyShape,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("bad magic")]
    BadMagic,
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("adjoint undefined: {0}")]
    AdjointUndefined(String),
    #[error("domain violation in {family}: {detail}")]
    Domain { family: String, detail: String },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unknown parameter `{param}` for {kind}")]
    UnknownParam { kind: String, param: String },
    #[error("duplicate node_id `{0}`")]
    DuplicateNode(String),
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("graph contains a cycle")]
    Cycle,
    #[error("edge references missing node `{0}`")]
    DanglingEdge(String),
    #[error("unsupported topology: {0}")]
    Topology(String),
    #[error("yaml: {0}")]
    Yaml(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown modality `{0}`")]
    UnknownModality(String),
    #[error("parameter `{name}` = {value} outside range [{lo}, {hi}]")]
    OutOfRange { name: String, value: f64, lo: f64, hi: f64 },
    #[error("gate not binding: PSNR_I ({psnr_i}) <= PSNR_II ({psnr_ii})")]
    GateNotBinding { psnr_i: f64, psnr_ii: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("registry {code}: {detail}")]
    Registry { code: &'static str, detail: String },
    #[error("hash mismatch for `{0}`")]
    HashMismatch(String),
    #[error("missing manifest in {0}")]
    MissingManifest(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyShape => "EMPTY_SHAPE",
            Error::ShapeMismatch(_) => "SHAPE_MISMATCH",
            Error::NonFinite(_) => "NON_FINITE",
            Error::BadMagic => "BAD_MAGIC",
            Error::CorruptHeader(_) => "CORRUPT_HEADER",
            Error::TruncatedPayload { .. } => "TRUNCATED_PAYLOAD",
            Error::AdjointUndefined(_) => "ADJOINT_UNDEFINED",
            Error::Domain { .. } => "DOMAIN_VIOLATION",
            Error::InvalidParam(_) => "INVALID_PARAM",
            Error::UnknownParam { .. } => "UNKNOWN_PARAM",
            Error::DuplicateNode(_) => "DUPLICATE_NODE",
            Error::UnknownPrimitive(_) => "UNKNOWN_PRIMITIVE",
            Error::Cycle => "CYCLE",
            Error::DanglingEdge(_) => "DANGLING_EDGE",
            Error::Topology(_) => "UNSUPPORTED_TOPOLOGY",
            Error::Yaml(_) => "YAML",
            Error::Json(_) => "JSON",
            Error::UnknownModality(_) => "UNKNOWN_MODALITY",
            Error::OutOfRange { .. } => "OUT_OF_RANGE",
            Error::GateNotBinding { .. } => "GATE_NOT_BINDING",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::Numerical(_) => "NUMERICAL",
            Error::Registry { code, .. } => code,
            Error::HashMismatch(_) => "HASH_MISMATCH",
            Error::MissingManifest(_) => "MISSING_MANIFEST",
            Error::Io(_) => "IO",
        }
    }

    /// Numerical and integrity failures, as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::NonFinite(_) | Error::HashMismatch(_) | Error::GateNotBinding { .. }
        )
    }
}

impl From<serde_yaml::Error> for Error {
    fn from(e: serde_yaml::Error) -> Self {
        Error::Yaml(e.to_string())
    }
}
