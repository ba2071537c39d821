use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty relation")]
    EmptyRelation,

    #[error("attribute `{attr}`: value `{value}` is outside its declared domain of size {size}")]
    DomainViolation { attr: String, value: String, size: u32 },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),

    #[error("invalid domain for `{attr}`: {message}")]
    InvalidDomain { attr: String, message: String },

    #[error("conflicting domains for shared attribute `{0}`")]
    DomainConflict(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid join tree: {0}")]
    InvalidTree(#[from] crate::jointree::TreeViolation),

    #[error("unknown node id {0}")]
    UnknownNode(u32),

    #[error("join of {size} tuples exceeds the materialization cap of {cap}; use join_size to count it instead")]
    JoinTooLarge { size: u128, cap: u128 },

    #[error("count overflow: {0}")]
    Overflow(String),

    #[error("domain size not declared for attribute `{0}`")]
    MissingDomain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("json: {0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::EmptyRelation => "empty_relation",
            Error::DomainViolation { .. } => "domain_violation",
            Error::UnknownAttribute(_) => "unknown_attribute",
            Error::DuplicateAttribute(_) => "duplicate_attribute",
            Error::InvalidDomain { .. } => "invalid_domain",
            Error::DomainConflict(_) => "domain_conflict",
            Error::SchemaMismatch(_) => "schema_mismatch",
            Error::InvalidTree(_) => "invalid_tree",
            Error::UnknownNode(_) => "unknown_node",
            Error::JoinTooLarge { .. } => "join_too_large",
            Error::Overflow(_) => "overflow",
            Error::MissingDomain(_) => "missing_domain",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Consistency(_) => "consistency",
            Error::Json(_) => "json",
        }
    }
}
