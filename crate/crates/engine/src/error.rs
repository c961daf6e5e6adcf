use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("variable #{node} was issued by another tape")]
    ForeignVar { node: usize },

    #[error("non-finite value at node #{node} ({op})")]
    NonFinite { node: usize, op: String },
}

impl EngineError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        EngineError::Shape { op, detail: detail.into() }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        EngineError::Contract { op, detail: detail.into() }
    }
}
