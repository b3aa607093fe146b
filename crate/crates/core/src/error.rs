use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("recruitment threshold {t_th} outside [1, {max}]")]
    ThresholdOutOfRange { t_th: u32, max: u32 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("price {price} for type {type_index} at slot {slot} exceeds cap {cap}")]
    CapViolation {
        type_index: usize,
        slot: usize,
        price: f64,
        cap: f64,
    },

    #[error("malformed schedule: {0}")]
    MalformedSchedule(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("search refused: {0}")]
    Refused(String),
}
