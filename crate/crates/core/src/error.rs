use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {index} has non-finite coordinate {value}")]
    NonFinitePoint { index: usize, value: f32 },

    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("invalid pack spec: {0}")]
    InvalidPackSpec(String),

    #[error(
        "axis {axis}: extent {extent} does not fit {bits}-bit field with margin {margin} \
         (capacity {capacity}); needs at least {required_bits} bits"
    )]
    AxisOverflow {
        axis: char,
        extent: u64,
        bits: u32,
        margin: u32,
        capacity: u64,
        required_bits: u32,
    },

    #[error("axis {axis}: component {value} outside packed range 0..={max}")]
    OutOfRange { axis: char, value: i64, max: u64 },

    #[error("axis {axis}: offset component {value} exceeds margin {margin}")]
    OffsetExceedsMargin { axis: char, value: i32, margin: u32 },

    #[error("downsample depth {depth} too large: smallest field is {min_bits} bits")]
    MaskDepthTooLarge { depth: u32, min_bits: u32 },

    #[error("kernel size {k} must be odd and >= 1")]
    InvalidKernelSize { k: u32 },

    #[error("layer stride {s_l} unsupported (must be 1 or 2)")]
    InvalidLayerStride { s_l: u32 },

    #[error("invalid dataflow threshold {t}: {reason}")]
    InvalidThreshold { t: u32, reason: String },

    #[error("coordinate list not sorted/unique at position {position}")]
    UnsortedInput { position: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataflow plan does not match kernel map: {0}")]
    PlanMismatch(String),

    #[error("kernel map not in the required layout: {0}")]
    LayoutMismatch(String),

    #[error("symmetric halving requires a submanifold layer")]
    NotSubmanifold,

    #[error("margin {margin} insufficient: network requires {required}")]
    MarginTooSmall { margin: u32, required: u32 },

    #[error("dense oracle would need {needed} bytes (cap {cap}); use a smaller instance")]
    MemoryCap { needed: usize, cap: usize },

    #[error("no tuning samples supplied")]
    EmptySamples,

    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}
