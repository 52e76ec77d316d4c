//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Two tensors (or a tensor and an expectation) disagree on shape.
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// A value that must be finite was NaN or infinite.
    NonFinite { context: &'static str },
    /// An operation received an empty input.
    EmptyInput(&'static str),
    /// Train-mode batch statistics need at least two samples.
    BatchTooSmall { got: usize, min: usize },
    /// A class or corruption label is outside the valid range.
    InvalidLabel { context: &'static str, got: usize, max: usize },
    /// A degenerate argument (zero-sized kernel, empty schedule, ...).
    InvalidArgument { context: &'static str, detail: String },
    /// CIFAR-10 binary stream length is not a multiple of the record size.
    CifarTrailingBytes { len: usize, record_size: usize },
    /// A CIFAR-10 record carries a label byte above 9.
    CifarBadLabel { record: usize, label: u8 },
    /// Container file does not start with the expected magic bytes.
    BadMagic { got: [u8; 4] },
    /// Container format version is newer than this build understands.
    UnsupportedVersion { got: u16, max: u16 },
    /// Stored CRC-32 does not match the file contents.
    CrcMismatch { stored: u32, computed: u32 },
    /// File ended before a complete field could be read.
    Truncated { context: &'static str },
    /// Structurally invalid container contents (bad chunk shape, missing
    /// or unexpected chunk, leftover bytes).
    Malformed { detail: String },
    /// A required (corruption, severity) cell is missing from a corpus.
    MissingCells { cells: Vec<String> },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { context, expected, got } => {
                write!(f, "{context}: shape mismatch, expected {expected:?}, got {got:?}")
            }
            Error::NonFinite { context } => write!(f, "{context}: non-finite value"),
            Error::EmptyInput(what) => write!(f, "{what}: empty input"),
            Error::BatchTooSmall { got, min } => {
                write!(f, "batch of {got} samples is below the minimum of {min}")
            }
            Error::InvalidLabel { context, got, max } => {
                write!(f, "{context}: label {got} out of range 0..={max}")
            }
            Error::InvalidArgument { context, detail } => write!(f, "{context}: {detail}"),
            Error::CifarTrailingBytes { len, record_size } => {
                write!(f, "cifar-10 stream of {len} bytes is not a multiple of {record_size}")
            }
            Error::CifarBadLabel { record, label } => {
                write!(f, "cifar-10 record {record}: label byte {label} exceeds 9")
            }
            Error::BadMagic { got } => write!(f, "bad container magic {got:?}"),
            Error::UnsupportedVersion { got, max } => {
                write!(f, "container version {got} is newer than supported {max}")
            }
            Error::CrcMismatch { stored, computed } => {
                write!(f, "crc mismatch: stored {stored:#010x}, computed {computed:#010x}")
            }
            Error::Truncated { context } => write!(f, "truncated container while reading {context}"),
            Error::Malformed { detail } => write!(f, "malformed container: {detail}"),
            Error::MissingCells { cells } => {
                write!(f, "corpus is missing cells: {}", cells.join(", "))
            }
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
