use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands whose shapes cannot be combined.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A single operand with a shape the operation cannot accept.
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        expected: &'static str,
    },
    /// `shape` product disagrees with the buffer length.
    DataLength { shape: Vec<usize>, len: usize },
    NonFinite { op: &'static str },
    NonFiniteGradient { param: String },
    InvalidArgument(String),
    UnknownArchitecture {
        name: String,
        known: &'static [&'static str],
    },
    UnknownInsertionPoint {
        name: String,
        available: Vec<String>,
    },
    MalformedRecord { offset: usize, reason: String },
    /// Raised by a training observer (metrics sink, checkpoint writer).
    Sink(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::BadShape { op, shape, expected } => {
                write!(f, "{op}: got shape {shape:?}, expected {expected}")
            }
            Error::DataLength { shape, len } => write!(
                f,
                "shape {shape:?} holds {} elements but buffer has {len}",
                shape.iter().product::<usize>()
            ),
            Error::NonFinite { op } => write!(f, "{op}: produced a NaN or infinite value"),
            Error::NonFiniteGradient { param } => {
                write!(f, "non-finite gradient for parameter `{param}`")
            }
            Error::InvalidArgument(msg) => f.write_str(msg),
            Error::UnknownArchitecture { name, known } => {
                write!(f, "unknown architecture `{name}` (known: {})", known.join(", "))
            }
            Error::UnknownInsertionPoint { name, available } => write!(
                f,
                "insertion point `{name}` does not exist (available: {})",
                available.join(", ")
            ),
            Error::MalformedRecord { offset, reason } => {
                write!(f, "malformed record at byte offset {offset}: {reason}")
            }
            Error::Sink(msg) => write!(f, "observer failed: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
