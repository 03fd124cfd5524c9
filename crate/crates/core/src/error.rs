use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{context}: {dim} mismatch (expected {expected}, got {actual})")]
    Shape {
        context: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid image size {width}x{height}: the transform needs a square image with a power-of-two side")]
    ImageSize { width: usize, height: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cell (quadrant {quadrant}, x={offset_x}, s={shift_s}) lies in the zero region")]
    ZeroRegion {
        quadrant: usize,
        offset_x: i64,
        shift_s: i64,
    },

    #[error("degenerate line: {0}")]
    DegenerateLine(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("gave up after {attempts} attempts: {what}")]
    ResampleLimit { what: &'static str, attempts: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
