use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("singular or left-handed lattice (volume {0})")]
    SingularLattice(f64),
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("missing required CIF tag `{0}`")]
    MissingTag(String),
    #[error("invalid CIF value for `{tag}`: `{value}`")]
    InvalidCifValue { tag: String, value: String },
    #[error("CIF has no atom sites")]
    EmptyAtomLoop,
    #[error("dataset has no structure file for id `{0}`")]
    MissingStructure(String),
    #[error("duplicate id `{0}` in dataset")]
    DuplicateId(String),
    #[error("failed to parse structure `{id}`: {source}")]
    StructureFile { id: String, source: Box<Error> },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("atom {index} has no neighbor within the {cutoff} Å cutoff")]
    IsolatedAtom { index: usize, cutoff: f64 },
    #[error("atomic number {0} has no feature vector")]
    UnknownAtomicNumber(u32),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric overflow: {0}")]
    Numeric(String),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint inconsistent with its architecture: {0}")]
    Inconsistent(String),
    #[error("ensemble error: {0}")]
    Ensemble(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Ensemble(_) => ErrorKind::Config,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Io { .. } => ErrorKind::Io,
            Error::StructureFile { source, .. } => match source.kind() {
                ErrorKind::Io => ErrorKind::Io,
                _ => ErrorKind::Data,
            },
            _ => ErrorKind::Data,
        }
    }
}

/// Attach a path to an `io::Error`.
pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
