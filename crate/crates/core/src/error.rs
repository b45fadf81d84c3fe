use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}, {z}) lies outside the mapped extent")]
    OutOfExtent { x: f64, y: f64, z: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vertex key {key:#x} is not allocated in table {table}")]
    UnknownVertex { table: usize, key: u64 },

    #[error("ray depth {depth} does not exceed truncation {truncation}")]
    DegenerateRay { depth: f64, truncation: f64 },

    #[error("non-finite loss at iteration {iteration} (loss = {loss})")]
    NonFiniteLoss { iteration: u64, loss: f64 },

    #[error("checkpoint has bad magic {found:?}")]
    CorruptMagic { found: [u8; 4] },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("file truncated at byte offset {offset}: {context}")]
    TruncatedFile { offset: u64, context: String },

    #[error("scan file size {len} is not a multiple of 16 bytes")]
    SizeNotMultipleOf16 { len: u64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: rotation has non-positive determinant {det}")]
    NonRigid { line: usize, det: f64 },

    #[error("malformed PLY header at line {line}: {message}")]
    MalformedHeader { line: usize, message: String },

    #[error("unsupported PLY element `{0}`")]
    UnsupportedElement(String),

    #[error("unsupported PLY format `{0}`")]
    UnsupportedFormat(String),

    #[error("mesh has no triangles with positive area")]
    EmptyMesh,

    #[error("reference point cloud is empty")]
    EmptyReference,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("invalid scene: {0}")]
    InvalidSpec(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::File { path, source }
    }
}
