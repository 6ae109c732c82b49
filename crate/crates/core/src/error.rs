use std::io;

/// Errors raised anywhere in the verification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed PGM: {0}")]
    MalformedPgm(String),
    #[error("PGM payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPgm { expected: usize, found: usize },
    #[error("PGM maxval {0} exceeds 255")]
    UnsupportedMaxval(u32),
    #[error("image too small: {width}x{height}, need at least {min_width}x{min_height}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no edge points to vote with")]
    EmptyEdgeMap,
    #[error("no circle evidence: peak accumulator has {votes} votes")]
    NoCircleEvidence { votes: u32 },
    #[error("invalid segmentation geometry: {0}")]
    InvalidGeometry(String),
    #[error("templates have no jointly valid bits at any shift")]
    Incomparable,
    #[error("covariance model is not positive-definite")]
    NotPositiveDefinite,
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("gallery format: {0}")]
    GalleryFormat(String),
    #[error("not a gallery file: magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported gallery version {0}")]
    UnsupportedVersion(u8),
    #[error("gallery truncated: {0}")]
    Truncated(String),
    #[error("gallery checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("identity already enrolled: {0}")]
    DuplicateIdentity(String),
    #[error("unknown identity: {0}")]
    UnknownIdentity(String),
    #[error("segmentation failed for {failed} of {total} images")]
    SegmentationFailureRate { failed: usize, total: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
