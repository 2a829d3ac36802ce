use thiserror::Error;

use crate::lattice::LatticeCoord;

#[derive(Debug, Error)]
pub enum Error {
    #[error("level {level} exceeds the supported maximum of {max}")]
    Capacity { level: u32, max: u32 },
    #[error("vertex {0} is not in the graph")]
    UnknownVertex(LatticeCoord),
    #[error("step from {from} to {to} leaves the materialized graph")]
    FrontierExceeded { from: LatticeCoord, to: LatticeCoord },
    #[error("no rotor defined at {0}")]
    MissingRotor(LatticeCoord),
    #[error("invalid law: {0}")]
    InvalidLaw(String),
    #[error("topple cap of {0} exceeded")]
    ToppleCapExceeded(u64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("overlay has {got} entries but the graph has {expected} vertices")]
    OverlayMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
