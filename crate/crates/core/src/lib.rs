//! Rotor walks and abelian/divisible sandpiles on the doubly infinite
//! Sierpiński gasket, with a seeded Monte Carlo harness for the recurrence
//! and explosion experiments.

pub mod divisible;
pub mod error;
pub mod export;
pub mod graph;
pub mod harness;
pub mod lattice;
pub mod render;
pub mod rng;
pub mod rotor;
pub mod sandpile;
pub mod stats;

pub use error::{Error, Result};
pub use graph::{corners, Corners, GraphExport, Half, PrefractalGraph, Region, Slot, VertexId};
pub use lattice::{Direction, LatticeCoord};
pub use rotor::{
    is_reflecting, smallest_reflecting_level, EmbeddedWalk, ExitOutcome, GraphLadder,
    ReturnOutcome, RotorConfig, RotorField, RotorLaw, WalkState,
};
pub use harness::{ExperimentKind, ExperimentSpec, Summary, TrialOutcome, TrialRecord};
pub use render::{render_svg, Overlay, RenderOptions};
pub use sandpile::{HeightLaw, Sandpile, TopplePolicy};
pub use divisible::{DivisibleConfig, DivisibleParams, MassLaw};
