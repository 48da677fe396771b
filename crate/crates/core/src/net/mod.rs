//! Emulated wireless medium: geometry, the distance loss law, the in-process
//! medium and the shared registry file used by multi-process runs.

pub mod geometry;
pub mod medium;
pub mod registry;

pub use geometry::{distance, Lane, NodeId, Position, HIGHWAY_LENGTH_M, LANE_WIDTH_M};
pub use medium::{
    loss_probability, survives, DeliveryOutcome, LinkStats, Medium, MediumConfig, MediumError,
};
pub use registry::{ParseError, Registry, RegistryEntry, RegistryError};
