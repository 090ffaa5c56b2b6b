//! Minimal differentiable substrate: masked autoregressive networks, a
//! reverse-mode tape, and Adam.

pub mod adam;
pub mod made;
pub mod tape;

pub use adam::{clip_global_norm, AdamState};
pub use made::{build_made, Dense, MadeNetwork, ParamMode};
pub use tape::{NodeId, Tape};
