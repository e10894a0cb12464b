//! Seamlessly looping cinemagraphs from a still image, a constant optical
//! flow and a motion mask.
//!
//! The flow is integrated forward and backward with Euler steps
//! ([`euler`]), the image is forward-splatted along both cumulative flows and
//! blended so that the first and last frames equal the input ([`splat`]), and
//! [`pipeline`] ties the stages together. [`maskgen`] derives motion masks
//! from diffusion self-attention maps, [`flowsynth`] builds direction hints
//! and procedural flows, and [`io`] handles the on-disk formats.

pub mod error;
pub mod euler;
pub mod fields;
pub mod flowsynth;
pub mod io;
pub mod maskgen;
pub mod palette;
pub mod pipeline;
pub mod splat;
pub mod viz;

pub use error::{Error, Result};
pub use euler::{euler_backward, euler_forward, integrate_sequence, CumulativeFlowPair};
pub use fields::{mask_flow, reverse_flow, BinaryMask, FlowField, Image};
pub use pipeline::{generate_loop, generate_loop_frames, LoopConfig, OutputFormat, Preset};
pub use splat::{composite_symmetric, fill_holes, forward_splat, symmetric_splat_frame};
