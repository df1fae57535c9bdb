//! Valid on-street parking maps from park-out event (POE) point data.
//!
//! Four inference methods share one geometry layer:
//!
//! - [`raster`]: dual-resolution counting grid with per-window normalization
//! - [`sectioning`]: road sections and 5 m segments with load ratios
//! - [`features`] + [`dtree`]: map-feature attributes and a CART classifier
//! - [`gmm`]: 1-D Gaussian mixtures along a street, boundaries at intersections
//!
//! [`synth`] generates cities with planted ground truth and [`pipeline`]
//! wires the stages together for the command-line tool.

pub mod dtree;
pub mod error;
pub mod features;
pub mod geo;
pub mod gmm;
pub mod geojson;
pub mod index;
pub mod ingest;
pub mod pipeline;
pub mod raster;
pub mod sectioning;
pub mod synth;

pub use error::{Error, Result};
