//! Feldkamp-type filtered backprojection driven by per-view projection
//! matrices, assembled block by block.

mod backproject;
mod filter;
mod grid;
mod sink;

pub use backproject::{backproject, reconstruct_blocked, reconstruct_volume, ReconSummary};
pub use filter::{cosine_weight, filter_projection, filter_stack, ramp_filter, ramp_filter_row, ramp_tap, FilteredProjection, ViewGeometry};
pub use grid::{Block, StoragePlan, VolumeGrid};
pub use sink::{central_slice_pgm, BlockSink, FileSink, MemorySink};
