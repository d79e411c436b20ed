//! Dataset persistence: raw little-endian arrays with JSON sidecars, and CSV
//! tables.

mod dataset;
mod frames;
mod mask;
pub mod raw;
mod tables;

pub use dataset::{hash_file, DatasetManifest, FileEntry, DATASET_VERSION};
pub use frames::{load_frames, save_frames, FrameHeader, FrameStack, FRAME_VERSION};
pub use mask::{load_mask, load_mask_raw, save_mask, MaskHeader, MASK_VERSION};
pub use tables::{
    read_emitters, read_localizations, read_report, write_emitters, write_localizations, write_report, write_summary,
    ReportRow, ReportSummary, fingerprint,
};
