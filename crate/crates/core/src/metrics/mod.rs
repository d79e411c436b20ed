//! Evaluation: distance-gated optimal matching, Jaccard index, RMSE and
//! single-emitter Cramér–Rao bounds.

mod crlb;
pub mod hungarian;
mod matching;

pub use crlb::{crlb, crlb_with, fisher_matrix, CrlbOptions, CrlbReport, Derivatives, PHOTON_STEP, POSITION_STEP_NM};
pub use matching::{
    jaccard, jaccard_counts, match_frames, match_points, rmse, DistanceMode, MatchResult, MatchedPair,
    DEFAULT_MATCH_THRESHOLD,
};
