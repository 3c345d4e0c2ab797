//! Evaluation: note matching and F1 aggregation, SDR, recognition mAP/F1,
//! and the serialized report.

pub mod notes;
pub mod ranking;
pub mod report;
pub mod sdr;

pub use notes::{aggregate_f1, match_notes, piece_cells, Cell, Counts, Level, MatchConfig, OffsetMode};
pub use ranking::{average_precision, map_scores, RecognitionScores};
pub use report::{F1Pair, MetricReport, SdrSummary, REQUIRED_KEYS};
pub use sdr::{aggregate_sdr, sdr, SdrCell, SdrLevel};
