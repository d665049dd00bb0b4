//! Supervised stage objective and evaluation: CTC, greedy decoding, scoring.

mod ctc;
mod decode;
pub mod score;

pub use ctc::{ctc_loss, ctc_loss_and_grad, feasible, repeats, BLANK};
pub use decode::{collapse_path, ctc_greedy_decode};
pub use score::{edit_distance, format_report, score_pairs, wer, EditCounts, ScoreUnit, ScoredUtterance};
