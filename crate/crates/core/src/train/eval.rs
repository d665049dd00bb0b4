use crate::asr::{ctc_greedy_decode, edit_distance, EditCounts};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::AcousticModel;

/// Decode-time error rate at or above which a run counts as not converged.
pub const NC_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub id: String,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub counts: EditCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub utterances: Vec<Decoded>,
    pub totals: EditCounts,
    pub ref_tokens: usize,
    /// Corpus-level token error rate.
    pub error_rate: f64,
}

impl EvalResult {
    pub fn non_converged(&self) -> bool {
        self.error_rate >= NC_THRESHOLD
    }
}

/// Greedy CTC decoding and corpus-level token error rate.
pub fn evaluate(model: &AcousticModel, utts: &[Utterance]) -> Result<EvalResult> {
    let mut out = Vec::with_capacity(utts.len());
    let mut totals = EditCounts::default();
    let mut ref_tokens = 0;
    for u in utts {
        let hyp = match model.log_probs(&u.features) {
            Ok(lp) => ctc_greedy_decode(lp.data(), lp.last_dim(), lp.rows()),
            // Too short to produce a single output step: empty hypothesis.
            Err(Error::SequenceTooShort { .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        let counts = edit_distance(&u.transcript, &hyp);
        totals += counts;
        ref_tokens += u.transcript.len();
        out.push(Decoded { id: u.id.clone(), reference: u.transcript.clone(), hypothesis: hyp, counts });
    }
    if ref_tokens == 0 {
        return Err(Error::UndefinedWer);
    }
    Ok(EvalResult { utterances: out, totals, ref_tokens, error_rate: totals.errors() as f64 / ref_tokens as f64 })
}
