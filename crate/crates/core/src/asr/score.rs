//! Levenshtein alignment and corpus-level error rates.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
    }
}

/// Unit-cost edit distance with an S/I/D breakdown of one optimal alignment.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    // dp[i][j] = (cost, S, I, D) for ref[..i] vs hyp[..j]
    let mut prev: Vec<(usize, EditCounts)> = (0..=m).map(|j| (j, EditCounts { insertions: j, ..Default::default() })).collect();
    let mut cur = prev.clone();
    for i in 1..=n {
        cur[0] = (i, EditCounts { deletions: i, ..Default::default() });
        for j in 1..=m {
            let same = reference[i - 1] == hypothesis[j - 1];
            let (dc, mut diag) = prev[j - 1];
            let mut best = (dc + usize::from(!same), diag);
            if !same {
                diag.substitutions += 1;
                best.1 = diag;
            }
            let (uc, mut up) = prev[j];
            if uc + 1 < best.0 {
                up.deletions += 1;
                best = (uc + 1, up);
            }
            let (lc, mut left) = cur[j - 1];
            if lc + 1 < best.0 {
                left.insertions += 1;
                best = (lc + 1, left);
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m].1
}

/// Corpus-level error rate: summed edits over summed reference lengths.
pub fn wer<T: PartialEq, R: AsRef<[T]>, H: AsRef<[T]>>(refs: &[R], hyps: &[H]) -> Result<f64> {
    if refs.len() != hyps.len() {
        return Err(Error::Dimension { op: "wer", lhs: vec![refs.len()], rhs: vec![hyps.len()] });
    }
    let total: usize = refs.iter().map(|r| r.as_ref().len()).sum();
    if total == 0 {
        return Err(Error::UndefinedWer);
    }
    let errors: usize = refs.iter().zip(hyps).map(|(r, h)| edit_distance(r.as_ref(), h.as_ref()).errors()).sum();
    Ok(errors as f64 / total as f64)
}

/// One scored utterance of a scoring report.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUtterance {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub counts: EditCounts,
    pub ref_len: usize,
}

/// Scores string pairs by splitting each side into units (characters or words).
pub fn score_pairs(pairs: &[(String, String, String)], unit: ScoreUnit) -> Result<(Vec<ScoredUtterance>, f64)> {
    let mut rows = Vec::with_capacity(pairs.len());
    let mut total = EditCounts::default();
    let mut ref_len = 0;
    for (id, r, h) in pairs {
        let (ru, hu) = (unit.split(r), unit.split(h));
        let counts = edit_distance(&ru, &hu);
        total += counts;
        ref_len += ru.len();
        rows.push(ScoredUtterance { id: id.clone(), reference: r.clone(), hypothesis: h.clone(), counts, ref_len: ru.len() });
    }
    if ref_len == 0 {
        return Err(Error::UndefinedWer);
    }
    Ok((rows, total.errors() as f64 / ref_len as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreUnit {
    Char,
    Word,
}

impl ScoreUnit {
    pub fn split(self, s: &str) -> Vec<String> {
        match self {
            ScoreUnit::Char => s.chars().map(String::from).collect(),
            ScoreUnit::Word => s.split_whitespace().map(String::from).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreUnit::Char => "char",
            ScoreUnit::Word => "word",
        }
    }
}

impl std::str::FromStr for ScoreUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" | "token" => Ok(ScoreUnit::Char),
            "word" => Ok(ScoreUnit::Word),
            other => Err(Error::Config(format!("unknown scoring unit {other:?} (char or word)"))),
        }
    }
}

/// Scoring report: `id<TAB>ref<TAB>hyp<TAB>S,I,D` lines, then the aggregate.
pub fn format_report(rows: &[ScoredUtterance], corpus_wer: f64) -> String {
    let mut out = String::new();
    let mut total = EditCounts::default();
    let mut ref_len = 0;
    for r in rows {
        total += r.counts;
        ref_len += r.ref_len;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{},{},{}",
            r.id, r.reference, r.hypothesis, r.counts.substitutions, r.counts.insertions, r.counts.deletions
        );
    }
    let _ = writeln!(
        out,
        "TOTAL\t{ref_len}\t{}\t{},{},{}\tWER={corpus_wer:.6}",
        rows.len(),
        total.substitutions,
        total.insertions,
        total.deletions
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]).errors(), 0);
        assert_eq!(wer(&[vec![1, 2]], &[vec![1, 2]]).unwrap(), 0.0);
    }

    #[test]
    fn one_substitution() {
        let c = edit_distance(&["a", "b", "c"], &["a", "x", "c"]);
        assert_eq!(c, EditCounts { substitutions: 1, insertions: 0, deletions: 0 });
        let w = wer(&[vec!["a", "b", "c"]], &[vec!["a", "x", "c"]]).unwrap();
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn deletion_only() {
        let c = edit_distance(&["a"], &[] as &[&str]);
        assert_eq!(c.deletions, 1);
        assert_eq!(wer(&[vec!["a"]], &[Vec::<&str>::new()]).unwrap(), 1.0);
    }

    #[test]
    fn insertions_counted() {
        let c = edit_distance(&[1], &[1, 2, 3]);
        assert_eq!(c, EditCounts { substitutions: 0, insertions: 2, deletions: 0 });
    }

    #[test]
    fn corpus_level_not_averaged() {
        // 1 error over 1 token, 0 errors over 9 tokens → 0.1 (not 0.5)
        let refs = vec![vec![1], vec![1; 9]];
        let hyps = vec![vec![2], vec![1; 9]];
        assert!((wer(&refs, &hyps).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_reference_corpus_is_undefined() {
        assert!(matches!(wer::<u8, Vec<u8>, Vec<u8>>(&[], &[]), Err(Error::UndefinedWer)));
        assert!(matches!(wer(&[Vec::<u8>::new()], &[vec![1u8]]), Err(Error::UndefinedWer)));
    }

    #[test]
    fn report_lines() {
        let pairs = vec![("u1".to_string(), "a b c".to_string(), "a x c".to_string())];
        let (rows, w) = score_pairs(&pairs, ScoreUnit::Word).unwrap();
        let rep = format_report(&rows, w);
        let mut lines = rep.lines();
        assert_eq!(lines.next().unwrap(), "u1\ta b c\ta x c\t1,0,0");
        assert!(lines.next().unwrap().ends_with("WER=0.333333"));
    }
}
