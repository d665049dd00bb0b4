use super::ctc::BLANK;

/// Per-frame argmax (lowest id on ties), collapse repeats, drop blanks.
pub fn ctc_greedy_decode(log_probs: &[f32], vocab: usize, length: usize) -> Vec<usize> {
    let path = (0..length).map(|t| {
        let row = &log_probs[t * vocab..(t + 1) * vocab];
        let mut best = 0;
        for (k, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = k;
            }
        }
        best
    });
    collapse_path(path)
}

/// The CTC collapse rule applied to an explicit frame path.
pub fn collapse_path(path: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_examples() {
        let (a, b) = (1, 2);
        assert_eq!(collapse_path([BLANK, a, a, BLANK, b, b]), vec![a, b]);
        assert_eq!(collapse_path([BLANK, BLANK, BLANK]), Vec::<usize>::new());
        assert_eq!(collapse_path([a, BLANK, a]), vec![a, a]);
    }

    #[test]
    fn argmax_ties_go_to_lowest_id() {
        // frame 0 ties blank/a → blank; frame 1 prefers a
        let lp = [0.0, 0.0, -1.0, -2.0, -0.1, -3.0];
        assert_eq!(ctc_greedy_decode(&lp, 3, 2), vec![1]);
        assert_eq!(ctc_greedy_decode(&lp, 3, 1), Vec::<usize>::new());
    }
}
