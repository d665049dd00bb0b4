//! CTC negative log-likelihood over the blank-interleaved label lattice.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Scalar, Var};

pub const BLANK: usize = 0;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Number of adjacent equal label pairs; each needs a separating blank.
pub fn repeats(labels: &[usize]) -> usize {
    labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Whether `frames` frames can emit `labels`.
pub fn feasible(frames: usize, labels: &[usize]) -> bool {
    frames >= labels.len() + repeats(labels)
}

/// Loss and its gradient w.r.t. the `T×V` log-probability matrix.
///
/// The log-probabilities are treated as free inputs; normalization is the
/// caller's business (usually a preceding log-softmax).
pub fn ctc_loss_and_grad<F: Scalar>(log_probs: &[F], frames: usize, vocab: usize, labels: &[usize]) -> Result<(f64, Vec<F>)> {
    if log_probs.len() != frames * vocab {
        return Err(Error::Dimension { op: "ctc_loss", lhs: vec![frames, vocab], rhs: vec![log_probs.len()] });
    }
    if let Some(bad) = labels.iter().find(|l| **l == BLANK || **l >= vocab) {
        return Err(Error::UnknownToken(*bad as u32));
    }
    if !feasible(frames, labels) {
        return Err(Error::InfeasibleAlignment { frames, labels: labels.len(), repeats: repeats(labels) });
    }
    let lp = |t: usize, k: usize| log_probs[t * vocab + k].to_f64().unwrap();
    // extended sequence: blank, l1, blank, l2, ..., blank
    let ext: Vec<usize> = std::iter::once(BLANK).chain(labels.iter().flat_map(|l| [*l, BLANK])).collect();
    let s_len = ext.len();
    let skip_ok = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if skip_ok(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            if acc != ninf {
                alpha[t * s_len + s] = acc + lp(t, ext[s]);
            }
        }
    }
    let last = (frames - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }

    let mut beta = vec![ninf; frames * s_len];
    beta[last + s_len - 1] = lp(frames - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(frames - 1, ext[s_len - 2]);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                acc = log_add(acc, next[s + 2]);
            }
            if acc != ninf {
                beta[t * s_len + s] = acc + lp(t, ext[s]);
            }
        }
    }

    let mut grad = vec![F::zero(); frames * vocab];
    if log_p.is_finite() {
        let mut occ = vec![ninf; vocab];
        for t in 0..frames {
            occ.iter_mut().for_each(|v| *v = ninf);
            for s in 0..s_len {
                let ab = alpha[t * s_len + s] + beta[t * s_len + s];
                occ[ext[s]] = log_add(occ[ext[s]], ab);
            }
            for k in 0..vocab {
                if occ[k] != ninf {
                    grad[t * vocab + k] = F::lit(-(occ[k] - lp(t, k) - log_p).exp());
                }
            }
        }
    }
    Ok((-log_p, grad))
}

/// Registers a CTC loss node on `log_probs: T×V`.
pub fn ctc_loss<F: Scalar>(g: &mut Graph<F>, log_probs: Var, labels: &[usize]) -> Result<Var> {
    let (frames, vocab) = match g.shape(log_probs) {
        [t, v] => (*t, *v),
        other => return Err(Error::Rank { expected: "T×V log-probabilities", shape: other.to_vec() }),
    };
    let (loss, grad) = ctc_loss_and_grad(g.value(log_probs).data(), frames, vocab, labels)?;
    g.fused_loss(log_probs, F::lit(loss), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn lp(rows: &[&[f64]]) -> Vec<f64> {
        rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect()
    }

    #[test]
    fn single_frame_single_label() {
        let (l, _) = ctc_loss_and_grad(&lp(&[&[0.1, 0.9]]), 1, 2, &[1]).unwrap();
        assert!((l - -(0.9f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn two_frames_uniform() {
        // frame paths collapsing to "a": aa, a-, -a  → 3 × 0.25
        let (l, _) = ctc_loss_and_grad(&lp(&[&[0.5, 0.5], &[0.5, 0.5]]), 2, 2, &[1]).unwrap();
        assert!((l - -(0.75f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn concentrated_alignment_gives_near_zero_loss() {
        let p = 1.0 - 1e-9;
        let q = 1e-9;
        let (l, _) = ctc_loss_and_grad(&lp(&[&[q, p, q], &[p, q, q], &[q, q, p]]), 3, 3, &[1, 2]).unwrap();
        assert!(l < 1e-7, "{l}");
    }

    #[test]
    fn infeasible_alignment_names_lengths() {
        let err = ctc_loss_and_grad(&lp(&[&[0.5, 0.5], &[0.5, 0.5]]), 2, 2, &[1, 1]).unwrap_err();
        match err {
            Error::InfeasibleAlignment { frames, labels, .. } => assert_eq!((frames, labels), (2, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_label_is_all_blank_path() {
        let (l, _) = ctc_loss_and_grad(&lp(&[&[0.6, 0.4], &[0.7, 0.3]]), 2, 2, &[]).unwrap();
        assert!((l - -(0.42f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn graph_node_matches_direct_value() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2, 2], lp(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap());
        let l = ctc_loss(&mut g, x, &[1]).unwrap();
        assert!((g.scalar(l) - -(0.75f64.ln())).abs() < 1e-12);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().len(), 4);
    }
}
