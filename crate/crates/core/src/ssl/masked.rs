use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Scalar, Var};

/// Span masking over subsampled steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    /// Expected fraction of steps chosen as span starts.
    pub mask_prob: f64,
    pub span_len: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self { mask_prob: 0.065, span_len: 10, seed: 0 }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::Config(format!("mask_prob must lie in (0, 1), got {}", self.mask_prob)));
        }
        if self.span_len == 0 {
            return Err(Error::Config("span_len must be at least 1".into()));
        }
        Ok(())
    }

    fn draw(&self, len: usize, rng: &mut impl Rng) -> Vec<bool> {
        let expected = self.mask_prob * len as f64;
        // Stochastic rounding keeps the expected start count exact.
        let mut starts = expected.floor() as usize;
        if rng.random::<f64>() < expected - expected.floor() {
            starts += 1;
        }
        let mut mask = vec![false; len];
        for s in index::sample(rng, len, starts.min(len)).into_iter() {
            for m in mask.iter_mut().skip(s).take(self.span_len) {
                *m = true;
            }
        }
        mask
    }

    /// Draws a mask over `len` steps, redrawing once if nothing was masked.
    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Result<Vec<bool>> {
        self.validate()?;
        for _ in 0..2 {
            let m = self.draw(len, rng);
            if m.iter().any(|x| *x) {
                return Ok(m);
            }
        }
        Err(Error::NoMaskedPositions)
    }
}

pub fn masked_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
}

/// Cross-entropy against pseudo-labels, averaged over masked steps only.
pub fn masked_predict_loss<F: Scalar>(g: &mut Graph<F>, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
    let t = g.shape(logits)[0];
    if labels.len() != t || mask.len() != t {
        return Err(Error::Dimension { op: "masked_predict_loss", lhs: g.shape(logits).to_vec(), rhs: vec![labels.len(), mask.len()] });
    }
    let idx = masked_indices(mask);
    if idx.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    let sel = g.rows(logits, &idx)?;
    let lp = g.log_softmax(sel)?;
    let picked: Vec<usize> = idx.iter().map(|i| labels[*i]).collect();
    let ll = g.pick(lp, &picked)?;
    let m = g.mean(ll)?;
    g.scale(m, -F::one())
}

/// Outcome of [`contrastive_loss`].
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveLoss {
    pub loss: Var,
    /// Masked steps whose negatives had to be drawn with replacement.
    pub replacement_draws: usize,
}

/// InfoNCE over cosine similarities at masked steps. The positive for step
/// `i` is target `i`; negatives are drawn uniformly from the other masked
/// steps of the same utterance.
pub fn contrastive_loss<F: Scalar>(
    g: &mut Graph<F>,
    context: Var,
    targets: Var,
    mask: &[bool],
    n_negatives: usize,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<ContrastiveLoss> {
    if temperature <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    if n_negatives == 0 {
        return Err(Error::Config("n_negatives must be at least 1".into()));
    }
    let t = g.shape(context)[0];
    if g.shape(targets) != g.shape(context) || mask.len() != t {
        return Err(Error::Dimension { op: "contrastive_loss", lhs: g.shape(context).to_vec(), rhs: g.shape(targets).to_vec() });
    }
    let idx = masked_indices(mask);
    if idx.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    if t < 2 {
        return Err(Error::Precondition("contrastive loss needs at least two steps".into()));
    }
    let mut cols = Vec::with_capacity(idx.len() * (n_negatives + 1));
    let mut replacement_draws = 0;
    for &i in &idx {
        let mut pool: Vec<usize> = idx.iter().copied().filter(|j| *j != i).collect();
        if pool.is_empty() {
            pool = (0..t).filter(|j| *j != i).collect();
        }
        cols.push(i);
        if pool.len() >= n_negatives {
            for k in index::sample(rng, pool.len(), n_negatives).into_iter() {
                cols.push(pool[k]);
            }
        } else {
            replacement_draws += 1;
            for _ in 0..n_negatives {
                cols.push(pool[rng.random_range(0..pool.len())]);
            }
        }
    }
    let eps = F::lit(1e-8);
    let c = g.rows(context, &idx)?;
    let c = g.normalize_rows(c, eps)?;
    let q = g.normalize_rows(targets, eps)?;
    let sims = g.matmul_bt(c, q)?;
    let logits = g.gather(sims, &cols, n_negatives + 1)?;
    let logits = g.scale(logits, F::lit(1.0 / temperature))?;
    let lp = g.log_softmax(logits)?;
    let pos = g.pick(lp, &vec![0; idx.len()])?;
    let m = g.mean(pos)?;
    let loss = g.scale(m, -F::one())?;
    Ok(ContrastiveLoss { loss, replacement_draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_predictor_gives_ln_k() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::zeros(&[5, 4]));
        let l = masked_predict_loss(&mut g, z, &[0, 1, 2, 3, 0], &[true, false, true, true, false]).unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(masked_predict_loss(&mut g, z, &[0; 5], &[false; 5]), Err(Error::NoMaskedPositions)));
    }

    #[test]
    fn equal_similarities_give_ln_k_plus_one() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[6, 3], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mask = [true; 6];
        let out = contrastive_loss(&mut g, x, x, &mask, 3, 0.5, &mut rng).unwrap();
        assert!((g.scalar(out.loss) - 4f64.ln()).abs() < 1e-9);
        assert_eq!(out.replacement_draws, 0);
        let sparse = [true, false, true, false, false, false];
        let out = contrastive_loss(&mut g, x, x, &sparse, 3, 0.5, &mut rng).unwrap();
        assert_eq!(out.replacement_draws, 2);
    }

    #[test]
    fn mask_spans() {
        let spec = MaskSpec { mask_prob: 0.2, span_len: 3, seed: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = spec.sample(20, &mut rng).unwrap();
        assert!(m.iter().filter(|x| **x).count() <= 4 * 3);
        assert!(MaskSpec { mask_prob: 1.0, ..spec }.sample(5, &mut rng).is_err());
    }
}
