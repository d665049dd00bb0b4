use crate::error::{Error, Result};
use crate::model::{CONV_KERNEL, CONV_STRIDE};
use crate::numerics::{Graph, Scalar, Tensor, Var};

/// Future-frame regression targets for one shift.
///
/// Output step `u` of the front-end sees raw frames `4u ..= 4u+6`. Its
/// target for shift `n` is the four raw frames `4(u+n)+3 ..= 4(u+n)+6`, i.e.
/// the frames that step `u+n` adds to its receptive field. Exactly
/// `T″ − n` steps have a full window.
pub fn apc_targets<F: Scalar>(features: &Tensor<F>, shift: usize, subsample: usize) -> Result<(usize, Tensor<F>)> {
    if subsample != CONV_STRIDE * CONV_STRIDE {
        return Err(Error::Config(format!("APC targets assume subsample {}", CONV_STRIDE * CONV_STRIDE)));
    }
    if shift == 0 {
        return Err(Error::Config("APC shift must be at least 1".into()));
    }
    let t = features.rows();
    let d = features.last_dim();
    let empty = || Error::EmptyTarget { frames: t, shift };
    let steps = output_steps(t).ok_or_else(empty)?;
    if steps <= shift {
        return Err(empty());
    }
    let valid = steps - shift;
    let first = CONV_KERNEL + CONV_STRIDE * (CONV_KERNEL - 1) - subsample;
    let mut out = Vec::with_capacity(valid * subsample * d);
    for u in 0..valid {
        let start = subsample * (u + shift) + first;
        out.extend_from_slice(&features.data()[start * d..(start + subsample) * d]);
    }
    Ok((valid, Tensor::new(vec![valid, subsample * d], out)?))
}

fn output_steps(t: usize) -> Option<usize> {
    let step = |t: usize| (t >= CONV_KERNEL).then(|| (t - CONV_KERNEL) / CONV_STRIDE + 1);
    step(step(t)?)
}

/// Mean absolute error per shift, averaged uniformly over shifts. Each
/// prediction may have more rows than its target; extra trailing rows are
/// ignored.
pub fn apc_loss<F: Scalar>(g: &mut Graph<F>, predictions: &[Var], targets: &[Tensor<F>]) -> Result<Var> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Config(format!(
            "APC needs one head per shift: {} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut per_shift = Vec::with_capacity(targets.len());
    for (p, t) in predictions.iter().zip(targets) {
        let rows = t.rows();
        if g.shape(*p)[0] < rows {
            return Err(Error::Dimension { op: "apc_loss", lhs: g.shape(*p).to_vec(), rhs: t.shape().to_vec() });
        }
        let pv = if g.shape(*p)[0] == rows { *p } else { g.rows(*p, &(0..rows).collect::<Vec<_>>())? };
        let tv = g.input(t.clone());
        let diff = g.sub(pv, tv)?;
        let a = g.abs(diff)?;
        per_shift.push(g.mean(a)?);
    }
    g.mean_of(&per_shift)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize) -> Tensor<f64> {
        Tensor::new(vec![t, 2], (0..t * 2).map(|i| (i / 2) as f64).collect()).unwrap()
    }

    #[test]
    fn counts_and_layout() {
        // 43 frames → 21 → 10 output steps.
        let (n, tg) = apc_targets(&ramp(43), 2, 4).unwrap();
        assert_eq!(n, 8);
        assert_eq!(tg.shape(), &[8, 8]);
        // Step 0, shift 2: frames 11..=14.
        assert_eq!(tg.row(0), &[11.0, 11.0, 12.0, 12.0, 13.0, 13.0, 14.0, 14.0]);
        assert!(matches!(apc_targets(&ramp(43), 10, 4), Err(Error::EmptyTarget { frames: 43, shift: 10 })));
        assert!(matches!(apc_targets(&ramp(5), 1, 4), Err(Error::EmptyTarget { .. })));
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let exact = g.input(t.clone());
        let l = apc_loss(&mut g, &[exact], std::slice::from_ref(&t)).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        let off = g.input(Tensor::new(vec![2, 2], vec![2.0, 3.0, 4.0, 5.0]).unwrap());
        let l = apc_loss(&mut g, &[off], std::slice::from_ref(&t)).unwrap();
        assert_eq!(g.scalar(l), 1.0);
        let a = g.input(Tensor::new(vec![1, 1], vec![0.2]).unwrap());
        let b = g.input(Tensor::new(vec![1, 1], vec![0.4]).unwrap());
        let z = Tensor::zeros(&[1, 1]);
        let l = apc_loss(&mut g, &[a, b], &[z.clone(), z.clone()]).unwrap();
        assert!((g.scalar(l) - 0.3).abs() < 1e-12);
        assert!(apc_loss(&mut g, &[a], &[z.clone(), z]).is_err());
    }
}
