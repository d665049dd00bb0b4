use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archive::{Archive, NamedTensor};
use crate::error::{Error, Result};
use crate::numerics::{ParamGroup, Tensor};

/// Fitted k-means centroids over feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelCodebook {
    pub k: usize,
    /// `k×D` centroids.
    pub centroids: Tensor<f32>,
    pub iterations: usize,
    /// Inertia after every assignment step.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

fn nearest(centroids: &Tensor<f32>, x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(centroids.row(c), x);
        // Strict comparison keeps the lowest index on ties.
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with seeded k-means++ initialization.
///
/// Inertia is checked after every assignment step and a rise beyond
/// rounding noise is reported as a state error.
pub fn kmeans_fit(frames: &Tensor<f32>, k: usize, iters: usize, seed: u64) -> Result<PseudoLabelCodebook> {
    if frames.rank() != 2 {
        return Err(Error::Rank { expected: "N×D frame matrix", shape: frames.shape().to_vec() });
    }
    let n = frames.rows();
    let d = frames.last_dim();
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the frame count {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cents: Vec<f32> = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    cents.extend_from_slice(frames.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(frames.row(i), frames.row(first))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(&mut rng),
            // Every frame already coincides with a centroid.
            Err(_) => rng.random_range(0..n),
        };
        cents.extend_from_slice(frames.row(pick));
        let new = &cents[c * d..(c + 1) * d];
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(frames.row(i), new));
        }
    }
    let mut centroids = Tensor::new(vec![k, d], cents)?;
    let mut inertia: Vec<f64> = Vec::new();
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    for _ in 0..iters.max(1) {
        let mut total = 0.0;
        let mut changed = false;
        for (i, l) in labels.iter_mut().enumerate() {
            let (c, dd) = nearest(&centroids, frames.row(i));
            total += dd;
            changed |= *l != c;
            *l = c;
        }
        if let Some(prev) = inertia.last().copied() {
            if total > prev + 1e-9 * prev.max(1.0) {
                return Err(Error::State(format!("k-means inertia rose from {prev} to {total} at iteration {iterations}")));
            }
        }
        inertia.push(total);
        if !changed {
            break;
        }
        iterations += 1;
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (i, l) in labels.iter().enumerate() {
            counts[*l] += 1;
            for (s, x) in sums[l * d..(l + 1) * d].iter_mut().zip(frames.row(i)) {
                *s += *x as f64;
            }
        }
        let cd = centroids.data_mut();
        for c in 0..k {
            // An empty cluster keeps its centroid.
            if counts[c] > 0 {
                for j in 0..d {
                    cd[c * d + j] = (sums[c * d + j] / counts[c] as f64) as f32;
                }
            }
        }
    }
    if !centroids.is_finite() {
        return Err(Error::State("k-means produced non-finite centroids".into()));
    }
    Ok(PseudoLabelCodebook { k, centroids, iterations, inertia })
}

/// Nearest-centroid index per frame; ties go to the lowest index.
pub fn kmeans_assign(codebook: &PseudoLabelCodebook, frames: &Tensor<f32>) -> Result<Vec<usize>> {
    if frames.rank() != 2 || frames.last_dim() != codebook.centroids.last_dim() {
        return Err(Error::Dimension { op: "kmeans_assign", lhs: frames.shape().to_vec(), rhs: codebook.centroids.shape().to_vec() });
    }
    Ok((0..frames.rows()).map(|i| nearest(&codebook.centroids, frames.row(i)).0).collect())
}

/// Majority label of each `subsample`-frame group; ties go to the lowest
/// label. Produces exactly `steps` labels.
pub fn subsample_labels(frame_labels: &[usize], steps: usize, subsample: usize) -> Vec<usize> {
    (0..steps)
        .map(|u| {
            let lo = (u * subsample).min(frame_labels.len().saturating_sub(1));
            let hi = ((u + 1) * subsample).min(frame_labels.len()).max(lo + 1);
            let group = &frame_labels[lo..hi];
            let mut best = (usize::MAX, 0usize);
            for &l in group {
                let c = group.iter().filter(|x| **x == l).count();
                if c > best.1 || (c == best.1 && l < best.0) {
                    best = (l, c);
                }
            }
            best.0
        })
        .collect()
}

impl PseudoLabelCodebook {
    pub fn to_archive(&self) -> Archive {
        Archive {
            step: self.iterations as u64,
            tensors: vec![NamedTensor { name: "centroids".into(), group: ParamGroup::SslHead, tensor: self.centroids.clone() }],
            ..Default::default()
        }
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let c = a.get("centroids").ok_or_else(|| Error::CheckpointContent("codebook archive has no centroids".into()))?;
        if c.tensor.rank() != 2 || c.tensor.rows() < 2 {
            return Err(Error::CheckpointContent(format!("codebook centroids must be k×D with k ≥ 2, got {:?}", c.tensor.shape())));
        }
        Ok(Self { k: c.tensor.rows(), centroids: c.tensor.clone(), iterations: a.step as usize, inertia: Vec::new() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f32]) -> Tensor<f32> {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn two_clusters() {
        let x = col(&[0.0, 0.1, 10.0, 10.1]);
        let cb = kmeans_fit(&x, 2, 20, 4).unwrap();
        let l = kmeans_assign(&cb, &x).unwrap();
        assert_eq!(l[0], l[1]);
        assert_eq!(l[2], l[3]);
        assert_ne!(l[0], l[2]);
    }

    #[test]
    fn distinct_points_zero_inertia() {
        let x = col(&[1.0, 1.0, 5.0, 9.0, 9.0]);
        let cb = kmeans_fit(&x, 3, 10, 0).unwrap();
        assert_eq!(*cb.inertia.last().unwrap(), 0.0);
        assert!(kmeans_fit(&x, 6, 10, 0).is_err());
    }

    #[test]
    fn majority_labels() {
        assert_eq!(subsample_labels(&[1, 1, 2, 2, 3, 0, 3, 3, 5], 3, 4), vec![1, 3, 5]);
    }
}
