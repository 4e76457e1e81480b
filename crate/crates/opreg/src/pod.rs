//! Proper orthogonal decomposition of a label ensemble.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column mean plus the leading right singular vectors of the centered
/// label matrix.
#[derive(Clone, Debug)]
pub struct PodBasis {
    /// Column-wise average of the labels, `[K]` (zeros when centering is off).
    pub mean: Tensor,
    /// Orthonormal spatial modes as columns, `[K, m]`.
    pub modes: Tensor,
    /// Nonincreasing singular values, `[m]`.
    pub singular_values: Tensor,
    /// Numerical rank of the centered matrix; below `m` the trailing modes
    /// are orthonormal complement vectors with (near-)zero singular values.
    pub rank: usize,
}

/// Top-`m` POD modes of `labels` (`[N, K]`), mean-centered.
pub fn compute_pod_modes(labels: &Tensor, m: usize) -> Result<PodBasis> {
    compute_pod_modes_with(labels, m, true)
}

pub fn compute_pod_modes_with(labels: &Tensor, m: usize, center: bool) -> Result<PodBasis> {
    let [n, k] = labels.shape() else {
        return Err(Error::InvalidArgument(format!(
            "labels must be [N, K], got {:?}",
            labels.shape()
        )));
    };
    let (n, k) = (*n, *k);
    if n < 2 {
        return Err(Error::InvalidArgument(
            "POD needs at least 2 label rows".into(),
        ));
    }
    if m == 0 || m > n.min(k) {
        return Err(Error::InvalidArgument(format!(
            "mode count {} outside 1..=min(N={}, K={})",
            m, n, k
        )));
    }

    let mut mean = vec![0.0; k];
    if center {
        for row in labels.data().chunks_exact(k) {
            for (acc, &v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= n as f64;
        }
    }

    let centered = DMatrix::from_fn(n, k, |i, j| labels.data()[i * k + j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });

    let mut modes = Tensor::zeros(&[k, m]);
    let mut sigma = Tensor::zeros(&[m]);
    {
        let md = modes.data_mut();
        for (col, &src) in order[..m].iter().enumerate() {
            for row in 0..k {
                md[row * m + col] = v_t[(src, row)];
            }
        }
    }
    for (i, &src) in order[..m].iter().enumerate() {
        sigma.data_mut()[i] = svd.singular_values[src];
    }

    let sigma_max = sigma.data().first().copied().unwrap_or(0.0);
    let tol = sigma_max * (n.max(k) as f64) * f64::EPSILON;
    let rank = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > tol.max(f64::MIN_POSITIVE))
        .count();

    Ok(PodBasis {
        mean: Tensor::new(vec![k], mean)?,
        modes,
        singular_values: sigma,
        rank,
    })
}

impl PodBasis {
    pub fn mode_count(&self) -> usize {
        self.modes.shape()[1]
    }

    /// Max deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let [k, m] = self.modes.shape() else {
            unreachable!()
        };
        let (k, m) = (*k, *m);
        let d = self.modes.data();
        let mut worst: f64 = 0.0;
        for a in 0..m {
            for b in a..m {
                let mut dot = 0.0;
                for row in 0..k {
                    dot += d[row * m + a] * d[row * m + b];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Coefficients of one label row in this basis: `modes^T (row - mean)`.
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        let [k, m] = self.modes.shape() else {
            unreachable!()
        };
        let (k, m) = (*k, *m);
        let d = self.modes.data();
        (0..m)
            .map(|c| {
                (0..k)
                    .map(|r| (row[r] - self.mean.data()[r]) * d[r * m + c])
                    .sum()
            })
            .collect()
    }

    /// `mean + modes . coeffs`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let [k, m] = self.modes.shape() else {
            unreachable!()
        };
        let (k, m) = (*k, *m);
        let d = self.modes.data();
        (0..k)
            .map(|r| {
                self.mean.data()[r]
                    + (0..m).map(|c| d[r * m + c] * coeffs[c]).sum::<f64>()
            })
            .collect()
    }
}
