//! Gaussian-kernel maximum mean discrepancy and the median bandwidth heuristic.
//!
//! The estimator is the biased one (diagonal terms included), which is
//! non-negative and exactly zero for identical sample sets. The cross term is
//! summed both row-major and column-major and averaged, so swapping the two
//! sets reproduces the same bits.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Scalar;

#[inline]
fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// `exp(−‖x − y‖² / (2σ²))`.
pub fn gaussian_kernel<T: Scalar>(x: &[T], y: &[T], sigma: T) -> T {
    let two = T::from_f64(2.0);
    (-sq_dist(x, y) / (two * sigma * sigma)).exp()
}

/// Median Euclidean distance over all unordered pairs of `n` rows of width `d`;
/// an even pair count takes the mean of the two middle distances.
pub fn median_bandwidth<T: Scalar>(rows: &[T], n: usize, d: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("median bandwidth needs at least two samples"));
    }
    let per_row = parallel::map_range(n, |i| {
        ((i + 1)..n)
            .map(|j| sq_dist(&rows[i * d..(i + 1) * d], &rows[j * d..(j + 1) * d]).as_f64().sqrt())
            .collect::<Vec<f64>>()
    });
    let mut dists: Vec<f64> = per_row.into_iter().flatten().collect();
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    if median <= 0.0 {
        return Err(Error::invalid("all pairwise distances are zero; bandwidth undefined"));
    }
    Ok(median)
}

fn kernel_matrix<T: Scalar>(a: &[T], na: usize, b: &[T], nb: usize, d: usize, sigma: T) -> Vec<T> {
    parallel::map_range(na, |i| {
        let ai = &a[i * d..(i + 1) * d];
        (0..nb).map(|j| gaussian_kernel(ai, &b[j * d..(j + 1) * d], sigma)).collect::<Vec<T>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn sum_row_major<T: Scalar>(k: &[T]) -> T {
    k.iter().fold(T::zero(), |acc, &v| acc + v)
}

fn sum_col_major<T: Scalar>(k: &[T], rows: usize, cols: usize) -> T {
    let mut acc = T::zero();
    for j in 0..cols {
        for i in 0..rows {
            acc += k[i * cols + j];
        }
    }
    acc
}

/// `(1/ns²)ΣΣk(s,s') + (1/nt²)ΣΣk(t,t') − (2/(ns·nt))ΣΣk(s,t)`.
pub fn mmd_biased<T: Scalar>(s: &[T], ns: usize, t: &[T], nt: usize, d: usize, sigma: T) -> T {
    let kss = sum_row_major(&kernel_matrix(s, ns, s, ns, d, sigma));
    let ktt = sum_row_major(&kernel_matrix(t, nt, t, nt, d, sigma));
    let kst = kernel_matrix(s, ns, t, nt, d, sigma);
    let half = T::from_f64(0.5);
    let cross = (sum_row_major(&kst) + sum_col_major(&kst, ns, nt)) * half;
    let (fs, ft) = (T::from_f64(ns as f64), T::from_f64(nt as f64));
    let cs = T::one() / (fs * fs);
    let ct = T::one() / (ft * ft);
    let cx = T::from_f64(2.0) / (fs * ft);
    (kss * cs + ktt * ct) - cross * cx
}

/// Gradients of [`mmd_biased`] with respect to both sample sets, scaled by
/// the upstream gradient `upstream`.
pub fn mmd_biased_grad<T: Scalar>(s: &[T], ns: usize, t: &[T], nt: usize, d: usize, sigma: T, upstream: T) -> (Vec<T>, Vec<T>) {
    let (fs, ft) = (T::from_f64(ns as f64), T::from_f64(nt as f64));
    let two = T::from_f64(2.0);
    let cs = T::one() / (fs * fs);
    let ct = T::one() / (ft * ft);
    let cx = two / (fs * ft);
    let inv_var = T::one() / (sigma * sigma);
    let kss = kernel_matrix(s, ns, s, ns, d, sigma);
    let ktt = kernel_matrix(t, nt, t, nt, d, sigma);
    let kst = kernel_matrix(s, ns, t, nt, d, sigma);

    // ∂/∂xᵢ Σⱼ wⱼ k(xᵢ, zⱼ) = −(1/σ²) Σⱼ wⱼ k(xᵢ, zⱼ)(xᵢ − zⱼ)
    let accumulate = |xi: &[T], same: &[T], same_rows: &[T], c_same: T, cross: &[T], cross_rows: &[T], out: &mut [T]| {
        let scale = -upstream * inv_var;
        for (j, &k) in same.iter().enumerate() {
            let w = two * c_same * k * scale;
            for (o, (&a, &b)) in out.iter_mut().zip(xi.iter().zip(&same_rows[j * d..(j + 1) * d])) {
                *o += w * (a - b);
            }
        }
        for (j, &k) in cross.iter().enumerate() {
            let w = -cx * k * scale;
            for (o, (&a, &b)) in out.iter_mut().zip(xi.iter().zip(&cross_rows[j * d..(j + 1) * d])) {
                *o += w * (a - b);
            }
        }
    };

    let gs: Vec<T> = parallel::map_range(ns, |i| {
        let mut row = vec![T::zero(); d];
        let kst_row = &kst[i * nt..(i + 1) * nt];
        accumulate(&s[i * d..(i + 1) * d], &kss[i * ns..(i + 1) * ns], s, cs, kst_row, t, &mut row);
        row
    })
    .into_iter()
    .flatten()
    .collect();
    let gt: Vec<T> = parallel::map_range(nt, |j| {
        let mut row = vec![T::zero(); d];
        let kts_row: Vec<T> = (0..ns).map(|i| kst[i * nt + j]).collect();
        accumulate(&t[j * d..(j + 1) * d], &ktt[j * nt..(j + 1) * nt], t, ct, &kts_row, s, &mut row);
        row
    })
    .into_iter()
    .flatten()
    .collect();
    (gs, gt)
}
