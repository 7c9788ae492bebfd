//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use convm::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct quadruple-loop convolution.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    [n, cin, h, w]: [usize; 4],
    wt: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dil: usize,
    groups: usize,
) -> (Vec<f64>, [usize; 4]) {
    let oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let ow = (w + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let (cig, cog) = (cin / groups, cout / groups);
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            let grp = co / cog;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for cl in 0..cig {
                        let ci = grp * cig + cl;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky * dil) as isize - pad as isize;
                                let ix = (ox * stride + kx * dil) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * cin + ci) * h + iy as usize) * w + ix as usize]
                                    * wt[((co * cig + cl) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((b * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [n, cout, oh, ow])
}

/// Scatter-accumulate transposed convolution into the raw `(h−1)s+k` grid,
/// then a center crop (extra row/column dropped bottom/right).
pub fn naive_deconv_cropped(
    x: &[f64],
    [n, cin, h, w]: [usize; 4],
    wt: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    groups: usize,
) -> Vec<f64> {
    let (rh, rw) = ((h - 1) * stride + k, (w - 1) * stride + k);
    let (cig, cog) = (cin / groups, cout / groups);
    let mut raw = vec![0.0; n * cout * rh * rw];
    for b in 0..n {
        for ci in 0..cin {
            let grp = ci / cig;
            for iy in 0..h {
                for ix in 0..w {
                    let v = x[((b * cin + ci) * h + iy) * w + ix];
                    for cl in 0..cog {
                        let co = grp * cog + cl;
                        for ky in 0..k {
                            for kx in 0..k {
                                raw[((b * cout + co) * rh + iy * stride + ky) * rw + ix * stride + kx] +=
                                    v * wt[((ci * cog + cl) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    let (top, left) = ((rh - h) / 2, (rw - w) / 2);
    let mut out = vec![0.0; n * cout * h * w];
    for b in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    out[((b * cout + co) * h + y) * w + xx] = raw[((b * cout + co) * rh + y + top) * rw + xx + left];
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Biased Gaussian MMD by three explicit double loops over row vectors.
pub fn brute_mmd(s: &[Vec<f64>], t: &[Vec<f64>], sigma: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let mut ss = 0.0;
    for a in s {
        for b in s {
            ss += k(a, b);
        }
    }
    let mut tt = 0.0;
    for a in t {
        for b in t {
            tt += k(a, b);
        }
    }
    let mut st = 0.0;
    for a in s {
        for b in t {
            st += k(a, b);
        }
    }
    let (ns, nt) = (s.len() as f64, t.len() as f64);
    ss / (ns * ns) + tt / (nt * nt) - 2.0 * st / (ns * nt)
}

/// Median of all unordered pairwise Euclidean distances, by full sort.
pub fn brute_median(points: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(points[i].iter().zip(&points[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt());
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        (d[m / 2 - 1] + d[m / 2]) / 2.0
    }
}

pub fn rows_of(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let d = t.len() / t.shape()[0];
    t.data().chunks(d).map(<[f64]>::to_vec).collect()
}
