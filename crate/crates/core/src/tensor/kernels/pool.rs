use crate::parallel;
use crate::tensor::Scalar;

/// Ceil-mode pooled extent: `ceil((len − k)/stride) + 1`. Windows that run
/// past the border are clipped to the valid region.
pub fn pool_out_extent(len: usize, k: usize, stride: usize) -> Option<usize> {
    (k <= len && k > 0 && stride > 0).then(|| (len - k).div_ceil(stride) + 1)
}

/// Argmax positions recorded by a max-pooling pass, used for unpooling.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexMap {
    /// `[n, c, h, w]` of the pooled input.
    pub input_shape: [usize; 4],
    /// `[n, c, oh, ow]` of the pooled output.
    pub output_shape: [usize; 4],
    /// For each pooled cell, the flat `h·w` offset of its maximum within the
    /// source plane.
    pub indices: Vec<usize>,
}

pub fn maxpool_forward<T: Scalar>(x: &[T], input: [usize; 4], k: usize, stride: usize) -> (Vec<T>, IndexMap) {
    let [n, c, h, w] = input;
    let oh = pool_out_extent(h, k, stride).expect("validated window");
    let ow = pool_out_extent(w, k, stride).expect("validated window");
    let (plane_in, plane_out) = (h * w, oh * ow);
    let mut out = vec![T::zero(); n * c * plane_out];
    let mut indices = vec![0usize; n * c * plane_out];
    let planes: Vec<(usize, &mut [T], &mut [usize])> = out
        .chunks_mut(plane_out)
        .zip(indices.chunks_mut(plane_out))
        .enumerate()
        .map(|(i, (o, ix))| (i, o, ix))
        .collect();
    let work = |(pi, o, ix): &mut (usize, &mut [T], &mut [usize])| {
        let src = &x[*pi * plane_in..(*pi + 1) * plane_in];
        for oy in 0..oh {
            let (y0, y1) = (oy * stride, (oy * stride + k).min(h));
            for ox in 0..ow {
                let (x0, x1) = (ox * stride, (ox * stride + k).min(w));
                let mut best = y0 * w + x0;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        // strict `>` keeps the first maximum in row-major scan order
                        if src[yy * w + xx] > src[best] {
                            best = yy * w + xx;
                        }
                    }
                }
                o[oy * ow + ox] = src[best];
                ix[oy * ow + ox] = best;
            }
        }
    };
    run_planes(planes, work);
    let map = IndexMap { input_shape: input, output_shape: [n, c, oh, ow], indices };
    (out, map)
}

fn run_planes<I: Send, F: Fn(&mut I) + Sync + Send>(mut items: Vec<I>, f: F) {
    #[cfg(feature = "parallel")]
    if parallel::is_parallel() {
        use rayon::prelude::*;
        items.par_iter_mut().for_each(|it| f(it));
        return;
    }
    items.iter_mut().for_each(f);
}

pub fn maxpool_backward<T: Scalar>(go: &[T], map: &IndexMap) -> Vec<T> {
    let [n, c, h, w] = map.input_shape;
    let plane_out = map.output_shape[2] * map.output_shape[3];
    let mut gx = vec![T::zero(); n * c * h * w];
    parallel::for_each_chunk_mut(&mut gx, h * w, |pi, gx_p| {
        let idx = &map.indices[pi * plane_out..(pi + 1) * plane_out];
        for (&i, &g) in idx.iter().zip(&go[pi * plane_out..(pi + 1) * plane_out]) {
            gx_p[i] += g;
        }
    });
    gx
}

/// Marks, for each pooled cell, whether it is the last cell in row-major
/// order to write its recorded index. Overlapping windows can share an
/// argmax; unpooling assigns, so only the last writer's value survives.
pub fn unpool_winners(map: &IndexMap) -> Vec<bool> {
    let [n, c, h, w] = map.input_shape;
    let plane_out = map.output_shape[2] * map.output_shape[3];
    let mut winners = vec![false; map.indices.len()];
    let mut last = vec![usize::MAX; h * w];
    for pi in 0..n * c {
        last.fill(usize::MAX);
        let base = pi * plane_out;
        for (j, &i) in map.indices[base..base + plane_out].iter().enumerate() {
            last[i] = j;
        }
        for (j, &i) in map.indices[base..base + plane_out].iter().enumerate() {
            winners[base + j] = last[i] == j;
        }
    }
    winners
}

/// Scatters each value to its recorded source position; everything else is zero.
pub fn unpool_forward<T: Scalar>(x: &[T], map: &IndexMap) -> Vec<T> {
    let [n, c, h, w] = map.input_shape;
    let plane_out = map.output_shape[2] * map.output_shape[3];
    let mut out = vec![T::zero(); n * c * h * w];
    parallel::for_each_chunk_mut(&mut out, h * w, |pi, o| {
        let idx = &map.indices[pi * plane_out..(pi + 1) * plane_out];
        for (&i, &v) in idx.iter().zip(&x[pi * plane_out..(pi + 1) * plane_out]) {
            o[i] = v;
        }
    });
    out
}

pub fn unpool_backward<T: Scalar>(go: &[T], map: &IndexMap, winners: &[bool]) -> Vec<T> {
    let [_, _, h, w] = map.input_shape;
    let plane_in = h * w;
    let plane_out = map.output_shape[2] * map.output_shape[3];
    let mut gx = vec![T::zero(); map.indices.len()];
    parallel::for_each_chunk_mut(&mut gx, plane_out, |pi, g| {
        let base = pi * plane_out;
        for (j, gj) in g.iter_mut().enumerate() {
            if winners[base + j] {
                *gj = go[pi * plane_in + map.indices[base + j]];
            }
        }
    });
    gx
}

/// Ceil-mode average pooling; each window is averaged over its in-bounds cells.
pub fn avgpool_forward<T: Scalar>(x: &[T], input: [usize; 4], k: usize, stride: usize) -> (Vec<T>, [usize; 4]) {
    let [n, c, h, w] = input;
    let oh = pool_out_extent(h, k, stride).expect("validated window");
    let ow = pool_out_extent(w, k, stride).expect("validated window");
    let mut out = vec![T::zero(); n * c * oh * ow];
    parallel::for_each_chunk_mut(&mut out, oh * ow, |pi, o| {
        let src = &x[pi * h * w..(pi + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = (oy * stride, (oy * stride + k).min(h));
            for ox in 0..ow {
                let (x0, x1) = (ox * stride, (ox * stride + k).min(w));
                let mut acc = T::zero();
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[yy * w + xx];
                    }
                }
                o[oy * ow + ox] = acc / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    });
    (out, [n, c, oh, ow])
}

pub fn avgpool_backward<T: Scalar>(go: &[T], input: [usize; 4], output: [usize; 4], k: usize, stride: usize) -> Vec<T> {
    let [n, c, h, w] = input;
    let (oh, ow) = (output[2], output[3]);
    let mut gx = vec![T::zero(); n * c * h * w];
    parallel::for_each_chunk_mut(&mut gx, h * w, |pi, g| {
        let src = &go[pi * oh * ow..(pi + 1) * oh * ow];
        for oy in 0..oh {
            let (y0, y1) = (oy * stride, (oy * stride + k).min(h));
            for ox in 0..ow {
                let (x0, x1) = (ox * stride, (ox * stride + k).min(w));
                let share = src[oy * ow + ox] / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        g[yy * w + xx] += share;
                    }
                }
            }
        }
    });
    gx
}
