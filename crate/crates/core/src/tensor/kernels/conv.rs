use crate::parallel;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }
}

/// `floor((len + 2·padding − dilation·(k−1) − 1)/stride) + 1`, or `None` when
/// the dilated kernel does not fit.
pub fn conv_out_extent(len: usize, k: usize, p: &Conv2dParams) -> Option<usize> {
    let span = p.dilation * (k - 1) + 1;
    let padded = len + 2 * p.padding;
    (padded >= span).then(|| (padded - span) / p.stride + 1)
}

/// Geometry of one im2col lowering: a `channels×h×w` image against a `k×k`
/// kernel sampled on an `oh×ow` grid.
#[derive(Clone, Copy)]
struct Lowering {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    dilation: usize,
    oh: usize,
    ow: usize,
}

impl Lowering {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source coordinate for grid index `o` and tap `t`, if inside the image.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, pad: usize, dilation: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + t * dilation) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    fn im2col<T: Scalar>(&self, img: &[T], col: &mut [T]) {
        let (k, cols) = (self.k, self.cols());
        for c in 0..self.channels {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = &mut col[((c * k + kh) * k + kw) * cols..][..cols];
                    for oy in 0..self.oh {
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        match Self::src(oy, kh, self.stride, self.pad_top, self.dilation, self.h) {
                            None => dst.fill(T::zero()),
                            Some(iy) => {
                                let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match Self::src(ox, kw, self.stride, self.pad_left, self.dilation, self.w) {
                                        Some(ix) => src_row[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `col` back into `img`; taps landing outside are dropped.
    fn col2im<T: Scalar>(&self, col: &[T], img: &mut [T]) {
        let (k, cols) = (self.k, self.cols());
        for c in 0..self.channels {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = &col[((c * k + kh) * k + kw) * cols..][..cols];
                    for oy in 0..self.oh {
                        let Some(iy) = Self::src(oy, kh, self.stride, self.pad_top, self.dilation, self.h) else {
                            continue;
                        };
                        let dst_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, &v) in row[oy * self.ow..(oy + 1) * self.ow].iter().enumerate() {
                            if let Some(ix) = Self::src(ox, kw, self.stride, self.pad_left, self.dilation, self.w) {
                                dst_row[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// 1×1, stride 1, no padding: the lowered matrix is the image itself.
    fn is_identity(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0 && self.oh == self.h && self.ow == self.w
    }

    fn lower<'a, T: Scalar>(&self, img: &'a [T], scratch: &'a mut Vec<T>) -> &'a [T] {
        if self.is_identity() {
            return img;
        }
        scratch.resize(self.rows() * self.cols(), T::zero());
        self.im2col(img, scratch);
        scratch
    }
}

fn conv_lowering(input: [usize; 4], k: usize, p: &Conv2dParams, oh: usize, ow: usize) -> Lowering {
    Lowering {
        channels: input[1],
        h: input[2],
        w: input[3],
        k,
        stride: p.stride,
        pad_top: p.padding,
        pad_left: p.padding,
        dilation: p.dilation,
        oh,
        ow,
    }
}

/// Grouped, dilated, strided convolution. `w` is `[cout, cin/g, k, k]`.
/// Shapes must have been validated by the caller.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    input: [usize; 4],
    w: &[T],
    cout: usize,
    k: usize,
    p: &Conv2dParams,
) -> (Vec<T>, [usize; 4]) {
    let [n, cin, h, wd] = input;
    let oh = conv_out_extent(h, k, p).expect("validated extent");
    let ow = conv_out_extent(wd, k, p).expect("validated extent");
    let low = conv_lowering(input, k, p, oh, ow);
    let (g, ohw) = (p.groups, oh * ow);
    let (cig, cog) = (cin / g, cout / g);
    let kg = cig * k * k;
    let mut out = vec![T::zero(); n * cout * ohw];
    parallel::for_each_chunk_mut(&mut out, cout * ohw, |ni, out_n| {
        let mut scratch = Vec::new();
        let col = low.lower(&x[ni * cin * h * wd..(ni + 1) * cin * h * wd], &mut scratch);
        for gi in 0..g {
            T::gemm(
                cog,
                kg,
                ohw,
                &w[gi * cog * kg..(gi + 1) * cog * kg],
                false,
                &col[gi * kg * ohw..(gi + 1) * kg * ohw],
                false,
                T::zero(),
                &mut out_n[gi * cog * ohw..(gi + 1) * cog * ohw],
            );
        }
    });
    (out, [n, cout, oh, ow])
}

pub fn conv2d_backward_input<T: Scalar>(
    go: &[T],
    input: [usize; 4],
    w: &[T],
    cout: usize,
    k: usize,
    p: &Conv2dParams,
    output: [usize; 4],
) -> Vec<T> {
    let [n, cin, h, wd] = input;
    let (oh, ow) = (output[2], output[3]);
    let low = conv_lowering(input, k, p, oh, ow);
    let (g, ohw) = (p.groups, oh * ow);
    let (cig, cog) = (cin / g, cout / g);
    let kg = cig * k * k;
    let flip = crate::fault::conv_sign_flip();
    let mut gx = vec![T::zero(); n * cin * h * wd];
    parallel::for_each_chunk_mut(&mut gx, cin * h * wd, |ni, gx_n| {
        let go_n = &go[ni * cout * ohw..(ni + 1) * cout * ohw];
        let mut col = vec![T::zero(); low.rows() * ohw];
        for gi in 0..g {
            T::gemm(
                kg,
                cog,
                ohw,
                &w[gi * cog * kg..(gi + 1) * cog * kg],
                true,
                &go_n[gi * cog * ohw..(gi + 1) * cog * ohw],
                false,
                T::zero(),
                &mut col[gi * kg * ohw..(gi + 1) * kg * ohw],
            );
        }
        if low.is_identity() {
            gx_n.copy_from_slice(&col);
        } else {
            low.col2im(&col, gx_n);
        }
        if flip {
            gx_n.iter_mut().for_each(|v| *v = -*v);
        }
    });
    gx
}

pub fn conv2d_backward_weight<T: Scalar>(
    go: &[T],
    x: &[T],
    input: [usize; 4],
    cout: usize,
    k: usize,
    p: &Conv2dParams,
    output: [usize; 4],
) -> Vec<T> {
    let [n, cin, h, wd] = input;
    let (oh, ow) = (output[2], output[3]);
    let low = conv_lowering(input, k, p, oh, ow);
    let (g, ohw) = (p.groups, oh * ow);
    let (cig, cog) = (cin / g, cout / g);
    let kg = cig * k * k;
    let partials = parallel::map_range(n, |ni| {
        let mut scratch = Vec::new();
        let col = low.lower(&x[ni * cin * h * wd..(ni + 1) * cin * h * wd], &mut scratch);
        let go_n = &go[ni * cout * ohw..(ni + 1) * cout * ohw];
        let mut gw = vec![T::zero(); cout * kg];
        for gi in 0..g {
            T::gemm(
                cog,
                ohw,
                kg,
                &go_n[gi * cog * ohw..(gi + 1) * cog * ohw],
                false,
                &col[gi * kg * ohw..(gi + 1) * kg * ohw],
                true,
                T::zero(),
                &mut gw[gi * cog * kg..(gi + 1) * cog * kg],
            );
        }
        gw
    });
    sum_in_order(partials, cout * kg)
}

fn sum_in_order<T: Scalar>(partials: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for part in partials {
        for (a, v) in acc.iter_mut().zip(part) {
            *a += v;
        }
    }
    acc
}

/// Rows/columns removed from the top/left when a transposed convolution's raw
/// `(len−1)·stride + k` output is center-cropped back to `len`. An odd excess
/// leaves the extra row/column to be dropped at the bottom/right.
pub fn conv_transpose_crop(len: usize, k: usize, stride: usize) -> usize {
    let raw = (len - 1) * stride + k;
    debug_assert!(raw >= len);
    (raw - len) / 2
}

fn transpose_lowering(input: [usize; 4], cout: usize, k: usize, stride: usize) -> Lowering {
    let [_, _, h, w] = input;
    Lowering {
        channels: cout,
        h,
        w,
        k,
        stride,
        pad_top: conv_transpose_crop(h, k, stride),
        pad_left: conv_transpose_crop(w, k, stride),
        dilation: 1,
        oh: h,
        ow: w,
    }
}

/// Transposed convolution whose output is center-cropped to the input's
/// spatial size. `w` is `[cin, cout/g, k, k]`; output is `[n, cout, h, w]`.
pub fn conv_transpose_forward<T: Scalar>(
    x: &[T],
    input: [usize; 4],
    w: &[T],
    cout: usize,
    k: usize,
    stride: usize,
    groups: usize,
) -> Vec<T> {
    let [n, cin, h, wd] = input;
    let low = transpose_lowering(input, cout, k, stride);
    let hw = h * wd;
    let (cig, cog) = (cin / groups, cout / groups);
    let kg = cog * k * k;
    let mut out = vec![T::zero(); n * cout * hw];
    parallel::for_each_chunk_mut(&mut out, cout * hw, |ni, out_n| {
        let x_n = &x[ni * cin * hw..(ni + 1) * cin * hw];
        let mut col = vec![T::zero(); low.rows() * hw];
        for gi in 0..groups {
            T::gemm(
                kg,
                cig,
                hw,
                &w[gi * cig * kg..(gi + 1) * cig * kg],
                true,
                &x_n[gi * cig * hw..(gi + 1) * cig * hw],
                false,
                T::zero(),
                &mut col[gi * kg * hw..(gi + 1) * kg * hw],
            );
        }
        low.col2im(&col, out_n);
    });
    out
}

pub fn conv_transpose_backward_input<T: Scalar>(
    go: &[T],
    input: [usize; 4],
    w: &[T],
    cout: usize,
    k: usize,
    stride: usize,
    groups: usize,
) -> Vec<T> {
    let [n, cin, h, wd] = input;
    let low = transpose_lowering(input, cout, k, stride);
    let hw = h * wd;
    let (cig, cog) = (cin / groups, cout / groups);
    let kg = cog * k * k;
    let mut gx = vec![T::zero(); n * cin * hw];
    parallel::for_each_chunk_mut(&mut gx, cin * hw, |ni, gx_n| {
        let mut col = vec![T::zero(); low.rows() * hw];
        low.im2col(&go[ni * cout * hw..(ni + 1) * cout * hw], &mut col);
        for gi in 0..groups {
            T::gemm(
                cig,
                kg,
                hw,
                &w[gi * cig * kg..(gi + 1) * cig * kg],
                false,
                &col[gi * kg * hw..(gi + 1) * kg * hw],
                false,
                T::zero(),
                &mut gx_n[gi * cig * hw..(gi + 1) * cig * hw],
            );
        }
    });
    gx
}

pub fn conv_transpose_backward_weight<T: Scalar>(
    go: &[T],
    x: &[T],
    input: [usize; 4],
    cout: usize,
    k: usize,
    stride: usize,
    groups: usize,
) -> Vec<T> {
    let [n, cin, h, wd] = input;
    let low = transpose_lowering(input, cout, k, stride);
    let hw = h * wd;
    let (cig, cog) = (cin / groups, cout / groups);
    let kg = cog * k * k;
    let partials = parallel::map_range(n, |ni| {
        let mut col = vec![T::zero(); low.rows() * hw];
        low.im2col(&go[ni * cout * hw..(ni + 1) * cout * hw], &mut col);
        let x_n = &x[ni * cin * hw..(ni + 1) * cin * hw];
        let mut gw = vec![T::zero(); cin * kg];
        for gi in 0..groups {
            T::gemm(
                cig,
                hw,
                kg,
                &x_n[gi * cig * hw..(gi + 1) * cig * hw],
                false,
                &col[gi * kg * hw..(gi + 1) * kg * hw],
                true,
                T::zero(),
                &mut gw[gi * cig * kg..(gi + 1) * cig * kg],
            );
        }
        gw
    });
    sum_in_order(partials, cin * kg)
}
