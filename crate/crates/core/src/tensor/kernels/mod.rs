//! Slice-level forward/backward kernels. Tensors are NCHW row-major.

mod conv;
mod pool;

pub use conv::{
    conv2d_backward_input, conv2d_backward_weight, conv2d_forward, conv_out_extent,
    conv_transpose_backward_input, conv_transpose_backward_weight, conv_transpose_crop,
    conv_transpose_forward, Conv2dParams,
};
pub use pool::{
    avgpool_backward, avgpool_forward, maxpool_backward, maxpool_forward, pool_out_extent,
    unpool_backward, unpool_forward, unpool_winners, IndexMap,
};

use super::Scalar;

/// `out = x · wᵀ` for `x: [n, din]`, `w: [dout, din]`.
pub fn linear_forward<T: Scalar>(x: &[T], n: usize, din: usize, w: &[T], dout: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * dout];
    T::gemm(n, din, dout, x, false, w, true, T::zero(), &mut out);
    out
}

pub fn linear_backward_input<T: Scalar>(go: &[T], n: usize, dout: usize, w: &[T], din: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); n * din];
    T::gemm(n, dout, din, go, false, w, false, T::zero(), &mut gx);
    gx
}

pub fn linear_backward_weight<T: Scalar>(go: &[T], n: usize, dout: usize, x: &[T], din: usize) -> Vec<T> {
    let mut gw = vec![T::zero(); dout * din];
    T::gemm(dout, n, din, go, true, x, false, T::zero(), &mut gw);
    gw
}
