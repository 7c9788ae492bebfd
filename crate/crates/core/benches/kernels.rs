use std::hint::black_box;

use convm::parallel::set_parallel;
use convm::tensor::kernels::Conv2dParams;
use convm::{Graph, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Forward and backward of `op` on fresh leaves, under both execution paths.
fn bench_op(c: &mut Criterion, name: &str, inputs: &[Tensor<f32>], op: impl Fn(&mut Graph<f32>, &[convm::Var]) -> convm::Var) {
    let mut group = c.benchmark_group(name);
    for parallel in [true, false] {
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            set_parallel(parallel);
            b.iter(|| {
                let mut g = Graph::new();
                let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
                let y = op(&mut g, &vars);
                let loss = g.sum(y).unwrap();
                g.backward(loss).unwrap();
                black_box(g.grad(vars[0]).map(|t| t.len()));
            });
        });
    }
    set_parallel(true);
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let x = random(&[16, 32, 28, 28], 1);
    let w = random(&[32, 8, 3, 3], 2);
    bench_op(c, "conv2d_dilated_grouped", &[x.clone(), w.clone()], |g, v| {
        g.conv2d(v[0], v[1], Conv2dParams { stride: 1, padding: 2, dilation: 2, groups: 4 }).unwrap()
    });
    bench_op(c, "deconv_cropped", &[x.clone(), w], |g, v| g.conv_transpose_cropped(v[0], v[1], 1, 4).unwrap());
    bench_op(c, "maxpool_3x3s2", &[x], |g, v| g.maxpool2d(v[0], 3, 2).unwrap().0);
    let s = random(&[64, 512], 3);
    let t = random(&[64, 512], 4);
    bench_op(c, "mmd_64x512", &[s, t], |g, v| g.mmd(v[0], v[1], 8.0).unwrap());
}

criterion_group!(benches, kernels);
criterion_main!(benches);
