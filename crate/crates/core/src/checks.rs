//! The gradient-check suite: every differentiable op plus a full Conv-M
//! module, on seeded float64 inputs.

use rand::Rng;

use crate::da::data::stream_rng;
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use crate::graph::{Graph, Var};
use crate::layers::convm::{forward_with, ConvMConfig};
use crate::tensor::kernels::Conv2dParams;
use crate::tensor::Tensor;

pub const OPS: [&str; 13] = [
    "conv2d", "conv2d_strided", "deconv", "maxpool", "unpool", "avgpool", "linear", "relu", "dropout", "concat", "mse", "mmd", "convm",
];

/// Which checks to run and how the targeted convolution is configured.
#[derive(Clone, Debug)]
pub struct SuiteOptions {
    /// `None` runs everything.
    pub op: Option<String>,
    pub dilation: usize,
    pub groups: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { op: None, dilation: 2, groups: 2, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub report: GradcheckReport,
}

fn random(shape: &[usize], seed: u64, stream: u64) -> Tensor<f64> {
    let mut rng = stream_rng(seed, stream);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape product")
}

/// Values spaced 0.05 apart in a scrambled order, so no two pooling
/// candidates are within a perturbation of each other.
fn distinct(shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let stride = (1..n).rev().find(|s| gcd(*s, n) == 1 && *s > n / 3).unwrap_or(1);
    Tensor::from_vec(shape, (0..n).map(|i| ((i * stride) % n) as f64 * 0.05 - 1.0).collect()).expect("shape product")
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smooth scalar reduction: mean squared distance to a fixed random target.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let t = g.input(random(g.value(y).shape(), seed, 99));
    g.mse(y, t)
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    if let Some(op) = &opts.op {
        if !OPS.contains(&op.as_str()) {
            return Err(Error::invalid(format!("unknown op `{op}`; choose from {}", OPS.join(", "))));
        }
    }
    if opts.dilation == 0 || opts.groups == 0 {
        return Err(Error::invalid("dilation and groups must be ≥ 1"));
    }
    let wanted = |name: &str| opts.op.as_deref().is_none_or(|o| o == name);
    let seed = opts.seed;
    // Small enough for negligible truncation error, large enough that
    // roundoff stays far below the tolerance.
    let base = GradcheckOptions { eps: 1e-5, ..Default::default() };
    let mut out = Vec::new();
    let mut run = |name: String, f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>, inputs: Vec<Tensor<f64>>, o: GradcheckOptions| {
        let report = gradcheck(f, &inputs, o)?;
        out.push(CheckResult { name, report });
        Result::<()>::Ok(())
    };

    if wanted("conv2d") {
        let (d, gr) = (opts.dilation, opts.groups);
        let p = Conv2dParams { stride: 1, padding: d, dilation: d, groups: gr };
        let side = 2 * d + 4;
        run(
            format!("conv2d(dilation={d}, groups={gr})"),
            &|g, v| {
                let y = g.conv2d(v[0], v[1], p)?;
                project(g, y, seed)
            },
            vec![random(&[2, 2 * gr, side, side], seed, 1), random(&[2 * gr, 2, 3, 3], seed, 2)],
            base,
        )?;
    }
    if wanted("conv2d_strided") {
        let p = Conv2dParams { stride: 2, padding: 1, dilation: 1, groups: 2 };
        run(
            "conv2d(stride=2, padding=1, groups=2)".into(),
            &|g, v| {
                let y = g.conv2d(v[0], v[1], p)?;
                project(g, y, seed)
            },
            vec![random(&[2, 4, 7, 7], seed, 3), random(&[6, 2, 3, 3], seed, 4)],
            base,
        )?;
    }
    if wanted("deconv") {
        for stride in [1, 2] {
            run(
                format!("conv_transpose_cropped(stride={stride}, groups=2)"),
                &|g, v| {
                    let y = g.conv_transpose_cropped(v[0], v[1], stride, 2)?;
                    project(g, y, seed)
                },
                vec![random(&[2, 4, 5, 5], seed, 5), random(&[4, 3, 3, 3], seed, 6)],
                base,
            )?;
        }
    }
    let pooled_input = distinct(&[2, 2, 7, 7]);
    if wanted("maxpool") {
        run(
            "maxpool2d(3, 2)".into(),
            &|g, v| {
                let (p, _) = g.maxpool2d(v[0], 3, 2)?;
                project(g, p, seed)
            },
            vec![pooled_input.clone()],
            base,
        )?;
    }
    if wanted("unpool") {
        let mut probe = Graph::<f64>::new();
        let pv = probe.input(pooled_input.clone());
        let (_, map) = probe.maxpool2d(pv, 3, 2)?;
        let pooled_shape = map.output_shape;
        run(
            "unpool2d(indices of maxpool2d(3, 2))".into(),
            &|g, v| {
                let u = g.unpool2d(v[0], &map, map.input_shape)?;
                project(g, u, seed)
            },
            vec![random(&pooled_shape, seed, 7)],
            base,
        )?;
    }
    if wanted("avgpool") {
        run(
            "avgpool2d(3, 2)".into(),
            &|g, v| {
                let a = g.avgpool2d(v[0], 3, 2)?;
                project(g, a, seed)
            },
            vec![random(&[2, 2, 7, 7], seed, 8)],
            base,
        )?;
    }
    if wanted("linear") {
        run(
            "linear + softmax_cross_entropy".into(),
            &|g, v| {
                let y = g.linear(v[0], v[1])?;
                g.softmax_cross_entropy(y, &[4, 0, 2])
            },
            vec![random(&[3, 6], seed, 9), random(&[5, 6], seed, 10)],
            base,
        )?;
    }
    if wanted("relu") {
        // keep inputs away from the kink at zero
        let x = random(&[4, 6], seed, 11).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 });
        run(
            "relu".into(),
            &|g, v| {
                let y = g.relu(v[0])?;
                project(g, y, seed)
            },
            vec![x],
            base,
        )?;
    }
    if wanted("dropout") {
        run(
            "dropout(0.2, training)".into(),
            &|g, v| {
                let y = g.dropout(v[0], 0.2, true, &mut stream_rng(seed, 12))?;
                project(g, y, seed)
            },
            vec![random(&[4, 8], seed, 13)],
            base,
        )?;
    }
    if wanted("concat") {
        run(
            "concat + reshape + rows + combine".into(),
            &|g, v| {
                let c = g.concat_channels(&[v[0], v[1]])?;
                let f = g.flatten(c)?;
                let r = g.rows(f, 1, 3)?;
                let s = g.combine(&[(r, 0.7), (r, -0.2)])?;
                project(g, s, seed)
            },
            vec![random(&[3, 2, 2, 2], seed, 14), random(&[3, 1, 2, 2], seed, 15)],
            base,
        )?;
    }
    if wanted("mse") {
        run("mse".into(), &|g, v| g.mse(v[0], v[1]), vec![random(&[3, 4], seed, 16), random(&[3, 4], seed, 17)], base)?;
    }
    if wanted("mmd") {
        run("mmd(sigma=1.3)".into(), &|g, v| g.mmd(v[0], v[1], 1.3), vec![random(&[4, 3], seed, 18), random(&[5, 3], seed, 19)], base)?;
    }
    if wanted("convm") {
        let cfg = ConvMConfig::new(4, [4, 8, 4, 4, 4, 8, 4, 4, 4]);
        let mut inputs = vec![random(&[2, 4, 6, 6], seed, 20)];
        for (i, slot) in cfg.slots().iter().enumerate() {
            inputs.push(random(&slot.weight_shape(), seed, 21 + i as u64));
        }
        let target = random(&[2, cfg.out_channels(), 6, 6], seed, 40);
        run(
            "conv-m module (all nine weights)".into(),
            &|g, v| {
                let weights: [Var; 9] = v[1..].try_into().map_err(|_| Error::invalid("nine weights"))?;
                let out = forward_with(g, &weights, &cfg, v[0], true, &mut stream_rng(seed, 41))?;
                let t = g.input(target.clone());
                g.mse(out.output, t)
            },
            inputs,
            GradcheckOptions { skip_kinks: true, ..base },
        )?;
    }
    Ok(out)
}
