mod common;

use common::{brute_median, brute_mmd, random, rng, rows_of};
use convm::da::data::{make_batch, stream_rng, DomainSampler, EpochSampler};
use convm::da::mmd::{median_bandwidth, mmd_biased};
use convm::da::{
    da_loss, da_loss_with_bandwidths, evaluate, prepare_da_model, sampling_ratio, train_da, train_supervised, DAConfig, Dataset,
    DomainBatch, SolverConfig,
};
use convm::layers::{LayerKind, Model, NetworkSpec};
use convm::{Graph, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn toy_domain(n: usize, classes: usize, seed: u64, offset: f32) -> Dataset {
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let images = labels
        .iter()
        .flat_map(|&l| {
            let mut img: Vec<f32> = (0..3 * 32 * 32).map(|_| r.random_range(-0.5..0.5) + offset).collect();
            img[l * 7] += 3.0;
            img
        })
        .collect();
    Dataset::new([3, 32, 32], images, labels).unwrap()
}

fn solver(steps: usize, batch: usize, seed: u64) -> SolverConfig {
    SolverConfig { max_steps: steps, batch, seed, ..Default::default() }
}

#[test]
fn ratio_schedule_endpoints_and_midpoint_are_exact() {
    assert_eq!(sampling_ratio(0, 1000, 0.3, 0.7).unwrap(), 0.3);
    assert_eq!(sampling_ratio(1000, 1000, 0.3, 0.7).unwrap(), 0.7);
    assert_eq!(sampling_ratio(500, 1000, 0.3, 0.7).unwrap(), 0.5);
    for step in 0..=1000 {
        let r = sampling_ratio(step, 1000, 0.3, 0.7).unwrap();
        let linear = 0.3 + 0.4 * step as f64 / 1000.0;
        assert!((r - linear).abs() <= 2.0 * f64::EPSILON, "step {step}");
    }
    assert!(sampling_ratio(1001, 1000, 0.3, 0.7).is_err());
}

#[test]
fn batches_split_by_ratio_and_tag_domains() {
    let (s, t) = (toy_domain(100, 4, 1, 0.0), toy_domain(100, 4, 2, 1.0));
    let mut sampler = DomainSampler::new(s.len(), t.len(), 3);
    let b: DomainBatch<f32> = make_batch(&s, &t, &mut sampler, 64, 0.3).unwrap();
    assert_eq!((b.source_count, b.target_count), (45, 19));
    assert_eq!(b.len(), 64);
    assert_eq!(b.images.shape(), &[64, 3, 32, 32]);
    assert_eq!(b.labels.len(), 45);
    assert_eq!(b.domains().iter().filter(|&&d| d == 1).count(), 19);
    assert!(!b.with_replacement);
    assert!(make_batch::<f32>(&s, &t, &mut sampler, 64, 1.0).is_err());
}

#[test]
fn epoch_sampler_draws_without_replacement() {
    let mut s = EpochSampler::new(10, stream_rng(0, 1));
    let (a, _) = s.draw(6);
    let (b, _) = s.draw(4);
    let mut all: Vec<usize> = a.into_iter().chain(b).collect();
    all.sort();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    let (_, replaced) = s.draw(11);
    assert!(replaced);
}

#[test]
fn median_bandwidth_matches_sorted_pairs() {
    let x = random(&[50, 8], 3);
    let got = median_bandwidth(x.data(), 50, 8).unwrap();
    assert!((got - brute_median(&rows_of(&x))).abs() < 1e-12);
}

#[test]
fn mmd_matches_double_loop_on_twenty_instances() {
    for i in 0..20 {
        let s = random(&[6, 5], 100 + i);
        let t = random(&[6, 5], 200 + i);
        let sigma = 0.5 + i as f64 * 0.1;
        let got = mmd_biased(s.data(), 6, t.data(), 6, 5, sigma);
        assert!((got - brute_mmd(&rows_of(&s), &rows_of(&t), sigma)).abs() < 1e-10);
    }
}

proptest! {
    #[test]
    fn mmd_is_zero_on_self_symmetric_and_nonnegative(
        ns in 1usize..8, nt in 1usize..8, d in 1usize..6, seed in 0u64..1000, sigma in 0.1f64..3.0,
    ) {
        let s = random(&[ns, d], seed);
        let t = random(&[nt, d], seed + 1);
        prop_assert_eq!(mmd_biased(s.data(), ns, s.data(), ns, d, sigma), 0.0);
        let st = mmd_biased(s.data(), ns, t.data(), nt, d, sigma);
        let ts = mmd_biased(t.data(), nt, s.data(), ns, d, sigma);
        prop_assert_eq!(st.to_bits(), ts.to_bits());
        prop_assert!(st > 0.0);
    }

    #[test]
    fn mmd_ignores_a_common_feature_permutation(seed in 0u64..1000) {
        let (ns, nt, d) = (5, 4, 6);
        let s = random(&[ns, d], seed);
        let t = random(&[nt, d], seed + 7);
        let perm = [3, 0, 5, 1, 4, 2];
        let permute = |x: &Tensor<f64>, n: usize| -> Vec<f64> {
            (0..n).flat_map(|r| perm.iter().map(move |&c| (r, c))).map(|(r, c)| x.data()[r * d + c]).collect()
        };
        let a = mmd_biased(s.data(), ns, t.data(), nt, d, 1.1);
        let b = mmd_biased(&permute(&s, ns), ns, &permute(&t, nt), nt, d, 1.1);
        prop_assert!((a - b).abs() < 1e-14);
    }
}

fn da_model_f64(cfg: &DAConfig, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::build(NetworkSpec::tiny(4), seed).unwrap();
    prepare_da_model(&mut m, cfg, 4, seed).unwrap();
    m
}

fn small_batch(seed: u64, ns: usize, nt: usize) -> DomainBatch<f64> {
    let s = toy_domain(ns, 4, seed, 0.0);
    let t = toy_domain(nt, 4, seed + 1, 0.7);
    let idx_s: Vec<usize> = (0..ns).collect();
    let idx_t: Vec<usize> = (0..nt).collect();
    let images = Tensor::stack_outer(&[&s.gather(&idx_s).unwrap(), &t.gather(&idx_t).unwrap()]).unwrap();
    DomainBatch { images, labels: s.labels, source_count: ns, target_count: nt, with_replacement: false }
}

#[test]
fn full_ablation_total_is_exactly_cross_entropy() {
    let cfg = DAConfig { no_gmmd: true, no_recons: true, ..Default::default() };
    let model = da_model_f64(&cfg, 1);
    let batch = small_batch(2, 4, 3);
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let loss = da_loss(&model, &mut g, &bound, &batch, &cfg, true, &mut rng(0)).unwrap();
    assert_eq!(loss.components.total.to_bits(), loss.components.ce.to_bits());
    assert!(loss.components.mmd.iter().all(Option::is_none));
    assert!(loss.components.recon.iter().all(Option::is_none));
}

#[test]
fn identical_domains_have_zero_discrepancy() {
    let cfg = DAConfig::default();
    let model = da_model_f64(&cfg, 3);
    let half = small_batch(4, 4, 1);
    let src = half.images.slice_outer(0, 4).unwrap();
    let batch = DomainBatch {
        images: Tensor::stack_outer(&[&src, &src]).unwrap(),
        labels: half.labels.clone(),
        source_count: 4,
        target_count: 4,
        with_replacement: false,
    };
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let loss = da_loss(&model, &mut g, &bound, &batch, &cfg, false, &mut rng(0)).unwrap();
    assert_eq!(loss.components.mmd.len(), 3);
    for m in loss.components.mmd {
        assert!(m.unwrap().abs() < 1e-12);
    }
}

#[test]
fn zero_source_rows_is_an_error() {
    let cfg = DAConfig::default();
    let model = da_model_f64(&cfg, 3);
    let mut batch = small_batch(4, 2, 2);
    batch.source_count = 0;
    batch.target_count = 4;
    batch.labels.clear();
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    assert!(da_loss(&model, &mut g, &bound, &batch, &cfg, true, &mut rng(0)).is_err());
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let cfg = DAConfig::default();
    let model = da_model_f64(&cfg, 5);
    let batch = small_batch(6, 3, 3);
    let run = |m: &Model<f64>, sigmas: Option<&[f64]>| {
        let mut g = Graph::new();
        let bound = m.params().bind(&mut g, true);
        let loss = da_loss_with_bandwidths(m, &mut g, &bound, &batch, &cfg, true, sigmas, &mut rng(9)).unwrap();
        g.backward(loss.total).unwrap();
        let grads = m.params().collect_grads(&mut g, &bound);
        (loss.components, grads)
    };
    let (base, grads) = run(&model, None);
    let sigmas: Vec<f64> = base.sigma.iter().map(|s| s.unwrap()).collect();
    assert!(base.mmd.iter().all(Option::is_some) && base.recon.iter().all(Option::is_some));
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for name in ["l12.c3", "l10.dec2", "l9.dic1", "head.fc1", "d1.s0", "d2.out"] {
        let i = model.params().position(name).unwrap();
        let analytic = grads[i].as_ref().unwrap();
        for e in (0..analytic.len()).step_by(analytic.len() / 5 + 1) {
            let mut plus = model.clone();
            plus.params_mut().get_mut(i).value.data_mut()[e] += eps;
            let mut minus = model.clone();
            minus.params_mut().get_mut(i).value.data_mut()[e] -= eps;
            let fp = run(&plus, Some(&sigmas)).0.total;
            let fm = run(&minus, Some(&sigmas)).0.total;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.data()[e];
            // The total sums thousands of terms, so differences carry ~1e-10
            // absolute roundoff; gradients below 1e-4 are compared absolutely.
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn frozen_layers_do_not_move_and_decoders_are_dropped() {
    let (s, t) = (toy_domain(40, 4, 1, 0.0), toy_domain(40, 4, 2, 0.5));
    let cfg = DAConfig::default();
    let mut model = Model::<f32>::build(NetworkSpec::tiny(4), 1).unwrap();
    prepare_da_model(&mut model, &cfg, 4, 1).unwrap();
    let frozen: Vec<_> = model.params().iter().filter(|p| p.lr_mult == 0.0).cloned().collect();
    let frozen_layers = cfg.frozen_layers(model.spec());
    assert_eq!(frozen_layers.len(), 4);
    assert!(matches!(model.spec().layer(frozen_layers[0]).unwrap().kind, LayerKind::Conv { .. }));
    assert_eq!(frozen.len(), 1 + 3 * 9);
    let trained = train_da(model.clone(), &s, &t, &cfg, &solver(100, 8, 1), |_| {}).unwrap();
    for p in &frozen {
        let after = trained.model.params().by_name(&p.name).unwrap();
        let same = p.value.data().iter().zip(after.value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{} moved", p.name);
    }
    let moved = trained.model.params().by_name("head.fc2").unwrap();
    assert_ne!(moved.value, model.params().by_name("head.fc2").unwrap().value);
    assert!(trained.model.architecture().decoders.is_empty());
    assert!(trained.model.params().iter().all(|p| !p.name.starts_with("d1.") && !p.name.starts_with("d2.")));
    assert_eq!(trained.history.rows.len(), 100);
    assert!(trained.history.rows.iter().all(|r| r.loss.mmd.len() == 3 && r.loss.recon.len() == 2));
}

#[test]
fn ablated_da_follows_supervised_trajectory() {
    let (s, t) = (toy_domain(30, 4, 3, 0.0), toy_domain(30, 4, 4, 0.5));
    let cfg = DAConfig { no_gmmd: true, no_recons: true, ..Default::default() };
    let mut model = Model::<f32>::build(NetworkSpec::tiny(4), 7).unwrap();
    prepare_da_model(&mut model, &cfg, 4, 7).unwrap();
    let sol = solver(25, 8, 7);
    let da = train_da(model.clone(), &s, &t, &cfg, &sol, |_| {}).unwrap();
    let sup = train_supervised(model, &s, &sol, |_| {}).unwrap();
    assert_eq!(da.model.params(), sup.model.params());
    for (a, b) in da.history.rows.iter().zip(&sup.history.rows) {
        assert_eq!(a.loss.total.to_bits(), b.loss.total.to_bits());
    }
}

#[test]
fn metrics_csv_has_fixed_columns() {
    let (s, t) = (toy_domain(20, 4, 3, 0.0), toy_domain(20, 4, 4, 0.5));
    let out = train_da(Model::<f32>::build(NetworkSpec::tiny(4), 2).unwrap(), &s, &t, &DAConfig::default(), &solver(2, 8, 2), |_| {}).unwrap();
    let mut buf = Vec::new();
    out.history.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,lr,ratio,loss_total,loss_ce,loss_mmd_tap1,loss_mmd_tap2,loss_mmd_tap3,loss_recon_d1,loss_recon_d2"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!((first[0], first[1], first[2]), ("0", "0.0009", "0.3"));
    assert!(first.iter().all(|f| !f.is_empty()));
}

#[test]
fn evaluation_edge_cases() {
    let model = Model::<f32>::build(NetworkSpec::tiny(4), 1).unwrap();
    let empty = Dataset::new([3, 32, 32], Vec::new(), Vec::new()).unwrap();
    assert!(evaluate(&model, &empty, 16).is_err());
    let one = toy_domain(1, 4, 1, 0.0);
    let acc = evaluate(&model, &one, 16).unwrap();
    assert!(acc == 0.0 || acc == 1.0);
}

#[test]
fn untrained_model_is_near_chance() {
    let k = 4;
    let data = toy_domain(400, k, 8, 0.0);
    let model = Model::<f32>::build(NetworkSpec::tiny(k), 8).unwrap();
    let acc = evaluate(&model, &data, 200).unwrap();
    let p = 1.0 / k as f64;
    let sigma = (p * (1.0 - p) / data.len() as f64).sqrt();
    assert!((acc - p).abs() <= 3.0 * sigma + 1e-12, "accuracy {acc}");
}

#[test]
fn separable_toy_set_is_learned_perfectly() {
    let spec = NetworkSpec {
        name: "toy".into(),
        layers: vec![
            LayerKind::Input { height: 4, width: 4, channels: 3 }.into(),
            LayerKind::Conv { out_channels: 4, kernel: 1, stride: 1, padding: 0 }.into(),
            LayerKind::AvgPool { kernel: 4, stride: 1 }.into(),
            LayerKind::Linear { out_features: 2 }.into(),
        ],
    };
    let mut r = rng(4);
    let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let images: Vec<f32> = labels
        .iter()
        .flat_map(|&l| {
            let mut img = vec![0f32; 48];
            for (i, v) in img.iter_mut().enumerate() {
                let sign = if l == 0 { 1.0 } else { -1.0 };
                *v = if i < 16 { sign } else { 0.0 } + r.random_range(-0.1..0.1);
            }
            img
        })
        .collect();
    let data = Dataset::new([3, 4, 4], images, labels).unwrap();
    let model = Model::<f32>::build(spec, 4).unwrap();
    let sol = SolverConfig { max_steps: 300, batch: 10, seed: 4, base_lr: 0.05, ..Default::default() };
    let trained = train_supervised(model, &data, &sol, |_| {}).unwrap();
    assert_eq!(evaluate(&trained.model, &data, 40).unwrap(), 1.0);
}
