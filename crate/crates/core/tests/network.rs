mod common;

use std::time::Instant;

use common::{random, rng};
use convm::audit::{self, REFERENCE_COUNTS, REFERENCE_TOTAL};
use convm::gradcheck::{gradcheck, GradcheckOptions};
use convm::layers::convm::{forward_with, CONV_NAMES};
use convm::layers::network::ForwardOptions;
use convm::layers::{Architecture, ConvMConfig, FeatureShape, LayerKind, Model, NetworkSpec};
use convm::{Graph, Tensor};

fn shape(height: usize, width: usize, channels: usize) -> FeatureShape {
    FeatureShape { channels, height, width }
}

/// Output-size column of the reference architecture table.
fn reference_shapes() -> Vec<FeatureShape> {
    vec![
        shape(224, 224, 3),
        shape(224, 224, 64),
        shape(112, 112, 64),
        shape(112, 112, 160),
        shape(56, 56, 160),
        shape(56, 56, 320),
        shape(56, 56, 320),
        shape(28, 28, 320),
        shape(28, 28, 576),
        shape(28, 28, 576),
        shape(14, 14, 576),
        shape(14, 14, 688),
        shape(14, 14, 688),
        shape(1, 1, 688),
        shape(1, 1, 1000),
    ]
}

#[test]
fn reference_shape_propagation_matches_table() {
    assert_eq!(NetworkSpec::reference().shapes().unwrap(), reference_shapes());
}

#[test]
fn reference_forward_at_224_matches_table() {
    let model = Model::<f32>::build(NetworkSpec::reference(), 7).unwrap();
    let start = Instant::now();
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let x = g.input(Tensor::full(&[1, 3, 224, 224], 0.5));
    let out = model.forward(&mut g, &bound, x, ForwardOptions::default(), &mut rng(0)).unwrap();
    let got: Vec<FeatureShape> = out
        .layers
        .iter()
        .map(|&v| {
            let s = g.value(v).shape();
            if s.len() == 4 {
                shape(s[2], s[3], s[1])
            } else {
                shape(1, 1, s[1])
            }
        })
        .collect();
    assert_eq!(got, reference_shapes());
    assert!(start.elapsed().as_secs_f64() < 10.0, "forward took {:?}", start.elapsed());
}

#[test]
fn allocated_census_matches_formula() {
    for spec in [NetworkSpec::reference(), NetworkSpec::tiny(10)] {
        let model = Model::<f32>::build(spec.clone(), 1).unwrap();
        assert_eq!(model.census(), audit::count_network(&spec).unwrap().total);
    }
    assert_eq!(Model::<f32>::build(NetworkSpec::reference(), 1).unwrap().census(), REFERENCE_TOTAL);
}

#[test]
fn reference_audit_is_exact() {
    let report = audit::audit(&NetworkSpec::reference(), &REFERENCE_COUNTS).unwrap();
    assert!(report.passed());
    assert_eq!(report.total, 4_118_080);
    let nonzero: Vec<(usize, u64)> = report.rows.iter().filter(|r| r.computed > 0).map(|r| (r.layer, r.computed)).collect();
    assert_eq!(nonzero, REFERENCE_COUNTS);
}

#[test]
fn single_group_audit_fails_every_conv_m_row() {
    let mut spec = NetworkSpec::reference();
    convm::layers::network::map_conv_m(&mut spec, |c| c.groups = 1);
    let report = audit::audit(&spec, &REFERENCE_COUNTS).unwrap();
    assert!(!report.passed());
    for r in &report.rows {
        if r.kind == "conv-m" {
            assert!(r.diff.unwrap() > 0, "layer {}", r.layer);
        } else if let Some(d) = r.diff {
            assert_eq!(d, 0);
        }
    }
}

#[test]
fn changing_one_projection_moves_one_row() {
    let mut spec = NetworkSpec::reference();
    if let LayerKind::ConvM(c) = &mut spec.layers[3].kind {
        c.c5 = 64;
    }
    let report = audit::audit(&spec, &REFERENCE_COUNTS).unwrap();
    assert_eq!(report.nonzero_diffs(), vec![4]);
}

#[test]
fn audit_without_reference_has_no_diffs() {
    let report = audit::audit(&NetworkSpec::reference(), &[]).unwrap();
    assert!(report.rows.iter().all(|r| r.diff.is_none() && r.reference.is_none()));
    assert!(!report.to_string().contains("diff"));
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("layer,kind,computed,reference,diff\n"));
}

#[test]
fn removing_conv_m_leaves_stem_and_classifier() {
    let mut spec = NetworkSpec::reference();
    spec.layers.retain(|l| !matches!(l.kind, LayerKind::ConvM(_)));
    // Without the modules the channel count reaching the classifier is 64.
    if let LayerKind::Linear { .. } = spec.layers.last().unwrap().kind {
        let report = audit::count_network(&spec).unwrap();
        assert_eq!(report.total, 9_408 + 64 * 1000);
    }
    let stem_and_linear = 9_408 + 688_000;
    let full = audit::count_network(&NetworkSpec::reference()).unwrap();
    let conv_m: u64 = full.rows.iter().filter(|r| r.kind == "conv-m").map(|r| r.computed).sum();
    assert_eq!(full.total - conv_m, stem_and_linear);
}

#[test]
fn solve_groups_recovers_four_on_every_row() {
    let spec = NetworkSpec::reference();
    for (layer, count) in REFERENCE_COUNTS {
        if let LayerKind::ConvM(cfg) = &spec.layer(layer).unwrap().kind {
            assert_eq!(audit::solve_groups(cfg, count).unwrap(), 4, "layer {layer}");
        }
    }
}

#[test]
fn solve_groups_inverts_counting() {
    let base = ConvMConfig::new(64, [64, 64, 64, 64, 64, 64, 32, 32, 32]);
    for g in [1, 2, 4, 8, 16, 32] {
        let cfg = ConvMConfig { groups: g, ..base.clone() };
        let n = audit::count_conv_m(&cfg).unwrap();
        assert_eq!(audit::solve_groups(&base, n).unwrap(), g);
    }
}

#[test]
fn counts_ignore_dilation_and_branch_kind() {
    let spec = NetworkSpec::reference();
    let base = audit::count_network(&spec).unwrap().total;
    let mut dilated = spec.clone();
    convm::layers::network::map_conv_m(&mut dilated, |c| c.dilation = [5, 7]);
    assert_eq!(audit::count_network(&dilated).unwrap().total, base);
    let mut regular = spec.clone();
    convm::layers::network::map_conv_m(&mut regular, |c| c.regular_only = true);
    assert_eq!(audit::count_network(&regular).unwrap().total, base);
    assert_eq!(Model::<f32>::build(regular, 3).unwrap().census(), base);
}

#[test]
fn da_heads_have_expected_weights() {
    let mut model = Model::<f32>::build(NetworkSpec::reference(), 1).unwrap();
    assert!(model.attach_da_heads(31, 256, 10.0, 1).is_err());
    model.strip_classifier().unwrap();
    assert!(model.attach_da_heads(1, 256, 10.0, 1).is_err());
    model.attach_da_heads(31, 256, 10.0, 1).unwrap();
    let fc1 = model.params().by_name("head.fc1").unwrap();
    let fc2 = model.params().by_name("head.fc2").unwrap();
    assert_eq!((fc1.value.len(), fc2.value.len()), (688 * 256, 256 * 31));
    assert_eq!((fc1.lr_mult, fc2.lr_mult), (10.0, 10.0));
    assert_eq!(model.census(), REFERENCE_TOTAL - 688_000 + 688 * 256 + 256 * 31);
}

#[test]
fn decoders_return_to_input_shape() {
    let mut model = Model::<f32>::build(NetworkSpec::reference(), 1).unwrap();
    model.strip_classifier().unwrap();
    model.attach_da_heads(10, 256, 10.0, 1).unwrap();
    model.attach_decoders(10.0, 1).unwrap();
    let arch = model.architecture();
    let [d1, d2] = [&arch.decoders[0], &arch.decoders[1]];
    assert_eq!((d1.tap, d2.tap), (13, 10));
    assert_eq!(d1.stages.iter().map(|s| s.pool).collect::<Vec<_>>(), vec![11, 8, 5, 3]);
    let input = shape(224, 224, 3);
    assert_eq!(*arch.decoder_shapes(d1).unwrap().last().unwrap(), input);
    let d2_shapes = arch.decoder_shapes(d2).unwrap();
    assert_eq!(*d2_shapes.last().unwrap(), input);
    let unpooled: Vec<usize> = d2_shapes.iter().skip(1).step_by(2).take(d2.stages.len()).map(|s| s.height).collect();
    assert_eq!(unpooled, vec![56, 112, 224]);
    let encoder_layers = arch.network.layers.len() - 1;
    for d in &arch.decoders {
        assert!(d.layer_count() < encoder_layers);
    }
}

#[test]
fn tiny_forward_with_heads_and_decoders() {
    let mut model = Model::<f32>::build(NetworkSpec::tiny(10), 3).unwrap();
    model.strip_classifier().unwrap();
    model.attach_da_heads(10, 256, 10.0, 3).unwrap();
    model.attach_decoders(10.0, 3).unwrap();
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let x = g.input(random(&[5, 3, 32, 32], 4).cast());
    let out = model.forward(&mut g, &bound, x, ForwardOptions { training: true, decoders: true }, &mut rng(1)).unwrap();
    assert_eq!(g.value(out.output).shape(), &[5, 10]);
    assert_eq!(out.reconstructions.len(), 2);
    for r in &out.reconstructions {
        assert_eq!(g.value(*r).shape(), &[5, 3, 32, 32]);
    }
    model.strip_decoders();
    assert!(model.params().iter().all(|p| !p.name.starts_with('d')));
}

#[test]
fn missing_indices_are_reported() {
    let spec = NetworkSpec::tiny(10);
    let mut arch = Architecture::new(spec);
    arch.network.layers.pop();
    let taps = convm::layers::network::default_decoder_taps(&arch.network).unwrap();
    let mut dec = convm::layers::DecoderSpec::for_tap(taps[0].0, &arch.network, taps[0].1, 10.0).unwrap();
    dec.stages[0].pool = 5;
    assert!(arch.decoder_shapes(&dec).is_err());
}

#[test]
fn conv_m_preserves_size_and_zero_maps_to_zero() {
    let cfg = ConvMConfig::new(8, [8, 8, 8, 8, 8, 8, 4, 4, 4]);
    let spec = NetworkSpec {
        name: "one".into(),
        layers: vec![LayerKind::Input { height: 7, width: 9, channels: 8 }.into(), LayerKind::ConvM(cfg).into()],
    };
    let model = Model::<f64>::build(spec, 5).unwrap();
    let y = model.predict(&Tensor::zeros(&[2, 8, 7, 9])).unwrap();
    assert_eq!(y.shape(), &[2, 20, 7, 9]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn serialized_spec_rebuilds_identically() {
    let mut model = Model::<f32>::build(NetworkSpec::tiny(10), 9).unwrap();
    model.strip_classifier().unwrap();
    model.attach_da_heads(10, 256, 10.0, 9).unwrap();
    model.attach_decoders(10.0, 9).unwrap();
    let json = serde_json::to_string(model.architecture()).unwrap();
    let arch: Architecture = serde_json::from_str(&json).unwrap();
    assert_eq!(arch.hash(), model.architecture().hash());
    let rebuilt = Model::<f32>::from_architecture(arch, 9).unwrap();
    assert_eq!(rebuilt.census(), model.census());
    assert_eq!(rebuilt.params(), model.params());
}

#[test]
fn frozen_layers_get_zero_multiplier() {
    let mut spec = NetworkSpec::tiny(10);
    spec.layers[1].freeze = true;
    let model = Model::<f32>::build(spec, 1).unwrap();
    assert_eq!(model.params().by_name("l2.w").unwrap().lr_mult, 0.0);
    assert!(model.params().iter().filter(|p| p.name != "l2.w").all(|p| p.lr_mult == 1.0));
}

#[test]
fn gradcheck_full_conv_m_module() {
    let cfg = ConvMConfig { dilation: [2, 3], ..ConvMConfig::new(4, [4, 8, 4, 4, 4, 8, 4, 4, 4]) };
    let mut inputs = vec![random(&[2, 4, 6, 6], 11)];
    for (i, slot) in cfg.slots().iter().enumerate() {
        inputs.push(random(&slot.weight_shape(), 20 + i as u64));
    }
    let target = random(&[2, cfg.out_channels(), 6, 6], 99);
    let report = gradcheck(
        |g, v| {
            let weights: [_; 9] = v[1..].try_into().unwrap();
            let out = forward_with(g, &weights, &cfg, v[0], true, &mut rng(5))?;
            let t = g.input(target.clone());
            g.mse(out.output, t)
        },
        &inputs,
        GradcheckOptions { eps: 1e-5, skip_kinks: true, ..Default::default() },
    )
    .unwrap();
    assert_eq!(report.per_input.len(), 1 + CONV_NAMES.len());
    assert!(report.passed, "max relative error {:e}: {:?}", report.max_rel_error, report.per_input);
}
