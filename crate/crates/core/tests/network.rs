use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpfnet_core::losses::{loss_total, BatchMasks, LossConfig, LossInputs};
use rpfnet_core::network::{BnMode, FdfmMode, ForwardOptions, Group, Model, ModelConfig};
use rpfnet_core::{Graph, Shape, Tensor};

fn random(rng: &mut impl Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random::<f64>())
}

/// Parameter inventory written out layer by layer.
fn inventory(c: usize, stages: usize, reduction: usize, rates: usize) -> usize {
    let conv = |cin: usize, cout: usize, k: usize, bias: bool| cout * cin * k * k + if bias { cout } else { 0 };
    let cb = |cin: usize, cout: usize, k: usize| conv(cin, cout, k, true) + 2 * cout;
    let h = (c / reduction).max(1);
    let cpm = 2 * cb(c, c, 3);
    let rpm = conv(c, h, 1, false) + conv(h, c, 1, false) + conv(2, 1, 7, false) + rates * conv(c, c, 3, true);
    let fdfm = cb(c, c, 3) + cb(2 * c, 2 * c, 1);
    let head = cb(c, c, 3) + cb(c, 1, 3);
    let decoder = 2 * cb(c, c, 3) + conv(c, 1, 1, true);
    cb(2, c, 3) + cb(1, c, 3) + stages * (cpm + rpm + fdfm) + head + decoder
}

#[test]
fn census_matches_the_layer_inventory() {
    let m = Model::new(ModelConfig::default(), 0).unwrap();
    assert_eq!(m.param_count(), inventory(32, 3, 8, 3));
    assert_eq!(m.param_count(), 210_282);
    assert_eq!(m.census().iter().map(|(_, n)| n).sum::<usize>(), m.param_count());
    let decoder: usize = m.params().iter().filter(|p| p.group == Group::Decoder).map(|p| p.value.len()).sum();
    assert_eq!(decoder, 2 * (32 * 32 * 9 + 3 * 32) + 33);
}

#[test]
fn default_depth_is_three() {
    assert_eq!(ModelConfig::default().stages, 3);
}

#[test]
fn shapes_are_preserved_for_assorted_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = ModelConfig { channels: 8, stages: 2, ..ModelConfig::default() };
    let model = Model::new(cfg, 1).unwrap();
    for _ in 0..4 {
        let (h, w) = (rng.random_range(16..=64), rng.random_range(16..=64));
        let s = Shape::new(1, 1, h, w);
        let (ir, vis) = (random(&mut rng, s), random(&mut rng, s));
        let mut g = Graph::new();
        let bound = model.bind_frozen(&mut g);
        let (i, v) = (g.constant(ir), g.constant(vis));
        let out = model.forward(&mut g, &bound, i, v, ForwardOptions { bn: BnMode::Train, ..ForwardOptions::train() }).unwrap();
        assert_eq!(g.shape(out.fused), s);
        assert_eq!(g.shape(out.aux_residual.unwrap()), s);
        assert_eq!(g.shape(out.features.fusion), s.with_c(8));
        let f = g.value(out.fused);
        assert!(f.data().iter().all(|&x| x > 0.0 && x < 1.0));
        let m = g.value(out.aux_residual.unwrap());
        assert!(m.data().iter().all(|&x| (-1.0..=1.0).contains(&x)));
    }
}

#[test]
fn zeroed_parameters_give_half_and_zero_residual_estimate() {
    let mut model = Model::new(ModelConfig { channels: 4, stages: 2, ..ModelConfig::default() }, 3).unwrap();
    model.zero_all();
    let s = Shape::new(1, 1, 12, 10);
    let mut g = Graph::new();
    let bound = model.bind_frozen(&mut g);
    let (i, v) = (g.constant(Tensor::zeros(s)), g.constant(Tensor::zeros(s)));
    let out = model
        .forward(&mut g, &bound, i, v, ForwardOptions { bn: BnMode::Identity, with_decoder: true, detach_decoder_input: false })
        .unwrap();
    assert!(g.value(out.fused).data().iter().all(|&x| x == 0.5));
    assert!(g.value(out.aux_residual.unwrap()).data().iter().all(|&x| x == 0.0));
}

#[test]
fn disabled_residual_branch_ignores_the_residual_map() {
    let cfg = ModelConfig { channels: 4, stages: 2, use_residual_branch: false, ..ModelConfig::default() };
    let model = Model::new(cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = Shape::new(1, 1, 16, 16);
    let (ir, vis) = (random(&mut rng, s), random(&mut rng, s));
    let run = |m: Tensor| {
        let mut g = Graph::new();
        let bound = model.bind_frozen(&mut g);
        let (i, v, r) = (g.constant(ir.clone()), g.constant(vis.clone()), g.constant(m));
        let out = model.forward_with_residual(&mut g, &bound, i, v, Some(r), ForwardOptions::inference()).unwrap();
        g.value(out.fused).clone()
    };
    assert_eq!(run(Tensor::zeros(s)), run(random(&mut rng, s)));
}

#[test]
fn disabled_cpm_leaves_features_to_the_other_modules() {
    let on = Model::new(ModelConfig { channels: 4, stages: 1, ..ModelConfig::default() }, 2).unwrap();
    let off = Model::new(ModelConfig { channels: 4, stages: 1, use_cpm: false, ..ModelConfig::default() }, 2).unwrap();
    assert!(on.params().iter().any(|p| p.name.contains(".cpm.")));
    assert!(!off.params().iter().any(|p| p.name.contains(".cpm.")));
    let attn = Model::new(ModelConfig { channels: 4, stages: 1, fdfm_mode: FdfmMode::TransformerSub, ..ModelConfig::default() }, 2);
    assert!(attn.unwrap().params().iter().any(|p| p.name.contains("attn")));
}

#[test]
fn saliency_loss_reaches_the_decoder() {
    let model = Model::new(ModelConfig { channels: 4, stages: 1, ..ModelConfig::default() }, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let s = Shape::new(2, 1, 16, 16);
    let (ir, vis) = (random(&mut rng, s), random(&mut rng, s));
    let masks = BatchMasks::compute(&ir, &vis).unwrap();
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let (i, v) = (g.constant(ir), g.constant(vis));
    let out = model.forward(&mut g, &bound, i, v, ForwardOptions::train()).unwrap();
    let inputs = LossInputs { fused: out.fused, aux_residual: out.aux_residual, ir: i, vis_y: v, masks: &masks };
    let loss = loss_total(&mut g, inputs, &LossConfig::default()).unwrap();
    let grads = g.backward(loss.vars.l_ss.unwrap());
    let per_param = bound.collect(&grads, &model);
    for (p, gr) in model.params().iter().zip(&per_param) {
        if p.group == Group::Decoder && p.name.ends_with("weight") {
            assert!(gr.max_abs() > 0.0, "{}", p.name);
        }
    }
}
