use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeseg::dataset::Sample;
use shapeseg::grid::{Grid, LabelMap};
use shapeseg::losses::LossSwitches;
use shapeseg::tensor::{grad_check_params, softmax_channel, Tape, Tensor};
use shapeseg::train::sample_loss;
use shapeseg::unet::{predict_labels, NetConfig, UNet};
use shapeseg::Error;

/// Parameter count from the layer list: per stage two 3×3 convs, a 2×2
/// transposed conv per decoder stage, three 1×1 heads.
fn count_oracle(depth: usize, base: usize, classes: usize) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
    let ch = |s: usize| base * (1 << s);
    let mut total = 0;
    let mut cin = 1;
    for s in 0..=depth {
        total += conv(cin, ch(s), 3) + conv(ch(s), ch(s), 3);
        cin = ch(s);
    }
    for s in 0..depth {
        total += ch(s + 1) * ch(s) * 4;
        total += conv(2 * ch(s), ch(s), 3) + conv(ch(s), ch(s), 3);
    }
    total + conv(base, classes, 1) + conv(base, 1, 1) + conv(base, 2, 1)
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(vec![1, h, w], (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn cfg(depth: usize, base: usize, classes: usize) -> NetConfig {
    NetConfig {
        depth,
        base_channels: base,
        num_classes: classes,
    }
}

#[test]
fn default_network_shapes_and_size() {
    let net = UNet::build(NetConfig::default(), 1).unwrap();
    assert_eq!(net.params().scalar_count(), count_oracle(3, 8, 5));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = net.forward(&random_image(64, 64, &mut rng)).unwrap();
    assert_eq!(out.seg_logits.shape(), &[5, 64, 64]);
    assert_eq!(out.dist.shape(), &[1, 64, 64]);
    assert_eq!(out.contour_logits.shape(), &[2, 64, 64]);
    assert!(out.seg_logits.is_finite() && out.dist.is_finite() && out.contour_logits.is_finite());
}

#[test]
fn parameter_count_matches_layer_oracle() {
    assert_eq!(count_oracle(1, 4, 3), 1666);
    for (d, b, l) in [(1, 4, 3), (1, 1, 2), (2, 3, 4), (3, 8, 5), (4, 2, 7)] {
        let net = UNet::build(cfg(d, b, l), 0).unwrap();
        assert_eq!(net.params().scalar_count(), count_oracle(d, b, l), "{d} {b} {l}");
    }
}

#[test]
fn incompatible_inputs_rejected() {
    let net = UNet::build(NetConfig::default(), 1).unwrap();
    for shape in [vec![1, 64, 63], vec![2, 64, 64], vec![64, 64], vec![1, 4, 4]] {
        let n = shape.iter().product();
        let err = net.forward(&Tensor::new(shape.clone(), vec![0.5; n]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InvalidShape(_)), "{shape:?}: {err}");
    }
}

#[test]
fn zero_weights_give_bias_only_logits() {
    let mut net = UNet::build(cfg(2, 4, 4), 3).unwrap();
    for p in net.params_mut().iter_mut() {
        p.value_mut().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let image = random_image(16, 16, &mut rng);
    let out = net.forward(&image).unwrap();
    assert!(out.seg_logits.data().iter().all(|&v| v == 0.0));
    let probs = softmax_channel(&out.seg_logits).unwrap();
    assert!(probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));

    let bias = [0.3, -1.0, 2.0, 0.5];
    let id = net.params().ids().find(|&id| net.params().get(id).name() == "head.seg.bias").unwrap();
    net.params_mut().get_mut(id).value_mut().data_mut().copy_from_slice(&bias);
    let out = net.forward(&image).unwrap();
    for (c, b) in bias.iter().enumerate() {
        assert!(out.seg_logits.data()[c * 256..(c + 1) * 256].iter().all(|v| v == b));
    }
}

#[test]
fn initialization_is_seeded() {
    let a = UNet::build(NetConfig::default(), 9).unwrap();
    let b = UNet::build(NetConfig::default(), 9).unwrap();
    let c = UNet::build(NetConfig::default(), 10).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    for p in a.params().iter().filter(|p| p.name().ends_with(".bias")) {
        assert!(p.value().data().iter().all(|&v| v == 0.0), "{}", p.name());
    }
}

#[test]
fn forward_does_not_depend_on_other_samples_on_the_tape() {
    let net = UNet::build(cfg(2, 4, 5), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (a, b) = (random_image(16, 16, &mut rng), random_image(16, 16, &mut rng));
    let alone = net.forward(&a).unwrap();
    let mut tape = Tape::new();
    let vb = tape.leaf(b);
    net.forward_on_tape(&mut tape, vb).unwrap();
    let va = tape.leaf(a);
    let shared = net.forward_on_tape(&mut tape, va).unwrap();
    assert_eq!(tape.value(shared.seg_logits), &alone.seg_logits);
    assert_eq!(tape.value(shared.dist), &alone.dist);
    assert_eq!(tape.value(shared.contour_logits), &alone.contour_logits);
}

#[test]
fn argmax_matches_oracle_and_is_monotone_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (l, h, w) = (rng.random_range(2..7), rng.random_range(1..9), rng.random_range(1..9));
        // coarse values so ties occur
        let data: Vec<f64> = (0..l * h * w).map(|_| rng.random_range(0..4) as f64).collect();
        let logits = Tensor::new(vec![l, h, w], data.clone()).unwrap();
        let labels = predict_labels(&logits).unwrap();
        for px in 0..h * w {
            let vals: Vec<f64> = (0..l).map(|c| data[c * h * w + px]).collect();
            let max = vals.iter().cloned().fold(f64::MIN, f64::max);
            let first = vals.iter().position(|&v| v == max).unwrap();
            assert_eq!(labels.grid().data()[px] as usize, first);
        }
        let shifted = logits.map(|v| (v * 0.7).exp() + 3.0);
        assert_eq!(predict_labels(&shifted).unwrap(), labels);
    }
}

fn toy_sample(h: usize, w: usize, classes: usize, rng: &mut ChaCha8Rng) -> Sample {
    let mut grid = Grid::filled(h, w, 0u8);
    for y in 1..h / 2 {
        for x in 1..w / 2 {
            grid.set(y, x, 1);
        }
    }
    for y in h / 2..h - 1 {
        for x in w / 2..w - 1 {
            grid.set(y, x, (classes - 1) as u8);
        }
    }
    let labels = LabelMap::new(grid, classes).unwrap();
    Sample::new(0, random_image(h, w, rng), labels).unwrap()
}

#[test]
fn every_branch_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = UNet::build(cfg(2, 4, 3), 2).unwrap();
    let sample = toy_sample(16, 16, 3, &mut rng);
    let grads_for = |switches: LossSwitches| {
        let mut tape = Tape::new();
        let (loss, _) = sample_loss(&mut tape, &net, &sample, switches).unwrap();
        let mut params = net.params().clone();
        params.zero_grad();
        tape.backward(loss).unwrap().accumulate_into(&mut params).unwrap();
        params
    };
    let all = grads_for(LossSwitches::ALL);
    for p in all.iter() {
        assert!(p.grad().max_abs() > 0.0, "{} has no gradient", p.name());
    }
    let seg_only = grads_for(LossSwitches { seg: true, contour: false, dist: false });
    for p in seg_only.iter() {
        let zero = p.grad().max_abs() == 0.0;
        let aux_head = p.name().starts_with("head.dist") || p.name().starts_with("head.contour");
        assert_eq!(zero, aux_head, "{}", p.name());
    }
}

#[test]
fn full_network_gradients_match_finite_differences() {
    // a narrow step keeps the probe on one side of every relu and pooling kink
    let config = cfg(1, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let sample = toy_sample(8, 8, 3, &mut rng);
    let net = UNet::build(config, 21).unwrap();
    let mut params = net.params().clone();
    for p in params.iter_mut() {
        p.value_mut().data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let err = grad_check_params(
        |tape, ps| {
            let model = UNet::from_params(config, 21, ps.clone())?;
            Ok(sample_loss(tape, &model, &sample, LossSwitches::ALL)?.0)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "max relative error {err}");
}
