use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfmd_core::cnn::{
    evaluate, softmax, train, Architecture, Dataset, LayerSpec, Network, Optimizer, Tensor,
    TrainConfig,
};
use tfmd_core::Error;

fn tiny_arch() -> Architecture {
    Architecture {
        input: [3, 8, 8],
        layers: vec![
            LayerSpec::Conv2d {
                kernel: 3,
                c_in: 3,
                c_out: 4,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool,
            LayerSpec::Conv2d {
                kernel: 3,
                c_in: 4,
                c_out: 4,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool,
            LayerSpec::Flatten,
            LayerSpec::Dense { n_in: 16, n_out: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { n_in: 6, n_out: 2 },
            LayerSpec::Softmax,
        ],
    }
}

fn random_batch(b: usize, shape: [usize; 3], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = b * shape.iter().product::<usize>();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![b, shape[0], shape[1], shape[2]], data).unwrap()
}

#[test]
fn zero_network_gives_zero_logits_and_uniform_probabilities() {
    let net = Network::<f64>::zeros(Architecture::default_for_images()).unwrap();
    let x = Tensor::zeros(vec![1, 3, 64, 64]);
    let logits = net.forward(&x).unwrap();
    assert_eq!(logits.shape(), &[1, 5]);
    assert!(logits.data().iter().all(|&v| v == 0.0));
    let p = net.predict(&x).unwrap();
    assert!(p[0].probabilities.iter().all(|&q| (q - 0.2).abs() < 1e-15));
    assert_eq!(p[0].label, 0);
}

#[test]
fn batch_forward_matches_single_forwards() {
    let net = Network::<f64>::new(Architecture::default_for_images(), 3).unwrap();
    let x = random_batch(2, [3, 64, 64], 11);
    let both = net.forward(&x).unwrap();
    for s in 0..2 {
        let one = Tensor::new(vec![1, 3, 64, 64], x.item(s).to_vec()).unwrap();
        let single = net.forward(&one).unwrap();
        for (a, b) in both.item(s).iter().zip(single.data()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn loss_closed_forms() {
    // Only the last dense layer matters: zero everything, then set biases.
    let arch = tiny_arch();
    let mut net = Network::<f64>::zeros(arch.clone()).unwrap();
    let x = random_batch(3, [3, 8, 8], 1);
    let lg = net.loss_and_grad(&x, &[0, 1, 1]).unwrap();
    assert!((lg.loss - 2f64.ln()).abs() < 1e-15);

    let five = Network::<f64>::zeros(Architecture::compact(3, 8, 8, 5)).unwrap();
    let lg = five
        .loss_and_grad(&random_batch(2, [3, 8, 8], 2), &[3, 4])
        .unwrap();
    assert!((lg.loss - 5f64.ln()).abs() < 1e-15);
    assert!((lg.loss - 1.6094).abs() < 1e-4);

    // saturated correct logits
    let last = arch.layers.len() - 2;
    let range = net.layer_range(last);
    let bias = range.end - 2;
    net.params_mut()[bias] = 1e6;
    let lg = net.loss_and_grad(&x, &[0, 0, 0]).unwrap();
    assert!(lg.loss < 1e-6);
    // saturated wrong logits are clamped, not infinite
    let lg = net.loss_and_grad(&x, &[1, 1, 1]).unwrap();
    assert!((lg.loss - (-(1e-12f64).ln())).abs() < 1e-9);
}

#[test]
fn bad_inputs_are_rejected() {
    let net = Network::<f64>::new(tiny_arch(), 0).unwrap();
    let wrong = Tensor::<f64>::zeros(vec![1, 3, 8, 4]);
    assert!(matches!(
        net.forward(&wrong),
        Err(Error::ShapeMismatch { .. })
    ));
    let mut x = random_batch(1, [3, 8, 8], 0);
    assert!(net.loss_and_grad(&x, &[2]).is_err());
    assert!(net.loss_and_grad(&x, &[0, 1]).is_err());
    x.data_mut()[5] = f64::NAN;
    assert!(matches!(net.forward(&x), Err(Error::NonFinite(_))));
    let mut huge = Network::<f64>::new(tiny_arch(), 0).unwrap();
    huge.params_mut().iter_mut().for_each(|p| *p *= 1e200);
    let x = random_batch(1, [3, 8, 8], 4);
    assert!(matches!(huge.forward(&x), Err(Error::NonFinite(_))));
}

/// Central finite differences over every parameter of every layer.
#[test]
fn gradients_match_finite_differences() {
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let mut net = Network::<f64>::new(tiny_arch(), seed).unwrap();
        // non-zero biases so bias paths are exercised away from ReLU kinks
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for i in 0..net.architecture().layers.len() {
            let (nw, nb) = net.architecture().layers[i].param_counts();
            let r = net.layer_range(i);
            for p in &mut net.params_mut()[r.start + nw..r.start + nw + nb] {
                *p = rng.gen_range(-0.1..0.1);
            }
        }
        let x = random_batch(4, [3, 8, 8], 7 + seed);
        let labels = [0, 1, 1, 0];
        let analytic = net.loss_and_grad(&x, &labels).unwrap().grads;
        for layer in 0..net.architecture().layers.len() {
            for j in net.layer_range(layer) {
                let orig = net.params()[j];
                net.params_mut()[j] = orig + eps;
                let up = net.loss_and_grad(&x, &labels).unwrap().loss;
                net.params_mut()[j] = orig - eps;
                let down = net.loss_and_grad(&x, &labels).unwrap().loss;
                net.params_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[j];
                let scale = a.abs().max(numeric.abs()).max(1e-6);
                let rel = (a - numeric).abs() / scale;
                assert!(
                    rel < 1e-4,
                    "layer {layer} param {j}: analytic {a:e}, numeric {numeric:e}"
                );
                worst = worst.max(rel);
            }
        }
    }
    eprintln!("worst relative gradient error {worst:e}");
}

fn toy_set(n: usize, seed: u64) -> (Vec<f32>, Vec<usize>) {
    // class decided by which half of the image is brighter
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = i % 2;
        for _c in 0..3 {
            for y in 0..8 {
                for _x in 0..8 {
                    let bright = (y < 4) == (label == 0);
                    let base = if bright { 0.7 } else { 0.3 };
                    images.push(base + rng.gen_range(-0.2f32..0.2));
                }
            }
        }
        labels.push(label);
    }
    (images, labels)
}

#[test]
fn overfits_a_separable_toy_set() {
    let (images, labels) = toy_set(50, 9);
    let data = Dataset::new([3, 8, 8], &images, &labels).unwrap();
    let mut net = Network::<f32>::new(tiny_arch(), 5).unwrap();
    let idx: Vec<usize> = (0..50).collect();
    let cfg = TrainConfig {
        batch_size: 10,
        epochs: 30,
        seed: 1,
        ..TrainConfig::default()
    };
    let hist = train(&mut net, &data, &idx, &[], &cfg).unwrap();
    assert_eq!(hist.epochs.len(), 30);
    let (_, acc) = evaluate(&net, &data, &idx, 16).unwrap();
    assert_eq!(acc, 1.0, "final train accuracy {acc}");
    assert!(hist.epochs.last().unwrap().train_loss < hist.epochs[0].train_loss);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (images, labels) = toy_set(20, 3);
    let data = Dataset::new([3, 8, 8], &images, &labels).unwrap();
    for optimizer in [Optimizer::Sgd, Optimizer::ADAM] {
        let mut net = Network::<f32>::new(tiny_arch(), 2).unwrap();
        let before = net.params().to_vec();
        let idx: Vec<usize> = (0..20).collect();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 4,
            epochs: 3,
            seed: 0,
            optimizer,
        };
        train(&mut net, &data, &idx, &idx, &cfg).unwrap();
        assert_eq!(net.params(), before.as_slice());
    }
    assert!(TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn training_is_deterministic() {
    let (images, labels) = toy_set(30, 4);
    let data = Dataset::new([3, 8, 8], &images, &labels).unwrap();
    let idx: Vec<usize> = (0..24).collect();
    let val: Vec<usize> = (24..30).collect();
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 4,
        seed: 77,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = Network::<f32>::new(tiny_arch(), 8).unwrap();
        let h = train(&mut net, &data, &idx, &val, &cfg).unwrap();
        (h, net.params().to_vec())
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(
        p1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        p2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert!(h1.epochs.iter().all(|r| r.val_acc.is_some()));
}

#[test]
fn validation_samples_do_not_affect_training() {
    let (mut images, labels) = toy_set(30, 6);
    let idx: Vec<usize> = (0..24).collect();
    let val: Vec<usize> = (24..30).collect();
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 3,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = |images: &[f32]| {
        let data = Dataset::new([3, 8, 8], images, &labels).unwrap();
        let mut net = Network::<f32>::new(tiny_arch(), 1).unwrap();
        let h = train(&mut net, &data, &idx, &val, &cfg).unwrap();
        (h, net.params().to_vec())
    };
    let (clean, pc) = run(&images);
    for v in &mut images[24 * 192..] {
        *v = 1e3;
    }
    let (poisoned, pp) = run(&images);
    assert_eq!(pc, pp);
    for (a, b) in clean.epochs.iter().zip(&poisoned.epochs) {
        assert_eq!(a.train_loss, b.train_loss);
        assert_ne!(a.val_loss, b.val_loss);
    }
}

#[test]
fn divergence_is_reported() {
    let (images, labels) = toy_set(20, 3);
    let data = Dataset::new([3, 8, 8], &images, &labels).unwrap();
    let mut net = Network::<f32>::new(tiny_arch(), 2).unwrap();
    let idx: Vec<usize> = (0..20).collect();
    let cfg = TrainConfig {
        learning_rate: 1e38,
        batch_size: 4,
        epochs: 5,
        seed: 0,
        optimizer: Optimizer::Sgd,
    };
    let err = train(&mut net, &data, &idx, &[], &cfg).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    assert!(net.params().iter().all(|p| p.is_finite()));
}

#[test]
fn predictions_are_normalized_shift_invariant_and_batch_invariant() {
    let net = Network::<f64>::new(Architecture::compact(3, 8, 8, 5), 12).unwrap();
    let x = random_batch(6, [3, 8, 8], 21);
    let batch = net.predict(&x).unwrap();
    for (s, p) in batch.iter().enumerate() {
        let total: f64 = p.probabilities.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let one = Tensor::new(vec![1, 3, 8, 8], x.item(s).to_vec()).unwrap();
        let single = net.predict(&one).unwrap();
        assert_eq!(single[0].label, p.label);
        for (a, b) in single[0].probabilities.iter().zip(&p.probabilities) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let z = [0.3, -1.2, 2.5, 2.5, 0.0];
    let shifted: Vec<f64> = z.iter().map(|v| v + 1234.5).collect();
    let (p, q) = (softmax(&z), softmax(&shifted));
    for (a, b) in p.iter().zip(&q) {
        assert!((a - b).abs() < 1e-12);
    }
    // ties go to the lowest index
    assert_eq!(tfmd_core::cnn::argmax(&p), 2);
}
