use super::*;
use rand::Rng;

fn random_input(rng: &mut ChaCha8Rng, channels: usize, t: usize) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|_| (0..t).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn tiny(channels: usize, depth: usize) -> TcnModel {
    let cfg = TcnConfig {
        depth,
        channels,
        kernel_size: 3,
        dilations: TcnConfig::default_dilations(depth),
        dropout: 0.25,
        input_channels: 2,
        causal: false,
    };
    TcnModel::new(cfg, 17).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (depth, causal) in [(1, false), (2, true)] {
        let mut model = tiny(4, depth);
        model.config.causal = causal;
        let x = random_input(&mut rng, 2, 64);
        let labels: Vec<u8> = (0..64).map(|_| rng.random_range(0..2)).collect();
        let (_, grads) = model.loss_and_gradients_with_dropout(&x, &labels, 99).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for (i, &g) in grads.iter().enumerate() {
            let orig = model.params[i];
            model.params[i] = orig + h;
            let up = model.loss_and_gradients_with_dropout(&x, &labels, 99).unwrap().0;
            model.params[i] = orig - h;
            let down = model.loss_and_gradients_with_dropout(&x, &labels, 99).unwrap().0;
            model.params[i] = orig;
            worst = worst.max(rel_err((up - down) / (2.0 * h), g));
        }
        assert!(worst < 1e-3, "depth {depth}: worst relative error {worst}");
    }
}

#[test]
fn probabilities_are_normalized_and_inference_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = tiny(6, 3);
    for t in [1usize, 2, 7, 300, 2500] {
        let x = random_input(&mut rng, 2, t);
        let p = model.forward(&x, false).unwrap();
        assert_eq!(p.len(), t);
        for row in &p {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let again = model.forward(&x, false).unwrap();
        assert_eq!(p, again);
    }
    assert!(model.forward(&random_input(&mut rng, 1, 10), false).is_err());
}

#[test]
fn outputs_only_move_inside_the_receptive_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for causal in [false, true] {
        let mut cfg = TcnConfig::new(3, 1).with_channels(4);
        cfg.causal = causal;
        let model = TcnModel::new(cfg.clone(), 3).unwrap();
        let radius = cfg.receptive_radius();
        let t = 200;
        let x = random_input(&mut rng, 1, t);
        let base = model.forward(&x, false).unwrap();
        let pos = 100;
        let mut y = x.clone();
        y[0][pos] += 0.5;
        let moved = model.forward(&y, false).unwrap();
        let changed: Vec<usize> = (0..t).filter(|&j| base[j] != moved[j]).collect();
        assert!(changed.contains(&pos));
        for j in changed {
            let d = j as isize - pos as isize;
            if causal {
                assert!(d >= 0 && d as usize <= radius, "{j}");
            } else {
                assert!(d.unsigned_abs() <= radius, "{j}");
            }
        }
    }
}

#[test]
fn loss_limits_and_label_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = tiny(4, 1);
    let lay = model.layout.clone();
    // zero head: every logit 0, every probability 1/2
    model.params[lay.head_w..lay.total].fill(0.0);
    let x = random_input(&mut rng, 2, 50);
    let labels = vec![1u8; 50];
    let (loss, _) = model.loss_and_gradients(&x, &labels).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    // a large bias toward class 1 drives the loss to 0
    model.params[lay.head_b + 1] = 60.0;
    let (loss, _) = model.loss_and_gradients(&x, &labels).unwrap();
    assert!(loss < 1e-20);
    assert!(model.loss_and_gradients(&x, &[2u8; 50]).is_err());
    assert!(model.loss_and_gradients(&x, &[1u8; 49]).is_err());
}

#[test]
fn argmax_and_rescale() {
    assert_eq!(predict_from_probs(&[[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]]), vec![0, 0, 1]);
    let x = vec![vec![0.25, -0.1, 0.0], vec![0.0; 3]];
    let y = rescale_symmetric(&x);
    assert_eq!(y[0], vec![1.0, -0.4, 0.0]);
    assert_eq!(y[1], vec![0.0; 3]);
    let unit = vec![vec![1.0, -0.5]];
    assert_eq!(rescale_symmetric(&unit), unit);
}

#[test]
fn labels_ignore_input_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = tiny(5, 2);
    let x = random_input(&mut rng, 2, 400);
    let a = model.predict_labels(&x).unwrap();
    // powers of two keep the rescaled input bit-identical
    for c in [0.125, 4.0, 1024.0] {
        let y: Vec<Vec<f64>> = x.iter().map(|ch| ch.iter().map(|v| v * c).collect()).collect();
        assert_eq!(model.predict_labels(&y).unwrap(), a);
    }
}

#[test]
fn config_rules() {
    assert_eq!(TcnConfig::default_dilations(9), vec![1, 2, 4, 8, 16, 32, 64, 64, 64]);
    let mut c = TcnConfig::new(4, 2);
    assert!(c.validate().is_ok());
    c.dilations = vec![1, 4, 2, 8];
    assert!(c.validate().is_err());
    let c = TcnConfig::new(4, 3);
    assert!(TcnModel::new(c, 0).is_err());
    // centered: sum over blocks of (kernel - 1) * dilation
    assert_eq!(TcnConfig::new(4, 1).receptive_radius(), 4 * 15);
}

fn toy_sequences(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<LabelledSequence> {
    (0..n)
        .map(|_| {
            let mut labels = vec![0u8; t];
            let mut x = vec![0.0; t];
            let mut j = rng.random_range(0..40);
            while j + 40 < t {
                let len = rng.random_range(15..35);
                for k in j..j + len {
                    labels[k] = 1;
                    x[k] = rng.random_range(-1.0..1.0);
                }
                j += len + rng.random_range(20..60);
            }
            for v in x.iter_mut() {
                *v += 0.01 * rng.random_range(-1.0..1.0);
            }
            LabelledSequence {
                input: rescale_symmetric(&[x]),
                labels,
            }
        })
        .collect()
}

fn toy_model() -> TcnModel {
    let cfg = TcnConfig {
        kernel_size: 3,
        ..TcnConfig::new(2, 1).with_channels(6)
    };
    TcnModel::new(cfg, 5).unwrap()
}

#[test]
fn separable_toy_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let train_set = toy_sequences(&mut rng, 6, 400);
    let val_set = toy_sequences(&mut rng, 2, 400);
    let spec = TrainSpec {
        max_epochs: 30,
        learning_rate: 0.01,
        chunk_seconds: 1.0,
        ..Default::default()
    };
    let (model, log) = train(&toy_model(), &train_set, &val_set, &spec, 100.0, 1).unwrap();
    let best = log.epochs[log.best_epoch - 1].val_loss;
    assert!(best < 0.1, "{}", log.to_csv());

    // silence control
    let silent = vec![vec![0.0; 2000]];
    let pos = model
        .predict_labels(&silent)
        .unwrap()
        .iter()
        .filter(|&&v| v == 1)
        .count();
    assert!((pos as f64) < 0.02 * 2000.0);
}

#[test]
fn patience_stops_on_flat_validation_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let train_set = toy_sequences(&mut rng, 2, 200);
    let val_set = toy_sequences(&mut rng, 1, 200);
    let spec = TrainSpec {
        learning_rate: 0.0,
        ..Default::default()
    };
    let start = toy_model();
    let (model, log) = train(&start, &train_set, &val_set, &spec, 100.0, 1).unwrap();
    assert_eq!(log.epochs.len(), spec.patience + 1);
    assert!(log.stopped_early);
    assert_eq!(log.best_epoch, 1);
    assert_eq!(model.params(), start.params());
}

#[test]
fn training_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let train_set = toy_sequences(&mut rng, 3, 200);
    let val_set = toy_sequences(&mut rng, 1, 200);
    let spec = TrainSpec {
        max_epochs: 3,
        ..Default::default()
    };
    let a = train(&toy_model(), &train_set, &val_set, &spec, 100.0, 7).unwrap();
    let b = train(&toy_model(), &train_set, &val_set, &spec, 100.0, 7).unwrap();
    assert_eq!(a, b);
    assert!(train(&toy_model(), &[], &val_set, &spec, 100.0, 7).is_err());
    assert!(train(&toy_model(), &train_set, &[], &spec, 100.0, 7).is_err());
}

#[test]
fn repeated_minibatch_loss_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let batch = toy_sequences(&mut rng, 1, 300).remove(0);
    let mut model = toy_model();
    model.config.dropout = 0.0;
    let spec = TrainSpec::default();
    let mut adam = Adam::new(model.num_params(), &spec);
    let mut prev = f64::INFINITY;
    for _ in 0..10 {
        let (loss, g) = model.loss_and_gradients(&batch.input, &batch.labels).unwrap();
        assert!(loss < prev, "{loss} after {prev}");
        prev = loss;
        adam.update(model.params_mut(), &g);
    }
}

#[test]
fn model_files_round_trip() {
    let mut model = tiny(3, 2);
    model.info = ModelInfo {
        sample_rate: Some(2100.0),
        channel: Some(ChannelSel::Both),
        gate_threshold: Some(0.0123),
    };
    let bytes = io::encode(&model);
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(io::decode(&bytes).unwrap(), model);
    assert!(io::decode(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(io::decode(&bad), Err(Error::Model(_))));
    let mut extra = bytes;
    extra.push(0);
    assert!(io::decode(&extra).is_err());
}
