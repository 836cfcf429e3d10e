use super::*;
use crate::model::ModelConfig;
use crate::tokenizer::EOS;

fn cfg(v: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: v,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        dropout: 0.1,
        max_src_len: 16,
        max_tgt_len: 4,
    }
}

fn examples(n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { 3 } else { 4 };
            let src = vec![5 + (i % 7) as u32, 10 + (i % 3) as u32, label + 10, EOS];
            Example {
                src,
                target: vec![label, EOS],
            }
        })
        .collect()
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        peak_lr: 1e-3,
        epochs: 2,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn defaults() {
    let c = TrainConfig::default();
    assert_eq!(c.peak_lr, 5e-5);
    assert_eq!(c.warmup_ratio, 0.1);
    assert_eq!((c.effective_batch, c.accum_steps, c.epochs), (16, 1, 12));
    assert_eq!((c.max_src_len, c.max_tgt_len), (128, 10));
    assert_eq!(
        c.adam,
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0
        }
    );
    assert_eq!(
        TrainConfig {
            accum_steps: 4,
            ..c.clone()
        }
        .micro_batch(),
        4
    );
    assert!(TrainConfig {
        accum_steps: 3,
        ..c.clone()
    }
    .validate()
    .is_err());
    assert!(TrainConfig { accum_steps: 8, ..c }.validate().is_err());
    assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 1}"#).is_err());
}

#[test]
fn schedule_examples() {
    assert_eq!(lr_at(0, 100, 0.1, 5e-5).unwrap(), 0.0);
    assert_eq!(lr_at(10, 100, 0.1, 5e-5).unwrap(), 5e-5);
    assert_eq!(lr_at(55, 100, 0.1, 5e-5).unwrap(), 2.5e-5);
    assert_eq!(lr_at(100, 100, 0.1, 5e-5).unwrap(), 0.0);
    assert_eq!(lr_at(5, 100, 0.1, 5e-5).unwrap(), 2.5e-5);
    assert!(matches!(
        lr_at(0, 1, 1.0, 1.0),
        Err(TrainError::NoDecay { total: 1, warmup: 1 })
    ));
    assert!(lr_at(101, 100, 0.1, 1.0).is_err());
    assert!(lr_at(0, 0, 0.1, 1.0).is_err());
}

#[test]
fn warmup_uses_ceiling() {
    assert_eq!(warmup_steps(100, 0.1), 10);
    assert_eq!(warmup_steps(30, 0.1), 3);
    assert_eq!(warmup_steps(31, 0.1), 4);
    assert_eq!(warmup_steps(9, 0.1), 1);
    assert_eq!(warmup_steps(50, 0.0), 0);
}

#[test]
fn schedule_is_piecewise_linear_and_continuous() {
    for total in [2usize, 7, 48, 100, 333] {
        let w = warmup_steps(total, 0.1);
        let lr = |s| lr_at(s, total, 0.1, 1.0).unwrap();
        if w > 0 {
            assert_eq!(lr(w), 1.0);
            for s in 1..w {
                assert!((lr(s) - lr(s - 1) - 1.0 / w as f64).abs() < 1e-12);
            }
        }
        for s in w + 1..=total {
            assert!((lr(s - 1) - lr(s) - 1.0 / (total - w) as f64).abs() < 1e-12);
        }
    }
}

fn scalar_store(value: f64) -> ParameterStore<f64> {
    let c = cfg(8);
    let mut p = ParameterStore::<f64>::init(&c, 0).unwrap();
    for (_, t) in p.iter_mut() {
        for v in t.data_mut() {
            *v = value;
        }
    }
    p
}

fn grads_like(p: &ParameterStore<f64>, g: f64) -> BTreeMap<String, Tensor<f64>> {
    p.iter()
        .map(|(n, t)| (n.clone(), Tensor::full(t.shape().to_vec(), g)))
        .collect()
}

#[test]
fn adam_first_step() {
    let mut p = scalar_store(0.5);
    let mut s = OptimizerState::new(&p);
    let g = grads_like(&p, 1.0);
    adam_step(&mut p, &g, &mut s, 1e-3, &AdamConfig::default()).unwrap();
    assert_eq!(s.t, 1);
    // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
    let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
    for (_, t) in p.iter() {
        assert!(t.data().iter().all(|&v| (v - expected).abs() < 1e-15));
    }
    for t in s.m.values() {
        assert!(t.data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }
}

#[test]
fn adam_zero_gradient_is_identity() {
    let mut p = scalar_store(0.25);
    let before = p.clone();
    let mut s = OptimizerState::new(&p);
    let g = grads_like(&p, 0.0);
    adam_step(&mut p, &g, &mut s, 1e-2, &AdamConfig::default()).unwrap();
    assert_eq!(p, before);
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut p = scalar_store(0.0);
    let mut s = OptimizerState::new(&p);
    let mut g = grads_like(&p, 1.0);
    g.insert("encoder.final_norm.gain".into(), Tensor::zeros(vec![3]));
    assert!(matches!(
        adam_step(&mut p, &g, &mut s, 1e-3, &AdamConfig::default()),
        Err(TrainError::StateMismatch(_))
    ));
    g.remove("encoder.final_norm.gain");
    assert!(adam_step(&mut p, &g, &mut s, 1e-3, &AdamConfig::default()).is_err());
}

#[test]
fn epoch_order_is_a_seeded_permutation() {
    let a = epoch_order(1, 0, 50);
    let mut sorted = a.clone();
    sorted.sort();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    assert_eq!(a, epoch_order(1, 0, 50));
    assert_ne!(a, epoch_order(1, 1, 50));
}

#[test]
fn batches_cover_each_epoch_once() {
    let c = train_cfg();
    let n = 37;
    let spe = c.steps_per_epoch(n);
    assert_eq!(spe, 3);
    let mut seen: Vec<usize> = (0..spe).flat_map(|s| batch_indices(&c, n, s)).collect();
    assert_eq!(batch_indices(&c, n, 2).len(), 5);
    seen.sort();
    assert_eq!(seen, (0..n).collect::<Vec<_>>());
}

#[test]
fn initial_loss_is_near_uniform() {
    let c = cfg(40);
    let p = ParameterStore::<f32>::init(&c, 3).unwrap();
    let ex = examples(16);
    let idx: Vec<usize> = (0..16).collect();
    let (loss, _) = batch_gradient(&p, &ex, &idx, &train_cfg(), 0, Execution::Sequential).unwrap();
    let uniform = (40f64).ln();
    assert!((loss - uniform).abs() < 0.1 * uniform, "{loss} vs {uniform}");
}

#[test]
fn training_is_bitwise_deterministic_and_mode_independent() {
    let ex = examples(40);
    let p = ParameterStore::<f32>::init(&cfg(30), 1).unwrap();
    let (s1, h1) = train(p.clone(), &ex, &train_cfg(), Execution::Sequential).unwrap();
    let (s2, h2) = train(p, &ex, &train_cfg(), Execution::Parallel).unwrap();
    assert_eq!(h1.len(), 2 * 3);
    let bits = |h: &[StepRecord]| h.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&h1), bits(&h2));
    assert_eq!(s1, s2);
}

#[test]
fn accumulation_does_not_change_the_step() {
    let ex = examples(16);
    let p = ParameterStore::<f32>::init(&cfg(30), 2).unwrap();
    let run = |accum| {
        let c = TrainConfig {
            accum_steps: accum,
            ..train_cfg()
        };
        let mut s = TrainState::new(p.clone());
        run_steps(&mut s, &ex, &c, 0..2, Execution::Sequential).unwrap();
        s
    };
    let one = run(1);
    for accum in [2, 4] {
        assert_eq!(run(accum), one);
    }
}

#[test]
fn first_batch_loss_does_not_blow_up() {
    let ex = examples(64);
    let c = TrainConfig {
        epochs: 3,
        ..train_cfg()
    };
    let mut s = TrainState::new(ParameterStore::<f32>::init(&cfg(30), 4).unwrap());
    let first = batch_indices(&c, ex.len(), 0);
    let loss = |s: &TrainState<f32>| {
        batch_gradient(&s.params, &ex, &first, &c, 0, Execution::Sequential)
            .unwrap()
            .0
    };
    let base = loss(&s);
    for step in 0..5 {
        run_steps(&mut s, &ex, &c, step..step + 1, Execution::Sequential).unwrap();
        assert!(loss(&s) <= base * 1.1);
    }
}

#[test]
fn run_steps_checks_its_range() {
    let ex = examples(16);
    let mut s = TrainState::new(ParameterStore::<f32>::init(&cfg(30), 2).unwrap());
    assert!(run_steps(&mut s, &ex, &train_cfg(), 1..2, Execution::Sequential).is_err());
    assert!(run_steps(&mut s, &ex, &train_cfg(), 0..3, Execution::Sequential).is_err());
    assert!(matches!(
        run_steps(&mut s, &[], &train_cfg(), 0..1, Execution::Sequential),
        Err(TrainError::EmptyData)
    ));
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let ex = examples(16);
    let (state, _) = train(
        ParameterStore::<f32>::init(&cfg(30), 5).unwrap(),
        &ex,
        &train_cfg(),
        Execution::Sequential,
    )
    .unwrap();
    let bytes = checkpoint_bytes(&state, "00ff", 9).unwrap();
    assert_eq!(&bytes[..8], b"CASTCKPT");
    let loaded = parse_checkpoint::<f32>(&bytes).unwrap();
    assert_eq!(loaded.state, state);
    assert_eq!(loaded.seed, 9);
    assert_eq!(
        checkpoint_bytes(&loaded.state, &loaded.vocab_hash, loaded.seed).unwrap(),
        bytes
    );
    assert!(loaded.check_vocab("00ff").is_ok());
    assert!(matches!(
        loaded.check_vocab("abcd"),
        Err(TrainError::Compatibility { .. })
    ));
    assert!(matches!(parse_checkpoint::<f64>(&bytes), Err(TrainError::Format(_))));
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let state = TrainState::new(ParameterStore::<f32>::init(&cfg(20), 5).unwrap());
    let bytes = checkpoint_bytes(&state, "00", 0).unwrap();
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 1;
    assert!(matches!(
        parse_checkpoint::<f32>(&flipped),
        Err(TrainError::Integrity(_))
    ));
    assert!(matches!(
        parse_checkpoint::<f32>(&bytes[..bytes.len() - 4]),
        Err(TrainError::Integrity(_))
    ));
    assert!(matches!(
        parse_checkpoint::<f32>(b"NOTACKPT\x01\0\0\0"),
        Err(TrainError::Format(_))
    ));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let ex = examples(48);
    let c = TrainConfig {
        epochs: 5,
        ..train_cfg()
    };
    let p = ParameterStore::<f32>::init(&cfg(30), 6).unwrap();
    let mut full = TrainState::new(p.clone());
    let all = run_steps(&mut full, &ex, &c, 0..15, Execution::Sequential).unwrap();
    let mut part = TrainState::new(p);
    run_steps(&mut part, &ex, &c, 0..4, Execution::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.castckpt");
    save_checkpoint(&part, "h", c.seed, &path).unwrap();
    let mut resumed = load_checkpoint::<f32>(&path).unwrap().state;
    let rest = run_steps(&mut resumed, &ex, &c, 4..14, Execution::Sequential).unwrap();
    let bits = |h: &[StepRecord]| h.iter().map(|r| (r.loss.to_bits(), r.lr.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&rest), bits(&all[4..14]));
}

#[test]
fn history_csv_has_header() {
    let csv = history_csv(&[StepRecord {
        step: 0,
        lr: 0.0,
        loss: 1.5,
    }]);
    assert_eq!(csv, "step,lr,loss\n0,0e0,1.5e0\n");
}
