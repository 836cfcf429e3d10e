use super::*;
use crate::tokenizer::UNK;

fn small(v: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: v,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        dropout: 0.0,
        max_src_len: 16,
        max_tgt_len: 6,
    }
}

#[test]
fn init_is_deterministic() {
    let cfg = small(30);
    let a = ParameterStore::<f32>::init(&cfg, 5).unwrap();
    let b = ParameterStore::<f32>::init(&cfg, 5).unwrap();
    assert_eq!(a, b);
    let c = ParameterStore::<f32>::init(&cfg, 6).unwrap();
    assert_ne!(a, c);
}

#[test]
fn parameter_count_closed_form() {
    let cfg = ModelConfig {
        vocab_size: 100,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        ..ModelConfig::tiny(100)
    };
    // embedding 100*8; encoder layer 2*8 + (4*64+3*8) + 2*8 + (8*16+16+16*8+8);
    // encoder norm 16; decoder layer adds a second attention block and norm;
    // decoder norm 16; output 8*100+100.
    let enc_layer = 16 + 280 + 16 + 280;
    let dec_layer = 16 + 280 + 16 + 280 + 16 + 280;
    let expected = 800 + enc_layer + 16 + dec_layer + 16 + 900;
    assert_eq!(expected, 3212);
    assert_eq!(cfg.parameter_count(), expected);
    assert_eq!(
        ParameterStore::<f32>::init(&cfg, 0).unwrap().parameter_count(),
        expected
    );
}

#[test]
fn init_values() {
    let p = ParameterStore::<f32>::init(&small(20), 1).unwrap();
    for (name, t) in p.iter() {
        if name.ends_with(".gain") {
            assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
        } else if name.ends_with(".bias") || name.contains(".b") && !name.contains("embed") && t.shape().len() == 1 {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    let w = p.get("encoder.embed_tokens").unwrap();
    let n = w.len() as f64;
    let mean = w.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std - 0.02).abs() < 0.003, "{std}");
    assert_eq!(
        ParameterStore::<f32>::partition("encoder.embed_tokens"),
        Partition::Encoder
    );
    assert_eq!(
        ParameterStore::<f32>::partition("decoder.lm_head.weight"),
        Partition::Decoder
    );
}

#[test]
fn bad_head_count_is_a_config_error() {
    let cfg = ModelConfig {
        n_heads: 3,
        ..small(20)
    };
    assert!(matches!(
        ParameterStore::<f32>::init(&cfg, 0),
        Err(ModelError::Config(_))
    ));
}

#[test]
fn encoder_shape_and_pad_invariance() {
    let p = ParameterStore::<f64>::init(&small(20), 2).unwrap();
    let ids = [5, 6, 7, 8, 1];
    let a = encode_source(&p, &ids, &[1; 5]).unwrap();
    assert_eq!(a.shape(), &[5, 16]);
    let b = encode_source(&p, &[5, 6, 7, 8, 1, 0, 0, 0], &[1, 1, 1, 1, 1, 0, 0, 0]).unwrap();
    assert_eq!(a.data(), &b.data()[..5 * 16]);

    let da = decode_logits(&p, &a, &[1; 5], &[0, 9, 4]).unwrap();
    let db = decode_logits(&p, &b, &[1, 1, 1, 1, 1, 0, 0, 0], &[0, 9, 4]).unwrap();
    assert_eq!(da, db);
    assert_eq!(da.shape(), &[3, 20]);
}

#[test]
fn positions_matter() {
    let p = ParameterStore::<f64>::init(&small(20), 3).unwrap();
    let a = encode_source(&p, &[5, 6, 7, 1], &[1; 4]).unwrap();
    let b = encode_source(&p, &[6, 5, 7, 1], &[1; 4]).unwrap();
    assert_ne!(a.data(), b.data());
}

#[test]
fn decoder_is_causal() {
    let p = ParameterStore::<f64>::init(&small(20), 4).unwrap();
    let enc = encode_source(&p, &[5, 6, 7, 1], &[1; 4]).unwrap();
    let base = [0u32, 9, 4, 11, 3];
    let logits = decode_logits(&p, &enc, &[1; 4], &base).unwrap();
    for j in 1..base.len() {
        let mut changed = base;
        changed[j] = 13;
        let other = decode_logits(&p, &enc, &[1; 4], &changed).unwrap();
        let v = 20;
        assert_eq!(&logits.data()[..j * v], &other.data()[..j * v]);
        assert_ne!(&logits.data()[j * v..], &other.data()[j * v..]);
    }
}

#[test]
fn length_and_mask_guards() {
    let p = ParameterStore::<f32>::init(&small(20), 4).unwrap();
    let enc = encode_source(&p, &[5, 1], &[1, 1]).unwrap();
    assert_eq!(
        decode_logits(&p, &enc, &[0, 0], &[0]).unwrap_err(),
        ModelError::NoAttendableSource
    );
    assert_eq!(
        encode_source(&p, &[5, 1], &[0, 0]).unwrap_err(),
        ModelError::NoAttendableSource
    );
    assert!(matches!(
        encode_source(&p, &[5; 17], &[1; 17]),
        Err(ModelError::Length { .. })
    ));
    assert!(matches!(
        decode_logits(&p, &enc, &[1, 1], &[0; 7]),
        Err(ModelError::Length { .. })
    ));
}

#[test]
fn generation_is_bounded_and_deterministic() {
    let cfg = ModelConfig {
        max_tgt_len: 10,
        ..small(20)
    };
    let p = ParameterStore::<f32>::init(&cfg, 7).unwrap();
    let a = generate_greedy(&p, &[5, 6, 1], &[1; 3]).unwrap();
    let b = generate_greedy(&p, &[5, 6, 1], &[1; 3]).unwrap();
    assert_eq!(a, b);
    assert!(a.len() <= 10);
}

#[test]
fn argmax_prefers_lowest_index_on_ties() {
    assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[0.0f64; 4]), 0);
}

#[test]
fn scores_are_normalized_log_probabilities() {
    let p = ParameterStore::<f64>::init(&small(20), 8).unwrap();
    let src = [5, 6, 7, 1];
    let enc = encode_source(&p, &src, &[1; 4]).unwrap();
    let step0 = decode_logits(&p, &enc, &[1; 4], &[PAD]).unwrap();
    let max = step0.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = step0.data().iter().map(|v| (v - max).exp()).sum();
    let mut total = 0.0;
    for t in 0..20u32 {
        let lp = target_log_probs(&p, &enc, &[1; 4], &[t]).unwrap()[0];
        let direct = (step0.data()[t as usize] - max).exp() / z;
        assert!((lp.exp() - direct).abs() < 1e-12);
        total += lp.exp();
    }
    assert!((total - 1.0).abs() < 1e-5);
    let s = score_sequence(&p, &src, &[1; 4], &[9, EOS]).unwrap();
    assert!(s <= 0.0);
    assert_eq!(
        score_sequence(&p, &src, &[1; 4], &[9, UNK]).unwrap_err(),
        ModelError::MissingEos
    );
}

fn gradient_report<T: Scalar>(seed: u64, eps: f64) -> GradientReport {
    let params = ParameterStore::<f64>::init_with_std(&small(50), seed, 0.2)
        .unwrap()
        .cast::<T>();
    check_model_gradients(&params, &[5, 9, 12, 3, 1], &[7, 4, EOS], eps).unwrap()
}

// Central differences at eps 2e-5 carry about ulp(loss) / (2 eps) ~ 1e-11 of
// roundoff, so coordinates with tiny gradients get an absolute floor.
#[test]
fn fp64_model_gradients_match_finite_differences() {
    let report = gradient_report::<f64>(0, 2e-5);
    assert_eq!(report.coordinates(), small(50).parameter_count());
    let excess = report.absolute_excess(1e-6);
    assert!(excess < 1e-10, "{excess:e} {:?}", report.worst());
}

#[test]
fn fp32_model_gradients_match_fp64_differences() {
    let reference = gradient_report::<f64>(0, 2e-5);
    let single = gradient_report::<f32>(0, 1e-2);
    let analytic = single.pairs.iter().flatten().map(|p| p.0);
    let numeric = reference.pairs.iter().flatten().map(|p| p.1);
    for (i, (a, n)) in analytic.zip(numeric).enumerate() {
        assert!(
            (a - n).abs() <= 1e-3 * a.abs().max(n.abs()) + 1e-8,
            "coordinate {i}: {a:e} vs {n:e}"
        );
    }
}
