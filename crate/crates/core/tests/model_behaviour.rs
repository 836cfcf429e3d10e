//! End-to-end model behaviour on a small overfit fixture.

use cast::eval::{fallback_rate, predict_batch};
use cast::experiment::build_vocabulary;
use cast::model::{generate_greedy, score_sequence};
use cast::prompt::construct;
use cast::synth::SynthSpec;
use cast::tokenizer::EOS;
use cast::train::{prepare_examples, train};
use cast::{
    AugmentedInput, CrisisRecord, Execution, Label, ModelConfig, ParameterStore, Scenario, TrainConfig, Vocabulary,
};

struct Trained {
    params: ParameterStore<f32>,
    vocab: Vocabulary,
    records: Vec<CrisisRecord>,
    inputs: Vec<AugmentedInput>,
}

fn overfit() -> Trained {
    let spec = SynthSpec::twin_and_outlier(50, 3);
    let registry = spec.registry().unwrap();
    let data = spec.generate();
    let records = data["A"].clone();
    let fixture = &records[..16];
    let vocab = build_vocabulary(fixture, &registry, Scenario::PostQ, 1, 8192).unwrap();
    let config = TrainConfig {
        peak_lr: 1e-3,
        epochs: 150,
        max_src_len: 64,
        ..TrainConfig::default()
    };
    let model = ModelConfig {
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        dropout: 0.0,
        max_src_len: 64,
        ..ModelConfig::tiny(vocab.len())
    };
    let examples = prepare_examples(fixture, &registry, Scenario::PostQ, &vocab, &config).unwrap();
    let (state, _) = train(
        ParameterStore::init(&model, 11).unwrap(),
        &examples,
        &config,
        Execution::Parallel,
    )
    .unwrap();
    let inputs = records
        .iter()
        .map(|r| construct(r, Scenario::PostQ, registry.get("A").unwrap()).unwrap())
        .collect();
    Trained {
        params: state.params,
        vocab,
        records,
        inputs,
    }
}

#[test]
fn overfit_model_generates_label_sequences() {
    let t = overfit();
    let preds = predict_batch(&t.params, &t.vocab, &t.inputs[..16], 64, Execution::Parallel).unwrap();
    let golds: Vec<Label> = t.records[..16].iter().map(|r| r.unified_label.unwrap()).collect();
    let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
    assert_eq!(labels, golds, "training accuracy must reach 1.0");
    assert_eq!(fallback_rate(&preds), 0.0);

    let yes = t.vocab.id("yes").unwrap();
    let first_yes = t
        .records
        .iter()
        .position(|r| r.unified_label == Some(Label::Yes))
        .unwrap();
    assert!(first_yes < 16);
    let src = t.vocab.encode_input(&t.inputs[first_yes], 64, false).unwrap().ids;
    let out = generate_greedy(&t.params, &src, &vec![1; src.len()]).unwrap();
    assert_eq!(out, vec![yes, EOS]);
}

#[test]
fn constrained_scores_agree_with_greedy_first_token() {
    let t = overfit();
    let (yes, no) = (t.vocab.id("yes").unwrap(), t.vocab.id("no").unwrap());
    let mut decided = 0;
    for input in t.inputs.iter().take(50) {
        let src = t.vocab.encode_input(input, 64, false).unwrap().ids;
        let mask = vec![1u8; src.len()];
        let out = generate_greedy(&t.params, &src, &mask).unwrap();
        assert!(out.len() <= 10);
        let s_yes = score_sequence(&t.params, &src, &mask, &[yes, EOS]).unwrap();
        let s_no = score_sequence(&t.params, &src, &mask, &[no, EOS]).unwrap();
        assert!(s_yes <= 0.0 && s_no <= 0.0);
        if out == [yes, EOS] || out == [no, EOS] {
            decided += 1;
            assert_eq!(
                s_yes > s_no,
                out[0] == yes,
                "scores {s_yes} / {s_no} disagree with {out:?}"
            );
        }
    }
    assert!(decided >= 45, "only {decided} of 50 generations were a bare label");
}
