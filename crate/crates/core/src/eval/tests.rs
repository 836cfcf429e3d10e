use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;

use super::*;
use crate::corpus::{CorpusError, CrisisRecord, EventDescriptor, EventSplit};
use crate::model::{score_sequence, ModelConfig};
use crate::prompt::{construct_text, template_words, Scenario};
use crate::tokenizer::EOS;

use Label::{No, Yes};

#[test]
fn accuracy_examples() {
    assert_eq!(accuracy(&[Yes, No], &[Yes, No]).unwrap(), 1.0);
    assert_eq!(accuracy(&[Yes, Yes, No, No], &[Yes, No, No, No]).unwrap(), 0.75);
    assert!(matches!(
        accuracy(&[Yes], &[Yes, No]),
        Err(EvalError::LengthMismatch { .. })
    ));
    assert!(matches!(accuracy(&[], &[]), Err(EvalError::Empty)));
}

#[test]
fn weighted_f1_hand_computed() {
    let r = weighted_f1(&[Yes, No, No, No], &[Yes, Yes, No, No]).unwrap();
    let yes = r.per_class[&Yes];
    let no = r.per_class[&No];
    assert_eq!((yes.precision, yes.recall), (1.0, 0.5));
    assert!((yes.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!((no.precision - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(no.recall, 1.0);
    assert!((no.f1 - 0.8).abs() < 1e-15);
    assert!((r.value - (0.5 * 2.0 / 3.0 + 0.5 * 0.8)).abs() < 1e-15);
    assert_eq!(weighted_f1(&[Yes, No], &[Yes, No]).unwrap().value, 1.0);
    assert_eq!(weighted_f1(&[No, Yes], &[Yes, No]).unwrap().value, 0.0);
}

#[test]
fn zero_division_gives_zero() {
    let r = weighted_f1(&[No, No], &[Yes, Yes]).unwrap();
    assert_eq!(r.per_class[&No].precision, 0.0);
    assert_eq!(r.per_class[&Yes].f1, 0.0);
    assert_eq!(r.value, 0.0);
}

#[test]
fn confusion_csv_recomputes_the_value() {
    let preds = [Yes, No, No, Yes, Yes];
    let golds = [Yes, Yes, No, No, Yes];
    let c = Confusion::from_labels(&preds, &golds).unwrap();
    assert_eq!(c.total(), 5);
    let csv = c.to_csv();
    let mut counts = BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        counts.insert((f[0].to_string(), f[1].to_string()), f[2].parse::<usize>().unwrap());
    }
    let hits = counts[&("yes".into(), "yes".into())] + counts[&("no".into(), "no".into())];
    assert_eq!(hits as f64 / 5.0, accuracy(&preds, &golds).unwrap());
}

fn labels(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|&b| if b { Yes } else { No }).collect()
}

proptest! {
    #[test]
    fn metrics_are_one_iff_equal(p in prop::collection::vec(any::<bool>(), 1..30), g in prop::collection::vec(any::<bool>(), 1..30)) {
        let n = p.len().min(g.len());
        let (p, g) = (labels(&p[..n]), labels(&g[..n]));
        let acc = accuracy(&p, &g).unwrap();
        let f1 = weighted_f1(&p, &g).unwrap().value;
        prop_assert_eq!(acc == 1.0, p == g);
        prop_assert_eq!(f1 == 1.0, p == g);
        prop_assert!((0.0..=1.0).contains(&f1));
    }

    #[test]
    fn balanced_weighted_f1_is_macro_f1(p in prop::collection::vec(any::<bool>(), 10)) {
        let g = labels(&[true, false, true, false, true, false, true, false, true, false]);
        let r = weighted_f1(&labels(&p), &g).unwrap();
        let macro_f1 = (r.per_class[&Yes].f1 + r.per_class[&No].f1) / 2.0;
        prop_assert!((r.value - macro_f1).abs() < 1e-12);
    }
}

#[test]
fn pearson_examples() {
    let (r, _) =
        pearson_row_correlation(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]], false).unwrap();
    assert_eq!(r[0][1], 1.0);
    assert_eq!(r[0][2], -1.0);
    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [1.0, 2.0, 3.0, 10.0];
    // means 2.5 and 4; deviations (-1.5,-.5,.5,1.5) and (-3,-2,-1,6).
    let expected = (4.5 + 1.0 - 0.5 + 9.0) / (5.0f64.sqrt() * 50.0f64.sqrt());
    assert!((pearson(&x, &y).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn zero_variance_rows_warn() {
    let rows = vec![vec![1.0, 1.0, 1.0], vec![0.2, 0.5, 0.9], vec![0.3, 0.1, 0.4]];
    let (r, warnings) = pearson_row_correlation(&rows, false).unwrap();
    assert_eq!(r[0][1], 0.0);
    assert_eq!(r[0][0], 1.0);
    assert_eq!(warnings.len(), 2);
}

#[test]
fn exclude_self_drops_both_columns() {
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|i| {
            (0..5)
                .map(|j| ((i * 7 + j * 3) % 5) as f64 + if i == j { 9.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let (r, _) = pearson_row_correlation(&rows, true).unwrap();
    let cols = [2, 3, 4];
    let x: Vec<f64> = cols.iter().map(|&c| rows[0][c]).collect();
    let y: Vec<f64> = cols.iter().map(|&c| rows[1][c]).collect();
    assert_eq!(r[0][1], pearson(&x, &y).unwrap_or(0.0));
    let small = vec![vec![1.0, 2.0, 3.0]; 3];
    assert!(matches!(
        pearson_row_correlation(&small, true),
        Err(EvalError::TooFew { .. })
    ));
}

proptest! {
    #[test]
    #[allow(clippy::needless_range_loop)]
    fn correlation_is_symmetric_and_bounded(vals in prop::collection::vec(0.0f64..1.0, 16), exclude in any::<bool>()) {
        let rows: Vec<Vec<f64>> = vals.chunks(4).map(|c| c.to_vec()).collect();
        if let Ok((r, _)) = pearson_row_correlation(&rows, exclude) {
            for i in 0..4 {
                prop_assert_eq!(r[i][i], 1.0);
                for j in 0..4 {
                    prop_assert_eq!(r[i][j], r[j][i]);
                    prop_assert!((-1.0..=1.0).contains(&r[i][j]));
                }
            }
        }
    }
}

fn ids(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn two_event_matrix_runs_four_jobs() {
    let calls = AtomicUsize::new(0);
    let runner = |job: &CellJob| {
        calls.fetch_add(1, Ordering::SeqCst);
        let value = if job.source == job.target { 0.9 } else { 0.6 };
        Ok(CellRun {
            fold: job.fold,
            seed: job.seed,
            value,
            fallback_rate: 0.0,
            checkpoint: None,
        })
    };
    let events = ids(&["AF", "QF"]);
    let m = build_adaptation_matrix(
        &events,
        Metric::Accuracy,
        Scenario::PostQ,
        DiagonalMode::StandardSplit,
        5,
        1,
        &runner,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 4);
    assert!(m.complete);
    assert_eq!(m.get("AF", "AF"), Some(0.9));
    assert_eq!(m.get("AF", "QF"), Some(0.6));
    assert_eq!(m.to_csv(), "source\\target,AF,QF\nAF,0.9000,0.6000\nQF,0.6000,0.9000\n");
}

#[test]
fn fold_mean_diagonal_and_deterministic_seeds() {
    let runner = |job: &CellJob| {
        let value = match job.fold {
            Some(f) => f as f64 / 10.0,
            None => 0.5,
        };
        Ok(CellRun {
            fold: job.fold,
            seed: job.seed,
            value,
            fallback_rate: 0.0,
            checkpoint: Some(job.run_id()),
        })
    };
    let events = ids(&["A", "B", "C", "D", "E", "F"]);
    let build = |exec| {
        build_adaptation_matrix(
            &events,
            Metric::WeightedF1,
            Scenario::Standard,
            DiagonalMode::FiveFoldMean,
            5,
            3,
            &runner,
            exec,
        )
        .unwrap()
    };
    let m = build(Execution::Sequential);
    assert_eq!(m.cells.len(), 6);
    let runs: usize = m.provenance.iter().map(|p| p.runs.len()).sum();
    assert_eq!(runs, 6 * 5 + 30);
    assert!((m.get("C", "C").unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(m, build(Execution::Parallel));
}

#[test]
fn failed_cells_mark_the_matrix_incomplete() {
    let runner = |job: &CellJob| {
        if job.source == "B" && job.target == "A" {
            Err("boom".to_string())
        } else {
            Ok(CellRun {
                fold: job.fold,
                seed: job.seed,
                value: 1.0,
                fallback_rate: 0.0,
                checkpoint: None,
            })
        }
    };
    let m = build_adaptation_matrix(
        &ids(&["A", "B", "C"]),
        Metric::Accuracy,
        Scenario::PostQ,
        DiagonalMode::StandardSplit,
        5,
        0,
        &runner,
        Execution::Sequential,
    )
    .unwrap();
    assert!(!m.complete);
    assert_eq!(m.get("B", "A"), None);
    assert!(m.to_csv().contains("\nB,FAILED,1.0000,1.0000\n"), "{}", m.to_csv());
    assert!(matches!(m.values(), Err(EvalError::Incomplete(ref s)) if s == "B->A"));
    assert!(build_adaptation_matrix(
        &ids(&["A"]),
        Metric::Accuracy,
        Scenario::PostQ,
        DiagonalMode::StandardSplit,
        5,
        0,
        &runner,
        Execution::Sequential
    )
    .is_err());
}

#[test]
fn leave_one_out_plans() {
    let events = ids(&["SH", "AF", "BB", "WTE", "QF", "OT"]);
    let loo = plan_leave_one_out(&events, Scenario::PostQ).unwrap();
    assert_eq!(loo.plans.len(), 6);
    for p in &loo.plans {
        assert_eq!(p.sources.len(), 5);
        let mut all: Vec<String> = p.sources.iter().cloned().chain([p.target.clone()]).collect();
        all.sort();
        let mut want = events.clone();
        want.sort();
        assert_eq!(all, want);
    }
    assert_eq!(loo.plans[1].id(), "SH+BB+WTE+QF+OT->AF");
    assert_eq!(
        plan_leave_one_out(&ids(&["A", "B"]), Scenario::PostQ).unwrap().plans[0].sources,
        ids(&["B"])
    );
    assert!(plan_leave_one_out(&ids(&["A"]), Scenario::PostQ).is_err());
    let csv = loo.table_csv(&[Some(0.9), Some(0.8), Some(0.7), Some(0.6), Some(0.5), Some(0.4)]);
    assert!(csv.ends_with("Average,,0.6500\n"), "{csv}");
}

fn split(event: &str, n: usize) -> EventSplit {
    let rec = |i| CrisisRecord {
        id: format!("{event}{i}"),
        text: "x".into(),
        raw_label: "relevant".into(),
        unified_label: Some(Yes),
        event_id: event.into(),
    };
    EventSplit {
        train: (0..n).map(rec).collect(),
        dev: Vec::new(),
        test: (0..2).map(|i| rec(100 + i)).collect(),
    }
}

#[test]
fn many_to_one_plans() {
    let sets = vec![
        ids(&["AF"]),
        ids(&["BB", "WTE"]),
        ids(&["SH", "OT"]),
        ids(&["AF", "SH", "OT"]),
    ];
    let plans = plan_many_to_one(&sets, "QF", Scenario::PostQ).unwrap();
    let names: Vec<String> = plans.iter().map(PlanSpec::id).collect();
    assert_eq!(names, ["AF->QF", "BB+WTE->QF", "SH+OT->QF", "AF+SH+OT->QF"]);
    let err = plan_many_to_one(&[ids(&["QF"])], "QF", Scenario::PostQ).unwrap_err();
    assert!(matches!(err, EvalError::Corpus(CorpusError::InvalidPlan(_))));
    let splits: BTreeMap<String, EventSplit> = [("AF", 3), ("SH", 4), ("OT", 5), ("QF", 2)]
        .iter()
        .map(|&(e, n)| (e.to_string(), split(e, n)))
        .collect();
    let plan = plans[3].compose(&splits, 0).unwrap();
    assert_eq!(plan.source_data.len(), 12);
    assert_eq!(plan.target_test.len(), 2);
}

fn fixture_vocab() -> Vocabulary {
    let mut forced = template_words();
    forced.extend(["yes", "no", "flood", "alberta", "help"]);
    Vocabulary::build(&["help"], 1, 100, &forced).unwrap()
}

fn fixture_input(text: &str) -> AugmentedInput {
    construct_text(text, Scenario::PostQ, &EventDescriptor::new("AF", "Alberta", "Flood")).unwrap()
}

#[test]
fn fallback_picks_the_higher_score() {
    let vocab = fixture_vocab();
    let cfg = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::tiny(vocab.len())
    };
    for seed in 0..4 {
        let params = ParameterStore::<f64>::init_with_std(&cfg, seed, 0.5).unwrap();
        let input = fixture_input("help help flood");
        let p = predict_label(&params, &vocab, &input, 128).unwrap();
        let src = vocab.encode_input(&input, 128, false).unwrap().ids;
        let mask = vec![1; src.len()];
        let yes = score_sequence(&params, &src, &mask, &[vocab.id("yes").unwrap(), EOS]).unwrap();
        let no = score_sequence(&params, &src, &mask, &[vocab.id("no").unwrap(), EOS]).unwrap();
        if p.used_fallback {
            assert_eq!(p.label, if yes > no { Yes } else { No });
        } else {
            assert_eq!(p.generated, p.label.as_str());
        }
    }
}

#[test]
fn empty_generation_uses_fallback() {
    let vocab = fixture_vocab();
    let cfg = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::tiny(vocab.len())
    };
    let mut params = ParameterStore::<f32>::init(&cfg, 1).unwrap();
    params.get_mut("decoder.lm_head.bias").unwrap().data_mut()[EOS as usize] = 50.0;
    let p = predict_label(&params, &vocab, &fixture_input("help"), 128).unwrap();
    assert_eq!(p.generated, "");
    assert!(p.used_fallback);
    let preds = predict_batch(
        &params,
        &vocab,
        &[fixture_input("help"), fixture_input("flood")],
        128,
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(fallback_rate(&preds), 1.0);
    let small = ParameterStore::<f32>::init(&ModelConfig::tiny(vocab.len() + 1), 1).unwrap();
    assert!(matches!(
        predict_label(&small, &vocab, &fixture_input("help"), 128),
        Err(EvalError::VocabMismatch { .. })
    ));
}

#[test]
fn report_is_consistent() {
    let preds: Vec<Prediction> = [Yes, No, Yes, Yes]
        .iter()
        .enumerate()
        .map(|(i, &l)| Prediction {
            label: l,
            used_fallback: i == 0,
            generated: l.to_string(),
        })
        .collect();
    let r = EvalReport::new("A->B", Metric::WeightedF1, &preds, &[Yes, No, No, Yes]).unwrap();
    assert_eq!(r.confusion.total(), 4);
    assert_eq!(r.fallback_rate, 0.25);
    assert_eq!(r.value, r.confusion.weighted_f1());
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"metric\":\"weighted_f1\""), "{json}");
    assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
    assert_eq!("accuracy".parse::<Metric>().unwrap(), Metric::Accuracy);
    assert!("f1".parse::<Metric>().is_err());
}
