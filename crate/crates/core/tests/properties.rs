use proptest::prelude::*;

use transduce::dataset::{generate_splits, DataConfig, SplitCounts};
use transduce::metrics::{self, format_value, read_csv, write_csv, LengthKey, Metric, MetricsRecord, Outcome, RecordLabels};
use transduce::optim::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
use transduce::{fst, Eval, Graph, ModelConfig, Rng, Seq2SeqModel, Split, Tape, Task, Tensor, Variant};

fn word(max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[a-z]{{0,{max}}}")).unwrap()
}

fn nonempty_word(max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[a-z]{{1,{max}}}")).unwrap()
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Srnn), Just(Variant::Gru), Just(Variant::Lstm)]
}

/// Equal-length target/output pairs over a small alphabet, so matches are common.
fn outcome_set() -> impl Strategy<Value = Vec<(Vec<usize>, Vec<usize>)>> {
    prop::collection::vec(
        (1usize..10).prop_flat_map(|n| (prop::collection::vec(0usize..3, n), prop::collection::vec(0usize..3, n))),
        1..8,
    )
}

fn outcomes(raw: &[(Vec<usize>, Vec<usize>)]) -> Vec<Outcome> {
    raw.iter().map(|(t, o)| Outcome::new(t.clone(), o.clone()).unwrap()).collect()
}

proptest! {
    #[test]
    fn task_output_lengths(w in word(20), k in 1usize..5) {
        let n = w.len();
        prop_assert_eq!(Task::Identity.apply(&w).unwrap(), w.clone());
        prop_assert_eq!(Task::Reversal.apply(&Task::Reversal.apply(&w).unwrap()).unwrap(), w.clone());
        prop_assert_eq!(Task::TotalReduplication.apply(&w).unwrap(), format!("{w}{w}"));
        prop_assert_eq!(Task::QuadraticCopy.apply(&w).unwrap().len(), n * n);
        prop_assert_eq!(Task::kcopy(k).unwrap().apply(&w).unwrap(), w.repeat(k));
        for task in [Task::Identity, Task::Reversal, Task::TotalReduplication, Task::QuadraticCopy, Task::kcopy(k).unwrap()] {
            prop_assert_eq!(task.apply(&w).unwrap().len(), task.output_len(n));
        }
    }

    #[test]
    fn sorting_permutes(w in word(20)) {
        let up = Task::SortAscending.apply(&w).unwrap();
        let down = Task::SortDescending.apply(&w).unwrap();
        prop_assert_eq!(down.chars().rev().collect::<String>(), up.clone());
        let mut chars: Vec<char> = w.chars().collect();
        chars.sort_unstable();
        prop_assert_eq!(up, chars.into_iter().collect::<String>());
    }

    #[test]
    fn machines_compute_their_tasks(w in word(16), k in 1usize..4) {
        for task in [Task::Identity, Task::Reversal, Task::TotalReduplication, Task::kcopy(k).unwrap()] {
            let (machine, budget) = fst::for_task(task).unwrap();
            let run = machine.run_with_limit(&w, budget(w.len())).unwrap();
            prop_assert_eq!(run.output, task.apply(&w).unwrap());
        }
    }

    #[test]
    fn quadratic_machine(w in word(8)) {
        let run = fst::quadratic().run(&w).unwrap();
        prop_assert_eq!(run.output, Task::QuadraticCopy.apply(&w).unwrap());
    }

    #[test]
    fn metrics_are_ordered(raw in outcome_set()) {
        let o = outcomes(&raw);
        let full = metrics::full_sequence_accuracy(&o).unwrap();
        let first = metrics::first_n_accuracy(&o).unwrap();
        let overlap = metrics::overlap_rate(&o).unwrap();
        prop_assert!(full <= first && first <= overlap);
        prop_assert!((0.0..=1.0).contains(&full) && overlap <= 1.0);
    }

    #[test]
    fn metrics_ignore_symbol_names_and_order(raw in outcome_set(), shift in 1usize..20, rot in 0usize..8) {
        // Renaming symbols by a bijection and reordering outcomes changes nothing.
        let renamed: Vec<_> = raw
            .iter()
            .map(|(t, o)| (t.iter().map(|s| s + shift).collect(), o.iter().map(|s| s + shift).collect()))
            .collect();
        let mut reordered = renamed;
        let r = rot % reordered.len();
        reordered.rotate_left(r);
        let (a, b) = (outcomes(&raw), outcomes(&reordered));
        for m in Metric::ALL {
            prop_assert!((m.compute(&a).unwrap() - m.compute(&b).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_values_round_trip(v in 0.0f64..=1.0) {
        let s = format_value(v);
        let back: f64 = s.parse().unwrap();
        prop_assert_eq!(format_value(back), s);
        prop_assert!((back - v).abs() <= 1e-11 * v.abs().max(1e-300));
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec(0.0f64..=1.0, 1..30), run in 0usize..5) {
        let labels = RecordLabels {
            task: Task::Reversal,
            variant: Variant::Gru.into(),
            attention: true,
            run,
            split: Split::Gen,
        };
        let records: Vec<MetricsRecord> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| MetricsRecord {
                labels: labels.clone(),
                length: if i % 4 == 0 { LengthKey::Aggregate } else { LengthKey::Length(i) },
                metric: Metric::ALL[i % 3],
                value: v,
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), records.len());
        let mut again = Vec::new();
        write_csv(&mut again, &back).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn clipped_norm_is_bounded(xs in prop::collection::vec(-100.0f64..100.0, 1..40), max in 0.01f64..10.0) {
        let half = xs.len() / 2;
        let mut grads = vec![Tensor::vector(&xs[..half]), Tensor::vector(&xs[half..])];
        let before = global_norm(&grads);
        clip_global_norm(&mut grads, max).unwrap();
        let after = global_norm(&grads);
        prop_assert!(after <= max + 1e-12);
        if before <= max {
            prop_assert_eq!(after, before);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_weights_sum_to_one(seed in any::<u64>(), v in variant(), t in 1usize..12) {
        let mut rng = Rng::new(seed);
        let model = Seq2SeqModel::<f64>::initialized(ModelConfig::new(v, true, 6, 4), &mut rng).unwrap();
        let h_dec = Tensor::vector(&(0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect::<Vec<_>>());
        let enc: Vec<f64> = (0..t * 6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let w = model.attention_weights(&h_dec, &Tensor::new(vec![t, 6], enc).unwrap()).unwrap();
        prop_assert!(w.data().iter().all(|&a| a >= 0.0));
        prop_assert!((w.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn data_splits_are_disjoint(seed in any::<u64>()) {
        let config = DataConfig {
            train_lengths: vec![3, 4],
            gen_lengths: vec![1, 5],
            counts: SplitCounts { train: 20, dev: 20, test: 30, gen: 30 },
        };
        let data = generate_splits(Task::Reversal, seed, &config).unwrap();
        let mut seen = std::collections::HashSet::new();
        for split in [Split::Train, Split::Dev, Split::Test] {
            for p in &data.split(split).pairs {
                prop_assert!(seen.insert(p.input.clone()), "{} repeats across splits", p.input);
                prop_assert_eq!(&p.target, &Task::Reversal.apply(&p.input).unwrap());
            }
        }
        for p in &data.split(Split::Gen).pairs {
            prop_assert!(!config.train_lengths.contains(&p.input.len()));
            prop_assert!(p.input.len() == 1 || !seen.contains(&p.input));
        }
    }
}

fn mean_loss(model: &Seq2SeqModel<f64>, inputs: &[Vec<usize>], targets: &[Vec<usize>]) -> f64 {
    let mut g = Eval::new(model.params());
    let l = model.loss(&mut g, inputs, targets).unwrap();
    g.value(&l).item().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    // A small enough step always goes downhill on a frozen batch.
    #[test]
    fn one_small_step_lowers_the_loss(seed in any::<u64>(), v in variant(), attention in any::<bool>(), w in nonempty_word(6)) {
        let mut rng = Rng::new(seed);
        let mut model = Seq2SeqModel::<f64>::initialized(ModelConfig::new(v, attention, 8, 5), &mut rng).unwrap();
        let source = transduce::vocab::encoder_input(&w).unwrap();
        let target = transduce::vocab::decoder_target(&Task::Reversal.apply(&w).unwrap()).unwrap();
        let (inputs, targets) = (vec![source], vec![target]);
        let before = mean_loss(&model, &inputs, &targets);
        let mut grads = {
            let mut tape = Tape::new(model.params());
            let loss = model.loss(&mut tape, &inputs, &targets).unwrap();
            tape.backward(loss).unwrap().into_params()
        };
        clip_global_norm(&mut grads, 1.0).unwrap();
        let mut state = AdamState::new(model.params());
        adam_step(model.params_mut(), &grads, &mut state, &AdamConfig::new(1e-5, 0.0)).unwrap();
        prop_assert!(mean_loss(&model, &inputs, &targets) < before);
    }
}
