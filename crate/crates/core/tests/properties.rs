mod common;

use csasr::analysis::{line_plot_svg, scatter_svg, ScatterPoint, Series};
use csasr::autodiff::{Graph, Tensor};
use csasr::corpus::io::{format_record, parse_record};
use csasr::corpus::{Language, UttClass, Utterance};
use csasr::decode::{parse_decoded, BigramLm};
use csasr::losses::{
    cd_constraint, ctc_feasible, ctc_neg_log_likelihood, fit_gaussian, fusion_coefficients, jsd_constraint, Jitter,
    LossWeights, Mode,
};
use csasr::metrics::edit_distance;
use csasr::model::{decode_checkpoint, encode_checkpoint, Checkpoint, Model};
use csasr::train::batches;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn mode() -> impl Strategy<Value = Mode> {
    prop::sample::select(Mode::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_weights_are_a_distribution(l in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0, m in mode()) {
        let c = fusion_coefficients(&LossWeights { lambda: l, alpha: a, beta: b }, m);
        prop_assert!(c.iter().all(|&v| v >= 0.0));
        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn closed_gate_matches_baseline(l in 0.0f64..=1.0, b in 0.0f64..=1.0, m in mode()) {
        let w = LossWeights { lambda: l, alpha: 1.0, beta: b };
        prop_assert_eq!(fusion_coefficients(&w, m), fusion_coefficients(&w, Mode::Baseline));
    }

    #[test]
    fn gaussian_divergence_is_symmetric_and_nonnegative(a in matrix(6, 3), b in matrix(5, 3)) {
        let mut g = Graph::new();
        let (ra, rb) = (g.constant(a), g.constant(b));
        let ga = fit_gaussian(&mut g, ra, Jitter::default()).unwrap();
        let gb = fit_gaussian(&mut g, rb, Jitter::default()).unwrap();
        let ab = jsd_constraint(&mut g, &ga, &gb).unwrap();
        let ba = jsd_constraint(&mut g, &gb, &ga).unwrap();
        let (ab, ba) = (g.scalar_value(ab), g.scalar_value(ba));
        prop_assert!(ab >= -1e-9 * ab.abs().max(1.0));
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.abs().max(1.0));
    }

    #[test]
    fn fitted_covariance_is_symmetric(a in matrix(4, 3)) {
        let mut g = Graph::new();
        let r = g.constant(a);
        let s = fit_gaussian(&mut g, r, Jitter::default()).unwrap();
        let c = g.value(s.covariance);
        for i in 0..3 {
            prop_assert!(c.at(i, i) > 0.0);
            for j in 0..3 {
                prop_assert!((c.at(i, j) - c.at(j, i)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cosine_distance_is_bounded(a in prop::collection::vec(-3.0f64..3.0, 4), b in prop::collection::vec(-3.0f64..3.0, 4)) {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
        let mut g = Graph::new();
        let (ca, cb) = (g.constant(Tensor::vector(&a)), g.constant(Tensor::vector(&b)));
        let d = cd_constraint(&mut g, ca, cb).unwrap();
        let d = g.scalar_value(d);
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&d));
    }

    #[test]
    fn ctc_likelihood_is_a_probability(logits in matrix(5, 3), target in prop::collection::vec(1usize..3, 1..4)) {
        let mut g = Graph::new();
        let x = g.constant(logits);
        let lp = g.log_softmax(x);
        let lp = g.value(lp);
        match ctc_neg_log_likelihood(lp, &target, 0) {
            Ok(nll) => {
                prop_assert!(ctc_feasible(&target, 5));
                prop_assert!(nll >= 0.0 && nll.is_finite());
            }
            Err(_) => prop_assert!(!ctc_feasible(&target, 5)),
        }
    }

    #[test]
    fn edit_distance_bounds(a in prop::collection::vec(0u8..4, 0..8), b in prop::collection::vec(0u8..4, 0..8)) {
        let ab = edit_distance(&a, &b);
        let ba = edit_distance(&b, &a);
        prop_assert_eq!(edit_distance(&a, &a).errors(), 0);
        prop_assert_eq!(ab.errors(), ba.errors());
        prop_assert!(ab.errors() <= a.len().max(b.len()));
        prop_assert!(ab.errors() >= a.len().abs_diff(b.len()));
        prop_assert_eq!(a.len() + ab.insertions, b.len() + ab.deletions);
    }

    #[test]
    fn split_records_round_trip(
        transcript in prop::collection::vec(3usize..20, 1..6),
        frames in matrix(4, 3),
        id in "[a-z0-9_-]{1,12}",
    ) {
        let u = Utterance { id, class: UttClass::MonoL1, transcript, features: frames };
        prop_assert_eq!(parse_record(&format_record(&u)).unwrap(), u);
    }

    #[test]
    fn record_parser_never_panics(line in ".{0,200}") {
        let _ = parse_record(&line);
        let _ = parse_decoded(&line, "fuzz");
        let _ = BigramLm::from_json(&line);
    }

    #[test]
    fn checkpoint_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_checkpoint(&bytes);
    }

    #[test]
    fn checkpoints_round_trip(seed in 0u64..1000, epoch in 0usize..50, step in 0u64..10_000) {
        let model = Model::new(common::tiny_model_config(9, seed)).unwrap();
        let ck = Checkpoint { model, epoch, step, extra: Default::default() };
        prop_assert_eq!(decode_checkpoint(&encode_checkpoint(&ck)).unwrap(), ck);
    }

    #[test]
    fn batches_partition_the_training_set(seed in 0u64..100, epoch in 1usize..5, size in 1usize..7) {
        let corpus = common::tiny_corpus(1);
        let plan = batches(&corpus.train, size, seed, epoch);
        let mut all: Vec<usize> = plan.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..corpus.train.len()).collect::<Vec<_>>());
        prop_assert!(plan.iter().all(|b| !b.is_empty() && b.len() <= size));
        prop_assert_eq!(plan, batches(&corpus.train, size, seed, epoch));
    }

    #[test]
    fn bigram_rows_normalise(k in 0.01f64..2.0, seed in 0u64..50) {
        let corpus = common::tiny_corpus(seed);
        let lm = BigramLm::train(&corpus.vocab, &corpus.lm_text, k).unwrap();
        for prev in std::iter::once(csasr::corpus::SOS).chain(corpus.vocab.lexical_ids()) {
            let total: f64 = (0..corpus.vocab.len()).map(|t| lm.log_prob(prev, t).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "row {} sums to {}", prev, total);
        }
    }

    #[test]
    fn plots_are_well_formed_svg(
        pts in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6, any::<bool>(), "[a-z<>&\"']{0,6}"), 0..20),
        title in "[ -~]{0,20}",
    ) {
        let scatter: Vec<ScatterPoint> = pts
            .iter()
            .map(|(x, y, l1, name)| ScatterPoint {
                token: name.clone(),
                language: if *l1 { Language::L1 } else { Language::L2 },
                pc1: *x,
                pc2: *y,
            })
            .collect();
        let svg = scatter_svg(&scatter, &title);
        let doc = roxmltree::Document::parse(&svg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut labels: Vec<String> = doc
            .descendants()
            .filter(|n| n.has_tag_name("circle"))
            .filter_map(|c| c.children().find(|n| n.has_tag_name("title")))
            .map(|t| t.text().unwrap_or("").to_string())
            .collect();
        let mut want: Vec<String> = scatter.iter().map(|p| p.token.clone()).collect();
        labels.sort();
        want.sort();
        prop_assert_eq!(labels, want);
        let series = [Series { name: title.clone(), points: pts.iter().map(|p| (p.0, p.1)).collect() }];
        let line = line_plot_svg(&series, &title, "x", "y");
        prop_assert!(roxmltree::Document::parse(&line).is_ok());
    }
}
