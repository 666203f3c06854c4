use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use progcpr::data::{
    make_split, synthesize_dataset, ColumnData, ColumnSchema, SplitSpec, SyntheticSpec, TabularDataset,
};
use progcpr::encoding::{encode, fit_cpr, CategoricalEncoder};
use progcpr::nn::RowSource;
use progcpr::progressive::{
    refine_pseudo_labels, run_progressive, update_representation, PseudoLabelSet, RefinementMode, RunConfig,
};

fn five_rows() -> TabularDataset {
    let schema = vec![ColumnSchema::categorical("c", vec!["a".into(), "b".into()])];
    TabularDataset::new(schema, vec![ColumnData::Categorical(vec![0, 0, 1, 0, 1])], Some(vec![0, 1, 1, 0, 1]), 2)
        .unwrap()
}

fn base(ds: &TabularDataset) -> CategoricalEncoder {
    CategoricalEncoder::Cpr(fit_cpr(ds, &[0, 1, 2], &[0, 1, 1], 0.0).unwrap())
}

#[test]
fn empty_kept_set_is_identity() {
    let ds = five_rows();
    let b = base(&ds);
    assert_eq!(update_representation(&b, &ds, &[], &[]).unwrap(), b);
}

#[test]
fn ground_truth_pseudo_labels_equal_full_fit() {
    let ds = five_rows();
    let up = update_representation(&base(&ds), &ds, &[3, 4], &[0, 1]).unwrap();
    let full = CategoricalEncoder::Cpr(fit_cpr(&ds, &[0, 1, 2, 3, 4], &[0, 1, 1, 0, 1], 0.0).unwrap());
    assert_eq!(up, full);
}

#[test]
fn wrong_pseudo_label_shifts_mass_by_count() {
    // Labeled: a -> {0, 1}. Row 3 is truly 0 (value a) but labeled 1.
    let ds = five_rows();
    let CategoricalEncoder::Cpr(t) = update_representation(&base(&ds), &ds, &[3], &[1]).unwrap() else {
        unreachable!()
    };
    assert_eq!(t.probabilities(0, 0), vec![1.0 / 3.0, 2.0 / 3.0]);
    assert_eq!(t.probabilities(0, 1), vec![0.0, 1.0]);
}

/// Pseudo-labeler with the given accuracy whose confidence is drawn higher
/// for correct labels.
fn simulated(n: usize, acc: f64, seed: u64) -> (PseudoLabelSet, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 3u32;
    let mut truth = Vec::new();
    let mut labels = Vec::new();
    let mut conf = Vec::new();
    for _ in 0..n {
        let y = rng.random_range(0..c);
        let correct = rng.random::<f64>() < acc;
        let l = if correct { y } else { (y + rng.random_range(1..c)) % c };
        let u: f64 = rng.random();
        conf.push(if correct { 0.5 + 0.5 * u.sqrt() } else { 0.4 + 0.55 * u * u });
        truth.push(y);
        labels.push(l);
    }
    let pls = PseudoLabelSet::new((0..n).collect(), labels.clone()).with_classifier(labels, conf.clone());
    (pls.with_propagation_weight(conf), truth)
}

#[test]
fn refinement_raises_precision() {
    for seed in 0..20 {
        let (pls, truth) = simulated(2000, 0.7, seed);
        let all = pls.precision(RefinementMode::None, &truth).unwrap();
        let kept = refine_pseudo_labels(&pls, RefinementMode::ClassifierThreshold, 0.9, 0.9).unwrap();
        let p = kept.precision(RefinementMode::ClassifierThreshold, &truth).unwrap();
        assert!(p > all, "seed {seed}: {p} vs {all}");
    }
}

fn subset(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).all(|(&x, &y)| !x || y)
}

proptest! {
    #[test]
    fn refinement_is_monotone_and_nested(seed in any::<u64>(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (mut pls, _) = simulated(200, 0.7, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        pls.classifier_labels = Some(pls.labels.iter().map(|&l| if rng.random::<f64>() < 0.2 { (l + 1) % 3 } else { l }).collect());
        for mode in [RefinementMode::ClassifierThreshold, RefinementMode::PropagationThreshold, RefinementMode::TwoStepAgreement] {
            let a = refine_pseudo_labels(&pls, mode, lo, lo).unwrap();
            let b = refine_pseudo_labels(&pls, mode, hi, hi).unwrap();
            prop_assert!(subset(&b.kept, &a.kept));
        }
        let two = refine_pseudo_labels(&pls, RefinementMode::TwoStepAgreement, lo, lo).unwrap();
        let prop = refine_pseudo_labels(&pls, RefinementMode::PropagationThreshold, lo, lo).unwrap();
        prop_assert!(subset(&two.kept, &prop.kept));
    }

    #[test]
    fn reencoding_touches_only_changed_values(seed in any::<u64>(), n_update in 0usize..20) {
        let ds = synthesize_dataset(&SyntheticSpec { n_rows: 120, cardinality: 15, seed, ..SyntheticSpec::default() }).unwrap();
        let labels = ds.labels().unwrap().to_vec();
        let rows: Vec<usize> = (0..40).collect();
        let b = CategoricalEncoder::Cpr(fit_cpr(&ds, &rows, &labels[..40], 1.0).unwrap());
        let upd: Vec<usize> = (40..40 + n_update).collect();
        let up = update_representation(&b, &ds, &upd, &labels[40..40 + n_update]).unwrap();
        let all: Vec<usize> = (0..ds.n_rows()).collect();
        let x0 = encode(&ds, &all, &b).unwrap();
        let x1 = encode(&ds, &all, &up).unwrap();
        let (d0, d1) = (x0.gather(&all), x1.gather(&all));
        for blk in x0.blocks() {
            let touched: Vec<u32> = match ds.column(blk.column) {
                ColumnData::Categorical(cells) => upd.iter().map(|&r| cells[r]).collect(),
                ColumnData::Numerical(_) => Vec::new(),
            };
            for r in 0..ds.n_rows() {
                let changed = match ds.column(blk.column) {
                    ColumnData::Categorical(cells) => touched.contains(&cells[r]),
                    ColumnData::Numerical(_) => false,
                };
                let same = (blk.start..blk.start + blk.width).all(|j| d0.get(r, j).to_bits() == d1.get(r, j).to_bits());
                if !changed {
                    prop_assert!(same, "row {} column {}", r, blk.column);
                }
            }
        }
    }
}

fn small_setup() -> (TabularDataset, progcpr::data::DataSplit, RunConfig) {
    let ds = synthesize_dataset(&SyntheticSpec { n_rows: 400, cardinality: 12, ..SyntheticSpec::default() }).unwrap();
    let split = make_split(&ds, &SplitSpec::new(0.8, 0.2, 7)).unwrap();
    let mut cfg = RunConfig::progressive_vime();
    cfg.vime.pretext_epochs = 2;
    cfg.vime.semisup_epochs = 3;
    cfg.vime.predictor_hidden = vec![16];
    (ds, split, cfg)
}

#[test]
fn disabled_update_never_changes_the_table() {
    let (ds, split, mut cfg) = small_setup();
    cfg.n_runs = 3;
    cfg.update_enabled = false;
    let out = run_progressive(&ds, &split, &cfg).unwrap();
    assert!(out.tables.iter().all(|t| t == &out.tables[0]));
    let accs: Vec<f64> = out.report.runs.iter().map(|r| r.test_accuracy).collect();
    assert!(accs.iter().all(|&a| a == accs[0]));
}

#[test]
fn single_run_matches_baseline() {
    let (ds, split, mut cfg) = small_setup();
    cfg.n_runs = 1;
    cfg.update_enabled = false;
    let mut base = RunConfig::vime_baseline();
    base.vime = cfg.vime.clone();
    let a = run_progressive(&ds, &split, &cfg).unwrap();
    let b = run_progressive(&ds, &split, &base).unwrap();
    assert_eq!(a.test_predictions, b.test_predictions);
    assert_eq!(a.report.final_test_accuracy.to_bits(), b.report.final_test_accuracy.to_bits());
}

#[test]
fn report_json_round_trips() {
    let (ds, split, mut cfg) = small_setup();
    cfg.n_runs = 2;
    let out = run_progressive(&ds, &split, &cfg).unwrap();
    let back = progcpr::progressive::ExperimentReport::from_json(&out.report.to_json()).unwrap();
    assert_eq!(back, out.report);
}
