//! Synthesis through evaluation on a cohort small enough for a unit-test budget.

use wordaad::eegnet::EegNetConfig;
use wordaad::eval::{run_experiment, ExperimentConfig, Scheme, TrainConfig, Variant};
use wordaad::io::{load_epochset, save_epochset};
use wordaad::synth::{synth_dataset, SynthConfig};
use wordaad::Paradigm;

fn cohort() -> SynthConfig {
    SynthConfig {
        n_subjects: 3,
        counts: [(24, 48); 3],
        attended_rejections: [0; 3],
        snr_db: [6.0; 3],
        trials_per_subject: 16,
        ..Default::default()
    }
}

fn experiment(scheme: Scheme) -> ExperimentConfig {
    ExperimentConfig {
        scheme,
        variants: vec![Variant::OriginalTrained, Variant::AugmentedTrained],
        folds: Some(vec![0]),
        train: TrainConfig { passes: 1, ..Default::default() },
        model: EegNetConfig { f1: 2, k1: 16, d: 1, f2: 4, k2: 4, ..Default::default() },
        permutation_draws: 200,
        ..Default::default()
    }
}

#[test]
fn stored_cohort_runs_through_both_schemes_without_leakage() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("original.eaad");
    let data = synth_dataset(&cohort(), 5).unwrap().epochs;
    save_epochset(&data, &path).unwrap();
    let original = load_epochset(&path).unwrap();
    assert_eq!(original, data);

    for scheme in [Scheme::EightFold, Scheme::Loso] {
        let report = run_experiment(&original, None, &experiment(scheme), 5, &mut |_| {}).unwrap();
        assert_eq!(report.folds, vec![0]);
        assert!(!report.audits.is_empty());
        for audit in &report.audits {
            assert!(audit.is_clean(), "{scheme}: {audit:?}");
            assert!(audit.train_ids > 0 && audit.validation_ids > 0 && audit.test_ids > 0);
        }
        for variant in [Variant::OriginalTrained, Variant::AugmentedTrained] {
            for p in Paradigm::ALL {
                let acc = report.accuracy(0, variant, p).unwrap();
                assert!((0.0..=1.0).contains(&acc), "{scheme} {variant:?} {p}: {acc}");
            }
        }
        // The same seed reproduces the same numbers.
        let again = run_experiment(&original, None, &experiment(scheme), 5, &mut |_| {}).unwrap();
        assert_eq!(
            report.rows.iter().map(|r| r.balanced_accuracy.to_bits()).collect::<Vec<_>>(),
            again.rows.iter().map(|r| r.balanced_accuracy.to_bits()).collect::<Vec<_>>()
        );
    }
}
