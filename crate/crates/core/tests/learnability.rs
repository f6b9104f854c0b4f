//! Synthetic cohorts checked against a logistic model trained on them.

use graphweight::evaluation::{balanced_accuracy, threshold_labels};
use graphweight::synth::{generate, NoiseGroup, SynthSpec};
use graphweight::training::{predict_rows, Split, Trainer};
use graphweight::{CohortDataset, LogisticClassifier, Scheme, TrainConfig};

fn fit_and_score(data: &CohortDataset, split: &Split) -> Vec<f64> {
    let cfg = TrainConfig {
        scheme: Scheme::None,
        epochs: 40,
        lr_model: 0.05,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let f = data.feature_width();
    let trainer = Trainer::new(data, &cfg, move |rng: &mut _| {
        LogisticClassifier::init(f, rng)
    })
    .unwrap();
    let out = trainer.train_baseline_none(split).unwrap();
    predict_rows(&out.model, data, &split.test).unwrap()
}

fn halves(n: usize) -> Split {
    Split::new(
        (0..n).filter(|i| i % 2 == 0).collect(),
        (0..n).filter(|i| i % 2 == 1).collect(),
    )
}

fn test_bacc(data: &CohortDataset, split: &Split, rows: &[usize]) -> f64 {
    let probs = fit_and_score(data, split);
    let pos: Vec<usize> = rows
        .iter()
        .map(|r| split.test.iter().position(|t| t == r).unwrap())
        .collect();
    let labels: Vec<u8> = rows.iter().map(|&r| data.subject(r).label).collect();
    let preds = threshold_labels(&pos.iter().map(|&i| probs[i]).collect::<Vec<_>>());
    balanced_accuracy(&labels, &preds).unwrap()
}

#[test]
fn clean_strong_signal_is_separable() {
    let c = generate(&SynthSpec {
        flip_low: 0.0,
        flip_high: 0.0,
        signal_strength: 3.0,
        ..SynthSpec::default()
    })
    .unwrap();
    let split = halves(c.dataset.len());
    let bacc = test_bacc(&c.dataset, &split, &split.test);
    assert!(bacc > 0.95, "{bacc}");
}

#[test]
fn no_signal_means_chance() {
    let c = generate(&SynthSpec {
        signal_strength: 0.0,
        ..SynthSpec::default()
    })
    .unwrap();
    let split = halves(c.dataset.len());
    let bacc = test_bacc(&c.dataset, &split, &split.test);
    assert!((bacc - 0.5).abs() < 0.07, "{bacc}");
}

#[test]
fn low_noise_group_is_easier() {
    let c = generate(&SynthSpec::default()).unwrap();
    let split = halves(c.dataset.len());
    let group = |g| -> Vec<usize> {
        split
            .test
            .iter()
            .copied()
            .filter(|&r| c.noise_groups[r] == g)
            .collect()
    };
    let low = test_bacc(&c.dataset, &split, &group(NoiseGroup::Low));
    let high = test_bacc(&c.dataset, &split, &group(NoiseGroup::High));
    assert!(low > high, "low-noise {low} vs high-noise {high}");
}
