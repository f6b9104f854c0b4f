use std::sync::Arc;

use graphweight::evaluation::{balanced_accuracy, mann_whitney_u};
use graphweight::graph::{factor_basis, NULL_TOL};
use graphweight::model::bce_loss;
use graphweight::synth::{generate, SynthSpec};
use graphweight::training::{Split, Trainer};
use graphweight::{
    Classifier, CohortDataset, DenseMatrix, FactorTable, LogisticClassifier, MSelection,
    RecurrentClassifier, Scheme, SpectralBasis, TrainConfig, WeightField,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table_from(values: Vec<f64>, n: usize) -> FactorTable {
    FactorTable::new(
        vec!["a".into(), "b".into(), "c".into()],
        DenseMatrix::new(n, 3, values).unwrap(),
    )
    .unwrap()
}

fn logistic_cfg(scheme: Scheme, seed: u64) -> TrainConfig {
    TrainConfig {
        scheme,
        epochs: 3,
        lr_model: 0.05,
        lr_a: 0.01,
        batch_size: 7,
        k_neighbors: 5,
        seed,
        ..TrainConfig::default()
    }
}

fn small_data(seed: u64) -> (CohortDataset, FactorTable) {
    let c = generate(&SynthSpec {
        n_subjects: 30,
        feature_width: 4,
        seed,
        ..SynthSpec::default()
    })
    .unwrap();
    (c.dataset, c.factors)
}

fn split_every(n: usize, k: usize) -> Split {
    Split::new(
        (0..n).filter(|i| i % k != 0).collect(),
        (0..n).filter(|i| i % k == 0).collect(),
    )
}

fn logistic_init(f: usize) -> impl Fn(&mut ChaCha8Rng) -> LogisticClassifier {
    move |rng| LogisticClassifier::init(f, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn basis_survives_permutation(
        (n, values) in (12usize..30).prop_flat_map(|n| (Just(n), proptest::collection::vec(-3.0f64..3.0, n * 3))),
        seed in 0u64..1000,
    ) {
        let table = table_from(values.clone(), n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<f64> = perm.iter().flat_map(|&p| values[3 * p..3 * p + 3].to_vec()).collect();
        let (_, b0) = factor_basis(&table, 4, MSelection::Fixed(4)).unwrap();
        let (_, b1) = factor_basis(&table_from(permuted, n), 4, MSelection::Fixed(4)).unwrap();
        // Eigenvectors are only defined up to rotation inside a repeated eigenvalue.
        let gaps = b0.spectrum.windows(2).filter(|w| w[1] > NULL_TOL).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        prop_assume!(gaps > 1e-6);
        for (x, y) in b0.spectrum.iter().zip(&b1.spectrum) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for j in 0..4 {
            let orig = b0.basis.column(j);
            let back: Vec<f64> = {
                let col = b1.basis.column(j);
                let mut out = vec![0.0; n];
                for (pos, &p) in perm.iter().enumerate() {
                    out[p] = col[pos];
                }
                out
            };
            let same = orig.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let flipped = orig.iter().zip(&back).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            prop_assert!(same.min(flipped) < 1e-6, "column {} differs by {} / {}", j, same, flipped);
        }
    }

    #[test]
    fn grad_a_matches_central_differences(
        values in proptest::collection::vec(-3.0f64..3.0, 20 * 3),
        seed in 0u64..1000,
        c in -0.5f64..1.5,
    ) {
        let (_, basis) = factor_basis(&table_from(values, 20), 4, MSelection::Fixed(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let losses: Vec<f64> = (0..14).map(|_| rng.random_range(0.0..3.0)).collect();
        let rows: Vec<usize> = (0..14).collect();
        let field = WeightField::new(Arc::new(basis), c, rows.clone(), (14..20).collect())
            .unwrap()
            .with_coeffs(a.clone())
            .unwrap();
        let min_w = field.weights(&rows).unwrap().iter().fold(f64::INFINITY, |m, w| m.min(w.abs()));
        prop_assume!(min_w > 1e-4);
        let g = field.grad_a(&rows, &losses).unwrap();
        // The objective is linear in a between hinge kinks, and basis entries are at most 1,
        // so this step never crosses a kink and keeps rounding noise far below the gradient.
        let h = 0.5 * min_w;
        for j in 0..5 {
            let mut ap = a.clone();
            ap[j] += h;
            let mut am = a.clone();
            am[j] -= h;
            let fp = field.clone().with_coeffs(ap).unwrap().objective(&rows, &losses).unwrap();
            let fm = field.clone().with_coeffs(am).unwrap().objective(&rows, &losses).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let rel = (g[j] - fd).abs() / g[j].abs().max(fd.abs()).max(1e-8);
            prop_assert!(rel < 1e-4, "coefficient {}: {} vs {}", j, g[j], fd);
        }
    }

    #[test]
    fn recurrent_probabilities_bounded(seed in 0u64..1000, scale in 0.0f64..1e6, len in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = RecurrentClassifier::init(3, 6, 4, &mut rng);
        let seq: Vec<Vec<f64>> = (0..len).map(|_| (0..3).map(|_| rng.random_range(-scale..=scale)).collect()).collect();
        let p = model.predict(&seq).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p.to_bits(), model.predict(&seq).unwrap().to_bits());
        for y in [0, 1] {
            let l = bce_loss(p, y);
            prop_assert!(l.is_finite() && l <= -(1e-7f64).ln() + 1e-12);
        }
    }

    #[test]
    fn bacc_symmetric_under_relabeling(pairs in proptest::collection::vec((0u8..2, 0u8..2), 2..40)) {
        let (y, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let flip = |v: &[u8]| v.iter().map(|x| 1 - x).collect::<Vec<u8>>();
        match (balanced_accuracy(&y, &p), balanced_accuracy(&flip(&y), &flip(&p))) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-15),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "definedness changed under relabeling"),
        }
    }

    #[test]
    fn mann_whitney_u_counts_pairs(
        a in proptest::collection::vec(1u8..=6, 1..=6),
        b in proptest::collection::vec(1u8..=6, 1..=6),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let mut won = 0.0;
        for x in &a {
            for y in &b {
                won += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
            }
        }
        let t = mann_whitney_u(&a, &b).unwrap();
        prop_assert_eq!(t.u_a, won);
        prop_assert_eq!(t.u, won.min((a.len() * b.len()) as f64 - won));
        prop_assert!((0.0..=1.0).contains(&t.p_value));
    }

    #[test]
    fn synthesis_is_pure(seed in 0u64..10_000, n in 2usize..40) {
        let spec = SynthSpec { n_subjects: n, feature_width: 3, seed, ..SynthSpec::default() };
        prop_assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn test_rows_never_reach_training(seed in 0u64..500, noise in 1.0f64..100.0) {
        let (data, factors) = small_data(seed);
        let cfg = logistic_cfg(Scheme::Spectral, seed);
        let split = split_every(data.len(), 4);
        let (_, basis) = factor_basis(&factors, cfg.k_neighbors, MSelection::Fixed(3)).unwrap();
        let basis = Arc::new(basis);
        let mut other = data.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for &r in &split.test {
            let visits = (0..rng.random_range(1..4)).map(|_| (0..4).map(|_| rng.random_range(-noise..noise)).collect()).collect();
            other.replace(r, visits, rng.random_range(0..2)).unwrap();
        }
        let run = |d: &CohortDataset| Trainer::new(d, &cfg, logistic_init(4)).unwrap().train_spectral(basis.clone(), &split).unwrap();
        let (x, y) = (run(&data), run(&other));
        prop_assert_eq!(x.model.params(), y.model.params());
        let (fx, fy) = (x.field.unwrap(), y.field.unwrap());
        prop_assert_eq!(&fx.coeffs_a, &fy.coeffs_a);
        prop_assert_eq!(fx.weights(&split.test).unwrap(), fy.weights(&split.test).unwrap());
    }

    #[test]
    fn none_matches_empty_spectral(seed in 0u64..500) {
        let (data, _) = small_data(seed);
        let split = split_every(data.len(), 5);
        let none_cfg = logistic_cfg(Scheme::None, seed);
        let spec_cfg = TrainConfig { centering_c: 1.0, ..logistic_cfg(Scheme::Spectral, seed) };
        let a = Trainer::new(&data, &none_cfg, logistic_init(4)).unwrap().train_baseline_none(&split).unwrap();
        let b = Trainer::new(&data, &spec_cfg, logistic_init(4)).unwrap()
            .train_spectral(Arc::new(SpectralBasis::empty(data.len())), &split).unwrap();
        prop_assert_eq!(a.model.params(), b.model.params());
        prop_assert_eq!(a.epoch_objectives, b.epoch_objectives);
        prop_assert_eq!(a.weight_history, b.weight_history);
    }

    #[test]
    fn jtt_weights_take_two_values(seed in 0u64..500, lambda in 1.0f64..6.0) {
        let (data, _) = small_data(seed);
        let cfg = TrainConfig { jtt_lambda: lambda, ..logistic_cfg(Scheme::Jtt, seed) };
        let (stage2, _) = Trainer::new(&data, &cfg, logistic_init(4)).unwrap().train_jtt(&split_every(data.len(), 5)).unwrap();
        for epoch in &stage2.weight_history {
            prop_assert!(epoch.iter().all(|&w| w == 1.0 || w == lambda));
        }
        prop_assert!(stage2.epoch_objectives.iter().all(|o| o.is_finite()));
    }
}
