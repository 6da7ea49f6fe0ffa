//! Property tests for the algebraic invariants of the core transforms.

use proptest::prelude::*;

use shiftbench::calibration::{apply_calibrator, Calibrator};
use shiftbench::estimators::{
    estimate_bbsl, estimate_cc, estimate_em, estimate_leip, EmConfig, EmInit, LeipConfig,
    Smoothing, TauRule,
};
use shiftbench::evaluation::weights_from;
use shiftbench::prob::{
    batch_prior_update, prior_update, ConfusionMatrix, LogitMatrix, PosteriorMatrix,
    ProbabilitySimplex,
};

/// A simplex with entries bounded away from zero, so it can serve as a
/// source or strictly positive target.
fn positive_simplex(classes: usize) -> impl Strategy<Value = ProbabilitySimplex> {
    prop::collection::vec(0.05f64..1.0, classes)
        .prop_map(|raw| ProbabilitySimplex::from_unnormalized(raw).expect("positive entries"))
}

/// A simplex that may sit anywhere in the closed simplex.
fn any_simplex(classes: usize) -> impl Strategy<Value = ProbabilitySimplex> {
    prop::collection::vec(0.0f64..1.0, classes).prop_map(|mut raw| {
        if raw.iter().sum::<f64>() <= 0.0 {
            raw[0] = 1.0;
        }
        ProbabilitySimplex::from_unnormalized(raw).expect("nonzero mass")
    })
}

fn posterior_matrix(rows: usize, classes: usize) -> impl Strategy<Value = PosteriorMatrix> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, classes), 1..=rows).prop_map(|raw| {
        let rows: Vec<Vec<f64>> = raw
            .into_iter()
            .map(|r| {
                let sum: f64 = r.iter().sum();
                r.into_iter().map(|x| x / sum).collect()
            })
            .collect();
        PosteriorMatrix::from_rows(rows).expect("normalized rows")
    })
}

proptest! {
    #[test]
    fn prior_update_is_a_bijection_on_the_interior(
        posterior in positive_simplex(4),
        source in positive_simplex(4),
        target in positive_simplex(4),
    ) {
        let forward = prior_update(&posterior, &source, &target).unwrap();
        let back = prior_update(&forward, &target, &source).unwrap();
        for (a, b) in back.probs().iter().zip(posterior.probs()) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn prior_update_identity_is_exact(
        posterior in any_simplex(3),
        source in positive_simplex(3),
    ) {
        let updated = prior_update(&posterior, &source, &source).unwrap();
        for (a, b) in updated.probs().iter().zip(posterior.probs()) {
            prop_assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn prior_update_output_is_simplex(
        posterior in any_simplex(5),
        source in positive_simplex(5),
        target in any_simplex(5),
    ) {
        let updated = prior_update(&posterior, &source, &target);
        // Zero-mass overlap is a legal error; anything else must be valid.
        if let Ok(updated) = updated {
            let sum: f64 = updated.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(updated.probs().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn prior_update_preserves_product_argmax(
        posterior in positive_simplex(4),
        source in positive_simplex(4),
        target in positive_simplex(4),
    ) {
        let updated = prior_update(&posterior, &source, &target).unwrap();
        let product: Vec<f64> = posterior
            .probs()
            .iter()
            .zip(source.probs())
            .zip(target.probs())
            .map(|((&p, &s), &t)| t / s * p)
            .collect();
        let mut best = 0;
        for (i, &v) in product.iter().enumerate() {
            if v > product[best] {
                best = i;
            }
        }
        prop_assert_eq!(updated.argmax(), best);
    }

    #[test]
    fn batch_update_equals_rowwise_updates(
        matrix in posterior_matrix(8, 3),
        source in positive_simplex(3),
        target in positive_simplex(3),
    ) {
        let batch = batch_prior_update(&matrix, &source, &target).unwrap();
        for k in 0..matrix.n_rows() {
            let row = ProbabilitySimplex::new(matrix.row(k).to_vec()).unwrap();
            let single = prior_update(&row, &source, &target).unwrap();
            for (a, b) in batch.row(k).iter().zip(single.probs()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn calibrated_rows_always_sum_to_one(
        rows in prop::collection::vec(prop::collection::vec(-6.0f64..6.0, 3), 1..20),
        temperature in 0.05f64..20.0,
    ) {
        let logits = LogitMatrix::from_rows(rows).unwrap();
        let cal = Calibrator::temperature_scaling(temperature).unwrap();
        let posteriors = apply_calibrator(&cal, &logits).unwrap();
        for row in posteriors.rows_iter() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bbsl_forward_multiplication_reproduces_u_hat(
        source in positive_simplex(3),
        weights_raw in prop::collection::vec(0.2f64..2.0, 3),
        noise in 0.0f64..0.15,
    ) {
        // Diagonally dominant conditional confusion: well conditioned.
        let m = 3;
        let mut entries = vec![0.0; m * m];
        for j in 0..m {
            for i in 0..m {
                entries[i * m + j] = if i == j { 1.0 - noise * 2.0 } else { noise };
            }
        }
        let confusion = ConfusionMatrix::conditional(entries, m).unwrap();
        // Normalize the weights so u_hat = C_joint w sums to one.
        let mass: f64 = weights_raw
            .iter()
            .zip(source.probs())
            .map(|(w, p)| w * p)
            .sum();
        let w_star: Vec<f64> = weights_raw.iter().map(|w| w / mass).collect();
        let joint = confusion.to_joint(&source).unwrap();
        let mut u = vec![0.0; m];
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = w_star
                .iter()
                .enumerate()
                .map(|(j, w)| joint.entry(i, j) * w)
                .sum();
        }
        let u_hat = ProbabilitySimplex::new(u).unwrap();
        let recovered = estimate_bbsl(&confusion, &u_hat, &source).unwrap();
        // No clipping occurs (w_star > 0), so the solve is exact.
        for (a, b) in recovered.weights().iter().zip(&w_star) {
            prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn estimators_always_return_simplices(
        matrix in posterior_matrix(30, 3),
        source in positive_simplex(3),
    ) {
        let em_cfg = EmConfig { init: EmInit::SourcePrior, ..EmConfig::default() };
        // Every 3-class row has max probability >= 1/3 > 0.3, so the
        // confident set is never empty.
        let leip_cfg = LeipConfig {
            tau: TauRule::Explicit(0.3),
            smoothing: Smoothing::Floor(0.01),
        };
        let results = [
            estimate_cc(&matrix).unwrap().distribution,
            estimate_em(&matrix, &source, &em_cfg, None).unwrap().distribution,
            estimate_leip(&matrix, &source, &leip_cfg, None).unwrap().distribution,
        ];
        for dist in results {
            let sum: f64 = dist.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(dist.probs().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn weights_times_source_is_a_distribution(
        distribution in any_simplex(4),
        source in positive_simplex(4),
    ) {
        let w = weights_from(&distribution, &source).unwrap();
        let mass: f64 = w
            .weights()
            .iter()
            .zip(source.probs())
            .map(|(wi, pi)| wi * pi)
            .sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        let implied = w.implied_distribution(&source).unwrap();
        prop_assert!(implied.l1_distance(&distribution) < 1e-9);
    }
}
