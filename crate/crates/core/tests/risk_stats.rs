mod common;

use std::collections::BTreeSet;

use common::{brute_force_auc, logistic_by_gradient_ascent};
use proptest::prelude::*;
use psgrisk::data_io::{CohortManifest, CohortSplit, Modality, SubjectRecord};
use psgrisk::phenotype::{ScoreTable, SubjectScore};
use psgrisk::stats::{
    assemble_features, auc, chi_square, evaluate_grid, fit_logistic, kruskal_wallis,
    odds_ratio_csv, odds_ratio_report, wald_odds_ratio, AucGrid, FeatureMatrix, FitOptions,
    GridCell, GridOptions, MissingReason, Predictor, PredictorSet, OR_COLUMNS, WALD_Z,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn design(rows: Vec<Vec<f64>>) -> FeatureMatrix {
    let p = rows.first().map_or(0, Vec::len);
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
    FeatureMatrix::new(names, ids, rows, 0).unwrap()
}

fn simulate(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..=p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let y = rows
        .iter()
        .map(|x| {
            let eta = beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            rng.random_bool(1.0 / (1.0 + (-eta).exp()))
        })
        .collect();
    (rows, y)
}

/// Upper normal tail by Simpson integration of the density, independent of
/// any special-function library.
fn normal_upper_tail(z: f64) -> f64 {
    let (a, b, n) = (z, z + 14.0, 40_000);
    let h = (b - a) / n as f64;
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = phi(a) + phi(b);
    for i in 1..n {
        s += phi(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fitted_models_solve_the_score_equations(seed in any::<u64>(), n in 60usize..200, p in 0usize..4) {
        let (rows, y) = simulate(seed, n, p);
        prop_assume!(y.iter().any(|&v| v) && y.iter().any(|&v| !v));
        let x = design(rows.clone());
        let m = fit_logistic(&x, &y, "o", FitOptions::default()).unwrap();
        prop_assume!(m.converged);
        let residuals: Vec<f64> = (0..n).map(|i| f64::from(u8::from(y[i])) - m.predict(x.row(i))).collect();
        prop_assert!(residuals.iter().sum::<f64>().abs() < 1e-6);
        for j in 0..p {
            let s: f64 = residuals.iter().zip(&rows).map(|(r, row)| r * row[j]).sum();
            prop_assert!(s.abs() < 1e-6);
        }
        let inside = (0..n).map(|i| m.predict(x.row(i))).all(|q| q > 0.0 && q < 1.0);
        prop_assert!(inside);
        let mean: f64 = (0..n).map(|i| m.predict(x.row(i))).sum::<f64>() / n as f64;
        let prevalence = y.iter().filter(|&&v| v).count() as f64 / n as f64;
        prop_assert!((mean - prevalence).abs() < 1e-8);

        let oracle = logistic_by_gradient_ascent(&rows, &y);
        for (a, b) in m.beta.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn auc_matches_pair_counting(
        s in prop::collection::vec(0u8..5, 2..50),
        y in prop::collection::vec(any::<bool>(), 50),
    ) {
        let y = &y[..s.len()];
        prop_assume!(y.iter().any(|&v| v) && y.iter().any(|&v| !v));
        let s: Vec<f64> = s.iter().map(|&v| f64::from(v)).collect();
        let a = auc(&s, y).unwrap();
        prop_assert!((a - brute_force_auc(&s, y)).abs() < 1e-12);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((a + auc(&neg, y).unwrap() - 1.0).abs() < 1e-12);
        let warped: Vec<f64> = s.iter().map(|v| (v * 0.7).exp() - 3.0).collect();
        prop_assert_eq!(auc(&warped, y).unwrap(), a);
    }

    #[test]
    fn rank_tests_ignore_ordering(seed in any::<u64>(), k in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..rng.random_range(2..9)).map(|_| f64::from(rng.random_range(0..6u8))).collect())
            .collect();
        let base = kruskal_wallis(&groups).unwrap();
        for g in &mut groups {
            g.shuffle(&mut rng);
        }
        groups.shuffle(&mut rng);
        let again = kruskal_wallis(&groups).unwrap();
        prop_assert!((base.statistic - again.statistic).abs() < 1e-12);
        prop_assert_eq!(base.dof, k - 1);

        let mut table: Vec<Vec<u64>> = (0..k)
            .map(|_| (0..3).map(|_| rng.random_range(1..30)).collect())
            .collect();
        let base = chi_square(&table, false).unwrap();
        table.shuffle(&mut rng);
        let again = chi_square(&table, false).unwrap();
        prop_assert!((base.statistic - again.statistic).abs() < 1e-9);
    }

    #[test]
    fn two_by_two_chi_square_matches_closed_form(a in 1u64..60, b in 1u64..60, c in 1u64..60, d in 1u64..60) {
        let r = chi_square(&[vec![a, b], vec![c, d]], false).unwrap();
        let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
        let n = a + b + c + d;
        let want = n * (a * d - b * c).powi(2) / ((a + b) * (c + d) * (a + c) * (b + d));
        prop_assert!((r.statistic - want).abs() <= 1e-9 * want.max(1.0));
        prop_assert_eq!(r.dof, 1);
    }

    #[test]
    fn two_dof_tail_is_exponential(seed in any::<u64>()) {
        // chi-square with 2 degrees of freedom has survival exp(-x/2)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table: Vec<Vec<u64>> = (0..2).map(|_| (0..3).map(|_| rng.random_range(1..40)).collect()).collect();
        let r = chi_square(&table, false).unwrap();
        prop_assert!((r.p_value - (-r.statistic / 2.0).exp()).abs() < 1e-10);
        let groups: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let h = kruskal_wallis(&groups).unwrap();
        prop_assert!((h.p_value - (-h.statistic / 2.0).exp()).abs() < 1e-10);
    }

    #[test]
    fn wald_intervals_follow_the_normal_quantile(beta in -3.0f64..3.0, se in 0.01f64..2.0) {
        let r = wald_odds_ratio("x", beta, se);
        prop_assert!((r.odds_ratio - beta.exp()).abs() < 1e-12 * beta.exp());
        prop_assert!((r.ci_low.ln() - (beta - WALD_Z * se)).abs() < 1e-12);
        prop_assert!((r.ci_high.ln() - (beta + WALD_Z * se)).abs() < 1e-12);
        let p = 2.0 * normal_upper_tail((beta / se).abs());
        prop_assert!((r.p_value - p).abs() < 1e-9);
        prop_assert_eq!(r.significant(), r.p_value < 0.05);
    }
}

#[test]
fn wald_quantile_gives_five_percent() {
    assert!((2.0 * normal_upper_tail(WALD_Z) - 0.05).abs() < 1e-6);
}

#[test]
fn kruskal_wallis_tie_correction() {
    // three groups with ties; H from the textbook tie-corrected formula
    let groups = vec![
        vec![1.0, 2.0, 2.0],
        vec![2.0, 3.0],
        vec![3.0, 4.0, 4.0, 5.0],
    ];
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let rank = |v: f64| {
        let below = all.iter().filter(|&&x| x < v).count() as f64;
        let equal = all.iter().filter(|&&x| x == v).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let h0: f64 = groups
        .iter()
        .map(|g| g.iter().map(|&v| rank(v)).sum::<f64>().powi(2) / g.len() as f64)
        .sum::<f64>()
        * 12.0
        / (n * (n + 1.0))
        - 3.0 * (n + 1.0);
    let ties = [1.0, 3.0, 2.0, 2.0, 1.0]; // sizes of the tie groups 1,2,3,4,5
    let correction = 1.0 - ties.iter().map(|t: &f64| t.powi(3) - t).sum::<f64>() / (n.powi(3) - n);
    let got = kruskal_wallis(&groups).unwrap();
    assert!((got.statistic - h0 / correction).abs() < 1e-12);
    assert_eq!(got.dof, 2);
}

fn record(id: &str, age: Option<f64>, labels: [Option<bool>; 2], frs: f64) -> SubjectRecord {
    SubjectRecord {
        subject_id: id.into(),
        age,
        sex: Some(u8::from(frs > 5.0)),
        bmi: Some(24.0 + frs),
        sbp: None,
        frs: Some(frs),
        outcomes: labels.to_vec(),
    }
}

/// 60 subjects whose ECG score tracks outcome A; outcome B is noise.
fn study(seed: u64) -> (CohortManifest, ScoreTable<f64>, CohortSplit) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    for i in 0..60 {
        let id = format!("S{i:02}");
        let a = i % 2 == 0;
        let b = rng.random_bool(0.5);
        rows.push(record(
            &id,
            Some(rng.random_range(40.0..80.0)),
            [Some(a), Some(b)],
            rng.random_range(0.0..10.0),
        ));
        for (o, m) in [
            ("A", Modality::Ecg),
            ("A", Modality::Eeg),
            ("B", Modality::Ecg),
        ] {
            let signal = if o == "A" && m == Modality::Ecg && a {
                0.8
            } else {
                0.0
            };
            scores.push(SubjectScore {
                subject_id: id.clone(),
                outcome: o.into(),
                modality: m,
                score: Some(signal + rng.random_range(-1.0..1.0)),
                n_segments_used: 3,
            });
        }
    }
    let manifest = CohortManifest::new(vec!["A".into(), "B".into()], rows).unwrap();
    let ids: Vec<String> = manifest.subject_ids().map(str::to_string).collect();
    let split = CohortSplit {
        train_ids: ids[..45].iter().cloned().collect(),
        test_ids: ids[45..].iter().cloned().collect(),
        seed,
    };
    (manifest, ScoreTable { rows: scores }, split)
}

#[test]
fn grid_has_standard_rows_and_never_peeks_at_other_labels() {
    let (manifest, scores, split) = study(1);
    let sets = PredictorSet::standard();
    let outcomes = vec!["A".to_string()];
    let grid = evaluate_grid(
        &scores,
        &manifest,
        &split,
        &sets,
        &outcomes,
        GridOptions::default(),
    )
    .unwrap();
    assert_eq!(grid.predictor_sets.len(), 11);
    assert!(grid.get("ECG", "A").unwrap().auc().unwrap() > 0.7);
    // no RESP scores at all
    assert_eq!(
        grid.get("Resp", "A"),
        Some(GridCell::Missing(MissingReason::SingleClassTrain))
    );

    let rows = manifest
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if split.is_test(&r.subject_id) {
                r.outcomes[1] = None;
            }
            r
        })
        .collect();
    let blinded = CohortManifest::new(manifest.outcomes().to_vec(), rows).unwrap();
    let again = evaluate_grid(
        &scores,
        &blinded,
        &split,
        &sets,
        &outcomes,
        GridOptions::default(),
    )
    .unwrap();
    assert_eq!(again.to_csv_string(), grid.to_csv_string());

    let text = grid.to_csv_string();
    let back = AucGrid::parse_csv(&text).unwrap();
    assert_eq!(back.to_csv_string(), text);
    assert!(text.contains("NA:single_class_train"));

    let standardized = evaluate_grid(
        &scores,
        &manifest,
        &split,
        &sets,
        &outcomes,
        GridOptions {
            standardize: true,
            ..GridOptions::default()
        },
    )
    .unwrap();
    // AUC of a linear predictor is invariant to affine rescaling of inputs
    let (a, b) = (
        grid.get("ECG", "A").unwrap().auc().unwrap(),
        standardized.get("ECG", "A").unwrap().auc().unwrap(),
    );
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn complete_case_drops_missing_covariates() {
    let (manifest, scores, _) = study(2);
    let mut rows = manifest.rows().to_vec();
    rows[0].age = None;
    rows[1].outcomes[0] = None;
    let manifest = CohortManifest::new(manifest.outcomes().to_vec(), rows).unwrap();
    let all: BTreeSet<String> = manifest.subject_ids().map(str::to_string).collect();
    let (x, y) = assemble_features(
        &manifest,
        &scores,
        "A",
        &[Predictor::Age, Predictor::Score(Modality::Ecg)],
        &all,
    )
    .unwrap();
    assert_eq!(x.n_rows(), 58);
    assert_eq!(y.len(), 58);
    assert_eq!(x.n_dropped(), 2);
    assert_eq!(x.names(), ["age", "score_ECG"]);
    let (x, _) = assemble_features(&manifest, &scores, "A", &[Predictor::Frs], &all).unwrap();
    assert_eq!(x.n_rows(), 59);
}

#[test]
fn odds_ratio_report_flags_the_planted_score() {
    let (manifest, scores, _) = study(3);
    let all: BTreeSet<String> = manifest.subject_ids().map(str::to_string).collect();
    let rows = odds_ratio_report(
        &scores,
        &manifest,
        &all,
        &["A".to_string()],
        &[Modality::Ecg, Modality::Resp],
        GridOptions::default(),
    )
    .unwrap();
    let ecg = rows[0].result.as_ref().unwrap();
    assert!(ecg.odds_ratio > 1.0 && ecg.ci_low < ecg.odds_ratio && ecg.odds_ratio < ecg.ci_high);
    assert!(ecg.significant());
    assert_eq!(rows[1].result, Err(MissingReason::SingleClassTrain));
    let csv = odds_ratio_csv(&rows);
    assert_eq!(csv.lines().next().unwrap(), OR_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 3);
}
