//! GLM estimation against an independent solver and on synthetic recordings.

use std::collections::BTreeMap;

use ndarray::Array2;
use proptest::prelude::*;

use nirtext::corpus::{build_schedule, realize_sentences, Schedule, TopicSet};
use nirtext::glm::{
    aggregate_delays, contrast_z, contrast_z_weighted, fir_run, fit_ols, pick_delay, prepare_input, z_vector,
    ContrastParams, ContrastRun, DesignMatrix, FirParams,
};
use nirtext::sigproc::PreprocParams;
use nirtext::synthgen::{render_run, CentredVectorizer, HashedVectorizer, Montage, RenderSpec, RunIds, SemanticMap};

fn pinv_beta(x: &Array2<f64>, y: &Array2<f64>) -> nalgebra::DMatrix<f64> {
    let xm = nalgebra::DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]]);
    let ym = nalgebra::DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[[i, j]]);
    xm.pseudo_inverse(1e-12).unwrap() * ym
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn ols_matches_pseudo_inverse(vals in prop::collection::vec(-3.0f64..3.0, 30 * 5), ys in prop::collection::vec(-3.0f64..3.0, 30 * 2)) {
        let x = Array2::from_shape_vec((30, 5), vals).unwrap();
        let y = Array2::from_shape_vec((30, 2), ys).unwrap();
        let d = DesignMatrix { data: x.clone(), names: (0..5).map(|i| format!("x{i}")).collect() };
        let fit = fit_ols(&d, y.view()).unwrap();
        let oracle = pinv_beta(&x, &y);
        for i in 0..5 {
            for j in 0..2 {
                prop_assert!((fit.beta[[i, j]] - oracle[(i, j)]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn ols_recovers_planted_coefficient() {
    let x = Array2::from_shape_fn((50, 5), |(i, j)| ((i as f64 + 1.0) * (j as f64 + 1.3)).sin());
    let y = Array2::from_shape_fn((50, 1), |(i, _)| 2.0 * x[[i, 3]]);
    let d = DesignMatrix { data: x, names: (0..5).map(|i| format!("x{i}")).collect() };
    let fit = fit_ols(&d, y.view()).unwrap();
    assert!((fit.beta[[3, 0]] - 2.0).abs() < 1e-9);
    assert!(fit.sigma2[0] < 1e-20);
}

struct Dataset {
    runs: Vec<(Schedule, BTreeMap<usize, String>)>,
}

fn dataset(n: usize, seed: u64) -> Dataset {
    let topics = TopicSet::shipped();
    let all = build_schedule(&topics, n, seed).unwrap();
    let sentences = realize_sentences(&all, &topics, seed, 0.0).unwrap();
    let runs = (0..n)
        .map(|r| {
            let schedule = all.run(r).unwrap();
            let global: Vec<usize> = all.events.iter().enumerate().filter(|(_, e)| e.run == r).map(|(i, _)| i).collect();
            let s = global.iter().enumerate().filter_map(|(l, g)| sentences.get(g).map(|s| (l, s.clone()))).collect();
            (schedule, s)
        })
        .collect();
    Dataset { runs }
}

fn contrast_runs(seed: u64, n_runs: usize, map: &SemanticMap) -> Vec<ContrastRun> {
    let montage = Montage::high_density();
    let corpus = TopicSet::shipped().all_sentences();
    let vec = CentredVectorizer::new(HashedVectorizer { width: 16, seed: 1 }, &corpus).unwrap();
    let spec = RenderSpec::default();
    dataset(n_runs, seed)
        .runs
        .into_iter()
        .enumerate()
        .map(|(r, (s, sent))| {
            let ids = RunIds { participant: "p01".into(), session: 0, run: r };
            let raw = render_run(&s, &sent, &vec, map, &montage, &spec, seed, ids).unwrap();
            let input = prepare_input(&raw, &montage, &spec.extinction, &PreprocParams::default()).unwrap();
            ContrastRun { input, events: s }
        })
        .collect()
}

#[test]
fn fir_picks_six_seconds_for_five_second_latency() {
    for seed in 0..4 {
        let map = SemanticMap::random(16, 40, 0.5, 0.5, seed + 100).unwrap();
        let runs = contrast_runs(seed, 5, &map);
        let sums: Vec<_> = runs.iter().map(|r| fir_run(&r.input, &r.events, &FirParams::default()).unwrap()).collect();
        let table = aggregate_delays(&sums, 0.5).unwrap();
        assert_eq!(pick_delay(&table).unwrap(), 6.0, "seed {seed}");
    }
}

#[test]
fn contrast_separates_planted_channels() {
    let map = SemanticMap::random(16, 40, 0.5, 0.5, 7).unwrap();
    let runs = contrast_runs(3, 6, &map);
    let montage = Montage::high_density();
    let params = ContrastParams::default();
    let z = contrast_z(&runs, &montage, &params).unwrap();
    assert_eq!(z.len(), 388);
    let hbo = z_vector(&z, "hbo");
    for &p in &map.active {
        assert!(hbo[p] > 3.0, "active pair {p}: z = {}", hbo[p]);
    }
    let null: Vec<f64> = (0..194).filter(|p| !map.is_active(*p)).map(|p| hbo[p]).collect();
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    let var = null.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (null.len() - 1) as f64;
    assert!(mean.abs() < 0.5 && var < 2.0, "null z mean {mean}, var {var}");
    // HbR mirrors HbO with the opposite sign.
    let hbr = z_vector(&z, "hbr");
    assert!(map.active.iter().all(|&p| hbr[p] < -3.0));

    let neg = contrast_z_weighted(&runs, &montage, &params, [-1.0, 1.0]).unwrap();
    for (a, b) in z.iter().zip(&neg) {
        assert!((a.z + b.z).abs() < 1e-9);
    }
    let same = contrast_z_weighted(&runs, &montage, &params, [0.0, 0.0]).unwrap();
    assert!(same.iter().all(|c| c.z == 0.0));
}
