//! Forward model against the preprocessing chain.

use std::collections::BTreeMap;

use nirtext::corpus::{build_schedule, realize_sentences, Schedule, TopicSet};
use nirtext::sigproc::{self, epoch_trials, PreprocParams};
use nirtext::synthgen::{
    injected_haemo, render_run, HashedVectorizer, Montage, NoiseConfig, RenderSpec, RunIds, SemanticMap,
};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

struct Run {
    schedule: Schedule,
    sentences: BTreeMap<usize, String>,
}

fn runs(n: usize, seed: u64) -> Vec<Run> {
    let topics = TopicSet::shipped();
    let all = build_schedule(&topics, n, seed).unwrap();
    let sentences = realize_sentences(&all, &topics, seed, 0.0).unwrap();
    (0..n)
        .map(|r| {
            let schedule = all.run(r).unwrap();
            // Re-key sentences to the rebased schedule's event indices.
            let global: Vec<usize> = all.events.iter().enumerate().filter(|(_, e)| e.run == r).map(|(i, _)| i).collect();
            let sentences = global
                .iter()
                .enumerate()
                .filter_map(|(local, g)| sentences.get(g).map(|s| (local, s.clone())))
                .collect();
            Run { schedule, sentences }
        })
        .collect()
}

fn ids(run: usize) -> RunIds {
    RunIds { participant: "p01".into(), session: 0, run }
}

#[test]
fn noise_free_pipeline_recovers_injected_hbo() {
    let montage = Montage::high_density();
    let vec = HashedVectorizer { width: 16, seed: 1 };
    let map = SemanticMap::random(16, 20, 1.0, 0.6, 2).unwrap();
    let spec = RenderSpec { noise: NoiseConfig::none(), ..Default::default() };
    let params = PreprocParams::default();
    for (r, run) in runs(4, 11).iter().enumerate() {
        let raw = render_run(&run.schedule, &run.sentences, &vec, &map, &montage, &spec, 5, ids(r)).unwrap();
        let haemo = sigproc::preprocess(&raw, &montage, &spec.extinction, &params).unwrap();
        let truth = injected_haemo(&run.schedule, &run.sentences, &vec, &map, &spec).unwrap();
        // In-band truth: the injected series through the same detrend and band-pass.
        let mut band = truth.hbo.clone();
        sigproc::detrend_matrix(&mut band).unwrap();
        let band = sigproc::bandpass(
            &sigproc::HaemoSeries { sfreq: spec.sfreq, data: band, provenance: vec![] },
            params.band_lo,
            params.band_hi,
            params.filter_order,
        )
        .unwrap();
        for &p in &map.active {
            let got = haemo.data.column(p).to_vec();
            let r_band = pearson(&got, &band.data.column(p).to_vec());
            assert!(r_band > 0.99, "run {r} pair {p}: in-band r = {r_band}");
            // Sub-0.01 Hz content of a ~2 min block run is removed by design.
            let r_raw = pearson(&got, &truth.hbo.column(p).to_vec());
            assert!(r_raw > 0.8, "run {r} pair {p}: raw r = {r_raw}");
        }
        let steps: Vec<&str> = haemo.provenance.iter().map(|s| s.step.as_str()).collect();
        assert_eq!(steps, sigproc::PIPELINE_ORDER);
    }
}

#[test]
fn short_channels_carry_no_task_signal() {
    let montage = Montage::high_density();
    let vec = HashedVectorizer { width: 16, seed: 1 };
    let map = SemanticMap::random(16, 20, 1.0, 0.6, 2).unwrap();
    let spec = RenderSpec::default();
    let short = montage.short_indices();
    let (mut reg, mut series): (Vec<f64>, Vec<Vec<f64>>) = (Vec::new(), vec![Vec::new(); short.len()]);
    for (r, run) in runs(6, 12).iter().enumerate() {
        let raw = render_run(&run.schedule, &run.sentences, &vec, &map, &montage, &spec, 9, ids(r)).unwrap();
        // Stimulus-convolved regressor = the injected response of a task-only map.
        let task_only = SemanticMap { semantic_amplitude: 0.0, task_amplitude: 1.0, ..map.clone() };
        let truth = injected_haemo(&run.schedule, &run.sentences, &vec, &task_only, &spec).unwrap();
        reg.extend(truth.hbo.column(map.active[0]).iter());
        for (k, &c) in short.iter().enumerate() {
            series[k].extend(raw.data.column(c).iter().map(|v| -v.ln()));
        }
    }
    for (k, s) in series.iter().enumerate() {
        let r = pearson(s, &reg);
        assert!(r.abs() < 0.1, "short channel {k}: r = {r}");
    }
}

#[test]
fn semantic_map_recoverable_from_epoch_means() {
    let montage = Montage::high_density();
    let width = 16;
    let vec = HashedVectorizer { width, seed: 3 };
    let map = SemanticMap::random(width, 194, 1.0, 0.0, 4).unwrap();
    let spec = RenderSpec { noise: NoiseConfig::none(), ..Default::default() };
    let params = PreprocParams::default();
    let (mut xs, mut ys): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (Vec::new(), Vec::new());
    for (r, run) in runs(36, 13).iter().enumerate() {
        let raw = render_run(&run.schedule, &run.sentences, &vec, &map, &montage, &spec, 6, ids(r)).unwrap();
        let haemo = sigproc::preprocess(&raw, &montage, &spec.extinction, &params).unwrap();
        for t in epoch_trials(&haemo, &raw.events, Some(&raw.sentences), &raw.ids, 6.0, 7.0).unwrap() {
            let mut v = nirtext::synthgen::SentenceVectorizer::sentence_vector(&vec, t.sentence.as_ref().unwrap()).unwrap();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            xs.push(v);
            ys.push((0..194).map(|p| t.data.column(p).mean().unwrap()).collect());
        }
    }
    assert!(xs.len() >= 300, "{} trials", xs.len());
    // Ridge: B = (XᵀX + λI)⁻¹ XᵀY, solved with nalgebra as an independent solver.
    let n = xs.len();
    let x = nalgebra::DMatrix::from_fn(n, width, |i, j| xs[i][j]);
    let y = nalgebra::DMatrix::from_fn(n, 194, |i, j| ys[i][j]);
    let gram = x.transpose() * &x + nalgebra::DMatrix::identity(width, width) * 1e-3;
    let b = gram.cholesky().unwrap().solve(&(x.transpose() * y));
    for j in 0..width {
        let est: Vec<f64> = (0..194).map(|p| b[(j, p)]).collect();
        let r = pearson(&est, &map.column(j));
        assert!(r > 0.95, "column {j}: r = {r}");
    }
}
