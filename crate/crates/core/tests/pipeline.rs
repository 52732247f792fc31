use std::fs;
use std::io::{BufWriter, Write};

use desmil::data::{export_tsv, ingest, split_ood, EvalCase, EvalSet};
use desmil::evaluate::{evaluate_at, recall50, retrieve_top_n};
use desmil::model::{ModelParams, ModelShape};
use desmil::synth::{generate, SynthConfig, SynthData};
use desmil::train::{train, TrainConfig};
use desmil::Matrix;

#[test]
fn million_line_log_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("log.tsv");
    {
        let mut out = BufWriter::new(fs::File::create(&src).unwrap());
        for n in 0..1_000_000u64 {
            let user = n % 20_000;
            let item = (n * 7919) % 50_000;
            // Every tenth event repeats its predecessor's timestamp.
            let ts = n / 20_000 - u64::from(n % 10 == 0 && n >= 20_000);
            writeln!(out, "u{user}\ti{item}\t{ts}").unwrap();
        }
    }
    let (ds, report) = ingest(&src).unwrap();
    assert_eq!((report.lines, report.malformed), (1_000_000, 0));
    assert_eq!(ds.num_events(), 1_000_000);
    let once = dir.path().join("once.tsv");
    let twice = dir.path().join("twice.tsv");
    export_tsv(&ds, &once).unwrap();
    let (again, _) = ingest(&once).unwrap();
    assert_eq!(again, ds);
    export_tsv(&again, &twice).unwrap();
    assert_eq!(fs::read(&once).unwrap(), fs::read(&twice).unwrap());
}

fn category(d: &SynthData, user: usize, item: usize) -> usize {
    let c = d.item_cluster[item];
    if c == d.primary[user] {
        0
    } else if c == d.companion(user) {
        1
    } else {
        2
    }
}

fn category_counts(d: &SynthData, test: bool) -> [f64; 3] {
    let ds = if test { &d.test } else { &d.train };
    let mut counts = [0.0; 3];
    for s in &ds.sequences {
        for &i in &s.items {
            counts[category(d, s.user, i)] += 1.0;
        }
    }
    counts
}

#[test]
fn equal_rho_gives_matching_cluster_statistics() {
    let cfg = SynthConfig {
        num_users: 400,
        rho_train: 0.6,
        rho_test: 0.6,
        seed: 5,
        ..Default::default()
    };
    let d = generate(&cfg).unwrap();
    let rows = [category_counts(&d, false), category_counts(&d, true)];
    assert!(rows[0].iter().sum::<f64>() >= 10_000.0);
    let total: f64 = rows.iter().flatten().sum();
    let mut chi2 = 0.0;
    for row in &rows {
        let row_sum: f64 = row.iter().sum();
        for k in 0..3 {
            let col: f64 = rows.iter().map(|r| r[k]).sum();
            let expected = row_sum * col / total;
            chi2 += (row[k] - expected).powi(2) / expected;
        }
    }
    // 99th percentile of chi-squared with 2 degrees of freedom: −2·ln(0.01).
    assert!(chi2 < -2.0 * 0.01f64.ln(), "chi2 {chi2}");
}

#[test]
fn rho_zero_spreads_non_primary_events_evenly() {
    let cfg = SynthConfig {
        num_users: 400,
        rho_train: 0.0,
        seed: 6,
        ..Default::default()
    };
    let d = generate(&cfg).unwrap();
    let [_, companion, other] = category_counts(&d, false);
    let n = companion + other;
    let share = companion / n;
    let expected = 1.0 / (cfg.clusters - 1) as f64;
    let se = (expected * (1.0 - expected) / n).sqrt();
    assert!((share - expected).abs() < 3.0 * se, "share {share} vs {expected}");
}

fn small_run(seed: u64) -> (desmil::data::SequenceDataset, EvalSet, TrainConfig) {
    let data = generate(&SynthConfig {
        num_users: 50,
        num_items: 60,
        seed,
        ..Default::default()
    })
    .unwrap();
    let s = split_ood(&data.train, 0.5).unwrap();
    let valid = EvalSet::from_pairs(&s.train, &s.valid);
    let cfg = TrainConfig {
        dim: 8,
        hidden: 16,
        interests: 2,
        batch_size: 16,
        lr: 0.01,
        seed,
        eval_every: 20,
        patience: 100,
        max_epochs: 100,
        max_steps: Some(200),
        ..Default::default()
    };
    (s.train, valid, cfg)
}

#[test]
fn smoke_run_lowers_training_loss() {
    let (train_ds, valid, cfg) = small_run(1);
    let out = train(&train_ds, &valid, &cfg, None).unwrap();
    assert_eq!(out.steps, 200);
    let head: f64 = out.traces[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
    let tail: f64 = out.traces[190..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
    assert!(tail < head, "loss {head} -> {tail}");
    assert!(out.traces.windows(2).all(|w| w[0].step < w[1].step));
    assert!(out.traces.iter().all(|r| r.hsic >= 0.0));
}

#[test]
fn returned_parameters_are_the_best_checkpoint() {
    let (train_ds, valid, cfg) = small_run(2);
    let out = train(&train_ds, &valid, &cfg, None).unwrap();
    let evals: Vec<(u64, f64)> = out.traces.iter().filter_map(|r| r.recall50.map(|x| (r.step, x))).collect();
    assert_eq!(evals.len(), 10);
    let best = evals.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let first_best = evals.iter().find(|e| e.1 == best).unwrap().0;
    assert_eq!((out.best_recall50, out.best_step), (best, first_best));
    assert_eq!(100.0 * recall50(&out.params, &valid).unwrap(), best);
}

#[test]
fn retrieval_matches_exhaustive_scoring() {
    let items = Matrix::from_rows(&[
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.7, 0.7],
        vec![-1.0, 0.2],
        vec![0.2, -1.0],
        vec![0.5, 0.1],
        vec![0.0, 0.0],
    ]);
    let m = Matrix::from_rows(&[vec![1.0, 0.2], vec![-0.3, 1.0]]);
    for n in 1..=6 {
        // Best score over interests, then sort with ties to the lower index.
        let mut scored: Vec<(usize, f64)> = (0..6)
            .map(|i| {
                let s = (0..2)
                    .map(|k| m.row(k).iter().zip(items.row(i)).map(|(a, b)| a * b).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                (i, s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: Vec<usize> = scored.iter().take(n).map(|x| x.0).collect();
        assert_eq!(retrieve_top_n(&m, &items, 6, n), expected, "n = {n}");
    }
}

#[test]
fn three_user_metrics_are_per_user_means() {
    // One interest equal to the history item's embedding; item k scores k
    // along the first axis, so retrieval returns items in descending order.
    let mut p = ModelParams::zeros(ModelShape {
        num_items: 6,
        dim: 2,
        hidden: 2,
        interests: 1,
        l_max: 3,
    });
    for i in 0..6 {
        p.items.set(i, 0, i as f64);
    }
    p.items.set(5, 1, 0.0);
    let set = EvalSet {
        num_items: 6,
        cases: vec![
            EvalCase {
                user: 0,
                history: vec![5],
                targets: vec![5],
            },
            EvalCase {
                user: 1,
                history: vec![5],
                targets: vec![3, 0],
            },
            EvalCase {
                user: 2,
                history: vec![5],
                targets: vec![1],
            },
        ],
    };
    // Ranking 5,4,3,2,1,0. At p = 2: recall (1 + 0 + 0)/3, hr likewise;
    // ndcg (1 + 0 + 0)/3. At p = 4: user 1 hits 3 at rank 3.
    let (m, users) = evaluate_at(&p, &set, &[2, 4]).unwrap();
    assert_eq!(users, 3);
    assert!((m[0].recall - 1.0 / 3.0).abs() < 1e-12);
    assert!((m[0].hr - 1.0 / 3.0).abs() < 1e-12);
    assert!((m[0].ndcg - 1.0 / 3.0).abs() < 1e-12);
    let ndcg_user1 = (1.0 / 4f64.log2()) / (1.0 + 1.0 / 3f64.log2());
    assert!((m[1].recall - (1.0 + 0.5) / 3.0).abs() < 1e-12);
    assert!((m[1].hr - 2.0 / 3.0).abs() < 1e-12);
    assert!((m[1].ndcg - (1.0 + ndcg_user1) / 3.0).abs() < 1e-12);
}

#[test]
fn empty_evaluation_set_is_an_error() {
    let p = ModelParams::zeros(ModelShape {
        num_items: 3,
        dim: 2,
        hidden: 2,
        interests: 1,
        l_max: 2,
    });
    let set = EvalSet {
        num_items: 3,
        cases: vec![],
    };
    assert!(evaluate_at(&p, &set, &[20]).is_err());
}
