use desmil::data::{make_examples, split_classic, split_ood, InteractionEvent, SequenceDataset};
use desmil::decorrelate::{
    empirical_hsic, interest_dependence, update_sample_weights, KernelConfig, SampleWeightTable, WeightUpdateConfig,
};
use desmil::evaluate::{hr_at_p, ndcg_at_p, recall_at_p, retrieve_top_n};
use desmil::Matrix;
use proptest::collection::vec;
use proptest::prelude::*;

fn dataset(lengths: &[usize]) -> SequenceDataset {
    let mut events = Vec::new();
    for (u, &len) in lengths.iter().enumerate() {
        for t in 0..len {
            events.push(InteractionEvent {
                user_id: format!("user{u}"),
                item_id: format!("item{}", (u * 7 + t * 3) % 13),
                timestamp: t as u64,
            });
        }
    }
    SequenceDataset::from_events(&events)
}

fn paired(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (vec(-5.0..5.0f64, n), vec(-5.0..5.0f64, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hsic_is_symmetric_and_nonnegative((u, v) in (2usize..24).prop_flat_map(paired)) {
        let cfg = KernelConfig::default();
        let a = empirical_hsic(&u, &v, &cfg).unwrap();
        let b = empirical_hsic(&v, &u, &cfg).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn hsic_ignores_shifts((u, v) in (2usize..24).prop_flat_map(paired), du in -3.0..3.0f64, dv in -3.0..3.0f64) {
        let cfg = KernelConfig::default();
        let a = empirical_hsic(&u, &v, &cfg).unwrap();
        let us: Vec<f64> = u.iter().map(|x| x + du).collect();
        let vs: Vec<f64> = v.iter().map(|x| x + dv).collect();
        let b = empirical_hsic(&us, &vs, &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn dependence_is_nonnegative(data in vec(-2.0..2.0f64, 3 * 10)) {
        let m = Matrix::from_vec(3, 10, data).unwrap();
        prop_assert!(interest_dependence(&m, &KernelConfig::default()) >= 0.0);
    }

    #[test]
    fn classic_split_partitions_users(lengths in vec(1usize..6, 3..40), seed in any::<u64>()) {
        let ds = dataset(&lengths);
        let s = split_classic(&ds, (0.8, 0.1, 0.1), seed).unwrap();
        let mut all: Vec<usize> = [&s.train, &s.valid, &s.test].iter().flat_map(|d| d.user_set()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, ds.user_set());
        prop_assert_eq!(s.train.num_events() + s.valid.num_events() + s.test.num_events(), ds.num_events());
    }

    #[test]
    fn ood_split_is_time_ordered_and_keeps_short_users_in_train(lengths in vec(1usize..40, 1..30), z in 0.5..=0.9f64) {
        let ds = dataset(&lengths);
        let s = split_ood(&ds, z).unwrap();
        for seq in &ds.sequences {
            let train = s.train.sequence_of(seq.user).unwrap();
            if seq.len() < 10 {
                prop_assert_eq!(train, seq);
                prop_assert!(s.valid.sequence_of(seq.user).is_none());
                prop_assert!(s.test_inputs.sequence_of(seq.user).is_none());
                prop_assert!(s.test_targets.sequence_of(seq.user).is_none());
                continue;
            }
            let valid = s.valid.sequence_of(seq.user).unwrap();
            let targets = s.test_targets.sequence_of(seq.user).unwrap();
            let inputs = s.test_inputs.sequence_of(seq.user).unwrap();
            prop_assert!(train.timestamps.last() <= valid.timestamps.first());
            // The valid slice ends at ⌊0.6·len⌋, so it precedes the targets only from z = 0.6 on.
            if z >= 0.6 {
                prop_assert!(valid.timestamps.last() <= targets.timestamps.first());
            }
            prop_assert_eq!(inputs.len() + targets.len(), seq.len());
            prop_assert_eq!(&seq.items[..train.len()], &train.items[..]);
        }
    }

    #[test]
    fn example_count_and_no_pad(lengths in vec(1usize..15, 1..20)) {
        let ds = dataset(&lengths);
        let ex = make_examples(&ds, 20);
        prop_assert_eq!(ex.len(), lengths.iter().map(|l| l - 1).sum::<usize>());
        prop_assert!(ex.iter().all(|e| e.prefix.iter().all(|&i| i < ds.pad_index())));
        prop_assert!(ex.iter().enumerate().all(|(k, e)| e.sample_id == k));
    }

    #[test]
    fn weights_stay_in_unit_box(
        data in vec(-1.0..1.0f64, 4 * 3 * 6),
        step in 0.001..10.0f64,
        lambda in 0.0..100.0f64,
        rounds in 1usize..4,
    ) {
        let ms: Vec<Matrix> = data.chunks(18).map(|c| Matrix::from_vec(3, 6, c.to_vec()).unwrap()).collect();
        let mut table = SampleWeightTable::new(6);
        let cfg = WeightUpdateConfig { lambda, step_size: step, ..Default::default() };
        let ids = [0, 2, 3, 5];
        for r in 0..rounds {
            update_sample_weights(&ids, &ms, &mut table, &cfg, r as u64 + 1);
        }
        prop_assert!(table.weights().iter().all(|w| (0.0..=1.0).contains(w)));
        prop_assert_eq!(table.get(1), 1.0);
        prop_assert_eq!(table.get(4), 1.0);
    }

    #[test]
    fn metrics_grow_with_cutoff(rec in vec(0usize..30, 1..30), rel in vec(0usize..30, 1..8), p in 1usize..30) {
        let mut seen = Vec::new();
        let rec: Vec<usize> = rec.into_iter().filter(|i| if seen.contains(i) { false } else { seen.push(*i); true }).collect();
        let mut rel = rel;
        rel.sort_unstable();
        rel.dedup();
        for f in [recall_at_p, ndcg_at_p, hr_at_p] {
            let a = f(&rec, &rel, p);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }
        prop_assert!(recall_at_p(&rec, &rel, p + 1) >= recall_at_p(&rec, &rel, p));
        prop_assert!(hr_at_p(&rec, &rel, p + 1) >= hr_at_p(&rec, &rel, p));
        // The ideal gain stops growing once p covers the relevant set.
        if p >= rel.len() {
            prop_assert!(ndcg_at_p(&rec, &rel, p + 1) + 1e-12 >= ndcg_at_p(&rec, &rel, p));
        }
    }

    #[test]
    fn ndcg_can_drop_below_the_relevant_set_size(extra in 30usize..40) {
        // One hit at rank 1 and a second relevant item never retrieved.
        let rec = [1, 2, 3];
        let rel = [1, extra];
        prop_assert_eq!(ndcg_at_p(&rec, &rel, 1), 1.0);
        prop_assert!(ndcg_at_p(&rec, &rel, 2) < 1.0);
    }

    #[test]
    fn retrieval_is_unique_and_scale_invariant(
        items in vec(-1.0..1.0f64, 9 * 3),
        interests in vec(-1.0..1.0f64, 2 * 3),
        n in 1usize..10,
        scale in 0.1..10.0f64,
    ) {
        let items = Matrix::from_vec(9, 3, items).unwrap();
        let m = Matrix::from_vec(2, 3, interests).unwrap();
        let top = retrieve_top_n(&m, &items, 8, n);
        prop_assert_eq!(top.len(), n.min(8));
        prop_assert!(top.iter().all(|&i| i < 8));
        let mut sorted = top.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), top.len());
        prop_assert_eq!(retrieve_top_n(&m.scale(scale), &items, 8, n), top);
    }
}
