use grassnet_core::knowledge::{
    build_cooccurrence_graph, build_wup_graph, cooccurrence_counts, CooccurrenceCorpus, ProximityGraph, Taxonomy,
};
use proptest::prelude::*;

/// Random tree: node i > 0 picks a parent among 0..i.
fn tree_strategy() -> impl Strategy<Value = Vec<usize>> {
    (2usize..14).prop_flat_map(|n| (1..n).map(|i| (0..i).boxed()).collect::<Vec<_>>())
}

fn build_tree(parents: &[usize]) -> (Taxonomy, Vec<String>) {
    let names: Vec<String> = (0..=parents.len()).map(|i| format!("n{i}")).collect();
    let mut text = String::from("n0\t-\n");
    for (i, &p) in parents.iter().enumerate() {
        text.push_str(&format!("n{}\tn{}\n", i + 1, p));
    }
    (Taxonomy::parse(&text).unwrap(), names)
}

/// Independent oracle: explicit root paths, longest common prefix.
fn wup_oracle(parents: &[usize], a: usize, b: usize) -> f64 {
    let path = |mut n: usize| {
        let mut p = vec![n];
        while n != 0 {
            n = parents[n - 1];
            p.push(n);
        }
        p.reverse();
        p
    };
    let (pa, pb) = (path(a), path(b));
    let common = pa.iter().zip(&pb).take_while(|(x, y)| x == y).count();
    2.0 * common as f64 / (pa.len() + pb.len()) as f64
}

fn assert_well_formed(g: &ProximityGraph) {
    let q = g.len();
    for i in 0..q {
        assert_eq!(g.weight(i, i), 1.0);
        for j in 0..q {
            assert_eq!(g.weight(i, j), g.weight(j, i));
            assert!((0.0..=1.0).contains(&g.weight(i, j)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn wup_matches_path_oracle(parents in tree_strategy()) {
        let (tax, names) = build_tree(&parents);
        let g = build_wup_graph(&tax, &names).unwrap();
        assert_well_formed(&g);
        for a in 0..names.len() {
            for b in 0..names.len() {
                let want = wup_oracle(&parents, a, b);
                prop_assert!((g.weight(a, b) - want).abs() < 1e-15);
                let w = tax.wup_similarity(&names[a], &names[b]).unwrap();
                prop_assert!(w > 0.0 && w <= 1.0);
            }
        }
    }

    #[test]
    fn cooccurrence_invariants(
        records in proptest::collection::vec(proptest::collection::vec(0usize..6, 0..6), 1..25),
        rotate in 0usize..25,
    ) {
        let cats: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
        let corpus = CooccurrenceCorpus::new(
            records.iter().map(|r| r.iter().map(|&i| cats[i].clone()).collect()).collect(),
        );
        let Ok(g) = build_cooccurrence_graph(&corpus, &cats) else {
            // only legal failure: nothing co-occurs
            let any_pair = records.iter().any(|r| {
                let mut u = r.clone();
                u.sort();
                u.dedup();
                u.len() >= 2
            });
            prop_assert!(!any_pair);
            return Ok(());
        };
        assert_well_formed(&g);
        let off_max = (0..6)
            .flat_map(|i| (0..6).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| g.weight(i, j))
            .fold(0.0, f64::max);
        prop_assert_eq!(off_max, 1.0);

        // order and in-record duplicates do not matter
        let mut shuffled = corpus.records.clone();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        for r in &mut shuffled {
            let dup = r.first().cloned();
            r.extend(dup);
            r.reverse();
        }
        let g2 = build_cooccurrence_graph(&CooccurrenceCorpus::new(shuffled), &cats).unwrap();
        prop_assert_eq!(g2.adjacency(), g.adjacency());
    }

    #[test]
    fn deleting_a_record_never_raises_counts(
        records in proptest::collection::vec(proptest::collection::vec(0usize..5, 2..5), 2..15),
        drop in 0usize..15,
    ) {
        let cats: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
        let to_corpus = |recs: &[Vec<usize>]| CooccurrenceCorpus::new(
            recs.iter().map(|r| r.iter().map(|&i| cats[i].clone()).collect()).collect(),
        );
        let mut fewer = records.clone();
        fewer.remove(drop % records.len());
        let before = cooccurrence_counts(&to_corpus(&records), &cats).unwrap();
        let after = cooccurrence_counts(&to_corpus(&fewer), &cats).unwrap();
        for (a, b) in after.iter().zip(&before) {
            prop_assert!(a <= b);
        }
    }
}
