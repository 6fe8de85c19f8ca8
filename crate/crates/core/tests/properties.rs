use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;

use kgmem_core::evaluator::{
    delta_h, divergence_gain, entropy, global_density, one_hot, pmi, quadrant, rho_phi,
    DensityConfig, EvalRecord, Quadrant,
};
use kgmem_core::extractor::{upsert_intent, IntentUpsert};
use kgmem_core::fixtures::{
    mock_providers, random_graph, random_merge_providers, random_trajectory,
};
use kgmem_core::graph::{Direction, EdgeKind, MemoryGraph, NodeId, NodeKind};
use kgmem_core::maintenance::{choose2, graph_stats, update_pass};
use kgmem_core::pipeline::{EngineConfig, MemoryEngine};
use kgmem_core::provider::{Embedder, HashEmbedder};
use kgmem_core::standardizer::{segment, EpisodicStep};
use kgmem_core::text::section;
use kgmem_core::vector::cosine;

fn line() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 .,:]{0,30}"
}

fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn reachable_episodes(g: &MemoryGraph, id: NodeId) -> BTreeSet<NodeId> {
    g.provenance(id).unwrap().into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn section_returns_body_between_headings(
        pre in prop::collection::vec(line(), 0..4),
        body in prop::collection::vec(line(), 0..5),
        tail in prop::option::of(prop::collection::vec(line(), 0..3)),
    ) {
        let mut text = pre.join("\n");
        text.push_str("\n### Answer\n");
        text.push_str(&body.join("\n"));
        if let Some(t) = &tail {
            text.push_str("\n### Other\n");
            text.push_str(&t.join("\n"));
        }
        let want = body.join("\n");
        prop_assert_eq!(section(&text, "Answer").unwrap(), want.trim());
    }

    #[test]
    fn segments_partition_the_trajectory(
        angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 1..20),
        theta in -1.0f64..=1.0,
    ) {
        let steps: Vec<EpisodicStep> = angles.iter().enumerate().map(|(i, a)| EpisodicStep {
            index: i + 1,
            observation: "o".into(),
            state: String::new(),
            action: String::new(),
            reward: String::new(),
            subgoal: "s".into(),
            subgoal_embedding: Some(vec![a.cos(), a.sin()]),
        }).collect();
        let segs = segment("t", &steps, theta).unwrap();
        let mut next = 1;
        for s in &segs {
            prop_assert_eq!(s.start, next);
            prop_assert!(s.end >= s.start);
            prop_assert_eq!(s.steps.len(), s.end - s.start + 1);
            next = s.end + 1;
        }
        prop_assert_eq!(next, steps.len() + 1);
    }

    #[test]
    fn hash_embedder_cosine_is_bounded_and_symmetric(a in "[a-z ]{1,40}", b in "[a-z ]{1,40}") {
        let e = HashEmbedder::new(64);
        prop_assume!(a.split_whitespace().next().is_some() && b.split_whitespace().next().is_some());
        let (va, vb) = (e.embed(&a).unwrap(), e.embed(&b).unwrap());
        let c = cosine(&va, &vb);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        prop_assert!((c - cosine(&vb, &va)).abs() < 1e-12);
        prop_assert!((cosine(&va, &va) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pmi_antisymmetric_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, d in 0.001f64..0.5, eps in 1e-6f64..0.1) {
        prop_assert!((pmi(a, b, eps).unwrap() + pmi(b, a, eps).unwrap()).abs() < 1e-12);
        let hi = (b + d).min(1.0);
        prop_assume!(hi > b);
        prop_assert!(pmi(a, hi, eps).unwrap() > pmi(a, b, eps).unwrap());
        prop_assert!(pmi(hi, a, eps).unwrap() < pmi(b, a, eps).unwrap());
    }

    #[test]
    fn entropy_bounded_by_uniform(d in (2usize..12).prop_flat_map(dist)) {
        let n = d.len();
        let h = entropy(&d).unwrap();
        let max = (n as f64).log2();
        prop_assert!(h >= 0.0 && h <= max + 1e-9);
        prop_assert!((entropy(&vec![1.0 / n as f64; n]).unwrap() - max).abs() < 1e-9);
    }

    #[test]
    fn one_hot_collapses_to_pmi(
        (pb, pm, i) in (2usize..10).prop_flat_map(|n| (dist(n), dist(n), 0..n)),
    ) {
        let q = one_hot(pb.len(), i);
        let g = divergence_gain(&q, &pb, &pm, None).unwrap();
        prop_assert!((g - pmi(pb[i], pm[i], 0.0).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn quadrant_is_total_and_coupled_to_rho(p in -5.0f64..5.0, h in -5.0f64..5.0, tokens in 1u64..500) {
        for (x, y) in [(p, h), (0.0, h), (p, 0.0), (0.0, 0.0)] {
            let q = quadrant(x, y);
            prop_assert_eq!(q.boundary, x == 0.0 || y == 0.0);
            let expected = match (y >= 0.0, x >= 0.0) {
                (true, true) => Quadrant::EfficientReasoning,
                (false, true) => Quadrant::CorrectiveCalibration,
                (true, false) => Quadrant::HallucinationTrap,
                (false, false) => Quadrant::DestructiveNoise,
            };
            prop_assert_eq!(q.quadrant, expected);
        }
        let r = rho_phi(p, h, tokens).unwrap();
        prop_assert_eq!(r >= 0.0, p >= 0.0);
    }

    #[test]
    fn delta_h_matches_entropy_difference((a, b) in (2usize..8).prop_flat_map(|n| (dist(n), dist(n)))) {
        prop_assert!((delta_h(&a, &b).unwrap() - (entropy(&a).unwrap() - entropy(&b).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn global_density_is_ratio_of_sums(
        rows in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0u64..50), 1..60),
        tau in 0.5f64..=1.0,
    ) {
        let cfg = DensityConfig { epsilon: 0.01, tau_conf: tau };
        let records: Vec<EvalRecord> = rows.iter().enumerate().map(|(i, (b, m, t))| EvalRecord {
            id: i.to_string(), p_base: *b, p_mem: *m, memory_tokens: *t,
            base_dist: None, mem_dist: None, astar_index: None, budget: None,
        }).collect();
        let got = global_density(&records, &cfg).unwrap();
        let (mut num, mut den, mut red, mut empty) = (0.0, 0u64, 0, 0);
        for (b, m, t) in &rows {
            red += usize::from(*b >= tau);
            empty += usize::from(*t == 0);
            if *b < tau && *t > 0 {
                num += ((m + 0.01) / (b + 0.01)).log2();
                den += t;
            }
        }
        prop_assert_eq!(got.report.excluded_redundant, red);
        prop_assert_eq!(got.report.excluded_empty, empty);
        match got.rho {
            Some(r) => prop_assert!((r - num / den as f64).abs() < 1e-12),
            None => prop_assert_eq!(den, 0),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stored_edges_respect_kind_rules(seed in any::<u64>(), n in 3usize..300) {
        let g = random_graph(seed, n);
        let mut triples = HashSet::new();
        for e in g.edges() {
            let (from, to) = (g.get(e.from).unwrap().kind, g.get(e.to).unwrap().kind);
            prop_assert!(e.kind.allows(from, to), "{:?} {:?}->{:?}", e.kind, from, to);
            prop_assert!(triples.insert((e.kind, e.from, e.to)));
        }
        for node in g.nodes() {
            prop_assert_eq!(node.embedding.len(), 64);
            let norm: f64 = node.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-6);
            if node.kind == NodeKind::Prescription {
                prop_assert!(node.return_score().is_some());
            }
        }
    }

    #[test]
    fn fanout_matches_brute_force(seed in any::<u64>(), n in 3usize..1000) {
        let g = random_graph(seed, n);
        let membership: Vec<(NodeId, NodeId)> = g.edges()
            .filter(|e| e.kind == EdgeKind::Membership && g.is_active(e.from) && g.is_active(e.to))
            .map(|e| (e.from, e.to))
            .collect();
        for p in g.active_nodes(NodeKind::Proposition) {
            let concepts: HashSet<NodeId> = membership.iter().filter(|(f, _)| *f == p.id).map(|(_, c)| *c).collect();
            let brute: BTreeSet<NodeId> = membership.iter()
                .filter(|(f, c)| *f != p.id && concepts.contains(c) && g.is_active(*f))
                .map(|(f, _)| *f)
                .collect();
            let got: BTreeSet<NodeId> = g.candidate_fanout(p.id).unwrap().into_iter().collect();
            prop_assert_eq!(got, brute);
        }
    }

    #[test]
    fn pair_bound_matches_enumeration(seed in any::<u64>(), n in 3usize..400) {
        let g = random_graph(seed, n);
        let stats = graph_stats(&g, 10, 42).unwrap();
        let edges: Vec<(NodeId, NodeId)> = g.edges()
            .filter(|e| e.kind == EdgeKind::Membership && g.is_active(e.from))
            .map(|e| (e.from, e.to))
            .collect();
        let mut pairs = 0u64;
        for i in 0..edges.len() {
            for j in i + 1..edges.len() {
                pairs += u64::from(edges[i].1 == edges[j].1);
            }
        }
        prop_assert_eq!(stats.pair_bound, pairs);
        prop_assert_eq!(stats.bipartite_edges, edges.len());
    }

    #[test]
    fn persistence_round_trips(seed in any::<u64>(), n in 1usize..200) {
        let g = random_graph(seed, n);
        let dir = tempfile::tempdir().unwrap();
        g.save(dir.path()).unwrap();
        let back = MemoryGraph::load(dir.path()).unwrap();
        prop_assert_eq!(back.node_count(), g.node_count());
        for (a, b) in g.nodes().zip(back.nodes()) {
            prop_assert_eq!((a.id, a.kind, &a.text, a.active, &a.meta), (b.id, b.kind, &b.text, b.active, &b.meta));
            for (x, y) in a.embedding.iter().zip(&b.embedding) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
        prop_assert_eq!(g.edges().collect::<Vec<_>>(), back.edges().collect::<Vec<_>>());
    }

    #[test]
    fn upsert_merges_less_as_theta_grows(
        texts in prop::collection::vec("[a-d]{1,2}( [a-d]{1,2}){0,3}", 2..8),
        lo in -1.0f64..1.0,
        gap in 0.0f64..1.0,
    ) {
        let p = mock_providers();
        let merges = |theta: f64| {
            let mut g = MemoryGraph::new(64);
            texts.iter().filter(|t| matches!(upsert_intent(&mut g, &p, t, theta).unwrap(), IntentUpsert::Merged(_))).count()
        };
        prop_assert_eq!(merges(1.0 + 1e-9), 0);
        prop_assert_eq!(merges(-1.0 - 1e-9), texts.len() - 1);
        prop_assert!(merges(lo) >= merges(lo + gap));
    }

    #[test]
    fn update_pass_shrinks_pair_bound_and_conserves_provenance(seed in any::<u64>()) {
        let engine = MemoryEngine::new(random_merge_providers(seed), EngineConfig::default());
        let mut g = MemoryGraph::new(64);
        for i in 0..3 {
            engine.create(&mut g, &random_trajectory(seed.wrapping_add(i))).unwrap();
        }
        let before = graph_stats(&g, 5, 42).unwrap();
        let reach_before: BTreeSet<NodeId> = g
            .active_nodes(NodeKind::Proposition)
            .flat_map(|n| reachable_episodes(&g, n.id))
            .collect();
        let report = update_pass(&mut g, &engine.providers, 0.3, 2).unwrap();
        let after = graph_stats(&g, 5, 42).unwrap();
        prop_assert!(after.pair_bound <= before.pair_bound);
        prop_assert_eq!(
            after.active_semantic_nodes,
            before.active_semantic_nodes - 2 * report.merges_applied + report.merges_applied
        );
        let reach_after: BTreeSet<NodeId> = g
            .active_nodes(NodeKind::Proposition)
            .flat_map(|n| reachable_episodes(&g, n.id))
            .collect();
        prop_assert_eq!(reach_after, reach_before);
        for n in g.nodes().filter(|n| n.active && n.kind.is_low_level()) {
            prop_assert!(!g.neighbors(n.id, EdgeKind::Provenance, Direction::Outgoing).unwrap().is_empty());
        }
    }
}

#[test]
fn choose2_small_values() {
    assert_eq!([0, 1, 2, 3, 4, 5].map(choose2), [0, 0, 1, 3, 6, 10]);
}
