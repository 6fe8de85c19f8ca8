use std::sync::Arc;

use kgmem_core::fixtures::{booking_trajectory, mock_providers, passage_trajectory, BOOKING_QUERY};
use kgmem_core::graph::{EdgeKind, MemoryGraph, NodeId, NodeKind, META_TRAJECTORY};
use kgmem_core::pipeline::{graph_digest, DeleteCriteria, EngineConfig, MemoryEngine};
use kgmem_core::provider::{FailingChat, HashEmbedder, Providers, ScriptedChat, TemplateChat};
use kgmem_core::retriever::{MemoryMode, RetrievalConfig};
use kgmem_core::standardizer::{RawPair, RawTrajectory};
use kgmem_core::Error;

fn engine() -> MemoryEngine {
    MemoryEngine::new(mock_providers(), EngineConfig::default())
}

fn ingested() -> (MemoryEngine, MemoryGraph) {
    let e = engine();
    let mut g = MemoryGraph::new(64);
    e.create(&mut g, &booking_trajectory()).unwrap();
    (e, g)
}

fn semantic() -> RetrievalConfig {
    RetrievalConfig {
        mode_override: Some(MemoryMode::Semantic),
        ..Default::default()
    }
}

#[test]
fn scripted_trajectory_counts() {
    let e = engine();
    let mut g = MemoryGraph::new(64);
    let r = e.create(&mut g, &booking_trajectory()).unwrap();
    assert_eq!(r.trajectory_id, "booking-1");
    assert_eq!(r.nodes_created[&NodeKind::Episodic], 3);
    // one proposition per sentence: 2 + 1 + 2
    assert_eq!(r.nodes_created[&NodeKind::Proposition], 5);
    assert!(r.nodes_created[&NodeKind::Prescription] >= 1);
    assert_eq!(r.nodes_created[&NodeKind::Prescription], r.segments);
    // recount from the graph
    let count = |k| g.nodes().filter(|n| n.kind == k).count();
    for (k, n) in &r.nodes_created {
        assert_eq!(count(*k), *n, "{k:?}");
    }
    let edges = |k| g.edges().filter(|e| e.kind == k).count();
    for (k, n) in &r.edges_created {
        assert_eq!(edges(*k), *n, "{k:?}");
    }
    for n in g.active_nodes(NodeKind::Episodic) {
        assert_eq!(n.meta[META_TRAJECTORY], "booking-1");
        assert!(n.text.starts_with("Observation: "));
    }
    for n in g.nodes().filter(|n| n.kind.is_low_level()) {
        assert!(!g.provenance(n.id).unwrap().is_empty());
    }
}

#[test]
fn passive_document_has_no_procedural_memory() {
    let e = engine();
    let mut g = MemoryGraph::new(64);
    let r = e.create(&mut g, &passage_trajectory()).unwrap();
    assert_eq!(r.nodes_created[&NodeKind::Episodic], 1);
    assert_eq!(r.nodes_created[&NodeKind::Proposition], 2);
    assert!(!r.nodes_created.contains_key(&NodeKind::Prescription));
    assert!(!r.nodes_created.contains_key(&NodeKind::Intent));
    assert_eq!(r.segments, 0);
    let ep = g.active_nodes(NodeKind::Episodic).next().unwrap();
    assert_eq!(ep.text, passage_trajectory().pairs[0].observation);
}

#[test]
fn trajectory_id_defaults_to_first_episodic_id() {
    let e = engine();
    let mut g = MemoryGraph::new(64);
    let mut raw = passage_trajectory();
    raw.id = None;
    let r = e.create(&mut g, &raw).unwrap();
    let first = g.active_nodes(NodeKind::Episodic).next().unwrap().id;
    assert_eq!(r.trajectory_id, format!("traj-{first}"));
}

#[test]
fn failure_at_any_call_leaves_graph_untouched() {
    // count provider calls in a clean run
    let counter = Arc::new(FailingChat::new(TemplateChat::default(), usize::MAX));
    let e = MemoryEngine::new(
        Providers::new(counter.clone(), Arc::new(HashEmbedder::new(64))),
        EngineConfig::default(),
    );
    let mut base = MemoryGraph::new(64);
    e.create(&mut base, &passage_trajectory()).unwrap();
    let total = {
        let mut g = base.clone();
        let before = counter.calls();
        e.create(&mut g, &booking_trajectory()).unwrap();
        counter.calls() - before
    };
    assert!(total > 10);
    for fail_at in 0..total {
        let chat = Arc::new(FailingChat::new(TemplateChat::default(), fail_at));
        let e = MemoryEngine::new(
            Providers::new(chat, Arc::new(HashEmbedder::new(64))),
            EngineConfig::default(),
        );
        let mut g = base.clone();
        let digest = graph_digest(&g);
        let err = e.create(&mut g, &booking_trajectory()).unwrap_err();
        assert!(err.stage().is_some(), "call {fail_at}: {err}");
        assert_eq!(graph_digest(&g), digest, "call {fail_at}");
        assert_eq!(
            (g.node_count(), g.edge_count()),
            (base.node_count(), base.edge_count())
        );
    }
}

#[test]
fn invalid_trajectory_rejected() {
    let e = engine();
    let mut g = MemoryGraph::new(64);
    let raw = RawTrajectory {
        id: None,
        goal: "g".into(),
        pairs: vec![],
    };
    assert!(e.create(&mut g, &raw).unwrap_err().is_validation());
    let raw = RawTrajectory {
        id: None,
        goal: "g".into(),
        pairs: vec![RawPair {
            observation: " ".into(),
            action: "a".into(),
        }],
    };
    assert!(e.create(&mut g, &raw).unwrap_err().is_validation());
    assert_eq!(g.node_count(), 0);
}

#[test]
fn empty_graph_retrieval_makes_no_reasoner_call() {
    let chat = Arc::new(ScriptedChat::new().when(
        ["retrieval tags"],
        "### Tags\n**Tags:** []\n### Next Subgoal\n## x",
    ));
    let e = MemoryEngine::new(
        Providers::new(chat.clone(), Arc::new(HashEmbedder::new(64))),
        EngineConfig::default(),
    );
    let g = MemoryGraph::new(64);
    let r = e
        .retrieve_and_compress(&g, "anything", Some(&semantic()), &Default::default(), "")
        .unwrap();
    assert!(r.retrieval.candidates.is_empty());
    assert!(r.compressed.is_empty());
    // only planner calls: one per hop
    assert_eq!(chat.call_count(), semantic().hop_limit);
}

#[test]
fn scripted_semantic_flow_returns_information_body() {
    let (_, g) = ingested();
    let chat = ScriptedChat::new()
        .when(
            ["You are a retrieval controller"],
            r#"{"enough": true, "top_node_ids": []}"#,
        )
        .when(
            ["I will give you several retrieved facts"],
            "### Reasoning\nr\n### Information\n## Luigi's is in Stockholm.",
        );
    let e = MemoryEngine::new(
        Providers::new(Arc::new(chat), Arc::new(HashEmbedder::new(64))),
        EngineConfig::default(),
    );
    let r = e
        .retrieve_and_compress(
            &g,
            BOOKING_QUERY,
            Some(&semantic()),
            &Default::default(),
            "",
        )
        .unwrap();
    assert_eq!(r.compressed.text, "Luigi's is in Stockholm.");
    assert_eq!(r.compressed.token_count, 4);
    let cands: Vec<NodeId> = r.retrieval.candidates.iter().map(|c| c.id).collect();
    assert!(r
        .compressed
        .source_node_ids
        .iter()
        .all(|id| cands.contains(id)));
    assert!(r.retrieval.stopped_early);
}

#[test]
fn retrieval_is_read_only_and_deterministic() {
    let (e, g) = ingested();
    let digest = graph_digest(&g);
    let first = e
        .retrieve_and_compress(&g, BOOKING_QUERY, None, &Default::default(), "2024-05-01")
        .unwrap();
    for _ in 0..5 {
        let again = e
            .retrieve_and_compress(&g, BOOKING_QUERY, None, &Default::default(), "2024-05-01")
            .unwrap();
        assert_eq!(again.canonical_json(), first.canonical_json());
    }
    assert_eq!(graph_digest(&g), digest);
    assert!(
        first.compressed.text.contains("Stockholm"),
        "{}",
        first.compressed.text
    );
}

#[test]
fn procedural_items_carry_return() {
    let (e, g) = ingested();
    let cfg = RetrievalConfig {
        mode_override: Some(MemoryMode::Procedural),
        ..Default::default()
    };
    let r = e
        .retrieve_and_compress(
            &g,
            "reserve a table on Friday",
            Some(&cfg),
            &Default::default(),
            "",
        )
        .unwrap();
    assert!(!r.retrieval.candidates.is_empty());
    assert!(
        r.compressed.text.contains("(return: 7/10)"),
        "{}",
        r.compressed.text
    );
}

#[test]
fn episodic_threshold_filters_single_hits() {
    // two sessions, one proposition each
    let e = engine();
    let mut g = MemoryGraph::new(64);
    let p = mock_providers();
    for (i, text) in ["The venue is a barn.", "The venue holds 200 guests."]
        .iter()
        .enumerate()
    {
        let ep = g
            .add_node(
                NodeKind::Episodic,
                *text,
                &p.embed(text).unwrap(),
                Default::default(),
            )
            .unwrap();
        g.set_meta(ep, META_TRAJECTORY, format!("s{i}")).unwrap();
        let prop = g
            .add_node(
                NodeKind::Proposition,
                *text,
                &p.embed(text).unwrap(),
                Default::default(),
            )
            .unwrap();
        g.add_edge(EdgeKind::Provenance, prop, ep).unwrap();
    }
    for rollup in [false, true] {
        let cfg = RetrievalConfig {
            mode_override: Some(MemoryMode::Episodic),
            min_provenance_hits: 2,
            session_rollup: rollup,
            ..Default::default()
        };
        let r = e
            .retrieve_and_compress(
                &g,
                "where is the venue",
                Some(&cfg),
                &Default::default(),
                "",
            )
            .unwrap();
        assert_eq!(r.retrieval.candidates.len(), 2);
        assert!(r.retrieval.episodic_nodes.is_empty());
        assert!(r.compressed.is_empty());
    }
}

#[test]
fn delete_by_ids_and_predicate() {
    let (e, mut g) = ingested();
    let props: Vec<NodeId> = g
        .active_nodes(NodeKind::Proposition)
        .map(|n| n.id)
        .take(2)
        .collect();
    let r = e
        .delete(
            &mut g,
            &DeleteCriteria::Ids {
                ids: vec![props[0], props[1], NodeId(99_999)],
            },
        )
        .unwrap();
    assert_eq!(r.deactivated, 2);
    assert_eq!(r.unknown_ids, vec![NodeId(99_999)]);
    let again = e
        .delete(&mut g, &DeleteCriteria::Ids { ids: props.clone() })
        .unwrap();
    assert_eq!(again.deactivated, 0);

    let rx = g.active_nodes(NodeKind::Prescription).next().unwrap().id;
    g.set_meta(rx, "return", "2".into()).unwrap();
    let by_return = DeleteCriteria::Predicate {
        kind: NodeKind::Prescription,
        max_return: Some(2),
        text_contains: None,
    };
    assert_eq!(e.delete(&mut g, &by_return).unwrap().deactivated, 1);
    assert_eq!(e.delete(&mut g, &by_return).unwrap().deactivated, 0);
    assert!(!g.is_active(rx));
}

#[test]
fn delete_criteria_wire_format() {
    let ids: DeleteCriteria = serde_json::from_str(r#"{"ids": ["3", "4"]}"#).unwrap();
    assert_eq!(
        ids,
        DeleteCriteria::Ids {
            ids: vec![NodeId(3), NodeId(4)]
        }
    );
    let pred: DeleteCriteria =
        serde_json::from_str(r#"{"kind": "Prescription", "max_return": 2}"#).unwrap();
    assert!(matches!(
        pred,
        DeleteCriteria::Predicate {
            max_return: Some(2),
            ..
        }
    ));
}

#[test]
fn insertion_disabled_rejects_writes() {
    let e = MemoryEngine::new(
        mock_providers(),
        EngineConfig {
            insertion_disabled: true,
            ..Default::default()
        },
    );
    let mut g = MemoryGraph::new(64);
    assert!(matches!(
        e.create(&mut g, &booking_trajectory()),
        Err(Error::InsertionDisabled)
    ));
    assert!(matches!(
        e.update(&mut g, None, None),
        Err(Error::InsertionDisabled)
    ));
    assert!(e
        .retrieve_and_compress(&g, "q", Some(&semantic()), &Default::default(), "")
        .is_ok());
}

#[test]
fn update_on_empty_graph_is_zero() {
    let e = engine();
    let r = e.update(&mut MemoryGraph::new(64), None, None).unwrap();
    assert_eq!(
        (r.nodes_visited, r.merges_triggered, r.merges_applied),
        (0, 0, 0)
    );
}

#[test]
fn update_delegates_to_merge_pass() {
    let e = engine();
    let mut g = MemoryGraph::new(64);
    let mut raw = passage_trajectory();
    raw.pairs[0].observation =
        "Luigi's in Stockholm serves Italian food. Luigi's in Stockholm serves Italian food daily."
            .into();
    e.create(&mut g, &raw).unwrap();
    let before = g.active_nodes(NodeKind::Proposition).count();
    let r = e.update(&mut g, Some(0.6), Some(1)).unwrap();
    assert_eq!(r.merges_applied, 1);
    assert_eq!(g.active_nodes(NodeKind::Proposition).count(), before - 1);
}
