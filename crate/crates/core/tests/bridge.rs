use kgmem_core::fixtures::{bridge_config, bridge_corpus, BRIDGE_QUERY};
use kgmem_core::retriever::{retrieve, RetrievalResult};

fn ids(r: &RetrievalResult) -> Vec<kgmem_core::graph::NodeId> {
    r.candidates.iter().map(|s| s.id).collect()
}

#[test]
fn answer_needs_two_hops() {
    let c = bridge_corpus();
    assert_eq!(c.graph.node_count(), 6);
    let one = retrieve(
        &c.graph,
        &c.providers,
        BRIDGE_QUERY,
        &bridge_config(1),
        &Default::default(),
    )
    .unwrap();
    assert!(!ids(&one).contains(&c.answer));
    assert!(ids(&one).contains(&c.bridge));
    // the initial candidates hold no performer fact, so hop 1 has no focus
    assert!(one.hop_trace[0]
        .control
        .as_ref()
        .unwrap()
        .focus_ids
        .is_empty());
    assert_eq!(one.hop_trace[0].routed_to, vec![c.song]);

    let two = retrieve(
        &c.graph,
        &c.providers,
        BRIDGE_QUERY,
        &bridge_config(2),
        &Default::default(),
    )
    .unwrap();
    assert!(ids(&two).contains(&c.answer));
    assert_eq!(
        two.hop_trace[1].control.as_ref().unwrap().focus_ids,
        vec![c.bridge]
    );
    assert_eq!(two.hop_trace[1].tags, vec!["Jim Croce", "born"]);
    assert_eq!(two.hop_trace[1].routed_to, vec![c.singer]);
    assert!(!ids(&two).contains(&c.distractor));
}

#[test]
fn bridge_runs_are_deterministic() {
    let c = bridge_corpus();
    let a = retrieve(
        &c.graph,
        &c.providers,
        BRIDGE_QUERY,
        &bridge_config(2),
        &Default::default(),
    )
    .unwrap();
    let b = retrieve(
        &c.graph,
        &c.providers,
        BRIDGE_QUERY,
        &bridge_config(2),
        &Default::default(),
    )
    .unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}
