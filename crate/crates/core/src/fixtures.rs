//! Small graphs with scripted providers for examples and tests.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::graph::{EdgeKind, MemoryGraph, NodeId, NodeKind, META_RETURN};
use crate::provider::mock::prompt_hash;
use crate::provider::{
    ChatProvider, ChatRequest, Completion, Embedder, HashEmbedder, PromptName, PromptSet,
    ProviderError, Providers, ScriptedChat, TemplateChat,
};
use crate::retriever::{MemoryMode, RetrievalConfig};
use crate::standardizer::{RawPair, RawTrajectory};

pub const BRIDGE_QUERY: &str =
    "What year was the singer of the Billboard number 37 hit One Less Set of Footsteps born?";

/// Two-hop corpus: the answer is only reachable once the bridge fact names
/// the performer.
pub struct BridgeCorpus {
    pub graph: MemoryGraph,
    pub providers: Providers,
    pub chart: NodeId,
    pub bridge: NodeId,
    pub distractor: NodeId,
    pub answer: NodeId,
    pub song: NodeId,
    pub singer: NodeId,
}

/// Focuses on the fact that names the performer; otherwise asks for
/// another hop with no focus.
fn bridge_controller(prompt: &str) -> Option<String> {
    if !prompt.starts_with("You are a retrieval controller") {
        return None;
    }
    let facts = prompt.split("**Retrieved facts:**\n").nth(1)?;
    let focus: Vec<u64> = facts
        .lines()
        .filter(|l| l.contains("performed by"))
        .filter_map(|l| l.strip_prefix('[')?.split(']').next()?.parse().ok())
        .collect();
    Some(serde_json::json!({"enough": false, "top_node_ids": focus}).to_string())
}

fn bridge_planner(prompt: &str) -> Option<String> {
    if !prompt.starts_with("You are an expert at analyzing an agent's goal") {
        return None;
    }
    let observation = prompt.rsplit("Observation:").next().unwrap_or("");
    Some(if observation.contains("Jim Croce") {
        "### Reasoning\nThe bridge entity is known.\n### Tags\n**Tags:** [\"Jim Croce\", \"born\"]\n### Next Subgoal\n## Find the year Jim Croce was born".to_string()
    } else {
        "### Reasoning\nIdentify the performer first.\n### Tags\n**Tags:** [\"One Less Set of Footsteps\", \"singer\"]\n### Next Subgoal\n## Identify the singer of One Less Set of Footsteps".to_string()
    })
}

pub fn bridge_corpus() -> BridgeCorpus {
    let chat = ScriptedChat::new()
        .responder(bridge_controller)
        .responder(bridge_planner);
    let providers = Providers::new(Arc::new(chat), Arc::new(HashEmbedder::new(64)));
    let mut graph = MemoryGraph::new(64);
    let mut add = |kind, text: &str| {
        let emb = providers.embed(text).unwrap();
        graph
            .add_node(kind, text, &emb, Default::default())
            .unwrap()
    };
    let song = add(NodeKind::Concept, "One Less Set of Footsteps");
    let croce = add(NodeKind::Concept, "Jim Croce");
    let chart = add(
        NodeKind::Proposition,
        "One Less Set of Footsteps reached number 37 on the Billboard Hot 100 chart",
    );
    let bridge = add(
        NodeKind::Proposition,
        "One Less Set of Footsteps is a song written and performed by Jim Croce",
    );
    let distractor = add(
        NodeKind::Proposition,
        "The singer Mariah Carey was born in 1969 and her hit singles topped the Billboard chart",
    );
    let answer = add(NodeKind::Proposition, "Jim Croce was born in 1943");
    for (p, c) in [
        (chart, song),
        (bridge, song),
        (bridge, croce),
        (answer, croce),
    ] {
        graph.add_edge(EdgeKind::Membership, p, c).unwrap();
    }
    BridgeCorpus {
        graph,
        providers,
        chart,
        bridge,
        distractor,
        answer,
        song,
        singer: croce,
    }
}

pub fn bridge_config(hop_limit: usize) -> RetrievalConfig {
    RetrievalConfig {
        top_k: 2,
        focus_cap: 1,
        hop_limit,
        mode_override: Some(MemoryMode::Semantic),
        ..Default::default()
    }
}

/// Template-aware mock chat with the hashing embedder.
pub fn mock_providers() -> Providers {
    Providers::new(
        Arc::new(TemplateChat::default()),
        Arc::new(HashEmbedder::new(64)),
    )
}

/// Three-step restaurant booking interaction.
pub fn booking_trajectory() -> RawTrajectory {
    let pair = |o: &str, a: &str| RawPair {
        observation: o.to_string(),
        action: a.to_string(),
    };
    RawTrajectory {
        id: Some("booking-1".to_string()),
        goal: "Book a table for two at Luigi's in Stockholm on Friday".to_string(),
        pairs: vec![
            pair(
                "The Restaurant Finder home page lists Luigi's in Stockholm. Luigi's serves Italian food.",
                "search for Luigi's Stockholm",
            ),
            pair(
                "The Luigi's page shows open tables on Friday at 19:00.",
                "click reserve Friday 19:00",
            ),
            pair(
                "The booking form asks for the party size. The confirmation code is LX42.",
                "submit party size two",
            ),
        ],
    }
}

/// A single document with no actions.
pub fn passage_trajectory() -> RawTrajectory {
    RawTrajectory {
        id: Some("doc-1".to_string()),
        goal: "Read the passage".to_string(),
        pairs: vec![RawPair {
            observation: "Jim Croce was born in 1943. Jim Croce recorded Time in a Bottle."
                .to_string(),
            action: String::new(),
        }],
    }
}

pub const BOOKING_QUERY: &str = "Which city is Luigi's restaurant in?";

const VOCAB: [&str; 24] = [
    "harbor", "violin", "Oslo", "glacier", "orbit", "lantern", "Kyoto", "copper", "meadow",
    "signal", "falcon", "Lima", "ferry", "quartz", "tundra", "archive", "cobalt", "Nairobi",
    "pepper", "summit", "velvet", "canyon", "Quebec", "ember",
];

fn phrase(rng: &mut StdRng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n)
        .map(|_| *VOCAB.choose(rng).expect("vocab"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Seeded graph with every node and edge kind. Low-level nodes always get
/// provenance; about a tenth of all nodes end up inactive.
pub fn random_graph(seed: u64, nodes: usize) -> MemoryGraph {
    let mut rng = StdRng::seed_from_u64(seed);
    let emb = HashEmbedder::new(64);
    let mut g = MemoryGraph::new(64);
    let mut by_kind: BTreeMap<NodeKind, Vec<NodeId>> = BTreeMap::new();
    let kinds = [
        (NodeKind::Episodic, 20),
        (NodeKind::Proposition, 35),
        (NodeKind::Concept, 15),
        (NodeKind::Intent, 10),
        (NodeKind::Prescription, 20),
    ];
    for i in 0..nodes {
        let kind = if i == 0 {
            NodeKind::Episodic
        } else if i == 1 {
            NodeKind::Intent
        } else {
            kinds.choose_weighted(&mut rng, |k| k.1).expect("weights").0
        };
        let text = match kind {
            NodeKind::Concept => format!("{} {i}", phrase(&mut rng, 1, 2)),
            _ => phrase(&mut rng, 3, 9),
        };
        let mut meta = BTreeMap::new();
        if kind == NodeKind::Prescription {
            meta.insert(META_RETURN.to_string(), rng.gen_range(1..=10u8).to_string());
        }
        if rng.gen_bool(0.2) {
            meta.insert("note".to_string(), phrase(&mut rng, 1, 3));
        }
        let v = emb.embed(&text).expect("hash embedding");
        let id = g.add_node(kind, text, &v, meta).expect("valid node");
        by_kind.entry(kind).or_default().push(id);
    }
    let pick = |rng: &mut StdRng, k: NodeKind| by_kind.get(&k).and_then(|v| v.choose(rng)).copied();
    let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
    for id in ids {
        let kind = g.get(id).expect("node").kind;
        if kind.is_low_level() {
            for _ in 0..rng.gen_range(1..=2) {
                let ep = pick(&mut rng, NodeKind::Episodic).expect("episodic exists");
                g.add_edge_idempotent(EdgeKind::Provenance, id, ep)
                    .expect("provenance");
            }
        }
        match kind {
            NodeKind::Proposition => {
                for _ in 0..rng.gen_range(0..=3) {
                    if let Some(c) = pick(&mut rng, NodeKind::Concept) {
                        g.add_edge_idempotent(EdgeKind::Membership, id, c)
                            .expect("membership");
                    }
                }
                if rng.gen_bool(0.1) {
                    let other = pick(&mut rng, NodeKind::Proposition).expect("self exists");
                    if other != id {
                        g.link_siblings(id, other).expect("sibling");
                    }
                }
            }
            NodeKind::Prescription => {
                let intent = pick(&mut rng, NodeKind::Intent).expect("intent exists");
                g.add_edge_idempotent(EdgeKind::Solves, intent, id)
                    .expect("solves");
            }
            _ => {}
        }
    }
    let ids: Vec<NodeId> = g.nodes().map(|n| n.id).collect();
    for id in ids {
        if rng.gen_bool(0.1) {
            g.deactivate(id).expect("deactivate");
        }
    }
    g
}

/// One episode, one proposition per unit of the largest degree, and one
/// concept per entry of `degrees` tagged by that many propositions.
pub fn tag_degree_graph(degrees: &[usize]) -> MemoryGraph {
    let emb = HashEmbedder::new(64);
    let mut g = MemoryGraph::new(64);
    let node = |g: &mut MemoryGraph, kind, text: String| {
        let v = emb.embed(&text).expect("hash embedding");
        g.add_node(kind, text, &v, BTreeMap::new())
            .expect("valid node")
    };
    let ep = node(&mut g, NodeKind::Episodic, "the session".into());
    let props: Vec<NodeId> = (0..degrees.iter().copied().max().unwrap_or(0))
        .map(|i| {
            let p = node(&mut g, NodeKind::Proposition, format!("fact number {i}"));
            g.add_edge(EdgeKind::Provenance, p, ep).expect("provenance");
            p
        })
        .collect();
    for (t, &d) in degrees.iter().enumerate() {
        let c = node(&mut g, NodeKind::Concept, format!("tag {t}"));
        for &p in &props[..d] {
            g.add_edge(EdgeKind::Membership, p, c).expect("membership");
        }
    }
    g
}

fn prompt_rng(seed: u64, prompt: &str) -> StdRng {
    let h = prompt_hash(prompt);
    let prefix = u64::from_str_radix(&h[..16], 16).expect("hex digest");
    StdRng::seed_from_u64(seed ^ prefix)
}

/// Ids listed in the facts section of a rendered controller prompt.
pub fn fact_ids(prompt: &str) -> Vec<u64> {
    prompt
        .split("**Retrieved facts:**\n")
        .nth(1)
        .unwrap_or("")
        .lines()
        .filter_map(|l| l.strip_prefix('[')?.split(']').next()?.parse().ok())
        .collect()
}

/// Seeded adversarial script for retrieval. Replies depend only on the seed
/// and prompt text. Most controller replies are legal; some ask for too many
/// ids, name ids outside the candidate set, or are not JSON at all.
pub fn fuzz_providers(seed: u64) -> Providers {
    let chat = ScriptedChat::new().responder(move |prompt| {
        let mut rng = prompt_rng(seed, prompt);
        if prompt.starts_with("You are a retrieval controller") {
            let ids = fact_ids(prompt);
            let roll = rng.gen_range(0..100);
            let reply = if roll < 30 {
                serde_json::json!({"enough": true, "top_node_ids": []})
            } else if roll < 85 {
                let n = rng.gen_range(0..=ids.len().min(2));
                let focus: Vec<u64> = ids.choose_multiple(&mut rng, n).copied().collect();
                serde_json::json!({"enough": false, "top_node_ids": focus})
            } else if roll < 92 {
                serde_json::json!({"enough": false, "top_node_ids": [u64::MAX - 1]})
            } else if roll < 96 {
                serde_json::json!({"enough": false, "top_node_ids": ids})
            } else {
                return Some("I think we need more facts.".to_string());
            };
            return Some(reply.to_string());
        }
        if prompt.starts_with("You are an expert at analyzing an agent's goal") {
            let tags: Vec<String> = (0..rng.gen_range(0..=3))
                .map(|_| phrase(&mut rng, 1, 2))
                .collect();
            return Some(format!(
                "### Tags\n**Tags:** {}\n### Next Subgoal\n## {}",
                serde_json::to_string(&tags).expect("tags serialize"),
                phrase(&mut rng, 2, 6)
            ));
        }
        None
    });
    let chat = Arc::new(FallbackChat {
        first: chat,
        second: TemplateChat::default(),
    });
    Providers::new(chat, Arc::new(HashEmbedder::new(64)))
}

/// A random query built from the shared vocabulary.
pub fn fuzz_query(seed: u64) -> String {
    phrase(
        &mut StdRng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7)),
        2,
        8,
    )
}

/// Seeded multi-step trajectory over the shared vocabulary.
pub fn random_trajectory(seed: u64) -> RawTrajectory {
    let mut rng = StdRng::seed_from_u64(seed);
    let steps = rng.gen_range(1..=4);
    let passive = steps == 1 && rng.gen_bool(0.5);
    let pairs = (0..steps)
        .map(|_| {
            let n = rng.gen_range(1..=3);
            let observation = (0..n)
                .map(|_| {
                    let mut s = phrase(&mut rng, 3, 7);
                    s.push('.');
                    s[..1].to_uppercase() + &s[1..]
                })
                .collect::<Vec<_>>()
                .join(" ");
            let action = if passive {
                String::new()
            } else {
                phrase(&mut rng, 2, 4)
            };
            RawPair {
                observation,
                action,
            }
        })
        .collect();
    RawTrajectory {
        id: Some(format!("rand-{seed}")),
        goal: phrase(&mut rng, 3, 6),
        pairs,
    }
}

/// Mock providers whose merge judgments are drawn from the three legal
/// outcomes by seed and prompt.
pub fn random_merge_providers(seed: u64) -> Providers {
    let chat = ScriptedChat::new().responder(move |prompt| {
        let vars = crate::provider::prompts::unrender(
            PromptSet::builtin().template(PromptName::MergeSemantic),
            prompt,
        )?;
        let mut rng = prompt_rng(seed, prompt);
        let (rel, flag) = *[
            ("UPDATE_SAME_FACT", true),
            ("SAME_TOPIC_MERGE_WELL", true),
            ("WEAK_RELATED_STITCH_RISK", false),
        ]
        .choose(&mut rng)
        .expect("three outcomes");
        let merged = format!(
            "{} {}",
            vars["memory_earlier"].trim(),
            vars["memory_later"].trim()
        );
        Some(
            serde_json::json!({
                "merged_statement": merged,
                "relationship": rel,
                "deactivate_earlier": flag,
                "deactivate_later": flag,
                "simple_reasoning": "seeded",
            })
            .to_string(),
        )
    });
    let chat = Arc::new(FallbackChat {
        first: chat,
        second: TemplateChat::default(),
    });
    Providers::new(chat, Arc::new(HashEmbedder::new(64)))
}

/// Tries `first`; on any error falls back to `second`.
struct FallbackChat<A, B> {
    first: A,
    second: B,
}

impl<A: ChatProvider, B: ChatProvider> ChatProvider for FallbackChat<A, B> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        self.first
            .complete(request)
            .or_else(|_| self.second.complete(request))
    }
}
