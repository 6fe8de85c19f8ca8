//! Turns raw observation/action trajectories into standardized episodic steps
//! `(o, s, a, r, g)` and splits them into segments where the subgoal shifts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::{PromptName, Providers};
use crate::text::section;
use crate::vector::cosine;

pub const DEFAULT_THETA_SEG: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPair {
    pub observation: String,
    #[serde(default)]
    pub action: String,
}

/// One line of trajectory JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTrajectory {
    /// Optional caller-chosen trajectory id, recorded on episodic nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub goal: String,
    pub pairs: Vec<RawPair>,
}

impl RawTrajectory {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Validation(
                "trajectory has no observation/action pairs".into(),
            ));
        }
        if let Some(i) = self
            .pairs
            .iter()
            .position(|p| p.observation.trim().is_empty())
        {
            return Err(Error::Validation(format!(
                "pair {} has an empty observation",
                i + 1
            )));
        }
        Ok(())
    }

    /// A single pair without an action: a document rather than an interaction.
    pub fn is_passive(&self) -> bool {
        self.pairs.len() == 1 && self.pairs[0].action.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicStep {
    /// 1-based step index.
    pub index: usize,
    pub observation: String,
    pub state: String,
    pub action: String,
    pub reward: String,
    pub subgoal: String,
    /// Absent for passive steps, whose subgoal is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgoal_embedding: Option<Vec<f64>>,
}

impl EpisodicStep {
    /// Text stored on the step's episodic node.
    pub fn render(&self) -> String {
        if self.state.is_empty() && self.action.is_empty() && self.subgoal.is_empty() {
            return self.observation.clone();
        }
        format!(
            "Observation: {}\nState: {}\nAction: {}\nReward: {}\nSubgoal: {}",
            self.observation, self.state, self.action, self.reward, self.subgoal
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub trajectory_id: String,
    /// Inclusive 1-based step range.
    pub start: usize,
    pub end: usize,
    pub steps: Vec<EpisodicStep>,
}

impl Segment {
    /// Stepwise state/action/reward trace fed to the procedural prompt.
    pub fn linearize(&self) -> String {
        self.steps
            .iter()
            .map(|s| {
                format!(
                    "Step {}: state={}; action={}; reward={}",
                    s.index, s.state, s.action, s.reward
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn required_section(completion: String, heading: &str) -> Result<String> {
    match section(&completion, heading) {
        Some(body) => Ok(body),
        None => Err(Error::parse(
            format!("missing \"### {heading}\" section"),
            completion,
        )),
    }
}

pub fn derive_state(
    p: &Providers,
    prev_state: &str,
    prev_action: &str,
    observation: &str,
    goal: &str,
) -> Result<String> {
    if observation.trim().is_empty() {
        return Err(Error::Validation("observation is empty".into()));
    }
    let out = p.ask(
        PromptName::GetState,
        &[
            ("goal", goal),
            ("state", prev_state),
            ("action", prev_action),
            ("observation", observation),
        ],
    )?;
    required_section(out, "State")
}

pub fn derive_subgoal(
    p: &Providers,
    goal: &str,
    state: &str,
    observation: &str,
    action: &str,
) -> Result<String> {
    let out = p.ask(
        PromptName::GetSubgoal,
        &[
            ("goal", goal),
            ("state", state),
            ("observation", observation),
            ("action", action),
        ],
    )?;
    required_section(out, "Subgoal")
}

/// `next_observation` is empty for the final step.
pub fn derive_reward(
    p: &Providers,
    goal: &str,
    state: &str,
    action: &str,
    next_observation: &str,
) -> Result<String> {
    let out = p.ask(
        PromptName::GetReward,
        &[
            ("goal", goal),
            ("state", state),
            ("action", action),
            ("observation", next_observation),
        ],
    )?;
    required_section(out, "Reward")
}

/// Standardize every pair in order, threading the state. Errors carry the
/// 1-based index of the failing step.
pub fn standardize_trajectory(p: &Providers, raw: &RawTrajectory) -> Result<Vec<EpisodicStep>> {
    raw.validate()?;
    if raw.is_passive() {
        return Ok(vec![EpisodicStep {
            index: 1,
            observation: raw.pairs[0].observation.clone(),
            state: String::new(),
            action: String::new(),
            reward: String::new(),
            subgoal: String::new(),
            subgoal_embedding: None,
        }]);
    }
    let mut steps: Vec<EpisodicStep> = Vec::with_capacity(raw.pairs.len());
    let (mut prev_state, mut prev_action) = (String::new(), String::new());
    for (i, pair) in raw.pairs.iter().enumerate() {
        let t = i + 1;
        let next_obs = raw
            .pairs
            .get(i + 1)
            .map(|n| n.observation.as_str())
            .unwrap_or("");
        let step = (|| -> Result<EpisodicStep> {
            let state = derive_state(p, &prev_state, &prev_action, &pair.observation, &raw.goal)?;
            let subgoal = derive_subgoal(p, &raw.goal, &state, &pair.observation, &pair.action)?;
            let reward = derive_reward(p, &raw.goal, &state, &pair.action, next_obs)?;
            let subgoal_embedding = if subgoal.trim().is_empty() {
                None
            } else {
                Some(p.embed(&subgoal)?)
            };
            Ok(EpisodicStep {
                index: t,
                observation: pair.observation.clone(),
                state,
                action: pair.action.clone(),
                reward,
                subgoal,
                subgoal_embedding,
            })
        })()
        .map_err(|e| e.at_step(t))?;
        prev_state = step.state.clone();
        prev_action = step.action.clone();
        steps.push(step);
    }
    Ok(steps)
}

/// Start a new segment before step `t` whenever the cosine between the
/// subgoal embeddings of steps `t-1` and `t` is below `theta_seg`.
pub fn segment(
    trajectory_id: &str,
    steps: &[EpisodicStep],
    theta_seg: f64,
) -> Result<Vec<Segment>> {
    if steps.is_empty() {
        return Err(Error::Validation(
            "cannot segment an empty step list".into(),
        ));
    }
    if !(-1.0..=1.0).contains(&theta_seg) {
        return Err(Error::Validation(format!(
            "theta_seg {theta_seg} outside [-1, 1]"
        )));
    }
    let embeddings = steps
        .iter()
        .map(|s| {
            s.subgoal_embedding.as_deref().ok_or_else(|| {
                Error::Validation(format!("step {} has no subgoal embedding", s.index))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    let mut start = 0;
    for t in 1..=steps.len() {
        let boundary = t == steps.len() || cosine(embeddings[t - 1], embeddings[t]) < theta_seg;
        if boundary {
            let slice = &steps[start..t];
            out.push(Segment {
                trajectory_id: trajectory_id.to_string(),
                start: slice[0].index,
                end: slice[slice.len() - 1].index,
                steps: slice.to_vec(),
            });
            start = t;
        }
    }
    Ok(out)
}
