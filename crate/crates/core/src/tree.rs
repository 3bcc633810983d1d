//! The search tree, stored as an arena of thought nodes.

use serde::{Deserialize, Serialize};

use crate::problem::TestCase;

/// Index of a node in its [`SearchTree`]. Assigned in creation order, so it
/// doubles as the deterministic tie-breaker during selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Unknown,
}

impl Verdict {
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "correct" | "true" => Verdict::Correct,
            "incorrect" | "wrong" | "false" => Verdict::Incorrect,
            _ => Verdict::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Incorrect => "incorrect",
            Verdict::Unknown => "unknown",
        }
    }
}

/// The model's judgement of one basic block on a failing test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAnalysis {
    pub block_index: usize,
    pub line_span: (usize, usize),
    pub source: String,
    pub vars_after: std::collections::BTreeMap<String, String>,
    pub verdict: Verdict,
    pub explanation: String,
}

/// Textual record of a failing public test, fed back into expansion and rethink prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalFeedback {
    pub failed_test: TestCase,
    pub actual_output: String,
    pub block_reports: Vec<BlockAnalysis>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtNode {
    pub node_id: NodeId,
    pub parent: Option<NodeId>,
    /// Reasoning step (or whole program, at code granularity). Empty at the root.
    pub thought: String,
    /// Model-assigned reasonableness score, used as the selection prior.
    pub prior: f64,
    /// Maximum reward ever backpropagated through this node.
    pub q_value: f64,
    pub visits: u32,
    pub children: Vec<NodeId>,
    pub feedback: Option<VerbalFeedback>,
    pub rethink_count: u32,
    pub depth: usize,
    /// Expansion produced nothing; the node is evaluated but never expanded again.
    #[serde(default)]
    pub terminal: bool,
    /// Public pass rate of the most recent program generated from this node.
    #[serde(default)]
    pub last_v_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCase {
    pub test: TestCase,
    /// Actual stdout, or the error text when the program did not finish normally.
    pub actual: String,
}

/// A full program generated from a thought chain, with its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProgram {
    pub source: String,
    pub origin_node: NodeId,
    pub v_test: f64,
    pub v_llm: Option<f64>,
    pub reward: f64,
    pub failed_cases: Vec<FailedCase>,
    pub rollout_index: u32,
    /// Set when the rollout could not produce or execute a program.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Produced by a rethink cycle rather than a fresh rollout.
    #[serde(default)]
    pub from_rethink: bool,
}

impl CandidateProgram {
    /// Placeholder returned when no rollout produced a usable program.
    pub fn empty_sentinel() -> Self {
        Self {
            source: String::new(),
            origin_node: NodeId::ROOT,
            v_test: 0.0,
            v_llm: None,
            reward: 0.0,
            failed_cases: Vec::new(),
            rollout_index: 0,
            error: Some("no rollout produced a program".into()),
            from_rethink: false,
        }
    }
}

/// Arena-backed MCTS tree. Node 0 is the root; children always have larger ids
/// than their parent, so the structure is acyclic by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<ThoughtNode>,
}

impl Default for SearchTree {
    fn default() -> Self {
        Self::new()
    }
}

impl SearchTree {
    pub fn new() -> Self {
        Self {
            nodes: vec![ThoughtNode {
                node_id: NodeId::ROOT,
                parent: None,
                thought: String::new(),
                prior: 1.0,
                q_value: 0.0,
                visits: 0,
                children: Vec::new(),
                feedback: None,
                rethink_count: 0,
                depth: 0,
                terminal: false,
                last_v_test: None,
            }],
        }
    }

    pub fn root(&self) -> &ThoughtNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &ThoughtNode {
        &self.nodes[id.0]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut ThoughtNode {
        &mut self.nodes[id.0]
    }

    pub fn get(&self, id: NodeId) -> Option<&ThoughtNode> {
        self.nodes.get(id.0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ThoughtNode> {
        self.nodes.iter()
    }

    /// Appends a fresh, unvisited child under `parent`.
    pub fn add_child(&mut self, parent: NodeId, thought: impl Into<String>, prior: f64) -> NodeId {
        let id = NodeId(self.nodes.len());
        let depth = self.nodes[parent.0].depth + 1;
        self.nodes.push(ThoughtNode {
            node_id: id,
            parent: Some(parent),
            thought: thought.into(),
            prior,
            q_value: 0.0,
            visits: 0,
            children: Vec::new(),
            feedback: None,
            rethink_count: 0,
            depth,
            terminal: false,
            last_v_test: None,
        });
        self.nodes[parent.0].children.push(id);
        id
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Thought texts along the path from the root to `id`, root excluded.
    pub fn thought_chain(&self, id: NodeId) -> Vec<String> {
        self.path_to(id).into_iter().skip(1).map(|n| self.nodes[n.0].thought.clone()).collect()
    }

    /// Max-update of Q and visit increment for `id` and every ancestor.
    pub fn backpropagate(&mut self, id: NodeId, reward: f64) {
        let mut cur = Some(id);
        while let Some(n) = cur {
            let node = &mut self.nodes[n.0];
            node.q_value = node.q_value.max(reward);
            node.visits += 1;
            cur = node.parent;
        }
    }

    /// Every id in the subtree rooted at `id`, including `id`.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n.0].children.iter().rev().copied());
        }
        out
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backprop_applies_max_rule_along_path() {
        let mut tree = SearchTree::new();
        let a = tree.add_child(NodeId::ROOT, "a", 0.5);
        let b = tree.add_child(a, "b", 0.5);
        tree.node_mut(NodeId::ROOT).q_value = 0.2;
        tree.node_mut(a).q_value = 0.7;
        tree.node_mut(b).q_value = 0.0;
        tree.backpropagate(b, 0.5);
        let qs: Vec<f64> = [NodeId::ROOT, a, b].iter().map(|&n| tree.node(n).q_value).collect();
        assert_eq!(qs, vec![0.5, 0.7, 0.5]);
        assert!([NodeId::ROOT, a, b].iter().all(|&n| tree.node(n).visits == 1));
    }

    #[test]
    fn backprop_zero_reward_only_counts_visits() {
        let mut tree = SearchTree::new();
        let a = tree.add_child(NodeId::ROOT, "a", 0.5);
        tree.node_mut(a).q_value = 0.3;
        tree.backpropagate(a, 0.0);
        assert_eq!(tree.node(a).q_value, 0.3);
        assert_eq!(tree.root().q_value, 0.0);
        assert_eq!((tree.root().visits, tree.node(a).visits), (1, 1));
    }

    #[test]
    fn backprop_full_reward_saturates() {
        let mut tree = SearchTree::new();
        let a = tree.add_child(NodeId::ROOT, "a", 0.5);
        let b = tree.add_child(a, "b", 0.5);
        tree.backpropagate(b, 1.0);
        assert!(tree.nodes().all(|n| n.q_value == 1.0));
    }

    #[test]
    fn chain_and_depth() {
        let mut tree = SearchTree::new();
        let a = tree.add_child(NodeId::ROOT, "first", 0.5);
        let b = tree.add_child(a, "second", 0.5);
        assert_eq!(tree.thought_chain(b), vec!["first", "second"]);
        assert_eq!(tree.node(b).depth, 2);
        assert_eq!(tree.path_to(b), vec![NodeId::ROOT, a, b]);
        assert!(tree.thought_chain(NodeId::ROOT).is_empty());
        assert_eq!(tree.subtree(a), vec![a, b]);
    }
}
