//! The tree search: selection by P-UCB, expansion with thought proposals,
//! evaluation through generated programs, max-backpropagation, and in-place
//! rethinking of failing leaves.

use serde::{Deserialize, Serialize};

use crate::config::{Granularity, RunConfig};
use crate::error::SearchError;
use crate::evaluator::Evaluator;
use crate::gateway::Gateway;
use crate::problem::{validate_problem, ProblemSpec};
use crate::sandbox::Sandbox;
use crate::tree::{CandidateProgram, NodeId, SearchTree};

/// Exploration weight for a node visited `parent_visits` times (natural log).
pub fn compute_beta(parent_visits: u32, c_base: f64, c_explore: f64) -> f64 {
    ((f64::from(parent_visits) + c_base + 1.0) / c_base).ln() + c_explore
}

/// Prior-weighted UCB score of a child. The exploration term vanishes while
/// the parent has at most one visit.
pub fn compute_p_ucb(q: f64, prior: f64, parent_visits: u32, child_visits: u32, cfg: &RunConfig) -> f64 {
    if parent_visits <= 1 {
        return q;
    }
    let beta = compute_beta(parent_visits, cfg.c_base, cfg.c_explore);
    q + beta * prior * f64::from(parent_visits).ln().sqrt() / (1.0 + f64::from(child_visits))
}

/// Walks down from the root, taking the highest-P-UCB child (lowest id on
/// ties), until a childless node or the depth limit.
pub fn select_path(tree: &SearchTree, cfg: &RunConfig) -> NodeId {
    let max_depth = cfg.effective_max_depth();
    let mut cur = tree.root();
    while !cur.children.is_empty() && cur.depth < max_depth {
        let parent_visits = cur.visits;
        let best = cur
            .children
            .iter()
            .map(|&c| {
                let n = tree.node(c);
                (c, compute_p_ucb(n.q_value, n.prior, parent_visits, n.visits, cfg))
            })
            .max_by(|(a_id, a), (b_id, b)| a.total_cmp(b).then_with(|| b_id.cmp(a_id)))
            .map(|(id, _)| id)
            .expect("non-empty children");
        cur = tree.node(best);
    }
    cur.node_id
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SearchEvent {
    Selection { node: NodeId },
    Expansion { node: NodeId, children: Vec<NodeId>, with_feedback: bool },
    Evaluation { node: NodeId, rollout_index: u32, v_test: f64, v_llm: Option<f64>, reward: f64, error: Option<String> },
    Rethink { node: NodeId, old_thought: String, new_thought: Option<String> },
    Backprop { node: NodeId, reward: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub tree: SearchTree,
    /// Code-generation-plus-evaluation cycles spent, rethinks included.
    pub rollouts_used: u32,
    pub rethinks_used: u32,
    /// Ordered by `rollout_index`.
    pub candidates: Vec<CandidateProgram>,
    pub rng_seed: u64,
    pub events: Vec<SearchEvent>,
}

impl SearchState {
    pub fn new(seed: u64) -> Self {
        Self {
            tree: SearchTree::new(),
            rollouts_used: 0,
            rethinks_used: 0,
            candidates: Vec::new(),
            rng_seed: seed,
            events: Vec::new(),
        }
    }

    /// Max-update of Q and a visit for `node` and all its ancestors.
    pub fn backpropagate(&mut self, node: NodeId, reward: f64) {
        self.tree.backpropagate(node, reward);
        self.events.push(SearchEvent::Backprop { node, reward });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: CandidateProgram,
    pub tree: SearchTree,
    pub candidates: Vec<CandidateProgram>,
    pub rollouts_used: u32,
    pub rethinks_used: u32,
    pub events: Vec<SearchEvent>,
}

/// Best candidate: highest reward, then highest public pass rate, then earliest.
pub fn pick_best(candidates: &[CandidateProgram]) -> Option<&CandidateProgram> {
    candidates.iter().min_by(|a, b| {
        b.reward
            .total_cmp(&a.reward)
            .then_with(|| b.v_test.total_cmp(&a.v_test))
            .then_with(|| a.rollout_index.cmp(&b.rollout_index))
    })
}

/// Everything a rollout needs besides the mutable search state.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub problem: &'a ProblemSpec,
    pub cfg: &'a RunConfig,
    pub gateway: &'a Gateway,
    pub sandbox: &'a dyn Sandbox,
    pub evaluator: &'a Evaluator,
}

impl SearchContext<'_> {
    /// Creates up to `max_children` children under a childless, non-terminal
    /// leaf, conditioning on the leaf's feedback when it has any. An empty
    /// proposal marks the leaf terminal.
    pub fn expand_node(&self, state: &mut SearchState, leaf: NodeId) -> Result<Vec<NodeId>, SearchError> {
        let cfg = self.cfg;
        let node = state.tree.node(leaf);
        if node.depth >= cfg.effective_max_depth() || !node.children.is_empty() || node.terminal {
            return Err(SearchError::Precondition("expansion needs a childless leaf above the depth limit"));
        }
        let feedback = node.feedback.as_ref().filter(|_| cfg.flags.verbal_feedback);
        let with_feedback = feedback.is_some();
        let proposals = match cfg.granularity {
            Granularity::Thought => {
                let chain = state.tree.thought_chain(leaf);
                self.gateway.propose_thoughts(self.problem, &chain, feedback, cfg.max_children, cfg.flags.block_info)?
            }
            Granularity::Code => {
                self.gateway.propose_programs(self.problem, feedback, cfg.max_children, cfg.flags.block_info)?
            }
        };
        let children: Vec<NodeId> = proposals
            .into_iter()
            .take(cfg.max_children)
            .map(|p| state.tree.add_child(leaf, p.thought, p.score.clamp(0.0, 1.0)))
            .collect();
        if children.is_empty() {
            state.tree.node_mut(leaf).terminal = true;
        }
        state.events.push(SearchEvent::Expansion { node: leaf, children: children.clone(), with_feedback });
        Ok(children)
    }

    /// Program for a node: at code granularity the action itself, otherwise
    /// generated from the root-to-node thought chain.
    fn program_for(&self, state: &SearchState, node: NodeId) -> Result<String, SearchError> {
        if self.cfg.granularity == Granularity::Code && node != NodeId::ROOT {
            return Ok(state.tree.node(node).thought.clone());
        }
        let chain = state.tree.thought_chain(node);
        Ok(self.gateway.generate_program(self.problem, &chain)?)
    }

    /// One code-generation-plus-evaluation cycle on `node`: stores the
    /// feedback on the node, backpropagates, and records the candidate.
    fn evaluate_node(&self, state: &mut SearchState, node: NodeId, from_rethink: bool) -> CandidateProgram {
        let rollout_index = state.rollouts_used;
        let candidate = match self.program_for(state, node) {
            Ok(program) => {
                let signal =
                    self.evaluator.evaluate_candidate(&program, self.problem, self.cfg, self.sandbox, self.gateway);
                let n = state.tree.node_mut(node);
                n.feedback = signal.feedback;
                n.last_v_test = Some(signal.v_test);
                CandidateProgram {
                    source: program,
                    origin_node: node,
                    v_test: signal.v_test,
                    v_llm: signal.v_llm,
                    reward: signal.reward,
                    failed_cases: signal.failed_cases,
                    rollout_index,
                    error: signal.error,
                    from_rethink,
                }
            }
            Err(e) => error_candidate(node, rollout_index, from_rethink, e.to_string()),
        };
        self.finish_cycle(state, candidate)
    }

    fn finish_cycle(&self, state: &mut SearchState, candidate: CandidateProgram) -> CandidateProgram {
        state.events.push(SearchEvent::Evaluation {
            node: candidate.origin_node,
            rollout_index: candidate.rollout_index,
            v_test: candidate.v_test,
            v_llm: candidate.v_llm,
            reward: candidate.reward,
            error: candidate.error.clone(),
        });
        state.backpropagate(candidate.origin_node, candidate.reward);
        state.rollouts_used += 1;
        state.candidates.push(candidate.clone());
        candidate
    }

    fn rethink_eligible(&self, state: &SearchState, node: NodeId) -> bool {
        let n = state.tree.node(node);
        self.cfg.flags.rethink
            && node != NodeId::ROOT
            && n.feedback.is_some()
            && n.last_v_test.is_some_and(|v| v < 1.0)
            && n.rethink_count < self.cfg.rethink_limit_per_node
            && n.children.is_empty()
    }

    /// Replaces a failing leaf's thought in place using its feedback, then
    /// regenerates, evaluates and backpropagates. Ancestors are untouched.
    /// Costs one rollout unit.
    pub fn rethink_node(&self, state: &mut SearchState, node: NodeId) -> Result<CandidateProgram, SearchError> {
        if !self.rethink_eligible(state, node) {
            return Err(SearchError::Precondition(
                "rethink needs a failing, childless leaf with feedback and rethink budget",
            ));
        }
        if state.rollouts_used >= self.cfg.max_rollouts {
            return Err(SearchError::BudgetExhausted);
        }
        let n = state.tree.node(node);
        let old = n.thought.clone();
        let feedback = n.feedback.clone().expect("checked above");
        let parent = n.parent.expect("non-root");
        let replacement = match self.cfg.granularity {
            Granularity::Thought => {
                let chain = state.tree.thought_chain(parent);
                self.gateway.regenerate_thought(self.problem, &chain, &old, &feedback, self.cfg.flags.block_info)
            }
            Granularity::Code => self
                .gateway
                .propose_programs(self.problem, Some(&feedback), 1, self.cfg.flags.block_info)
                .and_then(|mut p| {
                    if p.is_empty() {
                        Err(crate::error::GatewayError::Parse("no replacement program".into()))
                    } else {
                        Ok(p.swap_remove(0).thought)
                    }
                }),
        };
        state.tree.node_mut(node).rethink_count += 1;
        state.rethinks_used += 1;
        match replacement {
            Ok(new) => {
                state.events.push(SearchEvent::Rethink { node, old_thought: old, new_thought: Some(new.clone()) });
                state.tree.node_mut(node).thought = new;
                Ok(self.evaluate_node(state, node, true))
            }
            Err(e) => {
                state.events.push(SearchEvent::Rethink { node, old_thought: old, new_thought: None });
                let candidate = error_candidate(node, state.rollouts_used, true, e.to_string());
                Ok(self.finish_cycle(state, candidate))
            }
        }
    }

    /// Select, expand, evaluate the most promising new child, backpropagate,
    /// and rethink it while it keeps failing and budget remains. Returns every
    /// candidate produced (one per rollout unit spent).
    pub fn run_rollout(&self, state: &mut SearchState) -> Result<Vec<CandidateProgram>, SearchError> {
        if state.rollouts_used >= self.cfg.max_rollouts {
            return Err(SearchError::BudgetExhausted);
        }
        let leaf = select_path(&state.tree, self.cfg);
        state.events.push(SearchEvent::Selection { node: leaf });

        let mut produced = Vec::new();
        let leaf_node = state.tree.node(leaf);
        let expandable =
            !leaf_node.terminal && leaf_node.children.is_empty() && leaf_node.depth < self.cfg.effective_max_depth();
        let target = if expandable {
            match self.expand_node(state, leaf) {
                Ok(children) => children
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        let (pa, pb) = (state.tree.node(a).prior, state.tree.node(b).prior);
                        pa.total_cmp(&pb).then_with(|| b.cmp(&a))
                    })
                    .unwrap_or(leaf),
                Err(SearchError::Gateway(e)) => {
                    let candidate = error_candidate(leaf, state.rollouts_used, false, e.to_string());
                    produced.push(self.finish_cycle(state, candidate));
                    return Ok(produced);
                }
                Err(other) => return Err(other),
            }
        } else {
            leaf
        };

        produced.push(self.evaluate_node(state, target, false));
        while state.rollouts_used < self.cfg.max_rollouts && self.rethink_eligible(state, target) {
            produced.push(self.rethink_node(state, target)?);
        }
        Ok(produced)
    }
}

fn error_candidate(node: NodeId, rollout_index: u32, from_rethink: bool, error: String) -> CandidateProgram {
    CandidateProgram {
        source: String::new(),
        origin_node: node,
        v_test: 0.0,
        v_llm: None,
        reward: 0.0,
        failed_cases: Vec::new(),
        rollout_index,
        error: Some(error),
        from_rethink,
    }
}

/// Runs rollouts until the budget is spent (or, with `early_stop`, until a
/// candidate reaches the perfect score) and returns the best candidate along
/// with the full tree and candidate log.
pub fn run_search(
    problem: &ProblemSpec,
    cfg: &RunConfig,
    gateway: &Gateway,
    sandbox: &dyn Sandbox,
    evaluator: &Evaluator,
) -> Result<SearchResult, SearchError> {
    let validation = validate_problem(problem);
    if !validation.is_ok() {
        let reasons: Vec<String> = validation.violations().iter().map(ToString::to_string).collect();
        return Err(SearchError::InvalidProblem(reasons.join(", ")));
    }
    cfg.validate()?;
    let ctx = SearchContext { problem, cfg, gateway, sandbox, evaluator };
    let mut state = SearchState::new(cfg.seed);
    let perfect = cfg.perfect_reward();
    while state.rollouts_used < cfg.max_rollouts {
        let produced = ctx.run_rollout(&mut state)?;
        if cfg.early_stop && produced.iter().any(|c| c.error.is_none() && c.reward >= perfect - 1e-12) {
            break;
        }
    }
    let usable: Vec<CandidateProgram> = state.candidates.iter().filter(|c| c.error.is_none()).cloned().collect();
    let best = pick_best(&usable).cloned().unwrap_or_else(CandidateProgram::empty_sentinel);
    Ok(SearchResult {
        best,
        tree: state.tree,
        candidates: state.candidates,
        rollouts_used: state.rollouts_used,
        rethinks_used: state.rethinks_used,
        events: state.events,
    })
}
