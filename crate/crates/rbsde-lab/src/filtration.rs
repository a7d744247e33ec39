//! Finite probability-tree model of a filtered probability space.
//!
//! A [`TreeModel`] is a leveled node tree with strictly positive branch
//! probabilities and a strictly increasing time grid; it stands in for a
//! filtered space `(Ω, F, 𝔽, P)`. Atoms of `F_t` are the nodes at level `t`,
//! paths from the root to a leaf are the elements of `Ω`, and conditional
//! expectation is the probability-weighted average over children.
//!
//! Stopping times are antichains of nodes covering every root-to-leaf path
//! exactly once. On desk-scale trees the whole family `𝒯_t` can be
//! enumerated, which is what makes essential suprema and Dynkin-game values
//! exactly computable.

use crate::error::{Error, Result};
use crate::num::Scalar;
use num_bigint::BigUint;
use num_traits::One;
use std::collections::BTreeSet;

/// Identifier of a node; indexes into the model's flat node arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

/// Immutable finite filtered probability space.
#[derive(Clone, Debug)]
pub struct TreeModel<S> {
    times: Vec<S>,
    levels: Vec<Vec<NodeId>>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    /// Probability of the edge into the node; 1 for the root.
    edge_prob: Vec<S>,
    level_of: Vec<usize>,
    index_in_level: Vec<usize>,
}

/// Incremental construction of a [`TreeModel`].
pub struct TreeBuilder<S> {
    times: Vec<S>,
    parent: Vec<Option<NodeId>>,
    edge_prob: Vec<S>,
    level_of: Vec<usize>,
}

impl<S: Scalar> TreeBuilder<S> {
    /// Starts a tree over the given time grid; the root exists immediately.
    pub fn new(times: Vec<S>) -> Self {
        TreeBuilder {
            times,
            parent: vec![None],
            edge_prob: vec![S::one()],
            level_of: vec![0],
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    /// Adds a child of `parent` reached with probability `prob`.
    pub fn add_child(&mut self, parent: NodeId, prob: S) -> NodeId {
        let id = NodeId(self.parent.len());
        self.level_of.push(self.level_of[parent.0] + 1);
        self.parent.push(Some(parent));
        self.edge_prob.push(prob);
        id
    }

    /// Validates all invariants and freezes the model.
    pub fn finish(self) -> Result<TreeModel<S>> {
        let n_levels = self.times.len();
        if n_levels < 2 {
            return Err(Error::InvalidTree("need at least two grid times".into()));
        }
        for w in self.times.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidTree("time grid not strictly increasing".into()));
            }
        }
        if self.times[0] != S::zero() {
            return Err(Error::InvalidTree("grid must start at t0 = 0".into()));
        }
        if self.times[n_levels - 1] <= S::zero() {
            return Err(Error::InvalidTree("horizon T must be positive".into()));
        }
        let terminal = n_levels - 1;
        let n = self.parent.len();
        let mut children: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for i in 0..n {
            if let Some(p) = self.parent[i] {
                children[p.0].push(NodeId(i));
            }
        }
        let mut levels: Vec<Vec<NodeId>> = vec![Vec::new(); n_levels];
        let mut index_in_level = vec![0usize; n];
        for i in 0..n {
            let lvl = self.level_of[i];
            if lvl >= n_levels {
                return Err(Error::InvalidTree(format!(
                    "node {i} at level {lvl} beyond terminal level {terminal}"
                )));
            }
            index_in_level[i] = levels[lvl].len();
            levels[lvl].push(NodeId(i));
        }
        for i in 0..n {
            let lvl = self.level_of[i];
            if lvl < terminal {
                if children[i].is_empty() {
                    return Err(Error::InvalidTree(format!(
                        "non-terminal node (level {lvl}, index {}) has no children",
                        index_in_level[i]
                    )));
                }
                let mut sum = S::zero();
                for c in &children[i] {
                    if !self.edge_prob[c.0].is_positive() {
                        return Err(Error::InvalidTree(format!(
                            "non-positive branch probability into (level {}, index {})",
                            lvl + 1,
                            index_in_level[c.0]
                        )));
                    }
                    sum += self.edge_prob[c.0].clone();
                }
                if sum != S::one() {
                    return Err(Error::InvalidTree(format!(
                        "probabilities out of (level {lvl}, index {}) sum to {sum}, not 1",
                        index_in_level[i]
                    )));
                }
            } else if !children[i].is_empty() {
                return Err(Error::InvalidTree("terminal node has children".into()));
            }
        }
        Ok(TreeModel {
            times: self.times,
            levels,
            parent: self.parent,
            children,
            edge_prob: self.edge_prob,
            level_of: self.level_of,
            index_in_level,
        })
    }
}

impl<S: Scalar> TreeModel<S> {
    /// Uniform binary tree of the given depth with unit time steps.
    pub fn uniform_binary(depth: usize) -> Self {
        let times = (0..=depth as i64).map(S::from_int).collect();
        Self::uniform_binary_on_grid(depth, times)
    }

    /// Uniform binary tree over an explicit grid of `depth + 1` times.
    pub fn uniform_binary_on_grid(depth: usize, times: Vec<S>) -> Self {
        assert_eq!(times.len(), depth + 1);
        let mut b = TreeBuilder::new(times);
        let mut frontier = vec![b.root()];
        let half = S::ratio(1, 2);
        for _ in 0..depth {
            let mut next = Vec::new();
            for node in frontier {
                next.push(b.add_child(node, half.clone()));
                next.push(b.add_child(node, half.clone()));
            }
            frontier = next;
        }
        b.finish().expect("uniform binary tree is valid")
    }

    /// Deterministic chain (branching factor 1) with unit time steps.
    pub fn deterministic_chain(steps: usize) -> Self {
        let times = (0..=steps as i64).map(S::from_int).collect();
        let mut b = TreeBuilder::new(times);
        let mut node = b.root();
        for _ in 0..steps {
            node = b.add_child(node, S::one());
        }
        b.finish().expect("chain is valid")
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.len()
    }

    /// Index of the terminal level (`N`, so times run `t_0 .. t_N`).
    pub fn horizon(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[S] {
        &self.times
    }

    /// Step size `Δt_i = t_{i+1} − t_i`.
    pub fn dt(&self, level: usize) -> S {
        self.times[level + 1].clone() - self.times[level].clone()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn level(&self, level: usize) -> &[NodeId] {
        &self.levels[level]
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.levels[self.horizon()]
    }

    pub fn level_of(&self, node: NodeId) -> usize {
        self.level_of[node.0]
    }

    pub fn index_in_level(&self, node: NodeId) -> usize {
        self.index_in_level[node.0]
    }

    pub fn node_at(&self, level: usize, index: usize) -> Option<NodeId> {
        self.levels.get(level)?.get(index).copied()
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent[node.0]
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.children[node.0]
    }

    pub fn edge_prob(&self, node: NodeId) -> &S {
        &self.edge_prob[node.0]
    }

    /// Unconditional probability of the atom at `node`.
    pub fn path_prob(&self, node: NodeId) -> S {
        let mut p = self.edge_prob[node.0].clone();
        let mut cur = node;
        while let Some(par) = self.parent[cur.0] {
            if par.0 != 0 {
                p = p * self.edge_prob[par.0].clone();
            }
            cur = par;
        }
        p
    }

    /// Probability of `node`'s atom conditional on the ancestor `from`.
    pub fn path_prob_from(&self, from: NodeId, node: NodeId) -> S {
        let mut p = S::one();
        let mut cur = node;
        while cur != from {
            p = p * self.edge_prob[cur.0].clone();
            cur = self.parent[cur.0].expect("from must be an ancestor");
        }
        p
    }

    /// True when `anc` lies on the root path of `node` (or equals it).
    pub fn is_ancestor_or_self(&self, anc: NodeId, node: NodeId) -> bool {
        let mut cur = node;
        loop {
            if cur == anc {
                return true;
            }
            match self.parent[cur.0] {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    /// Leaves of the subtree rooted at `node`.
    pub fn subtree_leaves(&self, node: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if self.children[v.0].is_empty() {
                out.push(v);
            } else {
                for c in self.children[v.0].iter().rev() {
                    stack.push(*c);
                }
            }
        }
        out
    }

    /// Root-to-leaf path through `leaf` (root first).
    pub fn path_to(&self, leaf: NodeId) -> Vec<NodeId> {
        let mut path = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = self.parent[cur.0] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

/// A stopping time: an antichain of nodes meeting every root-to-leaf path
/// exactly once, no node below `floor_level`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoppingTime {
    pub stop_nodes: BTreeSet<NodeId>,
    pub floor_level: usize,
}

impl StoppingTime {
    /// Constant stopping time at a deterministic level.
    pub fn at_level<S: Scalar>(model: &TreeModel<S>, level: usize) -> Self {
        StoppingTime {
            stop_nodes: model.level(level).iter().copied().collect(),
            floor_level: level,
        }
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.stop_nodes.contains(&node)
    }

    /// Stop node on the path through `leaf`.
    pub fn stop_on_path<S: Scalar>(&self, model: &TreeModel<S>, leaf: NodeId) -> Option<NodeId> {
        model
            .path_to(leaf)
            .into_iter()
            .find(|n| self.stop_nodes.contains(n))
    }

    /// Checks the antichain invariants against a model.
    pub fn validate<S: Scalar>(&self, model: &TreeModel<S>) -> Result<()> {
        for n in &self.stop_nodes {
            if n.0 >= model.num_nodes() {
                return Err(Error::InvalidStoppingTime(format!(
                    "node id {} out of range",
                    n.0
                )));
            }
            if model.level_of(*n) < self.floor_level {
                return Err(Error::InvalidStoppingTime(format!(
                    "stop node at level {} below floor {}",
                    model.level_of(*n),
                    self.floor_level
                )));
            }
        }
        for leaf in model.leaves() {
            let hits = model
                .path_to(*leaf)
                .into_iter()
                .filter(|n| self.stop_nodes.contains(n))
                .count();
            if hits != 1 {
                return Err(Error::InvalidStoppingTime(format!(
                    "path through leaf index {} has {} stop nodes",
                    model.index_in_level(*leaf),
                    hits
                )));
            }
        }
        Ok(())
    }
}

/// E(x_{level+1} | F_level): one value per node at `level`, in level order.
pub fn conditional_expectation<S: Scalar>(
    model: &TreeModel<S>,
    x: &crate::processes::AdaptedProcess<S>,
    level: usize,
) -> Result<Vec<S>> {
    if level >= model.horizon() {
        return Err(Error::NoChildren {
            level,
            terminal: model.horizon(),
        });
    }
    x.check_shape(model)?;
    Ok(model
        .level(level)
        .iter()
        .map(|n| cond_exp_at(model, x, *n))
        .collect())
}

/// One-node conditional expectation: Σ_children p(n→c) · x(c).
pub fn cond_exp_at<S: Scalar>(
    model: &TreeModel<S>,
    x: &crate::processes::AdaptedProcess<S>,
    node: NodeId,
) -> S {
    let mut acc = S::zero();
    for c in model.children(node) {
        acc += model.edge_prob(*c).clone() * x.at(*c).clone();
    }
    acc
}

/// Exact count of stopping times on the subtree of `node` with the given
/// floor; `S(d) = 1 + S(d−1)²` on regular binary trees.
pub fn count_stopping_times_from<S: Scalar>(
    model: &TreeModel<S>,
    node: NodeId,
    floor_level: usize,
) -> BigUint {
    let lvl = model.level_of(node);
    if model.children(node).is_empty() {
        return BigUint::one();
    }
    let mut prod = BigUint::one();
    for c in model.children(node) {
        prod *= count_stopping_times_from(model, *c, floor_level);
    }
    if lvl >= floor_level {
        prod + BigUint::one()
    } else {
        prod
    }
}

/// Exhaustive enumeration of `𝒯_{t_floor}` in a canonical deterministic
/// order (stop-here first, then child combinations).
pub fn enumerate_stopping_times<S: Scalar>(
    model: &TreeModel<S>,
    floor_level: usize,
    budget: u64,
) -> Result<Vec<StoppingTime>> {
    enumerate_from(model, model.root(), floor_level, budget)
}

/// Enumeration restricted to the subtree rooted at `node`; the antichains
/// cover every node-to-leaf path of that subtree exactly once.
pub fn enumerate_from<S: Scalar>(
    model: &TreeModel<S>,
    node: NodeId,
    floor_level: usize,
    budget: u64,
) -> Result<Vec<StoppingTime>> {
    let count = count_stopping_times_from(model, node, floor_level);
    if count > BigUint::from(budget) {
        return Err(Error::EnumerationOverflow {
            count: count.to_string(),
            budget,
        });
    }
    let sets = enumerate_sets(model, node, floor_level);
    Ok(sets
        .into_iter()
        .map(|stop_nodes| StoppingTime {
            stop_nodes,
            floor_level,
        })
        .collect())
}

fn enumerate_sets<S: Scalar>(
    model: &TreeModel<S>,
    node: NodeId,
    floor_level: usize,
) -> Vec<BTreeSet<NodeId>> {
    let mut out = Vec::new();
    let lvl = model.level_of(node);
    let kids = model.children(node);
    if lvl >= floor_level || kids.is_empty() {
        out.push(BTreeSet::from([node]));
    }
    if kids.is_empty() {
        return out;
    }
    // Cartesian product over per-child antichains.
    let per_child: Vec<Vec<BTreeSet<NodeId>>> = kids
        .iter()
        .map(|c| enumerate_sets(model, *c, floor_level))
        .collect();
    let mut combos: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new()];
    for child_sets in &per_child {
        let mut next = Vec::with_capacity(combos.len() * child_sets.len());
        for base in &combos {
            for cs in child_sets {
                let mut merged = base.clone();
                merged.extend(cs.iter().copied());
                next.push(merged);
            }
        }
        combos = next;
    }
    out.extend(combos);
    out
}

/// Value of `X_τ` per path, keyed by leaf, plus its expectation.
pub fn stopped_value<S: Scalar>(
    model: &TreeModel<S>,
    x: &crate::processes::AdaptedProcess<S>,
    tau: &StoppingTime,
) -> Result<(Vec<(NodeId, S)>, S)> {
    x.check_shape(model)?;
    tau.validate(model)?;
    let mut per_path = Vec::new();
    let mut expect = S::zero();
    for leaf in model.leaves() {
        let stop = tau
            .stop_on_path(model, *leaf)
            .expect("validated stopping time covers every path");
        let v = x.at(stop).clone();
        expect += model.path_prob(*leaf) * v.clone();
        per_path.push((*leaf, v));
    }
    Ok((per_path, expect))
}
