//! Adapted, predictable and martingale processes on a tree, and the
//! standard decompositions built from them.
//!
//! Predictable increments follow the one-step-ahead convention: the
//! increment earned over `(t, t+1]` is fixed at the parent node and is by
//! construction constant across the parent's children. Martingale
//! increments live on edges and are conditionally centered at every
//! non-terminal node.

use crate::error::{Error, Result};
use crate::filtration::{
    cond_exp_at, enumerate_stopping_times, NodeId, StoppingTime, TreeModel,
};
use crate::num::Scalar;
use std::io::Write;

/// One value per node of the model the process is used with.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedProcess<S> {
    values: Vec<S>,
}

impl<S: Scalar> AdaptedProcess<S> {
    pub fn from_values(values: Vec<S>) -> Self {
        AdaptedProcess { values }
    }

    pub fn constant(model: &TreeModel<S>, value: S) -> Self {
        AdaptedProcess {
            values: vec![value; model.num_nodes()],
        }
    }

    pub fn from_fn(model: &TreeModel<S>, mut f: impl FnMut(&TreeModel<S>, NodeId) -> S) -> Self {
        AdaptedProcess {
            values: (0..model.num_nodes())
                .map(|i| f(model, NodeId(i)))
                .collect(),
        }
    }

    pub fn at(&self, node: NodeId) -> &S {
        &self.values[node.0]
    }

    pub fn set(&mut self, node: NodeId, value: S) {
        self.values[node.0] = value;
    }

    /// "Left limit" on the tree: the value at the parent, with the root's
    /// own value standing in for `X_{0−}`.
    pub fn left_limit(&self, model: &TreeModel<S>, node: NodeId) -> &S {
        match model.parent(node) {
            Some(p) => self.at(p),
            None => self.at(node),
        }
    }

    pub fn map(&self, f: impl Fn(&S) -> S) -> Self {
        AdaptedProcess {
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn abs(&self) -> Self {
        self.map(|v| v.abs())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_shape(&self, model: &TreeModel<S>) -> Result<()> {
        if self.values.len() != model.num_nodes() {
            return Err(Error::ProcessShape {
                got: self.values.len(),
                want: model.num_nodes(),
            });
        }
        Ok(())
    }
}

/// Parent-measurable per-edge increments; entry at a node is the increment
/// over `(t_level, t_level+1]`, meaningful for non-terminal nodes only.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictableIncrements<S> {
    increments: Vec<S>,
}

impl<S: Scalar> PredictableIncrements<S> {
    pub fn zero(model: &TreeModel<S>) -> Self {
        PredictableIncrements {
            increments: vec![S::zero(); model.num_nodes()],
        }
    }

    pub fn from_fn(model: &TreeModel<S>, mut f: impl FnMut(&TreeModel<S>, NodeId) -> S) -> Self {
        let mut increments = vec![S::zero(); model.num_nodes()];
        for i in 0..model.num_nodes() {
            let n = NodeId(i);
            if !model.children(n).is_empty() {
                increments[i] = f(model, n);
            }
        }
        PredictableIncrements { increments }
    }

    pub fn at(&self, node: NodeId) -> &S {
        &self.increments[node.0]
    }

    pub fn set(&mut self, node: NodeId, value: S) {
        self.increments[node.0] = value;
    }

    pub fn check_shape(&self, model: &TreeModel<S>) -> Result<()> {
        if self.increments.len() != model.num_nodes() {
            return Err(Error::ProcessShape {
                got: self.increments.len(),
                want: model.num_nodes(),
            });
        }
        Ok(())
    }

    /// True when every increment is nonnegative (increasing-process role).
    pub fn is_nonnegative(&self) -> bool {
        self.increments.iter().all(|v| !v.is_negative())
    }

    /// Cumulative value at a node: sum of the increments decided at its
    /// strict ancestors (so the process starts at 0 and is predictable).
    pub fn cumulative_at(&self, model: &TreeModel<S>, node: NodeId) -> S {
        let mut acc = S::zero();
        let mut cur = node;
        while let Some(p) = model.parent(cur) {
            acc += self.increments[p.0].clone();
            cur = p;
        }
        acc
    }
}

/// Per-edge martingale increments (ΔM over the edge into each node).
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleIncrements<S> {
    deltas: Vec<S>,
}

impl<S: Scalar> MartingaleIncrements<S> {
    pub fn zero(model: &TreeModel<S>) -> Self {
        MartingaleIncrements {
            deltas: vec![S::zero(); model.num_nodes()],
        }
    }

    pub fn at(&self, node: NodeId) -> &S {
        &self.deltas[node.0]
    }

    pub fn set(&mut self, node: NodeId, value: S) {
        self.deltas[node.0] = value;
    }

    pub fn check_shape(&self, model: &TreeModel<S>) -> Result<()> {
        if self.deltas.len() != model.num_nodes() {
            return Err(Error::ProcessShape {
                got: self.deltas.len(),
                want: model.num_nodes(),
            });
        }
        Ok(())
    }

    /// Worst conditional mean over non-terminal nodes; 0 for a martingale.
    pub fn max_conditional_mean(&self, model: &TreeModel<S>) -> S {
        let mut worst = S::zero();
        for level in 0..model.horizon() {
            for n in model.level(level) {
                let mut mean = S::zero();
                for c in model.children(*n) {
                    mean += model.edge_prob(*c).clone() * self.deltas[c.0].clone();
                }
                worst = S::max_of(worst, mean.abs());
            }
        }
        worst
    }

    /// Cumulative martingale value `M` at a node (`M_0 = 0`).
    pub fn cumulative_at(&self, model: &TreeModel<S>, node: NodeId) -> S {
        let mut acc = S::zero();
        let mut cur = node;
        while model.parent(cur).is_some() {
            acc += self.deltas[cur.0].clone();
            cur = model.parent(cur).unwrap();
        }
        acc
    }
}

/// Unique Doob decomposition `x_{t+1} = x_t + ΔA_{t+1} + ΔM_{t+1}` with
/// `ΔA_{t+1} = E[x_{t+1}|F_t] − x_t` parent-measurable and `ΔM`
/// conditionally centered.
pub fn doob_decomposition<S: Scalar>(
    model: &TreeModel<S>,
    x: &AdaptedProcess<S>,
) -> Result<(MartingaleIncrements<S>, PredictableIncrements<S>)> {
    x.check_shape(model)?;
    let mut m = MartingaleIncrements::zero(model);
    let mut a = PredictableIncrements::zero(model);
    for level in 0..model.horizon() {
        for n in model.level(level) {
            let ce = cond_exp_at(model, x, *n);
            a.set(*n, ce.clone() - x.at(*n).clone());
            for c in model.children(*n) {
                m.set(*c, x.at(*c).clone() - ce.clone());
            }
        }
    }
    Ok((m, a))
}

/// Smallest supermartingale dominating `x`:
/// `S_N = x_N`, `S_t = max(x_t, E[S_{t+1}|F_t])`.
pub fn snell_envelope<S: Scalar>(
    model: &TreeModel<S>,
    x: &AdaptedProcess<S>,
) -> Result<AdaptedProcess<S>> {
    x.check_shape(model)?;
    let mut env = x.clone();
    for level in (0..model.horizon()).rev() {
        for n in model.level(level) {
            let ce = cond_exp_at(model, &env, *n);
            env.set(*n, S::max_of(x.at(*n).clone(), ce));
        }
    }
    Ok(env)
}

/// Finite analogue of the class-D norm: `sup_{τ∈𝒯} E|X_τ|`, computed as
/// the root value of the Snell envelope of `|x|`.
pub fn class_d_norm<S: Scalar>(model: &TreeModel<S>, x: &AdaptedProcess<S>) -> Result<S> {
    let env = snell_envelope(model, &x.abs())?;
    Ok(env.at(model.root()).clone())
}

/// Brute-force check value for [`class_d_norm`] on small trees.
pub fn class_d_norm_bruteforce<S: Scalar>(
    model: &TreeModel<S>,
    x: &AdaptedProcess<S>,
    budget: u64,
) -> Result<S> {
    let taus = enumerate_stopping_times(model, 0, budget)?;
    let absx = x.abs();
    let mut best = S::zero();
    for tau in &taus {
        let (_, e) = crate::filtration::stopped_value(model, &absx, tau)?;
        best = S::max_of(best, e);
    }
    Ok(best)
}

/// Per-path variation `|V|_τ` (sum of absolute increments up to the stop
/// node) and its expectation.
pub fn total_variation<S: Scalar>(
    model: &TreeModel<S>,
    v: &PredictableIncrements<S>,
    up_to: &StoppingTime,
) -> Result<(Vec<(NodeId, S)>, S)> {
    v.check_shape(model)?;
    up_to.validate(model)?;
    let mut per_path = Vec::new();
    let mut expect = S::zero();
    for leaf in model.leaves() {
        let stop = up_to
            .stop_on_path(model, *leaf)
            .expect("validated stopping time");
        let mut acc = S::zero();
        for n in model.path_to(*leaf) {
            if n == stop {
                break;
            }
            acc += v.at(n).abs();
        }
        expect += model.path_prob(*leaf) * acc.clone();
        per_path.push((*leaf, acc));
    }
    Ok((per_path, expect))
}

/// Variation of an adapted process (per-edge `|x_child − x_parent|`).
pub fn total_variation_adapted<S: Scalar>(
    model: &TreeModel<S>,
    x: &AdaptedProcess<S>,
    up_to: &StoppingTime,
) -> Result<(Vec<(NodeId, S)>, S)> {
    x.check_shape(model)?;
    up_to.validate(model)?;
    let mut per_path = Vec::new();
    let mut expect = S::zero();
    for leaf in model.leaves() {
        let stop = up_to
            .stop_on_path(model, *leaf)
            .expect("validated stopping time");
        let mut acc = S::zero();
        let path = model.path_to(*leaf);
        for w in path.windows(2) {
            acc += (x.at(w[1]).clone() - x.at(w[0]).clone()).abs();
            if w[1] == stop {
                break;
            }
        }
        expect += model.path_prob(*leaf) * acc.clone();
        per_path.push((*leaf, acc));
    }
    Ok((per_path, expect))
}

/// CSV emitter: one row `(level, index, value)` per node.
pub fn write_process_csv<S: Scalar, W: Write>(
    model: &TreeModel<S>,
    x: &AdaptedProcess<S>,
    mut out: W,
) -> Result<()> {
    writeln!(out, "level,index,value")?;
    for level in 0..=model.horizon() {
        for n in model.level(level) {
            writeln!(out, "{},{},{}", level, model.index_in_level(*n), x.at(*n))?;
        }
    }
    Ok(())
}

/// CSV emitter for per-edge increments: rows keyed by the child node.
pub fn write_increments_csv<S: Scalar, W: Write>(
    model: &TreeModel<S>,
    columns: &[(&str, &dyn Fn(NodeId) -> S)],
    mut out: W,
) -> Result<()> {
    write!(out, "level,index")?;
    for (name, _) in columns {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for level in 1..=model.horizon() {
        for n in model.level(level) {
            write!(out, "{},{}", level, model.index_in_level(*n))?;
            for (_, f) in columns {
                write!(out, ",{}", f(*n))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
