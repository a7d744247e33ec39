//! Zero-sum stopping game on the tree.
//!
//! The minimizer picks σ and pays the upper barrier when stopping first;
//! the maximizer picks τ and collects the lower barrier when stopping
//! first (ties before the horizon go to τ); at the horizon the terminal
//! value ξ is paid. A running cost `f(s, Y_s)Δs + ΔV` accrues until the
//! first stop, with `Y` taken from the solved two-barrier equation. On a
//! finite tree both game values are computable by exhausting stopping-time
//! pairs, and they coincide with the two-barrier solution node-wise.

use crate::error::{Error, Result};
use crate::filtration::{enumerate_from, NodeId, StoppingTime, TreeModel};
use crate::num::Scalar;
use crate::processes::AdaptedProcess;
use crate::rbsde::{solve_double_reflected, verify_solution, GeneratorSpec, RbsdeSolution};
use num_bigint::BigUint;
use std::collections::BTreeSet;

/// Everything needed to evaluate game payoffs: the model, the equation
/// data, the barriers and a verified two-barrier solution (its `Y` feeds
/// the running cost).
pub struct GameContext<'a, S> {
    pub model: &'a TreeModel<S>,
    pub gen: &'a GeneratorSpec<S>,
    pub lower: &'a AdaptedProcess<S>,
    pub upper: &'a AdaptedProcess<S>,
    pub solution: RbsdeSolution<S>,
}

impl<'a, S: Scalar> GameContext<'a, S> {
    /// Solves the two-barrier equation and verifies it at the given
    /// tolerance before any payoff is evaluated.
    pub fn new(
        model: &'a TreeModel<S>,
        gen: &'a GeneratorSpec<S>,
        lower: &'a AdaptedProcess<S>,
        upper: &'a AdaptedProcess<S>,
        tol: S,
    ) -> Result<Self> {
        let solution = solve_double_reflected(model, gen, lower, upper)?;
        let report = verify_solution(model, gen, Some(lower), Some(upper), &solution, tol)?;
        if !report.passes() {
            return Err(Error::Precondition(format!(
                "game context rejected an unverified solution:\n{report}"
            )));
        }
        Ok(GameContext {
            model,
            gen,
            lower,
            upper,
            solution,
        })
    }
}

/// Checks that a stopping time covers every path of the subtree rooted at
/// `at` exactly once, with no stop above `at`'s level.
fn validate_on_subtree<S: Scalar>(
    model: &TreeModel<S>,
    at: NodeId,
    st: &StoppingTime,
) -> Result<()> {
    for n in &st.stop_nodes {
        if !model.is_ancestor_or_self(at, *n) {
            return Err(Error::InvalidStoppingTime(format!(
                "stop node (level {}, index {}) outside the subtree",
                model.level_of(*n),
                model.index_in_level(*n)
            )));
        }
    }
    for leaf in model.subtree_leaves(at) {
        let hits = model
            .path_to(leaf)
            .into_iter()
            .filter(|n| st.stop_nodes.contains(n))
            .count();
        if hits != 1 {
            return Err(Error::InvalidStoppingTime(format!(
                "subtree path through leaf index {} has {} stop nodes",
                model.index_in_level(leaf),
                hits
            )));
        }
    }
    Ok(())
}

/// Conditional expected payoff `E(R_t(σ, τ) | F_t)` at a node.
///
/// Per path: the running cost `f(s, Y_s)Δs + ΔV` accrues on every edge
/// strictly before the first stop `σ∧τ`; the award is ξ if the first stop
/// is at the horizon, the lower barrier if τ stops there first or ties
/// (before the horizon), the upper barrier otherwise.
pub fn payoff<S: Scalar>(
    ctx: &GameContext<'_, S>,
    at: NodeId,
    sigma: &StoppingTime,
    tau: &StoppingTime,
) -> Result<S> {
    validate_on_subtree(ctx.model, at, sigma)?;
    validate_on_subtree(ctx.model, at, tau)?;
    let model = ctx.model;
    let mut expect = S::zero();
    for leaf in model.subtree_leaves(at) {
        let path = model.path_to(leaf);
        let from = path.iter().position(|&n| n == at).expect("at on path");
        let mut running = S::zero();
        let mut value = None;
        for &node in &path[from..] {
            let in_tau = tau.contains(node);
            let in_sigma = sigma.contains(node);
            if in_tau || in_sigma {
                let award = if model.level_of(node) == model.horizon() {
                    ctx.gen.xi_at(model, node).clone()
                } else if in_tau {
                    ctx.lower.at(node).clone()
                } else {
                    ctx.upper.at(node).clone()
                };
                value = Some(running.clone() + award);
                break;
            }
            let level = model.level_of(node);
            running += ctx.gen.f_at(level, ctx.solution.y.at(node)) * model.dt(level)
                + ctx.gen.v.at(node).clone();
        }
        let v = value.expect("validated stopping times stop on every path");
        expect += model.path_prob_from(at, leaf) * v;
    }
    Ok(expect)
}

/// Exhaustive game values at a node.
#[derive(Clone, Debug)]
pub struct GameValues<S> {
    /// sup over τ of inf over σ.
    pub lower: S,
    /// inf over σ of sup over τ.
    pub upper: S,
    /// A maximizing τ together with a best reply σ.
    pub maximin: (StoppingTime, StoppingTime),
    /// A minimizing σ together with a best reply τ.
    pub minimax: (StoppingTime, StoppingTime),
}

/// Brute-force maximin and minimax over every stopping-time pair on the
/// subtree of `at`; refuses (rather than samples) beyond `pair_budget`.
pub fn game_values_bruteforce<S: Scalar>(
    ctx: &GameContext<'_, S>,
    at: NodeId,
    pair_budget: u64,
) -> Result<GameValues<S>> {
    let model = ctx.model;
    let floor = model.level_of(at);
    let count = crate::filtration::count_stopping_times_from(model, at, floor);
    let pairs = count.clone() * count.clone();
    if pairs > BigUint::from(pair_budget) {
        return Err(Error::EnumerationOverflow {
            count: format!("{count}^2 = {pairs}"),
            budget: pair_budget,
        });
    }
    let all = enumerate_from(model, at, floor, pair_budget)?;

    // payoff matrix: rows σ, columns τ
    let mut matrix: Vec<Vec<S>> = Vec::with_capacity(all.len());
    for sigma in &all {
        let mut row = Vec::with_capacity(all.len());
        for tau in &all {
            row.push(payoff(ctx, at, sigma, tau)?);
        }
        matrix.push(row);
    }

    let mut lower: Option<(S, usize, usize)> = None;
    for (j, _) in all.iter().enumerate() {
        let mut best_reply: Option<(S, usize)> = None;
        for (i, _) in all.iter().enumerate() {
            let v = matrix[i][j].clone();
            if best_reply.as_ref().map_or(true, |(bv, _)| v < *bv) {
                best_reply = Some((v, i));
            }
        }
        let (v, i) = best_reply.expect("nonempty enumeration");
        if lower.as_ref().map_or(true, |(bv, _, _)| v > *bv) {
            lower = Some((v, j, i));
        }
    }
    let mut upper: Option<(S, usize, usize)> = None;
    for (i, _) in all.iter().enumerate() {
        let mut best_reply: Option<(S, usize)> = None;
        for (j, _) in all.iter().enumerate() {
            let v = matrix[i][j].clone();
            if best_reply.as_ref().map_or(true, |(bv, _)| v > *bv) {
                best_reply = Some((v, j));
            }
        }
        let (v, j) = best_reply.expect("nonempty enumeration");
        if upper.as_ref().map_or(true, |(bv, _, _)| v < *bv) {
            upper = Some((v, i, j));
        }
    }
    let (lo, tau_idx, sigma_reply) = lower.expect("nonempty enumeration");
    let (up, sigma_idx, tau_reply) = upper.expect("nonempty enumeration");
    if lo > up {
        return Err(Error::Precondition(format!(
            "maximin {lo} exceeded minimax {up}"
        )));
    }
    Ok(GameValues {
        lower: lo,
        upper: up,
        maximin: (all[tau_idx].clone(), all[sigma_reply].clone()),
        minimax: (all[sigma_idx].clone(), all[tau_reply].clone()),
    })
}

fn first_hitting<S: Scalar>(
    ctx: &GameContext<'_, S>,
    at: NodeId,
    mut hit: impl FnMut(NodeId) -> bool,
) -> StoppingTime {
    let model = ctx.model;
    let mut stop_nodes = BTreeSet::new();
    let mut stack = vec![at];
    while let Some(node) = stack.pop() {
        if hit(node) || model.children(node).is_empty() {
            stop_nodes.insert(node);
        } else {
            stack.extend(model.children(node).iter().copied());
        }
    }
    StoppingTime {
        stop_nodes,
        floor_level: model.level_of(at),
    }
}

/// Minimizer's near-optimal time: first node (from `at` on, inclusive)
/// where `Y ≥ U − ε`, capped at the horizon.
pub fn epsilon_sigma<S: Scalar>(ctx: &GameContext<'_, S>, at: NodeId, eps: &S) -> Result<StoppingTime> {
    if !eps.is_positive() {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    Ok(first_hitting(ctx, at, |n| {
        *ctx.solution.y.at(n) >= ctx.upper.at(n).clone() - eps.clone()
    }))
}

/// Maximizer's near-optimal time: first node (from `at` on, inclusive)
/// where `Y ≤ L + ε`, capped at the horizon.
pub fn epsilon_tau<S: Scalar>(ctx: &GameContext<'_, S>, at: NodeId, eps: &S) -> Result<StoppingTime> {
    if !eps.is_positive() {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    Ok(first_hitting(ctx, at, |n| {
        *ctx.solution.y.at(n) <= ctx.lower.at(n).clone() + eps.clone()
    }))
}

/// Near-saddle certificate for the ε-hitting pair at a node.
#[derive(Clone, Debug)]
pub struct SaddleCertificate<S> {
    pub node: NodeId,
    pub eps: S,
    pub y: S,
    pub sigma_eps: StoppingTime,
    pub tau_eps: StoppingTime,
    /// `min over τ of (Y + ε − E R(σ^ε, τ))` and the binding adversary.
    pub sigma_margin: (S, StoppingTime),
    /// `min over σ of (E R(σ, τ^ε) − (Y − ε))` and the binding adversary.
    pub tau_margin: (S, StoppingTime),
    pub pass: bool,
}

/// Verifies against every enumerated adversary that
/// `E R(σ^ε, τ) ≤ Y + ε` and `E R(σ, τ^ε) ≥ Y − ε`. A negative margin
/// (beyond rounding slack in float mode) is a solver or payoff bug and is
/// reported as a failed certificate, never silently accepted.
pub fn saddle_check<S: Scalar>(
    ctx: &GameContext<'_, S>,
    at: NodeId,
    eps: &S,
    budget: u64,
) -> Result<SaddleCertificate<S>> {
    let sigma_eps = epsilon_sigma(ctx, at, eps)?;
    let tau_eps = epsilon_tau(ctx, at, eps)?;
    let all = enumerate_from(ctx.model, at, ctx.model.level_of(at), budget)?;
    let y = ctx.solution.y.at(at).clone();

    let mut sigma_margin: Option<(S, &StoppingTime)> = None;
    let mut tau_margin: Option<(S, &StoppingTime)> = None;
    for adversary in &all {
        let m1 = y.clone() + eps.clone() - payoff(ctx, at, &sigma_eps, adversary)?;
        if sigma_margin.as_ref().map_or(true, |(b, _)| m1 < *b) {
            sigma_margin = Some((m1, adversary));
        }
        let m2 = payoff(ctx, at, adversary, &tau_eps)? - (y.clone() - eps.clone());
        if tau_margin.as_ref().map_or(true, |(b, _)| m2 < *b) {
            tau_margin = Some((m2, adversary));
        }
    }
    let (sm, s_adv) = sigma_margin.expect("nonempty enumeration");
    let (tm, t_adv) = tau_margin.expect("nonempty enumeration");
    let slack = if S::EXACT {
        S::zero()
    } else {
        S::ratio(1, 1_000_000_000_000)
    };
    let pass = sm >= -slack.clone() && tm >= -slack;
    Ok(SaddleCertificate {
        node: at,
        eps: eps.clone(),
        y,
        sigma_eps,
        tau_eps,
        sigma_margin: (sm, s_adv.clone()),
        tau_margin: (tm, t_adv.clone()),
        pass,
    })
}

/// Payoff record of a stationary nondecreasing stopping-time sequence.
#[derive(Clone, Debug)]
pub struct ConvergenceReport<S> {
    pub payoffs: Vec<S>,
    /// First index from which every later stopping time equals the last.
    pub stabilization_index: usize,
}

/// Evaluates `E R(σ, τ_n)` along a path-wise nondecreasing sequence that
/// is eventually constant, and asserts the payoffs are exactly constant
/// from the stabilization index on.
pub fn payoff_convergence_check<S: Scalar>(
    ctx: &GameContext<'_, S>,
    at: NodeId,
    sigma: &StoppingTime,
    taus: &[StoppingTime],
) -> Result<ConvergenceReport<S>> {
    if taus.is_empty() {
        return Err(Error::Precondition("empty stopping-time sequence".into()));
    }
    let model = ctx.model;
    for st in taus {
        validate_on_subtree(model, at, st)?;
    }
    for leaf in model.subtree_leaves(at) {
        let mut prev_level = None;
        for (idx, st) in taus.iter().enumerate() {
            let stop = st.stop_on_path(model, leaf).expect("validated");
            let lvl = model.level_of(stop);
            if let Some(p) = prev_level {
                if lvl < p {
                    return Err(Error::Precondition(format!(
                        "stopping-time sequence decreases at index {idx} on leaf index {}",
                        model.index_in_level(leaf)
                    )));
                }
            }
            prev_level = Some(lvl);
        }
    }
    let last = taus.last().unwrap();
    let mut stabilization_index = 0;
    for (i, st) in taus.iter().enumerate() {
        if st.stop_nodes != last.stop_nodes {
            stabilization_index = i + 1;
        }
    }
    let mut payoffs = Vec::with_capacity(taus.len());
    for tau in taus {
        payoffs.push(payoff(ctx, at, sigma, tau)?);
    }
    for p in &payoffs[stabilization_index..] {
        if *p != payoffs[stabilization_index] {
            return Err(Error::Precondition(
                "payoff not constant after stabilization".into(),
            ));
        }
    }
    Ok(ConvergenceReport {
        payoffs,
        stabilization_index,
    })
}
