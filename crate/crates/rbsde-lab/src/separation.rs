//! Barrier-separation machinery.
//!
//! Strictly separated barriers admit a piecewise-constant process sandwiched
//! between them: freeze the corridor midpoint, ride it until it exits the
//! (open) corridor, restart at the new midpoint. The construction terminates
//! path-wise on a finite tree, and its expected variation can be forced to
//! grow without bound by a family of oscillating barriers whose cells carry
//! probability proportional to `n⁻²` but demand variation proportional to
//! `n`. The same family with a midpoint terminal condition produces
//! reflection processes of arbitrarily large expected mass.

use crate::error::{Error, Result};
use crate::filtration::{NodeId, StoppingTime, TreeModel};
use crate::num::Scalar;
use crate::processes::AdaptedProcess;
use crate::rbsde::{solve_double_reflected, GeneratorSpec, RbsdeSolution};
use std::collections::BTreeSet;

/// Outcome of a barrier-ordering check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Separation {
    /// `L < U` at every node.
    Strict,
    /// `L ≤ U` everywhere with equality at the listed nodes.
    Weak { touching: Vec<NodeId> },
    /// `L > U` at the listed nodes.
    Violated { crossing: Vec<NodeId> },
}

/// Classifies the node-wise ordering of a barrier pair. On a tree the
/// left-limit reading of a barrier is its parent value, so checking every
/// node covers both the current and the left-limit comparison.
pub fn check_separation<S: Scalar>(
    model: &TreeModel<S>,
    lower: &AdaptedProcess<S>,
    upper: &AdaptedProcess<S>,
) -> Result<Separation> {
    lower.check_shape(model)?;
    upper.check_shape(model)?;
    let mut touching = Vec::new();
    let mut crossing = Vec::new();
    for i in 0..model.num_nodes() {
        let node = NodeId(i);
        if lower.at(node) > upper.at(node) {
            crossing.push(node);
        } else if lower.at(node) == upper.at(node) {
            touching.push(node);
        }
    }
    if !crossing.is_empty() {
        Ok(Separation::Violated { crossing })
    } else if !touching.is_empty() {
        Ok(Separation::Weak { touching })
    } else {
        Ok(Separation::Strict)
    }
}

fn require_strict<S: Scalar>(
    model: &TreeModel<S>,
    lower: &AdaptedProcess<S>,
    upper: &AdaptedProcess<S>,
) -> Result<()> {
    match check_separation(model, lower, upper)? {
        Separation::Strict => Ok(()),
        Separation::Weak { touching } => Err(Error::SeparationViolated(format!(
            "barriers touch at {} node(s), first at (level {}, index {})",
            touching.len(),
            model.level_of(touching[0]),
            model.index_in_level(touching[0])
        ))),
        Separation::Violated { crossing } => Err(Error::SeparationViolated(format!(
            "barriers cross at {} node(s), first at (level {}, index {})",
            crossing.len(),
            model.level_of(crossing[0]),
            model.index_in_level(crossing[0])
        ))),
    }
}

/// Piecewise-constant sandwiched process with its restage stopping times.
#[derive(Clone, Debug)]
pub struct MidpointConstruction<S> {
    /// The frozen-midpoint process, `L ≤ H ≤ U` node-wise.
    pub h: AdaptedProcess<S>,
    /// Restage times: `taus[k-1]` stops at the k-th corridor exit on each
    /// path, or at the leaf if the path has fewer than k exits. The final
    /// entry stops at the horizon on every path.
    pub taus: Vec<StoppingTime>,
    /// Stage count per leaf (exits + 1), in leaf order.
    pub stage_counts: Vec<(NodeId, usize)>,
    /// Expected variation of `H` up to each restage time, `E|H|_{τ_k}`,
    /// as the explicit sum of midpoint jumps.
    pub stage_variation: Vec<S>,
    /// Expected variation up to the horizon.
    pub total_variation: S,
}

/// Builds the frozen-midpoint process for strictly separated barriers.
///
/// Stage rule: carry the midpoint frozen at the last restage node; a node
/// triggers a restage when the carried value exits the open corridor
/// strictly (`mid > U` or `mid < L`); boundary touching does not restage.
pub fn construct_midpoint_process<S: Scalar>(
    model: &TreeModel<S>,
    lower: &AdaptedProcess<S>,
    upper: &AdaptedProcess<S>,
) -> Result<MidpointConstruction<S>> {
    require_strict(model, lower, upper)?;
    let half = S::ratio(1, 2);
    let mid_at = |node: NodeId| (lower.at(node).clone() + upper.at(node).clone()) * half.clone();

    let mut h = AdaptedProcess::constant(model, S::zero());
    // per node: number of exits on the root path up to and including it,
    // and the variation accumulated by those midpoint jumps
    let mut exits = vec![0usize; model.num_nodes()];
    let mut jump_var: Vec<S> = vec![S::zero(); model.num_nodes()];
    let mut exit_sets: Vec<BTreeSet<NodeId>> = Vec::new();

    let root = model.root();
    h.set(root, mid_at(root));
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        let mid = h.at(node).clone();
        for &child in model.children(node) {
            let exited = mid > *upper.at(child) || mid < *lower.at(child);
            if exited {
                let new_mid = mid_at(child);
                exits[child.0] = exits[node.0] + 1;
                jump_var[child.0] =
                    jump_var[node.0].clone() + (new_mid.clone() - mid.clone()).abs();
                if exit_sets.len() < exits[child.0] {
                    exit_sets.push(BTreeSet::new());
                }
                exit_sets[exits[child.0] - 1].insert(child);
                h.set(child, new_mid);
            } else {
                exits[child.0] = exits[node.0];
                jump_var[child.0] = jump_var[node.0].clone();
                h.set(child, mid.clone());
            }
            stack.push(child);
        }
    }

    for i in 0..model.num_nodes() {
        let node = NodeId(i);
        if h.at(node) < lower.at(node) || h.at(node) > upper.at(node) {
            return Err(Error::Precondition(format!(
                "midpoint process escaped the corridor at (level {}, index {})",
                model.level_of(node),
                model.index_in_level(node)
            )));
        }
    }

    let max_exits = exit_sets.len();
    let num_stages = max_exits + 1;
    let mut taus = Vec::with_capacity(num_stages);
    let mut stage_variation = Vec::with_capacity(num_stages);
    for k in 1..=num_stages {
        let mut stop_nodes: BTreeSet<NodeId> =
            if k <= max_exits { exit_sets[k - 1].clone() } else { BTreeSet::new() };
        let mut var_k = S::zero();
        for &leaf in model.leaves() {
            if exits[leaf.0] < k {
                // fewer than k exits on this path: the restage time caps at T
                stop_nodes.insert(leaf);
                var_k += model.path_prob(leaf) * jump_var[leaf.0].clone();
            }
        }
        if k <= max_exits {
            for &stop in &exit_sets[k - 1] {
                for leaf in model.subtree_leaves(stop) {
                    var_k += model.path_prob(leaf) * jump_var[stop.0].clone();
                }
            }
        }
        let tau = StoppingTime {
            stop_nodes,
            floor_level: 0,
        };
        tau.validate(model)?;
        taus.push(tau);
        stage_variation.push(var_k);
    }

    let mut total = S::zero();
    let mut stage_counts = Vec::new();
    for &leaf in model.leaves() {
        total += model.path_prob(leaf) * jump_var[leaf.0].clone();
        stage_counts.push((leaf, exits[leaf.0] + 1));
    }

    Ok(MidpointConstruction {
        h,
        taus,
        stage_counts,
        stage_variation,
        total_variation: total,
    })
}

/// Per-path sum of `min(|U_t − L_{t−}|, |U_{t−} − L_t|)` over lower-barrier
/// jump nodes, in expectation. This lower-bounds the expected variation of
/// every process sandwiched between the barriers.
pub fn min_variation_lower_bound<S: Scalar>(
    model: &TreeModel<S>,
    lower: &AdaptedProcess<S>,
    upper: &AdaptedProcess<S>,
) -> Result<S> {
    lower.check_shape(model)?;
    upper.check_shape(model)?;
    let mut expect = S::zero();
    for &leaf in model.leaves() {
        let path = model.path_to(leaf);
        let mut acc = S::zero();
        for w in path.windows(2) {
            let (par, node) = (w[0], w[1]);
            if lower.at(node) != lower.at(par) {
                let a = (upper.at(node).clone() - lower.at(par).clone()).abs();
                let b = (upper.at(par).clone() - lower.at(node).clone()).abs();
                acc += S::min_of(a, b);
            }
        }
        expect += model.path_prob(leaf) * acc;
    }
    Ok(expect)
}

/// Oscillating barrier family truncated at `cells` branches.
///
/// The root splits into `cells` branches with probability proportional to
/// `n⁻²` (renormalized over the truncation). On branch `n` the lower barrier
/// alternates between `1/2` and `−3/2` at the times `1 − 1/k` for
/// `k = 2..=n+1`, then freezes; `U = L + 1`. Branching happens strictly
/// before the first barrier jump, so the post-branching tree is
/// deterministic per cell and no martingale jump coincides with a barrier
/// jump.
#[derive(Clone, Debug)]
pub struct OscillatingFamily<S> {
    pub model: TreeModel<S>,
    pub lower: AdaptedProcess<S>,
    pub upper: AdaptedProcess<S>,
    /// Truncated normalizing mass `Σ_{n≤cells} n⁻²`; cell `n` has
    /// probability `(1/n²)/mass`. Quantities reported per unit of the
    /// untruncated normalizing constant are this mass times the
    /// renormalized value.
    pub mass: S,
    pub cells: usize,
}

impl<S: Scalar> OscillatingFamily<S> {
    /// Lower-barrier value for a node at `level` on cell `n` (1-based).
    fn lower_value(level: usize, cell: usize) -> S {
        // the oscillation index at grid time t_j is j for j >= 2, else 1,
        // frozen at n+1 on cell n
        let k = if level < 2 { 1 } else { level };
        let k_eff = k.min(cell + 1);
        if k_eff % 2 == 1 {
            S::ratio(1, 2)
        } else {
            S::ratio(-3, 2)
        }
    }

    /// Cell index (1-based) of a node; the root belongs to no cell.
    pub fn cell_of(&self, node: NodeId) -> Option<usize> {
        if node == self.model.root() {
            None
        } else {
            Some(self.model.index_in_level(node) + 1)
        }
    }
}

/// Builds the truncated oscillating family.
pub fn oscillating_barrier_family<S: Scalar>(cells: usize) -> Result<OscillatingFamily<S>> {
    if cells == 0 {
        return Err(Error::Precondition("need at least one cell".into()));
    }
    // grid: 0, 1/4, then the oscillation endpoints 1 − 1/j for j = 2..=cells+1,
    // then the horizon 1
    let mut times = vec![S::zero(), S::ratio(1, 4)];
    for j in 2..=(cells as i64 + 1) {
        times.push(S::one() - S::ratio(1, j));
    }
    times.push(S::one());
    let terminal = times.len() - 1;

    let mut mass = S::zero();
    for n in 1..=(cells as i64) {
        mass += S::ratio(1, n * n);
    }

    let mut b = crate::filtration::TreeBuilder::new(times);
    let root = b.root();
    for n in 1..=(cells as i64) {
        let p = S::ratio(1, n * n) / mass.clone();
        let mut node = b.add_child(root, p);
        for _ in 2..=terminal {
            node = b.add_child(node, S::one());
        }
    }
    let model = b.finish()?;

    let lower = AdaptedProcess::from_fn(&model, |m, node| {
        let level = m.level_of(node);
        if level == 0 {
            OscillatingFamily::<S>::lower_value(0, 1)
        } else {
            OscillatingFamily::<S>::lower_value(level, m.index_in_level(node) + 1)
        }
    });
    let upper = lower.map(|v| v.clone() + S::one());

    Ok(OscillatingFamily {
        model,
        lower,
        upper,
        mass,
        cells,
    })
}

/// Reflection-mass report for the oscillating family with a midpoint
/// terminal condition.
#[derive(Clone, Debug)]
pub struct ReflectionMassReport<S> {
    pub family: OscillatingFamily<S>,
    pub solution: RbsdeSolution<S>,
    /// `E K_T` and `E A_T` under the renormalized cell probabilities.
    pub expected_k: S,
    pub expected_a: S,
    /// Truncated series `Σ_{n=2}^{cells} (n−1)/(2n²)` divided by the
    /// normalizing mass; both expected masses dominate it.
    pub bound: S,
    /// The same series before renormalization (`bound × mass`).
    pub bound_series: S,
}

/// Solves the oscillating family with `ξ = (L_T + U_T)/2`, `f ≡ 0`,
/// `V ≡ 0`, and reports the expected reflection masses against the
/// truncated series bound.
pub fn reflection_mass_scenario<S: Scalar>(cells: usize) -> Result<ReflectionMassReport<S>> {
    if cells < 2 {
        return Err(Error::Precondition(
            "reflection-mass scenario needs at least two cells".into(),
        ));
    }
    let family = oscillating_barrier_family::<S>(cells)?;
    let model = &family.model;
    let half = S::ratio(1, 2);
    let xi: Vec<S> = model
        .leaves()
        .iter()
        .map(|&leaf| {
            (family.lower.at(leaf).clone() + family.upper.at(leaf).clone()) * half.clone()
        })
        .collect();
    let gen = GeneratorSpec::plain(model, xi);
    let solution = solve_double_reflected(model, &gen, &family.lower, &family.upper)?;

    let mut expected_k = S::zero();
    let mut expected_a = S::zero();
    for &leaf in model.leaves() {
        let p = model.path_prob(leaf);
        expected_k += p.clone() * solution.k.cumulative_at(model, leaf);
        expected_a += p * solution.a.cumulative_at(model, leaf);
    }

    let mut bound_series = S::zero();
    for n in 2..=(cells as i64) {
        bound_series += S::ratio(n - 1, 2 * n * n);
    }
    let bound = bound_series.clone() / family.mass.clone();
    if expected_k < bound || expected_a < bound {
        return Err(Error::Precondition(format!(
            "reflection mass below the truncated series bound: EK = {expected_k}, EA = {expected_a}, bound = {bound}"
        )));
    }

    Ok(ReflectionMassReport {
        family,
        solution,
        expected_k,
        expected_a,
        bound,
        bound_series,
    })
}

/// Sandwiched semimartingale between strictly separated barriers: solves
/// the two-barrier equation with `ξ = L_T⁺ ∧ U_T`, `f ≡ 0`, `V ≡ 0`.
pub fn sandwich_semimartingale<S: Scalar>(
    model: &TreeModel<S>,
    lower: &AdaptedProcess<S>,
    upper: &AdaptedProcess<S>,
) -> Result<RbsdeSolution<S>> {
    require_strict(model, lower, upper)?;
    let xi: Vec<S> = model
        .leaves()
        .iter()
        .map(|&leaf| S::min_of(lower.at(leaf).clone().pos_part(), upper.at(leaf).clone()))
        .collect();
    let gen = GeneratorSpec::plain(model, xi);
    solve_double_reflected(model, &gen, lower, upper)
}

/// Uniform bound for the driver on the ball `|y| ≤ r`:
/// `max_t (|f(t,−r) + 2μr| ∨ |f(t,r) − 2μr|)`. A probe grid on `[−r, r]`
/// cross-checks that the sampled sup never exceeds it; a violation means
/// the generator fails its declared monotonicity constant.
pub fn generator_ball_bound<S: Scalar>(
    model: &TreeModel<S>,
    gen: &GeneratorSpec<S>,
    r: &S,
) -> Result<S> {
    if !r.is_positive() {
        return Err(Error::Precondition("ball radius must be positive".into()));
    }
    let two_mu_r = S::from_int(2) * gen.mu.clone() * r.clone();
    let mut bound = S::zero();
    for level in 0..model.horizon() {
        let low = (gen.f_at(level, &-r.clone()) + two_mu_r.clone()).abs();
        let high = (gen.f_at(level, r) - two_mu_r.clone()).abs();
        bound = S::max_of(bound, S::max_of(low, high));
    }
    let eighth = S::ratio(1, 8);
    for level in 0..model.horizon() {
        for k in -8..=8 {
            let y = r.clone() * S::from_int(k) * eighth.clone();
            let fy = gen.f_at(level, &y).abs();
            if fy > bound {
                return Err(Error::GeneratorBound(format!(
                    "|f({level}, {y})| = {fy} exceeds the ball bound {bound} for the declared mu = {}",
                    gen.mu
                )));
            }
        }
    }
    Ok(bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Rat;
    use crate::processes::{total_variation_adapted, PredictableIncrements};
    use crate::rbsde::{verify_solution, DriverForm};

    fn rat(n: i64, d: i64) -> Rat {
        Rat::ratio(n, d)
    }

    #[test]
    fn separation_classification() {
        let m = TreeModel::<Rat>::uniform_binary(2);
        let zero = AdaptedProcess::constant(&m, rat(0, 1));
        let one = AdaptedProcess::constant(&m, rat(1, 1));
        assert_eq!(check_separation(&m, &zero, &one).unwrap(), Separation::Strict);

        let mut touching = one.clone();
        touching.set(NodeId(1), rat(0, 1));
        match check_separation(&m, &zero, &touching).unwrap() {
            Separation::Weak { touching } => assert_eq!(touching, vec![NodeId(1)]),
            other => panic!("expected weak, got {other:?}"),
        }

        match check_separation(&m, &one, &zero).unwrap() {
            Separation::Violated { crossing } => assert_eq!(crossing.len(), m.num_nodes()),
            other => panic!("expected violated, got {other:?}"),
        }
    }

    #[test]
    fn midpoint_constant_barriers_single_stage() {
        let m = TreeModel::<Rat>::uniform_binary(2);
        let lower = AdaptedProcess::constant(&m, rat(0, 1));
        let upper = AdaptedProcess::constant(&m, rat(2, 1));
        let c = construct_midpoint_process(&m, &lower, &upper).unwrap();
        assert_eq!(c.h, AdaptedProcess::constant(&m, rat(1, 1)));
        assert_eq!(c.taus.len(), 1);
        assert_eq!(
            c.taus[0].stop_nodes,
            m.leaves().iter().copied().collect::<BTreeSet<_>>()
        );
        assert!(c.stage_counts.iter().all(|(_, s)| *s == 1));
        assert_eq!(c.total_variation, rat(0, 1));
    }

    #[test]
    fn midpoint_restarts_after_corridor_drop() {
        // chain; corridor (0, 2) drops to (0, 1/2) at step 2
        let m = TreeModel::<Rat>::deterministic_chain(3);
        let lower = AdaptedProcess::constant(&m, rat(0, 1));
        let upper = AdaptedProcess::from_fn(&m, |mm, n| {
            if mm.level_of(n) < 2 {
                rat(2, 1)
            } else {
                rat(1, 2)
            }
        });
        let c = construct_midpoint_process(&m, &lower, &upper).unwrap();
        let step2 = m.node_at(2, 0).unwrap();
        assert_eq!(c.taus.len(), 2);
        assert_eq!(c.taus[0].stop_nodes, BTreeSet::from([step2]));
        assert_eq!(*c.h.at(step2), rat(1, 4));
        assert_eq!(c.stage_counts[0].1, 2);
        assert_eq!(c.stage_variation, vec![rat(3, 4), rat(3, 4)]);
        assert_eq!(c.total_variation, rat(3, 4));

        let (_, tv) =
            total_variation_adapted(&m, &c.h, &StoppingTime::at_level(&m, 3)).unwrap();
        assert_eq!(tv, c.total_variation);
    }

    #[test]
    fn midpoint_boundary_touch_does_not_restage() {
        // corridor (0, 2) then (1, 3): the carried midpoint 1 sits on the
        // new lower boundary and must not trigger a restage
        let m = TreeModel::<Rat>::deterministic_chain(2);
        let lower = AdaptedProcess::from_fn(&m, |mm, n| {
            if mm.level_of(n) < 1 {
                rat(0, 1)
            } else {
                rat(1, 1)
            }
        });
        let upper = AdaptedProcess::from_fn(&m, |mm, n| {
            if mm.level_of(n) < 1 {
                rat(2, 1)
            } else {
                rat(3, 1)
            }
        });
        let c = construct_midpoint_process(&m, &lower, &upper).unwrap();
        assert_eq!(c.taus.len(), 1);
        assert_eq!(c.total_variation, rat(0, 1));
    }

    #[test]
    fn oscillating_family_shape_and_stages() {
        for cells in 1..=8usize {
            let fam = oscillating_barrier_family::<Rat>(cells).unwrap();
            assert_eq!(fam.model.leaves().len(), cells);
            assert_eq!(
                check_separation(&fam.model, &fam.lower, &fam.upper).unwrap(),
                Separation::Strict
            );
            let c = construct_midpoint_process(&fam.model, &fam.lower, &fam.upper).unwrap();
            // stage count on cell n is n + 1
            for (leaf, stages) in &c.stage_counts {
                let cell = fam.cell_of(*leaf).unwrap();
                assert_eq!(*stages, cell + 1, "cells = {cells}, cell = {cell}");
            }
            // final restage time is the horizon path-wise
            let last = c.taus.last().unwrap();
            assert_eq!(
                last.stop_nodes,
                fam.model.leaves().iter().copied().collect::<BTreeSet<_>>()
            );
        }
    }

    #[test]
    fn oscillating_family_variation_in_units_of_mass() {
        // bound × mass = Σ_{n≤N} 1/n; E|H|_T × mass = 2 Σ_{n≤N} 1/n
        for cells in 1..=6usize {
            let fam = oscillating_barrier_family::<Rat>(cells).unwrap();
            let mut harmonic = rat(0, 1);
            for n in 1..=(cells as i64) {
                harmonic += rat(1, n);
            }
            let bound = min_variation_lower_bound(&fam.model, &fam.lower, &fam.upper).unwrap();
            assert_eq!(bound.clone() * fam.mass.clone(), harmonic);

            let c = construct_midpoint_process(&fam.model, &fam.lower, &fam.upper).unwrap();
            assert_eq!(
                c.total_variation.clone() * fam.mass.clone(),
                rat(2, 1) * harmonic
            );
            assert!(bound <= c.total_variation);

            let (_, tv) = total_variation_adapted(
                &fam.model,
                &c.h,
                &StoppingTime::at_level(&fam.model, fam.model.horizon()),
            )
            .unwrap();
            assert_eq!(tv, c.total_variation);
        }
    }

    #[test]
    fn min_variation_examples() {
        let m = TreeModel::<Rat>::uniform_binary(2);
        let lower = AdaptedProcess::constant(&m, rat(0, 1));
        let upper = AdaptedProcess::constant(&m, rat(1, 1));
        assert_eq!(min_variation_lower_bound(&m, &lower, &upper).unwrap(), rat(0, 1));

        let fam = oscillating_barrier_family::<Rat>(3).unwrap();
        let bound = min_variation_lower_bound(&fam.model, &fam.lower, &fam.upper).unwrap();
        // Σ 1/n = 11/6 in units of the mass 49/36
        assert_eq!(bound, rat(11, 6) / rat(49, 36));
    }

    #[test]
    fn reflection_mass_two_cells_exact() {
        let r = reflection_mass_scenario::<Rat>(2).unwrap();
        assert_eq!(r.bound_series, rat(1, 8));
        assert_eq!(r.bound, rat(1, 10));
        assert_eq!(r.expected_k, rat(7, 5));
        assert_eq!(r.expected_a, rat(3, 10));
        assert_eq!(*r.solution.y.at(r.family.model.root()), rat(1, 2));
    }

    #[test]
    fn reflection_mass_grows_and_dominates() {
        let mut prev_series = rat(0, 1);
        for cells in 2..=8usize {
            let r = reflection_mass_scenario::<Rat>(cells).unwrap();
            assert!(r.bound_series > prev_series);
            assert!(r.expected_k >= r.bound);
            assert!(r.expected_a >= r.bound);
            prev_series = r.bound_series;
        }
    }

    #[test]
    fn sandwich_solution_verifies() {
        let m = TreeModel::<Rat>::uniform_binary(2);
        let lower = AdaptedProcess::constant(&m, rat(0, 1));
        let upper = AdaptedProcess::constant(&m, rat(1, 1));
        let sol = sandwich_semimartingale(&m, &lower, &upper).unwrap();
        assert_eq!(sol.y, AdaptedProcess::constant(&m, rat(0, 1)));

        let fam = oscillating_barrier_family::<Rat>(2).unwrap();
        let sol = sandwich_semimartingale(&fam.model, &fam.lower, &fam.upper).unwrap();
        let xi: Vec<Rat> = fam
            .model
            .leaves()
            .iter()
            .map(|&l| Rat::min_of(fam.lower.at(l).clone().pos_part(), fam.upper.at(l).clone()))
            .collect();
        let gen = GeneratorSpec::plain(&fam.model, xi);
        let report = verify_solution(
            &fam.model,
            &gen,
            Some(&fam.lower),
            Some(&fam.upper),
            &sol,
            rat(0, 1),
        )
        .unwrap();
        assert!(report.passes(), "{report}");

        let crossing = AdaptedProcess::constant(&m, rat(-1, 1));
        assert!(matches!(
            sandwich_semimartingale(&m, &upper, &crossing),
            Err(Error::SeparationViolated(_))
        ));
    }

    #[test]
    fn ball_bound_examples() {
        let m = TreeModel::<Rat>::uniform_binary(2);
        // f ≡ 0 with declared mu = 1/2: bound is 2·mu·r
        let mut gen = GeneratorSpec::plain(&m, vec![rat(0, 1); 4]);
        gen.mu = rat(1, 2);
        assert_eq!(generator_ball_bound(&m, &gen, &rat(1, 1)).unwrap(), rat(1, 1));

        // f(t, y) = −y with mu = 0: bound r, probe at y = r attains it
        let gen = GeneratorSpec::new(
            vec![rat(0, 1); 4],
            DriverForm::Affine {
                a: rat(0, 1),
                b: rat(-1, 1),
            },
            rat(0, 1),
            PredictableIncrements::zero(&m),
        );
        assert_eq!(generator_ball_bound(&m, &gen, &rat(1, 1)).unwrap(), rat(1, 1));

        // cubic with a misdeclared mu: probes exceed the claimed bound
        let gen = GeneratorSpec::new(
            vec![rat(0, 1); 4],
            DriverForm::MonotoneCubic { c: rat(1, 1) },
            rat(-2, 1),
            PredictableIncrements::zero(&m),
        );
        assert!(matches!(
            generator_ball_bound(&m, &gen, &rat(2, 1)),
            Err(Error::GeneratorBound(_))
        ));

        assert!(generator_ball_bound(&m, &gen, &rat(0, 1)).is_err());
    }
}
