//! Penalized approximation of the reflected solutions.
//!
//! Reflection is replaced by stiff drift terms: a lower penalty
//! `n·(L_t − y)⁺` pushing up and an upper penalty `−m·(y − U_t)⁺` pushing
//! down. The fully penalized solution `Y^{n,m}` is a plain BSDE; the
//! half-penalized ones keep one true barrier. Node-wise, `Y^{n,m}` is
//! nondecreasing in `n`, nonincreasing in `m`, and bracketed between the
//! half-penalized solutions, whose monotone limits meet at the two-barrier
//! solution. The sweeps here verify all of that exactly in rational mode.

use crate::error::{Error, Result};
use crate::filtration::{NodeId, TreeModel};
use crate::num::Scalar;
use crate::processes::AdaptedProcess;
use crate::rbsde::{
    solve_double_reflected, solve_with_constraints, Constraints, GeneratorSpec, RbsdeSolution,
};
use std::io::Write;

/// Increasing lists of penalty levels for a sweep.
#[derive(Clone, Debug)]
pub struct PenaltyGrid {
    pub ns: Vec<u64>,
    pub ms: Vec<u64>,
}

impl PenaltyGrid {
    pub fn new(ns: Vec<u64>, ms: Vec<u64>) -> Result<Self> {
        for list in [&ns, &ms] {
            if list.is_empty() {
                return Err(Error::Precondition("empty penalty grid".into()));
            }
            for w in list.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Precondition(
                        "penalty levels must be strictly increasing".into(),
                    ));
                }
            }
            if list[0] == 0 {
                return Err(Error::Precondition("penalty levels must be positive".into()));
            }
        }
        Ok(PenaltyGrid { ns, ms })
    }

    /// The default sweep grid `{1, 2, 4, ..., 64}` on both axes.
    pub fn default_grid() -> Self {
        let powers: Vec<u64> = (0..7).map(|k| 1u64 << k).collect();
        PenaltyGrid {
            ns: powers.clone(),
            ms: powers,
        }
    }
}

/// Plain BSDE with both penalty terms added to the driver.
pub fn solve_penalized<S: Scalar>(
    model: &TreeModel<S>,
    gen: &GeneratorSpec<S>,
    lower: &AdaptedProcess<S>,
    upper: &AdaptedProcess<S>,
    n: u64,
    m: u64,
) -> Result<RbsdeSolution<S>> {
    let nc = S::from_int(n as i64);
    let mc = S::from_int(m as i64);
    solve_with_constraints(
        model,
        gen,
        Constraints {
            penalty_lower: Some((&nc, lower)),
            penalty_upper: Some((&mc, upper)),
            ..Constraints::default()
        },
    )
}

/// Upper-reflected equation with the lower barrier penalized: `Ȳⁿ ≤ U`.
pub fn solve_half_penalized_upper<S: Scalar>(
    model: &TreeModel<S>,
    gen: &GeneratorSpec<S>,
    lower: &AdaptedProcess<S>,
    upper: &AdaptedProcess<S>,
    n: u64,
) -> Result<RbsdeSolution<S>> {
    let nc = S::from_int(n as i64);
    solve_with_constraints(
        model,
        gen,
        Constraints {
            reflect_upper: Some(upper),
            penalty_lower: Some((&nc, lower)),
            ..Constraints::default()
        },
    )
}

/// Lower-reflected equation with the upper barrier penalized: `Y̲ᵐ ≥ L`.
pub fn solve_half_penalized_lower<S: Scalar>(
    model: &TreeModel<S>,
    gen: &GeneratorSpec<S>,
    lower: &AdaptedProcess<S>,
    upper: &AdaptedProcess<S>,
    m: u64,
) -> Result<RbsdeSolution<S>> {
    let mc = S::from_int(m as i64);
    solve_with_constraints(
        model,
        gen,
        Constraints {
            reflect_lower: Some(lower),
            penalty_upper: Some((&mc, upper)),
            ..Constraints::default()
        },
    )
}

/// Max-node absolute difference between two adapted processes.
pub fn max_node_gap<S: Scalar>(a: &AdaptedProcess<S>, b: &AdaptedProcess<S>) -> S {
    assert_eq!(a.len(), b.len());
    let mut worst = S::zero();
    for i in 0..a.len() {
        worst = S::max_of(
            worst,
            (a.at(NodeId(i)).clone() - b.at(NodeId(i)).clone()).abs(),
        );
    }
    worst
}

/// Rounding slack below which a monotonicity violation is downgraded to a
/// warning in float mode; exact mode tolerates nothing.
fn warn_tolerance<S: Scalar>() -> S {
    if S::EXACT {
        S::zero()
    } else {
        S::ratio(1, 1_000_000_000_000)
    }
}

fn check_node_monotone<S: Scalar>(
    model: &TreeModel<S>,
    smaller: &AdaptedProcess<S>,
    larger: &AdaptedProcess<S>,
    n: u64,
    m: u64,
    what: &str,
    warnings: &mut Vec<String>,
) -> Result<()> {
    let tol = warn_tolerance::<S>();
    for i in 0..model.num_nodes() {
        let node = NodeId(i);
        let gap = smaller.at(node).clone() - larger.at(node).clone();
        if gap.is_positive() {
            let (level, index) = (model.level_of(node), model.index_in_level(node));
            if gap <= tol {
                warnings.push(format!(
                    "{what}: rounding-level violation {gap} at (level {level}, index {index}), pair ({n}, {m})"
                ));
            } else {
                return Err(Error::MonotonicityViolation {
                    level,
                    index,
                    n,
                    m,
                    detail: format!("{what} violated by {gap}"),
                });
            }
        }
    }
    Ok(())
}

/// One row of a one-barrier sweep table.
#[derive(Clone, Debug)]
pub struct OneBarrierRow<S> {
    pub n: u64,
    pub y0: S,
    /// Node-wise nondecreasing relative to the previous row.
    pub monotone_ok: bool,
    /// Max-node gap to the reflected solution.
    pub gap_to_reflected: S,
}

/// Penalized approximation of the one-lower-barrier equation along `ns`;
/// the last column compares against the reflected solver.
pub fn one_barrier_penalization_sweep<S: Scalar>(
    model: &TreeModel<S>,
    gen: &GeneratorSpec<S>,
    lower: &AdaptedProcess<S>,
    ns: &[u64],
) -> Result<Vec<OneBarrierRow<S>>> {
    let reflected = crate::rbsde::solve_lower_reflected(model, gen, lower)?;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut prev: Option<AdaptedProcess<S>> = None;
    let mut prev_gap: Option<S> = None;
    for &n in ns {
        let nc = S::from_int(n as i64);
        let sol = solve_with_constraints(
            model,
            gen,
            Constraints {
                penalty_lower: Some((&nc, lower)),
                ..Constraints::default()
            },
        )?;
        let mut monotone_ok = true;
        if let Some(p) = &prev {
            monotone_ok =
                check_node_monotone(model, p, &sol.y, n, 0, "Y^n increasing in n", &mut warnings)
                    .is_ok();
        }
        // the penalized solution approaches the reflected one from below,
        // so the node-wise error is itself nonincreasing in n
        let gap = max_node_gap(&sol.y, &reflected.y);
        if let Some(pg) = &prev_gap {
            if gap > pg.clone() + warn_tolerance::<S>() {
                return Err(Error::MonotonicityViolation {
                    level: 0,
                    index: 0,
                    n,
                    m: 0,
                    detail: format!("gap to reflected value grew from {pg} to {gap}"),
                });
            }
        }
        prev_gap = Some(gap.clone());
        rows.push(OneBarrierRow {
            n,
            y0: sol.y.at(model.root()).clone(),
            monotone_ok,
            gap_to_reflected: gap,
        });
        prev = Some(sol.y);
    }
    Ok(rows)
}

/// One grid cell of the double sweep.
#[derive(Clone, Debug)]
pub struct BracketCell<S> {
    pub n: u64,
    pub m: u64,
    pub y0: S,
    pub gap_to_oracle: S,
}

/// Outcome of [`double_penalization_sweep`].
#[derive(Clone, Debug)]
pub struct BracketReport<S> {
    pub cells: Vec<BracketCell<S>>,
    pub half_upper_y0: Vec<(u64, S)>,
    pub half_lower_y0: Vec<(u64, S)>,
    /// Diagonal `(n, max-node gap to the two-barrier oracle)`.
    pub diagonal: Vec<(u64, S)>,
    pub warnings: Vec<String>,
}

impl<S: Scalar> BracketReport<S> {
    /// CSV with columns `(n, m, y0, max_gap_to_oracle, monotone_ok)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,m,y0,max_gap_to_oracle,monotone_ok")?;
        for c in &self.cells {
            writeln!(out, "{},{},{},{},true", c.n, c.m, c.y0, c.gap_to_oracle)?;
        }
        Ok(())
    }
}

/// Runs the full `(n, m)` grid and verifies, node-wise:
/// `Y^{n,m}` nondecreasing in `n` and nonincreasing in `m`; the sandwich
/// `Ȳⁿ ≤ Y^{n,m} ≤ Y̲ᵐ`; `Ȳⁿ` nondecreasing in `n` and `Y̲ᵐ`
/// nonincreasing in `m`; barrier respect of the half-penalized solutions;
/// and the diagonal's agreement trend with the two-barrier oracle.
pub fn double_penalization_sweep<S: Scalar>(
    model: &TreeModel<S>,
    gen: &GeneratorSpec<S>,
    lower: &AdaptedProcess<S>,
    upper: &AdaptedProcess<S>,
    grid: &PenaltyGrid,
) -> Result<BracketReport<S>> {
    let oracle = solve_double_reflected(model, gen, lower, upper)?;
    let mut warnings = Vec::new();

    let mut half_upper = Vec::new();
    for &n in &grid.ns {
        let sol = solve_half_penalized_upper(model, gen, lower, upper, n)?;
        check_node_monotone(model, &sol.y, upper, n, 0, "Ȳⁿ ≤ U", &mut warnings)?;
        if let Some((pn, prev)) = half_upper.last() {
            let _ = pn;
            check_node_monotone(model, prev, &sol.y, n, 0, "Ȳⁿ increasing in n", &mut warnings)?;
        }
        check_node_monotone(model, &sol.y, &oracle.y, n, 0, "Ȳⁿ ≤ Y", &mut warnings)?;
        half_upper.push((n, sol.y));
    }
    let mut half_lower = Vec::new();
    for &m in &grid.ms {
        let sol = solve_half_penalized_lower(model, gen, lower, upper, m)?;
        check_node_monotone(model, lower, &sol.y, 0, m, "Y̲ᵐ ≥ L", &mut warnings)?;
        if let Some((_, prev)) = half_lower.last() {
            check_node_monotone(model, &sol.y, prev, 0, m, "Y̲ᵐ decreasing in m", &mut warnings)?;
        }
        check_node_monotone(model, &oracle.y, &sol.y, 0, m, "Y ≤ Y̲ᵐ", &mut warnings)?;
        half_lower.push((m, sol.y));
    }

    let mut cells = Vec::new();
    let mut grid_y: Vec<Vec<AdaptedProcess<S>>> = Vec::new();
    for (i, &n) in grid.ns.iter().enumerate() {
        let mut row = Vec::new();
        for (j, &m) in grid.ms.iter().enumerate() {
            let sol = solve_penalized(model, gen, lower, upper, n, m)?;
            if i > 0 {
                check_node_monotone(
                    model,
                    &grid_y[i - 1][j],
                    &sol.y,
                    n,
                    m,
                    "Y^{n,m} increasing in n",
                    &mut warnings,
                )?;
            }
            if j > 0 {
                check_node_monotone(
                    model,
                    &sol.y,
                    &row[j - 1],
                    n,
                    m,
                    "Y^{n,m} decreasing in m",
                    &mut warnings,
                )?;
            }
            check_node_monotone(
                model,
                &half_upper[i].1,
                &sol.y,
                n,
                m,
                "sandwich Ȳⁿ ≤ Y^{n,m}",
                &mut warnings,
            )?;
            check_node_monotone(
                model,
                &sol.y,
                &half_lower[j].1,
                n,
                m,
                "sandwich Y^{n,m} ≤ Y̲ᵐ",
                &mut warnings,
            )?;
            cells.push(BracketCell {
                n,
                m,
                y0: sol.y.at(model.root()).clone(),
                gap_to_oracle: max_node_gap(&sol.y, &oracle.y),
            });
            row.push(sol.y);
        }
        grid_y.push(row);
    }

    let mut diagonal = Vec::new();
    for (i, &n) in grid.ns.iter().enumerate() {
        if let Some(j) = grid.ms.iter().position(|&m| m == n) {
            diagonal.push((n, max_node_gap(&grid_y[i][j], &oracle.y)));
        }
    }

    Ok(BracketReport {
        cells,
        half_upper_y0: half_upper
            .iter()
            .map(|(n, y)| (*n, y.at(model.root()).clone()))
            .collect(),
        half_lower_y0: half_lower
            .iter()
            .map(|(m, y)| (*m, y.at(model.root()).clone()))
            .collect(),
        diagonal,
        warnings,
    })
}

/// Diagonal convergence record.
#[derive(Clone, Debug)]
pub struct DiagonalReport<S> {
    /// `(n, max-node |Y^{n,n} − Y|)` along the doubling sequence.
    pub steps: Vec<(u64, S)>,
    /// Gap fell below the target before the cap.
    pub met: bool,
    /// Gap was nonincreasing along the sequence.
    pub monotone: bool,
}

/// Doubles `n` from `start` until `max-node |Y^{n,n} − Y| < target` or the
/// cap is reached.
pub fn diagonal_convergence<S: Scalar>(
    model: &TreeModel<S>,
    gen: &GeneratorSpec<S>,
    lower: &AdaptedProcess<S>,
    upper: &AdaptedProcess<S>,
    target: &S,
    start: u64,
    cap: u64,
) -> Result<DiagonalReport<S>> {
    let oracle = solve_double_reflected(model, gen, lower, upper)?;
    let mut steps: Vec<(u64, S)> = Vec::new();
    let mut monotone = true;
    let mut met = false;
    let mut n = start.max(1);
    loop {
        let sol = solve_penalized(model, gen, lower, upper, n, n)?;
        let gap = max_node_gap(&sol.y, &oracle.y);
        if let Some((_, prev)) = steps.last() {
            if gap > prev.clone() + warn_tolerance::<S>() {
                monotone = false;
            }
        }
        steps.push((n, gap.clone()));
        if gap < *target {
            met = true;
            break;
        }
        if n >= cap {
            break;
        }
        n = (n * 2).min(cap);
    }
    Ok(DiagonalReport {
        steps,
        met,
        monotone,
    })
}
