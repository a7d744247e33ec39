//! Scenario files: a structured text format describing a model, barriers,
//! equation data and a run configuration, plus seeded random generation.
//!
//! Rationals are written as strings (`"3"`, `"-7/2"`, `"0.25"`), so a file
//! realizes losslessly in exact mode and by one conversion in float mode.
//! Serialization is canonical: parse-then-serialize is a fixed point, which
//! makes artifact determinism checkable byte-for-byte.

use crate::error::{Error, Result};
use crate::filtration::{NodeId, TreeBuilder, TreeModel};
use crate::num::{format_rat, parse_rat, rat_to_scalar, Rat, Scalar};
use crate::processes::{AdaptedProcess, PredictableIncrements};
use crate::rbsde::{DriverForm, GeneratorSpec};
use crate::separation::oscillating_barrier_family;
use num_traits::Signed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Tree description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Uniform binary tree. `scale` stretches the unit grid (`t_i = i·scale`).
    UniformBinary {
        depth: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<String>,
    },
    DeterministicChain { steps: usize },
    /// The oscillating barrier family truncated at `cells` branches.
    OscillatingCells { cells: usize },
    /// Explicit tree: a time grid and per-node child probabilities.
    Explicit {
        times: Vec<String>,
        nodes: Vec<NodeSpec>,
    },
}

/// Children of one non-terminal node, addressed by (level, index).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub level: usize,
    pub index: usize,
    /// Branch probabilities, one child per entry.
    pub children: Vec<String>,
}

/// One adapted process, by constant or by node table (node-id order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProcessSpec {
    Constant { value: String },
    Table { values: Vec<String> },
    /// The barriers carried by the oscillating-cells model itself.
    Family,
}

/// Barrier section; absent barriers mean the equation is unreflected on
/// that side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<ProcessSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<ProcessSpec>,
}

/// Driver catalogue, mirroring the solver's closed forms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverSpec {
    Zero,
    Affine { a: String, b: String },
    MonotoneCubic { c: String },
    PenaltyComposite {
        a: String,
        b: String,
        n: String,
        l: String,
        m: String,
        u: String,
    },
}

/// Terminal data: an explicit leaf table, or a rule computed from the
/// barriers (`midpoint` is `(L_T+U_T)/2`, `sandwich` is `L_T⁺ ∧ U_T`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GeneratorFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_rule: Option<String>,
    pub f: DriverSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,
    /// Signed increments `ΔV`, node-id order; omitted means zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<String>>,
    /// Localization cutoff: the driver acts only below this level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_active_below: Option<usize>,
}

/// Run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunSpec {
    /// solve | penalize | separation | game | batch
    pub mode: String,
    /// rational | float
    #[serde(default = "default_numeric")]
    pub numeric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_grid: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    /// Batch-mode tree depth and scenario count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

fn default_numeric() -> String {
    "rational".into()
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            mode: "solve".into(),
            numeric: default_numeric(),
            tol: None,
            penalty_grid: None,
            eps: None,
            seed: None,
            budget: None,
            depth: None,
            count: None,
        }
    }
}

/// A full scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelSpec,
    #[serde(default)]
    pub barriers: BarrierSpec,
    pub generator: GeneratorFile,
    #[serde(default)]
    pub run: RunSpec,
}

const MODES: &[&str] = &["solve", "penalize", "separation", "game", "batch"];

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        let sc: Scenario =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        sc.validate_shallow()?;
        Ok(sc)
    }

    /// Canonical text form; `parse` then `serialize` is a fixed point.
    pub fn serialize(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn validate_shallow(&self) -> Result<()> {
        if !MODES.contains(&self.run.mode.as_str()) {
            return Err(Error::Parse(format!(
                "unknown run mode {:?} (expected one of {MODES:?})",
                self.run.mode
            )));
        }
        match self.run.numeric.as_str() {
            "rational" | "float" => {}
            other => {
                return Err(Error::Parse(format!(
                    "unknown numeric mode {other:?} (expected rational or float)"
                )))
            }
        }
        match (&self.generator.xi, &self.generator.xi_rule) {
            (Some(_), Some(_)) => Err(Error::Parse(
                "give either xi or xi-rule, not both".into(),
            )),
            (None, None) => Err(Error::Parse("missing xi (or xi-rule)".into())),
            (None, Some(rule)) if rule != "midpoint" && rule != "sandwich" => Err(
                Error::Parse(format!("unknown xi-rule {rule:?} (midpoint or sandwich)")),
            ),
            _ => Ok(()),
        }
    }
}

fn parse_field(name: &str, text: &str) -> Result<Rat> {
    parse_rat(text).ok_or_else(|| Error::Parse(format!("{name}: bad rational {text:?}")))
}

/// A scenario realized against a scalar type.
#[derive(Clone, Debug)]
pub struct Realized<S> {
    pub model: TreeModel<S>,
    pub lower: Option<AdaptedProcess<S>>,
    pub upper: Option<AdaptedProcess<S>>,
    pub gen: GeneratorSpec<S>,
}

fn realize_process<S: Scalar>(
    model: &TreeModel<S>,
    spec: &ProcessSpec,
    family: Option<(&AdaptedProcess<S>, &AdaptedProcess<S>)>,
    which: &str,
) -> Result<AdaptedProcess<S>> {
    match spec {
        ProcessSpec::Constant { value } => {
            let v: S = rat_to_scalar(&parse_field(which, value)?);
            Ok(AdaptedProcess::constant(model, v))
        }
        ProcessSpec::Table { values } => {
            if values.len() != model.num_nodes() {
                return Err(Error::Parse(format!(
                    "{which}: table has {} entries, model has {} nodes",
                    values.len(),
                    model.num_nodes()
                )));
            }
            let mut vals = Vec::with_capacity(values.len());
            for v in values {
                vals.push(rat_to_scalar(&parse_field(which, v)?));
            }
            Ok(AdaptedProcess::from_values(vals))
        }
        ProcessSpec::Family => match family {
            Some((l, u)) => Ok(if which == "barriers.lower" {
                l.clone()
            } else {
                u.clone()
            }),
            None => Err(Error::Parse(format!(
                "{which}: kind = \"family\" requires an oscillating-cells model"
            ))),
        },
    }
}

fn build_explicit<S: Scalar>(times: &[String], nodes: &[NodeSpec]) -> Result<TreeModel<S>> {
    let mut grid = Vec::with_capacity(times.len());
    for t in times {
        grid.push(rat_to_scalar::<S>(&parse_field("model.times", t)?));
    }
    let mut b = TreeBuilder::new(grid);
    // ids by (level, index); children are appended in listing order, so a
    // (level, index) address is resolvable once its level is complete
    let mut by_address: std::collections::BTreeMap<(usize, usize), NodeId> =
        std::collections::BTreeMap::new();
    by_address.insert((0, 0), b.root());
    let mut sorted: Vec<&NodeSpec> = nodes.iter().collect();
    sorted.sort_by_key(|n| (n.level, n.index));
    let mut next_index: std::collections::BTreeMap<usize, usize> =
        std::collections::BTreeMap::new();
    for spec in sorted {
        let parent = *by_address.get(&(spec.level, spec.index)).ok_or_else(|| {
            Error::Parse(format!(
                "model.nodes: no node at (level {}, index {})",
                spec.level, spec.index
            ))
        })?;
        for p in &spec.children {
            let prob: S = rat_to_scalar(&parse_field("model.nodes.children", p)?);
            let child = b.add_child(parent, prob);
            let idx = next_index.entry(spec.level + 1).or_insert(0);
            by_address.insert((spec.level + 1, *idx), child);
            *idx += 1;
        }
    }
    b.finish()
}

/// Instantiates the scenario's model, barriers and equation data.
pub fn realize<S: Scalar>(sc: &Scenario) -> Result<Realized<S>> {
    sc.validate_shallow()?;
    let mut family_barriers: Option<(AdaptedProcess<S>, AdaptedProcess<S>)> = None;
    let model = match &sc.model {
        ModelSpec::UniformBinary { depth, scale } => {
            let step: S = match scale {
                Some(s) => rat_to_scalar(&parse_field("model.scale", s)?),
                None => S::one(),
            };
            if !step.is_positive() {
                return Err(Error::Parse("model.scale must be positive".into()));
            }
            let times: Vec<S> = (0..=*depth as i64)
                .map(|i| S::from_int(i) * step.clone())
                .collect();
            TreeModel::uniform_binary_on_grid(*depth, times)
        }
        ModelSpec::DeterministicChain { steps } => TreeModel::deterministic_chain(*steps),
        ModelSpec::OscillatingCells { cells } => {
            let fam = oscillating_barrier_family::<S>(*cells)?;
            family_barriers = Some((fam.lower, fam.upper));
            fam.model
        }
        ModelSpec::Explicit { times, nodes } => build_explicit(times, nodes)?,
    };

    let fam_ref = family_barriers.as_ref().map(|(l, u)| (l, u));
    let lower = sc
        .barriers
        .lower
        .as_ref()
        .map(|p| realize_process(&model, p, fam_ref, "barriers.lower"))
        .transpose()?;
    let upper = sc
        .barriers
        .upper
        .as_ref()
        .map(|p| realize_process(&model, p, fam_ref, "barriers.upper"))
        .transpose()?;

    let xi: Vec<S> = match (&sc.generator.xi, sc.generator.xi_rule.as_deref()) {
        (Some(list), _) => {
            if list.len() != model.leaves().len() {
                return Err(Error::Parse(format!(
                    "generator.xi has {} entries, model has {} leaves",
                    list.len(),
                    model.leaves().len()
                )));
            }
            let mut out = Vec::with_capacity(list.len());
            for x in list {
                out.push(rat_to_scalar(&parse_field("generator.xi", x)?));
            }
            out
        }
        (None, Some(rule)) => {
            let (l, u) = match (&lower, &upper) {
                (Some(l), Some(u)) => (l, u),
                _ => {
                    return Err(Error::Parse(
                        "xi-rule requires both barriers".into(),
                    ))
                }
            };
            model
                .leaves()
                .iter()
                .map(|&leaf| {
                    if rule == "midpoint" {
                        (l.at(leaf).clone() + u.at(leaf).clone()) * S::ratio(1, 2)
                    } else {
                        S::min_of(l.at(leaf).clone().pos_part(), u.at(leaf).clone())
                    }
                })
                .collect()
        }
        (None, None) => unreachable!("validated"),
    };

    let f: DriverForm<S> = match &sc.generator.f {
        DriverSpec::Zero => DriverForm::Zero,
        DriverSpec::Affine { a, b } => DriverForm::Affine {
            a: rat_to_scalar(&parse_field("generator.f.a", a)?),
            b: rat_to_scalar(&parse_field("generator.f.b", b)?),
        },
        DriverSpec::MonotoneCubic { c } => {
            let c: Rat = parse_field("generator.f.c", c)?;
            if c.is_negative() {
                return Err(Error::Parse("generator.f.c must be nonnegative".into()));
            }
            DriverForm::MonotoneCubic {
                c: rat_to_scalar(&c),
            }
        }
        DriverSpec::PenaltyComposite { a, b, n, l, m, u } => DriverForm::PenaltyComposite {
            a: rat_to_scalar(&parse_field("generator.f.a", a)?),
            b: rat_to_scalar(&parse_field("generator.f.b", b)?),
            n: rat_to_scalar(&parse_field("generator.f.n", n)?),
            l: rat_to_scalar(&parse_field("generator.f.l", l)?),
            m: rat_to_scalar(&parse_field("generator.f.m", m)?),
            u: rat_to_scalar(&parse_field("generator.f.u", u)?),
        },
    };
    let mu: S = match &sc.generator.mu {
        Some(m) => rat_to_scalar(&parse_field("generator.mu", m)?),
        None => f.natural_mu(),
    };
    let v = match &sc.generator.v {
        Some(list) => {
            if list.len() != model.num_nodes() {
                return Err(Error::Parse(format!(
                    "generator.v has {} entries, model has {} nodes",
                    list.len(),
                    model.num_nodes()
                )));
            }
            let mut v = PredictableIncrements::zero(&model);
            for (i, entry) in list.iter().enumerate() {
                let node = NodeId(i);
                let val: S = rat_to_scalar(&parse_field("generator.v", entry)?);
                if model.children(node).is_empty() && !val.is_zero() {
                    return Err(Error::Parse(format!(
                        "generator.v: nonzero increment at terminal node {i}"
                    )));
                }
                v.set(node, val);
            }
            v
        }
        None => PredictableIncrements::zero(&model),
    };
    let mut gen = GeneratorSpec::new(xi, f, mu, v);
    gen.f_active_below = sc.generator.f_active_below;

    Ok(Realized {
        model,
        lower,
        upper,
        gen,
    })
}

fn sixteenth(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> Rat {
    Rat::ratio(rng.gen_range(lo..=hi), 16)
}

/// Deterministic random scenario on a uniform binary tree: strictly
/// separated barriers in sixteenths with gap at least 1/16, terminal data
/// inside the terminal corridor, and a driver from the catalogue with a
/// consistently declared monotonicity constant.
///
/// `scale` stretches the time grid (`Δt = scale`); drivers with positive
/// slope are only drawn at `scale = 1` so that `μ·Δt < 1` always holds.
pub fn generate_random_scenario(seed: u64, depth: usize, scale: u64) -> Scenario {
    assert!(depth >= 1 && scale >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_nodes = (1usize << (depth + 1)) - 1;
    let num_leaves = 1usize << depth;

    let mut lower = Vec::with_capacity(num_nodes);
    let mut upper = Vec::with_capacity(num_nodes);
    for _ in 0..num_nodes {
        let l = sixteenth(&mut rng, -32, 0);
        let gap = sixteenth(&mut rng, 1, 32);
        upper.push(format_rat(&(l.clone() + gap)));
        lower.push(format_rat(&l));
    }
    let mut xi = Vec::with_capacity(num_leaves);
    for i in 0..num_leaves {
        let leaf = num_nodes - num_leaves + i;
        let l = parse_rat(&lower[leaf]).unwrap();
        let u = parse_rat(&upper[leaf]).unwrap();
        let w = Rat::ratio(rng.gen_range(0..=16), 16);
        xi.push(format_rat(&(l.clone() + (u - l) * w)));
    }

    // only drivers with an exact piecewise-linear implicit step are drawn,
    // so batch runs keep zero residuals in rational mode
    let f = if rng.gen_bool(0.25) {
        DriverSpec::Zero
    } else {
        let b_hi = if scale == 1 { 8 } else { 0 };
        DriverSpec::Affine {
            a: format_rat(&sixteenth(&mut rng, -16, 16)),
            b: format_rat(&sixteenth(&mut rng, -8, b_hi)),
        }
    };

    // an occasional finite-variation part, parent-indexed, zero at leaves
    let v = if rng.gen_bool(0.5) {
        let mut v = vec!["0".to_string(); num_nodes];
        for (i, entry) in v.iter_mut().enumerate().take(num_nodes - num_leaves) {
            let _ = i;
            *entry = format_rat(&sixteenth(&mut rng, -4, 4));
        }
        Some(v)
    } else {
        None
    };

    Scenario {
        model: ModelSpec::UniformBinary {
            depth,
            scale: (scale > 1).then(|| scale.to_string()),
        },
        barriers: BarrierSpec {
            lower: Some(ProcessSpec::Table { values: lower }),
            upper: Some(ProcessSpec::Table { values: upper }),
        },
        generator: GeneratorFile {
            xi: Some(xi),
            xi_rule: None,
            f,
            mu: None,
            v,
            f_active_below: None,
        },
        run: RunSpec {
            seed: Some(seed),
            ..RunSpec::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbsde::{solve_double_reflected, verify_solution};
    use crate::separation::{check_separation, Separation};
    use num_traits::Zero;

    #[test]
    fn parse_and_realize_explicit() {
        let text = r#"
[model]
kind = "explicit"
times = ["0", "1"]

[[model.nodes]]
level = 0
index = 0
children = ["1/5", "3/10", "1/2"]

[barriers]
lower = { kind = "constant", value = "-1" }
upper = { kind = "constant", value = "2" }

[generator]
xi = ["0", "1", "2"]
f = { kind = "zero" }

[run]
mode = "solve"
"#;
        let sc = Scenario::parse(text).unwrap();
        let r = realize::<Rat>(&sc).unwrap();
        assert_eq!(r.model.leaves().len(), 3);
        let sol = solve_double_reflected(
            &r.model,
            &r.gen,
            r.lower.as_ref().unwrap(),
            r.upper.as_ref().unwrap(),
        )
        .unwrap();
        // E xi = 0·1/5 + 1·3/10 + 2·1/2 = 13/10
        assert_eq!(*sol.y.at(r.model.root()), Rat::ratio(13, 10));
    }

    #[test]
    fn parse_errors_are_reported() {
        assert!(matches!(
            Scenario::parse("not toml at all ["),
            Err(Error::Parse(_))
        ));
        let bad_mode = r#"
[model]
kind = "uniform-binary"
depth = 1

[generator]
xi = ["0", "0"]
f = { kind = "zero" }

[run]
mode = "dance"
"#;
        match Scenario::parse(bad_mode) {
            Err(Error::Parse(msg)) => assert!(msg.contains("dance")),
            other => panic!("expected parse error, got {other:?}"),
        }

        let bad_prob = r#"
[model]
kind = "explicit"
times = ["0", "1"]

[[model.nodes]]
level = 0
index = 0
children = ["1/2", "1/3"]

[generator]
xi = ["0", "0"]
f = { kind = "zero" }

[run]
mode = "solve"
"#;
        let sc = Scenario::parse(bad_prob).unwrap();
        match realize::<Rat>(&sc) {
            Err(Error::InvalidTree(msg)) => assert!(msg.contains("sum")),
            other => panic!("expected invalid tree, got {other:?}"),
        }
    }

    #[test]
    fn serialization_round_trip_is_canonical() {
        let sc = generate_random_scenario(7, 2, 1);
        let text = sc.serialize();
        let back = Scenario::parse(&text).unwrap();
        assert_eq!(back, sc);
        assert_eq!(back.serialize(), text);
    }

    #[test]
    fn random_scenarios_deterministic_and_strict() {
        assert_eq!(
            generate_random_scenario(1, 3, 1).serialize(),
            generate_random_scenario(1, 3, 1).serialize()
        );
        assert_ne!(
            generate_random_scenario(1, 3, 1).serialize(),
            generate_random_scenario(2, 3, 1).serialize()
        );
        for seed in 0..20 {
            let sc = generate_random_scenario(seed, 3, 1);
            let r = realize::<Rat>(&sc).unwrap();
            let (l, u) = (r.lower.as_ref().unwrap(), r.upper.as_ref().unwrap());
            assert_eq!(
                check_separation(&r.model, l, u).unwrap(),
                Separation::Strict
            );
            let sol = solve_double_reflected(&r.model, &r.gen, l, u).unwrap();
            let report =
                verify_solution(&r.model, &r.gen, Some(l), Some(u), &sol, Rat::zero())
                    .unwrap();
            assert!(report.passes(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn scaled_grid_realizes_with_wide_steps() {
        let sc = generate_random_scenario(3, 2, 16);
        let r = realize::<Rat>(&sc).unwrap();
        assert_eq!(r.model.dt(0), Rat::from_int(16));
        let (l, u) = (r.lower.as_ref().unwrap(), r.upper.as_ref().unwrap());
        let sol = solve_double_reflected(&r.model, &r.gen, l, u).unwrap();
        let report =
            verify_solution(&r.model, &r.gen, Some(l), Some(u), &sol, Rat::zero()).unwrap();
        assert!(report.passes(), "{report}");
    }

    #[test]
    fn float_realization_matches_rational_closely() {
        let sc = generate_random_scenario(11, 2, 1);
        let rr = realize::<Rat>(&sc).unwrap();
        let rf = realize::<f64>(&sc).unwrap();
        let sr = solve_double_reflected(
            &rr.model,
            &rr.gen,
            rr.lower.as_ref().unwrap(),
            rr.upper.as_ref().unwrap(),
        )
        .unwrap();
        let sf = solve_double_reflected(
            &rf.model,
            &rf.gen,
            rf.lower.as_ref().unwrap(),
            rf.upper.as_ref().unwrap(),
        )
        .unwrap();
        let y_rat = crate::num::Scalar::to_f64(sr.y.at(rr.model.root()));
        let y_flt = *sf.y.at(rf.model.root());
        assert!((y_rat - y_flt).abs() < 1e-12);
    }

    #[test]
    fn oscillating_model_with_family_barriers() {
        let text = r#"
[model]
kind = "oscillating-cells"
cells = 3

[barriers]
lower = { kind = "family" }
upper = { kind = "family" }

[generator]
xi-rule = "midpoint"
f = { kind = "zero" }

[run]
mode = "separation"
"#;
        let sc = Scenario::parse(text).unwrap();
        let r = realize::<Rat>(&sc).unwrap();
        assert_eq!(r.model.leaves().len(), 3);
        let l = r.lower.as_ref().unwrap();
        let u = r.upper.as_ref().unwrap();
        for &leaf in r.model.leaves() {
            let mid = (l.at(leaf).clone() + u.at(leaf).clone()) * Rat::ratio(1, 2);
            assert_eq!(r.gen.xi[r.model.index_in_level(leaf)], mid);
        }
    }
}
