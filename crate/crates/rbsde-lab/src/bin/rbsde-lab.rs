//! Command-line front end: scenario ingestion, run orchestration, CSV
//! artifacts and a human-readable summary.
//!
//! Exit codes: 0 when every check passes, 1 on a verification failure,
//! 2 on an input error (parse failure, invalid model, enumeration refusal).

use clap::Parser;
use rbsde_lab::dynkin::{game_values_bruteforce, saddle_check, GameContext};
use rbsde_lab::filtration::NodeId;
use rbsde_lab::num::{parse_rat, rat_to_scalar, Scalar};
use rbsde_lab::penalization::{double_penalization_sweep, diagonal_convergence, PenaltyGrid};
use rbsde_lab::rbsde::{
    solve_bsde, solve_double_reflected, solve_lower_reflected, solve_upper_reflected,
    verify_solution, RbsdeSolution,
};
use rbsde_lab::scenario::{generate_random_scenario, realize, Realized, Scenario};
use rbsde_lab::separation::{
    check_separation, construct_midpoint_process, min_variation_lower_bound,
    sandwich_semimartingale, Separation,
};
use rbsde_lab::{Error, Rat};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "rbsde-lab", about = "Reflected BSDE laboratory on finite probability trees")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,

    /// Override the scenario's run mode: solve | penalize | separation | game | batch.
    #[arg(long)]
    mode: Option<String>,

    /// Directory for CSV artifacts; omitted means no files are written.
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Override the numeric mode: rational | float.
    #[arg(long)]
    numeric: Option<String>,

    /// Verification tolerance (rational literal; float mode default 1e-9).
    #[arg(long)]
    tol: Option<String>,

    /// Override the batch seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the enumeration budget (stopping-time pairs).
    #[arg(long)]
    budget: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> rbsde_lab::Result<bool> {
    let text = std::fs::read_to_string(&cli.scenario)?;
    let mut sc = Scenario::parse(&text)?;
    if let Some(mode) = &cli.mode {
        sc.run.mode = mode.clone();
    }
    if let Some(numeric) = &cli.numeric {
        sc.run.numeric = numeric.clone();
    }
    if let Some(seed) = cli.seed {
        sc.run.seed = Some(seed);
    }
    if let Some(budget) = cli.budget {
        sc.run.budget = Some(budget);
    }
    if let Some(tol) = &cli.tol {
        sc.run.tol = Some(tol.clone());
    }
    // re-validate after flag overrides
    let reparsed = Scenario::parse(&sc.serialize())?;

    match reparsed.run.numeric.as_str() {
        "rational" => dispatch::<Rat>(cli, &reparsed),
        "float" => dispatch::<f64>(cli, &reparsed),
        other => Err(Error::Parse(format!("unknown numeric mode {other:?}"))),
    }
}

fn tolerance<S: Scalar>(sc: &Scenario) -> rbsde_lab::Result<S> {
    match &sc.run.tol {
        Some(t) => {
            let r = parse_rat(t).ok_or_else(|| Error::Parse(format!("bad tol {t:?}")))?;
            Ok(rat_to_scalar(&r))
        }
        None => Ok(if S::EXACT {
            S::zero()
        } else {
            S::ratio(1, 1_000_000_000)
        }),
    }
}

fn dispatch<S: Scalar>(cli: &Cli, sc: &Scenario) -> rbsde_lab::Result<bool> {
    match sc.run.mode.as_str() {
        "solve" => mode_solve::<S>(cli, sc),
        "penalize" => mode_penalize::<S>(cli, sc),
        "separation" => mode_separation::<S>(cli, sc),
        "game" => mode_game::<S>(cli, sc),
        "batch" => mode_batch::<S>(cli, sc),
        other => Err(Error::Parse(format!("unknown run mode {other:?}"))),
    }
}

fn write_artifact(dir: &Option<PathBuf>, name: &str, content: &str) -> rbsde_lab::Result<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(Path::new(dir).join(name), content)?;
    }
    Ok(())
}

fn solution_csv<S: Scalar>(r: &Realized<S>, sol: &RbsdeSolution<S>) -> String {
    let mut out = String::from("level,index,y,dk,da\n");
    for i in 0..r.model.num_nodes() {
        let n = NodeId(i);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.model.level_of(n),
            r.model.index_in_level(n),
            sol.y.at(n),
            sol.k.at(n),
            sol.a.at(n)
        ));
    }
    out
}

fn mode_solve<S: Scalar>(cli: &Cli, sc: &Scenario) -> rbsde_lab::Result<bool> {
    let r = realize::<S>(sc)?;
    let sol = match (&r.lower, &r.upper) {
        (Some(l), Some(u)) => solve_double_reflected(&r.model, &r.gen, l, u)?,
        (Some(l), None) => solve_lower_reflected(&r.model, &r.gen, l)?,
        (None, Some(u)) => solve_upper_reflected(&r.model, &r.gen, u)?,
        (None, None) => solve_bsde(&r.model, &r.gen)?,
    };
    let report = verify_solution(
        &r.model,
        &r.gen,
        r.lower.as_ref(),
        r.upper.as_ref(),
        &sol,
        tolerance::<S>(sc)?,
    )?;
    println!("mode: solve ({})", sc.run.numeric);
    println!("Y0 = {}", sol.y.at(r.model.root()));
    println!("{report}");
    write_artifact(&cli.out_dir, "solution.csv", &solution_csv(&r, &sol))?;
    Ok(report.passes())
}

fn mode_penalize<S: Scalar>(cli: &Cli, sc: &Scenario) -> rbsde_lab::Result<bool> {
    let r = realize::<S>(sc)?;
    let (lower, upper) = match (&r.lower, &r.upper) {
        (Some(l), Some(u)) => (l, u),
        _ => {
            return Err(Error::Parse(
                "penalize mode needs both barriers".into(),
            ))
        }
    };
    let grid = match &sc.run.penalty_grid {
        Some(ns) => PenaltyGrid::new(ns.clone(), ns.clone())?,
        None => PenaltyGrid::default_grid(),
    };
    let report = double_penalization_sweep(&r.model, &r.gen, lower, upper, &grid)?;
    println!("mode: penalize ({})", sc.run.numeric);
    println!("n,m,y0,max_gap_to_oracle");
    for c in &report.cells {
        println!("{},{},{},{}", c.n, c.m, c.y0, c.gap_to_oracle);
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    let diag = diagonal_convergence(
        &r.model,
        &r.gen,
        lower,
        upper,
        &S::ratio(1, 1_000_000),
        1,
        1 << 22,
    )?;
    let (n_last, gap_last) = diag.steps.last().expect("nonempty");
    println!(
        "diagonal: gap {gap_last} at n = {n_last} ({}, {})",
        if diag.met { "target met" } else { "target missed" },
        if diag.monotone { "nonincreasing" } else { "NOT nonincreasing" }
    );
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_artifact(
        &cli.out_dir,
        "penalization.csv",
        &String::from_utf8(csv).expect("utf8"),
    )?;
    Ok(report.warnings.is_empty() && diag.met && diag.monotone)
}

fn mode_separation<S: Scalar>(cli: &Cli, sc: &Scenario) -> rbsde_lab::Result<bool> {
    let r = realize::<S>(sc)?;
    let (lower, upper) = match (&r.lower, &r.upper) {
        (Some(l), Some(u)) => (l, u),
        _ => {
            return Err(Error::Parse(
                "separation mode needs both barriers".into(),
            ))
        }
    };
    println!("mode: separation ({})", sc.run.numeric);
    match check_separation(&r.model, lower, upper)? {
        Separation::Strict => println!("separation: strict"),
        Separation::Weak { touching } => {
            println!("separation: weak ({} touching nodes)", touching.len())
        }
        Separation::Violated { crossing } => {
            println!("separation: violated ({} crossing nodes)", crossing.len());
            return Ok(false);
        }
    }
    let c = construct_midpoint_process(&r.model, lower, upper)?;
    println!("midpoint stages: {}", c.taus.len());
    println!("E|H|_T = {}", c.total_variation);
    let bound = min_variation_lower_bound(&r.model, lower, upper)?;
    println!("min-variation lower bound = {bound}");
    let sandwich = sandwich_semimartingale(&r.model, lower, upper)?;
    println!("sandwich Y0 = {}", sandwich.y.at(r.model.root()));
    let mut csv = String::from("level,index,h,lower,upper\n");
    for i in 0..r.model.num_nodes() {
        let n = NodeId(i);
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.model.level_of(n),
            r.model.index_in_level(n),
            c.h.at(n),
            lower.at(n),
            upper.at(n)
        ));
    }
    write_artifact(&cli.out_dir, "midpoint.csv", &csv)?;
    Ok(bound <= c.total_variation)
}

fn mode_game<S: Scalar>(_cli: &Cli, sc: &Scenario) -> rbsde_lab::Result<bool> {
    let r = realize::<S>(sc)?;
    let (lower, upper) = match (&r.lower, &r.upper) {
        (Some(l), Some(u)) => (l, u),
        _ => return Err(Error::Parse("game mode needs both barriers".into())),
    };
    let budget = sc.run.budget.unwrap_or(1_000_000);
    let tol = tolerance::<S>(sc)?;
    let ctx = GameContext::new(&r.model, &r.gen, lower, upper, tol)?;
    let gv = game_values_bruteforce(&ctx, r.model.root(), budget)?;
    let y0 = ctx.solution.y.at(r.model.root()).clone();
    println!("mode: game ({})", sc.run.numeric);
    println!("lower value = {}", gv.lower);
    println!("upper value = {}", gv.upper);
    println!("solver Y0   = {y0}");
    let mut ok = gv.lower == gv.upper && gv.lower == y0;
    let eps_list = match &sc.run.eps {
        Some(list) => list.clone(),
        None => vec!["1/10".into(), "1/100".into()],
    };
    for text in &eps_list {
        let eps: S = rat_to_scalar(
            &parse_rat(text).ok_or_else(|| Error::Parse(format!("bad eps {text:?}")))?,
        );
        let cert = saddle_check(&ctx, r.model.root(), &eps, budget)?;
        println!(
            "saddle eps = {text}: sigma margin {}, tau margin {} -> {}",
            cert.sigma_margin.0,
            cert.tau_margin.0,
            if cert.pass { "pass" } else { "FAIL" }
        );
        ok &= cert.pass;
    }
    Ok(ok)
}

fn mode_batch<S: Scalar>(_cli: &Cli, sc: &Scenario) -> rbsde_lab::Result<bool> {
    let depth = sc.run.depth.unwrap_or(3);
    let count = sc.run.count.unwrap_or(20);
    let seed0 = sc.run.seed.unwrap_or(0);
    let budget = sc.run.budget.unwrap_or(1_000_000);
    println!("mode: batch ({}) depth {depth}, {count} scenarios", sc.run.numeric);
    let mut all_ok = true;
    for k in 0..count {
        let seed = seed0 + k as u64;
        let scen = generate_random_scenario(seed, depth, 1);
        let r = realize::<S>(&scen)?;
        let (lower, upper) = (r.lower.as_ref().unwrap(), r.upper.as_ref().unwrap());
        let tol = tolerance::<S>(sc)?;
        let outcome = (|| -> rbsde_lab::Result<bool> {
            let ctx = GameContext::new(&r.model, &r.gen, lower, upper, tol.clone())?;
            let gv = game_values_bruteforce(&ctx, r.model.root(), budget)?;
            let y0 = ctx.solution.y.at(r.model.root()).clone();
            let mut ok = gv.lower == gv.upper && gv.lower == y0;
            for eps in [S::ratio(1, 10), S::ratio(1, 100)] {
                ok &= saddle_check(&ctx, r.model.root(), &eps, budget)?.pass;
            }
            Ok(ok)
        })();
        let ok = outcome?;
        println!("seed {seed}: {}", if ok { "pass" } else { "FAIL" });
        all_ok &= ok;
    }
    Ok(all_ok)
}
