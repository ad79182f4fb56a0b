use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde_json::{json, Value};
use sopf::admm::{solve, InitPolicy, RhoPolicy, SolveReportFile, SolverConfig};
use sopf::baseline::{evaluate_policy, online_second_stage, PolicyParams, QwSource, ScenarioStatus};
use sopf::exactness::check_exactness;
use sopf::experiment::{
    content_hash, run_experiment, ArtifactWriter, ExperimentError, ExperimentSpec, ExperimentSummary, NetworkRef,
};
use sopf::network::{day_type_feeder, local_control_feeder, rho_study_feeder, FeederSpec, Network};
use sopf::program::{CostModel, ObjectiveConfig, SolutionFile};
use sopf::scenario::{fast_forward_reduce, sample_scenarios, Correlation, MeanRatio, Metric, ScenarioSet};
use sopf::{Program, Solution};
use thiserror::Error;

use crate::{
    Baseline, BuildNetwork, CheckExactness, Command, CorrelationArg, InitArg, MetricArg, ObjectiveArgs, OnlineEval,
    Preset, Reduce, Report, RhoPolicyArg, RunExperiment, Solve, SolverArgs, GenerateScenarios,
};

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0:#}")]
    Validation(anyhow::Error),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Validation(_) => 2,
            Failure::NotConverged(_) => 3,
            Failure::Infeasible(_) => 4,
        }
    }
}

type Outcome = Result<(), Failure>;

trait Classify<T> {
    fn invalid(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
    fn runtime(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn invalid(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.with_context(what).map_err(Failure::Validation)
    }

    fn runtime(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.with_context(what).map_err(Failure::Runtime)
    }
}

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::BuildNetwork(a) => build_network(a),
        Command::GenerateScenarios(a) => generate_scenarios(a),
        Command::Reduce(a) => reduce(a),
        Command::Solve(a) => solve_cmd(a),
        Command::CheckExactness(a) => check_exactness_cmd(a),
        Command::Baseline(a) => baseline(a),
        Command::OnlineEval(a) => online_eval(a),
        Command::RunExperiment(a) => run_experiment_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn write_bytes(path: &Path, data: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).runtime(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, data).runtime(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let mut text = serde_json::to_vec_pretty(value).runtime(|| format!("serializing {}", path.display()))?;
    text.push(b'\n');
    write_bytes(path, &text)
}

/// `<dir>/<stem><suffix>` next to `out`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}{suffix}"))
}

fn write_csv<S: serde::Serialize>(path: &Path, rows: &[S]) -> Outcome {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Failure::Validation(anyhow!("bad output path")))?;
    let mut w = ArtifactWriter::new(dir).map_err(|e| Failure::Runtime(e.into()))?;
    w.csv(&name.to_string_lossy(), rows).map_err(|e| Failure::Runtime(e.into()))
}

/// Sidecar `<stem>.manifest.json` describing how `out` was produced.
fn write_manifest(out: &Path, command: &str, config: Value, seed: Option<u64>) -> Outcome {
    let canonical = serde_json::to_vec(&config).expect("json values serialize");
    let manifest = json!({
        "command": command,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config_hash": content_hash(&canonical),
        "seed": seed,
        "config": config,
    });
    write_json(&sibling(out, ".manifest.json"), &manifest)
}

fn load_network(path: &Path) -> Result<Network, Failure> {
    Network::load_json(path).invalid(|| format!("loading network {}", path.display()))
}

fn load_scenarios(path: &Path) -> Result<ScenarioSet, Failure> {
    ScenarioSet::load_json(path).invalid(|| format!("loading scenarios {}", path.display()))
}

/// Per-unit first-stage `pc` from a solve report or a bare solution file.
fn load_pc(path: &Path, net: &Network) -> Result<Vec<f64>, Failure> {
    let text = fs::read_to_string(path).invalid(|| format!("reading {}", path.display()))?;
    let file: SolutionFile = match serde_json::from_str::<SolveReportFile>(&text) {
        Ok(rep) => rep.solution,
        Err(_) => serde_json::from_str(&text)
            .invalid(|| format!("{} is neither a solve report nor a solution", path.display()))?,
    };
    let sol: Solution = Solution::from_file(&file, net).invalid(|| format!("pc from {}", path.display()))?;
    Ok(sol.pc)
}

fn solver_config(a: &SolverArgs) -> Result<SolverConfig, Failure> {
    let cfg = SolverConfig {
        rho: a.rho,
        rho_policy: match a.rho_policy {
            RhoPolicyArg::Fixed => RhoPolicy::Fixed,
            RhoPolicyArg::Adaptive => RhoPolicy::Adaptive,
        },
        eps_primal: a.eps,
        eps_dual: a.eps,
        socp_gap_tol: a.gap_tol,
        max_iters: a.max_iters,
        init: match a.init {
            InitArg::Zeros => InitPolicy::Zeros,
            InitArg::Random => InitPolicy::Random,
        },
        seed: a.seed,
        workers: a.workers,
    };
    cfg.validate().invalid(|| "solver options".into())?;
    Ok(cfg)
}

fn objective_config(a: &ObjectiveArgs) -> Result<ObjectiveConfig, Failure> {
    let cfg = ObjectiveConfig {
        cost: CostModel::PiecewiseLinear { a: a.cost_a, b: a.cost_b },
        k_loss: a.k_loss,
    };
    cfg.validate().invalid(|| "objective options".into())?;
    Ok(cfg)
}

fn build_network(a: BuildNetwork) -> Outcome {
    let spec: FeederSpec = match (a.preset, &a.spec) {
        (Some(Preset::DayType), _) => day_type_feeder(),
        (Some(Preset::LocalControl), _) => local_control_feeder(a.seed),
        (Some(Preset::RhoStudy), _) => rho_study_feeder(a.seed),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).invalid(|| format!("reading {}", path.display()))?;
            let mut spec: FeederSpec =
                serde_json::from_str(&text).invalid(|| format!("parsing feeder spec {}", path.display()))?;
            spec.pv.seed = a.seed;
            spec
        }
        (None, None) => return Err(Failure::Validation(anyhow!("pass --preset or --spec"))),
    };
    let net = spec.build().invalid(|| "building the feeder".into())?;
    write_json(&a.out, &net.to_file())?;
    write_manifest(&a.out, "build-network", json!({ "feeder": spec }), Some(a.seed))?;
    println!("{} nodes, {} lines -> {}", net.len(), net.num_lines(), a.out.display());
    Ok(())
}

fn generate_scenarios(a: GenerateScenarios) -> Outcome {
    let net = load_network(&a.network)?;
    let correlation = match a.correlation {
        CorrelationArg::Independent => Correlation::Independent,
        CorrelationArg::CommonFactor => Correlation::CommonFactor,
    };
    let set = sample_scenarios(&net, &MeanRatio::Global(a.mean_ratio), a.count, a.seed, correlation)
        .invalid(|| "sampling scenarios".into())?;
    write_json(&a.out, &set.to_file())?;
    let config = json!({
        "network": a.network, "mean_ratio": a.mean_ratio, "count": a.count, "correlation": correlation,
    });
    write_manifest(&a.out, "generate-scenarios", config, Some(a.seed))?;
    println!("{} scenarios -> {}", set.len(), a.out.display());
    Ok(())
}

fn reduce(a: Reduce) -> Outcome {
    let full = load_scenarios(&a.scenarios)?;
    let metric = match a.metric {
        MetricArg::Euclidean => Metric::Euclidean,
        MetricArg::L1 => Metric::L1,
    };
    let reduced = fast_forward_reduce(&full, a.to, metric).invalid(|| "reducing scenarios".into())?;
    write_json(&a.out, &reduced.set.to_file())?;
    let config = json!({ "scenarios": a.scenarios, "to": a.to, "metric": metric });
    write_manifest(&a.out, "reduce", config, Some(full.seed()))?;
    println!(
        "kept {:?}, distance {:.6}, smallest probability {:.6} -> {}",
        reduced.picked,
        reduced.distance,
        reduced.min_probability,
        a.out.display()
    );
    Ok(())
}

fn solve_cmd(a: Solve) -> Outcome {
    let net = load_network(&a.network)?;
    let set = load_scenarios(&a.scenarios)?;
    let solver = solver_config(&a.solver)?;
    let objective = objective_config(&a.objective)?;
    let prog = Program::assemble(&net, &set, &objective).invalid(|| "assembling the program".into())?;
    let rep = solve(&prog, &solver).runtime(|| "solving".into())?;
    write_json(&a.out, &rep.to_file(&net))?;
    write_csv(&sibling(&a.out, ".trace.csv"), &rep.trace)?;
    write_json(&sibling(&a.out, ".timing.json"), &rep.timing)?;
    let config = json!({
        "network": a.network, "scenarios": a.scenarios, "solver": solver, "objective": objective,
    });
    write_manifest(&a.out, "solve", config, Some(solver.seed))?;
    println!(
        "converged: {}, iterations: {}, objective: {:.6}, losses: {:.6} MW, gap: {:.3e}",
        rep.converged, rep.iterations, rep.objective.total, rep.objective.expected_losses_mw, rep.socp_gap
    );
    if rep.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!("no convergence within {} iterations", rep.iterations)))
    }
}

fn check_exactness_cmd(a: CheckExactness) -> Outcome {
    let net = load_network(&a.network)?;
    let set = load_scenarios(&a.scenarios)?;
    let prog = Program::assemble(&net, &set, &ObjectiveConfig::default()).invalid(|| "assembling".into())?;
    let verdict = check_exactness(&prog);
    let (mode, pass) = if a.m_independent {
        ("m-independent", verdict.m_independent)
    } else {
        ("per-scenario", verdict.all_scenarios_pass())
    };
    let out = json!({ "mode": mode, "pass": pass, "verdict": verdict });
    match &a.out {
        Some(path) => {
            write_json(path, &out)?;
            write_manifest(path, "check-exactness", json!({ "network": a.network, "scenarios": a.scenarios, "mode": mode }), None)?;
            println!("{mode}: {}", if pass { "pass" } else { "fail" });
        }
        None => println!("{}", serde_json::to_string_pretty(&out).expect("json values serialize")),
    }
    Ok(())
}

fn baseline(a: Baseline) -> Outcome {
    let net = load_network(&a.network)?;
    let test = load_scenarios(&a.test_scenarios)?;
    let pc = load_pc(&a.pc, &net)?;
    let prog = Program::assemble(&net, &test, &ObjectiveConfig::default()).invalid(|| "assembling".into())?;
    let mut results = Vec::new();
    for &k in &a.k {
        let params = PolicyParams::new(k).invalid(|| "policy gain".into())?;
        let metrics = evaluate_policy(&prog, &pc, QwSource::Local(params), &test)
            .invalid(|| format!("evaluating K = {k}"))?;
        write_csv(&sibling(&a.out, &format!(".cdf_k{k}.csv")), &metrics.cdf)?;
        println!(
            "K = {k}: losses {:.6} MW, max deviation {:.4}, not converged {}",
            metrics.expected_losses_mw, metrics.max_deviation, metrics.not_converged
        );
        results.push(json!({ "k": k, "metrics": metrics }));
    }
    write_json(&a.out, &results)?;
    let config = json!({ "network": a.network, "pc": a.pc, "k": a.k, "test_scenarios": a.test_scenarios });
    write_manifest(&a.out, "baseline", config, Some(test.seed()))
}

fn online_eval(a: OnlineEval) -> Outcome {
    let net = load_network(&a.network)?;
    let test = load_scenarios(&a.test_scenarios)?;
    let pc = load_pc(&a.pc, &net)?;
    let solver = solver_config(&a.solver)?;
    let objective = objective_config(&a.objective)?;
    let mut prog = Program::assemble(&net, &test, &objective).invalid(|| "assembling".into())?;
    if a.no_reactive {
        prog = prog.without_reactive_support();
    }
    let rep = online_second_stage(&prog, &pc, &test, &solver).runtime(|| "online re-solve".into())?;
    let scenarios: Vec<Value> = rep
        .scenarios
        .iter()
        .map(|s| {
            json!({
                "status": s.status,
                "converged": s.converged,
                "iterations": s.iterations,
                "final_r": s.final_r,
                "final_s": s.final_s,
                "socp_gap": s.socp_gap,
                "audit_worst": s.audit_worst,
                "objective": s.objective,
                "solution": s.solution.to_file(&net),
            })
        })
        .collect();
    let out = json!({
        "infeasible": rep.infeasible,
        "unresolved": rep.unresolved,
        "infeasibility_rule": rep.infeasibility_rule,
        "expected_objective": rep.expected_objective(&test),
        "scenarios": scenarios,
    });
    write_json(&a.out, &out)?;
    let config = json!({
        "network": a.network, "pc": a.pc, "test_scenarios": a.test_scenarios,
        "solver": solver, "objective": objective, "no_reactive": a.no_reactive,
    });
    write_manifest(&a.out, "online-eval", config, Some(solver.seed))?;
    let feasible = rep.scenarios.iter().filter(|s| s.status == ScenarioStatus::Feasible).count();
    println!(
        "feasible {feasible}, infeasible {}, unresolved {} of {}",
        rep.infeasible,
        rep.unresolved,
        rep.scenarios.len()
    );
    if rep.infeasible > 0 {
        Err(Failure::Infeasible(format!("{} infeasible test scenarios", rep.infeasible)))
    } else if rep.unresolved > 0 {
        Err(Failure::NotConverged(format!("{} unresolved test scenarios", rep.unresolved)))
    } else {
        Ok(())
    }
}

fn run_experiment_cmd(a: RunExperiment) -> Outcome {
    let text = fs::read_to_string(&a.spec).invalid(|| format!("reading {}", a.spec.display()))?;
    let mut spec: ExperimentSpec =
        serde_json::from_str(&text).invalid(|| format!("parsing experiment spec {}", a.spec.display()))?;
    if let NetworkRef::File(path) = &mut spec.network {
        if path.is_relative() {
            let base = a.spec.parent().unwrap_or(Path::new("."));
            *path = base.join(&*path);
        }
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let summary = run_experiment(&spec, &a.out).map_err(|e| match e {
        ExperimentError::Invalid(_) => Failure::Validation(e.into()),
        other => Failure::Runtime(other.into()),
    })?;
    print!("{}", summary.render());
    let stuck: Vec<&str> = summary
        .day_types
        .iter()
        .filter(|d| !d.converged)
        .map(|d| d.name.as_str())
        .collect();
    if stuck.is_empty() {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!("not converged: {}", stuck.join(", "))))
    }
}

fn report(a: Report) -> Outcome {
    let summary = ExperimentSummary::load_json(a.dir.join("summary.json")).map_err(|e| Failure::Validation(e.into()))?;
    print!("{}", summary.render());
    Ok(())
}
