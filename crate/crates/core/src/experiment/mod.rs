//! Reproducible study runs: feeder, scenarios per day type, stochastic solves,
//! and the local-control comparison, written to one artifact directory.

mod seed;
mod table;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{solve, SolverConfig, TraceRow};
use crate::baseline::{evaluate_policy, online_second_stage, PolicyMetrics, PolicyParams, QwSource};
use crate::network::{day_type_feeder, FeederSpec, Network};
use crate::program::{ObjectiveConfig, StochasticProgram};
use crate::scenario::{fast_forward_reduce, sample_scenarios, Correlation, MeanRatio, Metric, ScenarioSet};

pub use seed::{content_hash, derive_seed};
pub use table::{render, sig4};

pub const ARTIFACT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    Invalid(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn stage<E>(name: impl Into<String>) -> impl FnOnce(E) -> ExperimentError
where
    E: std::error::Error + Send + Sync + 'static,
{
    let name = name.into();
    move |e| ExperimentError::Stage {
        stage: name,
        source: Box::new(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkRef {
    Feeder(FeederSpec),
    /// Network JSON, relative paths resolved by the caller.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayType {
    pub name: String,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    /// Day type whose first-stage solution is evaluated.
    pub day_type: String,
    pub k_values: Vec<f64>,
    pub test_scenarios: usize,
    /// Re-solve every test scenario with `pc` pinned and evaluate the result
    /// next to the local policy.
    pub online: bool,
    pub online_solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: String,
    pub network: NetworkRef,
    pub day_types: Vec<DayType>,
    pub generate: usize,
    pub reduce_to: usize,
    pub objective: ObjectiveConfig,
    pub solver: SolverConfig,
    pub baseline: Option<BaselineSpec>,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "day-types".into(),
            network: NetworkRef::Feeder(day_type_feeder()),
            day_types: [("cloudy", 0.3), ("partly", 0.6), ("sunny", 0.9)]
                .into_iter()
                .map(|(name, mean_ratio)| DayType {
                    name: name.into(),
                    mean_ratio,
                })
                .collect(),
            generate: 1000,
            reduce_to: 7,
            objective: ObjectiveConfig::default(),
            solver: SolverConfig::default(),
            baseline: None,
            seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Invalid(msg));
        if self.day_types.is_empty() {
            return bad("at least one day type is required".into());
        }
        if self.generate == 0 || self.reduce_to == 0 || self.reduce_to > self.generate {
            return bad(format!("need 0 < reduce_to ({}) <= generate ({})", self.reduce_to, self.generate));
        }
        let mut names = std::collections::BTreeSet::new();
        for d in &self.day_types {
            if !(d.mean_ratio > 0.0 && d.mean_ratio < 1.0) {
                return bad(format!("day type `{}`: mean ratio must lie in (0, 1)", d.name));
            }
            if d.name.is_empty() || !d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return bad(format!("day type name `{}` must be a non-empty [A-Za-z0-9_-] string", d.name));
            }
            if !names.insert(&d.name) {
                return bad(format!("duplicate day type `{}`", d.name));
            }
        }
        self.objective
            .validate()
            .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        self.solver
            .validate()
            .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        if let Some(b) = &self.baseline {
            if !names.contains(&b.day_type) {
                return bad(format!("baseline day type `{}` is not defined", b.day_type));
            }
            if b.test_scenarios == 0 {
                return bad("baseline needs at least one test scenario".into());
            }
            for &k in &b.k_values {
                PolicyParams::new(k).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
            }
            b.online_solver
                .validate()
                .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        content_hash(&serde_json::to_vec(self).expect("spec serializes"))
    }
}

/// One row of the day-type table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayTypeRow {
    pub name: String,
    pub mean_ratio: f64,
    pub scenarios: usize,
    pub reduction_distance: f64,
    pub expected_losses_mw: f64,
    pub negative_utility: f64,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_rho: f64,
    pub socp_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub label: String,
    pub k: Option<f64>,
    pub expected_losses_mw: f64,
    pub max_deviation: f64,
    pub not_converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub day_type: String,
    pub test_scenarios: usize,
    pub rows: Vec<PolicyRow>,
    pub online_infeasible: Option<usize>,
    pub online_unresolved: Option<usize>,
    pub infeasibility_rule: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub day_types: Vec<DayTypeRow>,
    pub baseline: Option<BaselineSummary>,
}

impl ExperimentSummary {
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(stage(format!("reading {}", path.display())))
    }

    /// Text tables, numbers at four significant digits.
    pub fn render(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .day_types
            .iter()
            .map(|d| {
                vec![
                    d.name.clone(),
                    sig4(d.mean_ratio),
                    sig4(d.expected_losses_mw),
                    sig4(d.negative_utility),
                    sig4(d.objective),
                    d.iterations.to_string(),
                    d.converged.to_string(),
                ]
            })
            .collect();
        let mut out = render(
            &["day type", "mean ratio", "losses (MW)", "neg. utility", "objective", "iterations", "converged"],
            &rows,
        );
        if let Some(b) = &self.baseline {
            out.push('\n');
            let rows: Vec<Vec<String>> = b
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.label.clone(),
                        sig4(r.expected_losses_mw),
                        sig4(r.max_deviation),
                        r.not_converged.to_string(),
                    ]
                })
                .collect();
            out.push_str(&render(&["policy", "losses (MW)", "max deviation", "not converged"], &rows));
            if let Some(n) = b.online_infeasible {
                out.push_str(&format!("\ninfeasible test scenarios: {n} of {}\n", b.test_scenarios));
            }
        }
        out
    }
}

/// Wall-clock seconds per stage, kept apart from the reproducible outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub tool_version: String,
    pub spec_hash: String,
    pub seed: u64,
    pub derived_seeds: BTreeMap<String, u64>,
    pub files: Vec<String>,
}

/// Writes JSON, CSV and text artifacts under one directory and records them.
pub struct ArtifactWriter {
    root: PathBuf,
    files: Vec<String>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self, ExperimentError> {
        fs::create_dir_all(root).map_err(|source| ExperimentError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn bytes(&mut self, rel: &str, data: &[u8]) -> Result<(), ExperimentError> {
        let path = self.root.join(rel);
        let io = |source| ExperimentError::Io {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        fs::write(&path, data).map_err(io)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    pub fn json<S: Serialize>(&mut self, rel: &str, value: &S) -> Result<(), ExperimentError> {
        let mut text = serde_json::to_vec_pretty(value).map_err(stage(format!("serializing {rel}")))?;
        text.push(b'\n');
        self.bytes(rel, &text)
    }

    pub fn csv<S: Serialize>(&mut self, rel: &str, rows: &[S]) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(stage(format!("writing {rel}")))?;
        }
        let data = w.into_inner().map_err(|e| ExperimentError::Stage {
            stage: format!("writing {rel}"),
            source: Box::new(e.into_error()),
        })?;
        self.bytes(rel, &data)
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

pub fn write_trace(out: &mut ArtifactWriter, rel: &str, trace: &[TraceRow]) -> Result<(), ExperimentError> {
    out.csv(rel, trace)
}

/// Table rows for CSV export, four significant digits.
#[derive(Serialize)]
struct DayTypeCsv<'a> {
    day_type: &'a str,
    mean_ratio: String,
    expected_losses_mw: String,
    negative_utility: String,
    objective: String,
    iterations: usize,
    converged: bool,
    socp_gap: String,
}

#[derive(Serialize)]
struct PolicyCsv<'a> {
    policy: &'a str,
    expected_losses_mw: String,
    max_deviation: String,
    not_converged: usize,
}

#[derive(Serialize)]
struct CdfCsv {
    deviation: f64,
    cumulative: f64,
}

/// Runs the whole study described by `spec` and writes every artifact under
/// `out_dir`. A rerun with the same spec reproduces all files except
/// `timing.json`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentSummary, ExperimentError> {
    spec.validate()?;
    let mut out = ArtifactWriter::new(out_dir)?;
    let mut timing = Timing::default();
    let mut seeds = BTreeMap::new();
    let mut derive = |label: &str, index: u64| {
        let s = derive_seed(spec.seed, label, index);
        seeds.insert(format!("{label}/{index}"), s);
        s
    };

    let t = Instant::now();
    let network = match &spec.network {
        NetworkRef::Feeder(f) => {
            let mut f = f.clone();
            f.pv.seed = derive("pv-layout", 0);
            f.build().map_err(stage("building the feeder"))?
        }
        NetworkRef::File(path) => Network::load_json(path).map_err(stage(format!("loading {}", path.display())))?,
    };
    out.json("network.json", &network.to_file())?;
    timing.stages.insert("network".into(), t.elapsed().as_secs_f64());

    let mut rows = Vec::new();
    let mut first_stage: BTreeMap<String, FirstStage> = BTreeMap::new();
    for (i, day) in spec.day_types.iter().enumerate() {
        let ctx = |what: &str| format!("day type `{}`: {what}", day.name);
        let t = Instant::now();
        let full = sample_scenarios(
            &network,
            &MeanRatio::Global(day.mean_ratio),
            spec.generate,
            derive("scenarios", i as u64),
            Correlation::Independent,
        )
        .map_err(stage(ctx("sampling")))?;
        let reduced = fast_forward_reduce(&full, spec.reduce_to, Metric::Euclidean).map_err(stage(ctx("reduction")))?;
        out.json(&format!("scenarios/{}_full.json", day.name), &full.to_file())?;
        out.json(&format!("scenarios/{}_reduced.json", day.name), &reduced.set.to_file())?;
        timing.stages.insert(format!("scenarios/{}", day.name), t.elapsed().as_secs_f64());

        let t = Instant::now();
        let prog = StochasticProgram::<f64>::assemble(&network, &reduced.set, &spec.objective)
            .map_err(stage(ctx("assembling the program")))?;
        let solver = SolverConfig {
            seed: derive("solver", i as u64),
            ..spec.solver.clone()
        };
        let rep = solve(&prog, &solver).map_err(stage(ctx("solving")))?;
        out.json(&format!("reports/{}.json", day.name), &rep.to_file(&network))?;
        write_trace(&mut out, &format!("traces/{}.csv", day.name), &rep.trace)?;
        timing.stages.insert(format!("solve/{}", day.name), t.elapsed().as_secs_f64());
        rows.push(DayTypeRow {
            name: day.name.clone(),
            mean_ratio: day.mean_ratio,
            scenarios: reduced.set.len(),
            reduction_distance: reduced.distance,
            expected_losses_mw: rep.objective.expected_losses_mw,
            negative_utility: rep.objective.negative_utility,
            objective: rep.objective.total,
            converged: rep.converged,
            iterations: rep.iterations,
            final_rho: rep.final_rho,
            socp_gap: rep.socp_gap,
        });
        first_stage.insert(
            day.name.clone(),
            FirstStage {
                prog,
                pc: rep.solution.pc.clone(),
                mean_ratio: day.mean_ratio,
            },
        );
    }
    let table: Vec<DayTypeCsv> = rows
        .iter()
        .map(|d| DayTypeCsv {
            day_type: &d.name,
            mean_ratio: sig4(d.mean_ratio),
            expected_losses_mw: sig4(d.expected_losses_mw),
            negative_utility: sig4(d.negative_utility),
            objective: sig4(d.objective),
            iterations: d.iterations,
            converged: d.converged,
            socp_gap: sig4(d.socp_gap),
        })
        .collect();
    out.csv("tables/day_types.csv", &table)?;

    let baseline = match &spec.baseline {
        None => None,
        Some(b) => {
            let t = Instant::now();
            let summary = run_baseline(b, &network, &first_stage, &mut out, derive("test-scenarios", 0))?;
            timing.stages.insert("baseline".into(), t.elapsed().as_secs_f64());
            Some(summary)
        }
    };

    let summary = ExperimentSummary {
        name: spec.name.clone(),
        day_types: rows,
        baseline,
    };
    out.json("summary.json", &summary)?;
    out.bytes("tables/summary.txt", summary.render().as_bytes())?;
    out.json("spec.json", spec)?;
    let manifest = Manifest {
        format: ARTIFACT_FORMAT,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        spec_hash: spec.hash(),
        seed: spec.seed,
        derived_seeds: seeds,
        files: out.files().to_vec(),
    };
    out.json("manifest.json", &manifest)?;
    let mut timing_out = ArtifactWriter::new(out_dir)?;
    timing_out.json("timing.json", &timing)?;
    Ok(summary)
}

struct FirstStage {
    prog: StochasticProgram<f64>,
    pc: Vec<f64>,
    mean_ratio: f64,
}

/// Test scenarios are drawn at the evaluated day type's mean ratio.
fn run_baseline(
    b: &BaselineSpec,
    network: &Network,
    first_stage: &BTreeMap<String, FirstStage>,
    out: &mut ArtifactWriter,
    test_seed: u64,
) -> Result<BaselineSummary, ExperimentError> {
    let FirstStage { prog, pc, mean_ratio } = &first_stage[&b.day_type];
    let test: ScenarioSet = sample_scenarios(
        network,
        &MeanRatio::Global(*mean_ratio),
        b.test_scenarios,
        test_seed,
        Correlation::Independent,
    )
    .map_err(stage("baseline: sampling test scenarios"))?;
    out.json("baseline/test_scenarios.json", &test.to_file())?;

    let mut rows = Vec::new();
    let mut online_infeasible = None;
    let mut online_unresolved = None;
    let mut rule = None;
    if b.online {
        let online =
            online_second_stage(prog, pc, &test, &b.online_solver).map_err(stage("baseline: online re-solve"))?;
        let qw = online.qw();
        let metrics =
            evaluate_policy(prog, pc, QwSource::Given(&qw), &test).map_err(stage("baseline: evaluating setpoints"))?;
        online_infeasible = Some(online.infeasible);
        online_unresolved = Some(online.unresolved);
        rule = Some(online.infeasibility_rule.to_string());
        out.csv("baseline/cdf_stochastic.csv", &to_cdf_csv(&metrics))?;
        rows.push(policy_row("stochastic".into(), None, &metrics));
    }
    for &k in &b.k_values {
        let params = PolicyParams::new(k).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        let metrics = evaluate_policy(prog, pc, QwSource::Local(params), &test)
            .map_err(stage(format!("baseline: local policy K = {k}")))?;
        let label = format!("K={k}");
        out.csv(&format!("baseline/cdf_k{k}.csv"), &to_cdf_csv(&metrics))?;
        rows.push(policy_row(label, Some(k), &metrics));
    }
    let table: Vec<PolicyCsv> = rows
        .iter()
        .map(|r| PolicyCsv {
            policy: &r.label,
            expected_losses_mw: sig4(r.expected_losses_mw),
            max_deviation: sig4(r.max_deviation),
            not_converged: r.not_converged,
        })
        .collect();
    out.csv("tables/k_sweep.csv", &table)?;
    Ok(BaselineSummary {
        day_type: b.day_type.clone(),
        test_scenarios: test.len(),
        rows,
        online_infeasible,
        online_unresolved,
        infeasibility_rule: rule,
    })
}

fn to_cdf_csv(metrics: &PolicyMetrics) -> Vec<CdfCsv> {
    metrics
        .cdf
        .iter()
        .map(|p| CdfCsv {
            deviation: p.deviation,
            cumulative: p.cumulative,
        })
        .collect()
}

fn policy_row(label: String, k: Option<f64>, m: &PolicyMetrics) -> PolicyRow {
    PolicyRow {
        label,
        k,
        expected_losses_mw: m.expected_losses_mw,
        max_deviation: m.max_deviation,
        not_converged: m.not_converged,
    }
}
