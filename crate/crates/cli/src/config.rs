//! Run configuration files. See `docs/config.md` for the schema.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Deserializer};
use tensagg::aggregation::{AggregationKind, Scenario, ScenarioSpec};
use tensagg::eval::{FactorDistribution, InstanceSpec};
use tensagg::solvers::{SolverKind, SolverSettings};
use tensagg::Dims;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemSection,
    pub aggregation: AggregationSection,
    #[serde(default)]
    pub missing: MissingSection,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dims: [usize; 3],
    pub rank: usize,
    #[serde(default)]
    pub distribution: Distribution,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Uniform01,
    #[default]
    UniformSymmetric,
    Gaussian,
}

impl From<Distribution> for FactorDistribution {
    fn from(d: Distribution) -> Self {
        match d {
            Distribution::Uniform01 => FactorDistribution::Uniform01,
            Distribution::UniformSymmetric => FactorDistribution::UniformSymmetric,
            Distribution::Gaussian => FactorDistribution::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSection {
    #[serde(default = "default_scenario", deserialize_with = "scenario")]
    pub scenario: Scenario,
    pub temporal_window: usize,
    pub mode1_group: usize,
    #[serde(default = "one")]
    pub mode2_group: usize,
    #[serde(default = "default_kind", deserialize_with = "kind")]
    pub kind: AggregationKind,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingSection {
    #[serde(default)]
    pub temporal: f64,
    #[serde(default)]
    pub contemporaneous: f64,
    pub floor: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default, deserialize_with = "solver_name")]
    pub name: Option<SolverKind>,
    pub rank: Option<usize>,
    pub iterations: Option<usize>,
    pub init_sweeps: Option<usize>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub tolerance: Option<f64>,
}

impl SolverSection {
    /// Library defaults overridden by whatever the section sets.
    pub fn settings(&self, default_rank: usize, seed: u64) -> SolverSettings {
        let d = SolverSettings::default();
        SolverSettings {
            rank: self.rank.unwrap_or(default_rank),
            iterations: self.iterations.unwrap_or(d.iterations),
            init_sweeps: self.init_sweeps.unwrap_or(d.init_sweeps),
            mu: self.mu.unwrap_or(d.mu),
            lambda: self.lambda.unwrap_or(d.lambda),
            tolerance: self.tolerance,
            seed,
        }
    }
}

impl RunConfig {
    pub fn dims(&self) -> Dims {
        let [i, j, k] = self.problem.dims;
        Dims::new(i, j, k)
    }

    pub fn scenario_spec(&self, seed: u64) -> ScenarioSpec {
        scenario_spec(&self.aggregation, &self.missing, seed)
    }

    pub fn solver_settings(&self, seed: u64) -> SolverSettings {
        self.solver.settings(self.problem.rank, seed)
    }
}

fn scenario_spec(agg: &AggregationSection, missing: &MissingSection, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        scenario: agg.scenario,
        temporal_window: agg.temporal_window,
        mode1_group: agg.mode1_group,
        mode2_group: agg.mode2_group,
        kind: agg.kind,
        missing_t: missing.temporal,
        missing_c: missing.contemporaneous,
        mask_floor: missing.floor,
        seed,
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(deserialize_with = "solver_names")]
    pub solvers: Vec<SolverKind>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(rename = "instance")]
    pub instances: Vec<InstanceSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSection {
    pub name: String,
    /// Defaults to the suite seed plus the instance position.
    pub seed: Option<u64>,
    pub problem: ProblemSection,
    pub aggregation: AggregationSection,
    #[serde(default)]
    pub missing: MissingSection,
}

impl BenchmarkConfig {
    pub fn instance_specs(&self, seed: u64) -> Vec<InstanceSpec> {
        self.instances
            .iter()
            .enumerate()
            .map(|(n, inst)| InstanceSpec {
                name: inst.name.clone(),
                dims: inst.problem.dims,
                rank: inst.problem.rank,
                distribution: inst.problem.distribution.into(),
                noise: inst.problem.noise,
                scenario: scenario_spec(
                    &inst.aggregation,
                    &inst.missing,
                    inst.seed.unwrap_or(seed.wrapping_add(n as u64)),
                ),
            })
            .collect()
    }
}

pub fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    Ok(toml::from_str(text)?)
}

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn one() -> usize {
    1
}

fn default_scenario() -> Scenario {
    Scenario::A
}

fn default_kind() -> AggregationKind {
    AggregationKind::Sum
}

fn scenario<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Scenario, D::Error> {
    let s = String::deserialize(d)?;
    match s.as_str() {
        "A" | "a" => Ok(Scenario::A),
        "B" | "b" => Ok(Scenario::B),
        _ => Err(serde::de::Error::custom(format!("unknown scenario `{s}`, expected A or B"))),
    }
}

fn kind<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<AggregationKind, D::Error> {
    let s = String::deserialize(d)?;
    AggregationKind::parse(&s).map_err(serde::de::Error::custom)
}

fn solver_name<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<SolverKind>, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map(Some).map_err(serde::de::Error::custom)
}

fn solver_names<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<SolverKind>, D::Error> {
    let v = Vec::<String>::deserialize(d)?;
    v.iter()
        .map(|s| s.parse().map_err(serde::de::Error::custom))
        .collect()
}
