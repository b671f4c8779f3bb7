//! Name-based dispatch over every reconstruction method.

use std::fmt;
use std::str::FromStr;

use crate::aggregation::{AggregatedViews, AggregationOperator};
use crate::baselines::{cmtf_baseline, cpd_oracle, ls_baseline, mean_baseline};
use crate::bprema::{bprema_solve, BPremaConfig};
use crate::error::{Error, Result};
use crate::eval::nde;
use crate::prema::{disaggregate, prema_solve, PremaConfig};
use crate::report::SolverReport;
use crate::tensor::{MaskTensor3, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SolverKind {
    Prema,
    BPrema,
    Mean,
    Ls,
    Cmtf,
    CpdOracle,
}

impl SolverKind {
    pub const ALL: [SolverKind; 6] = [
        SolverKind::Prema,
        SolverKind::BPrema,
        SolverKind::Mean,
        SolverKind::Ls,
        SolverKind::Cmtf,
        SolverKind::CpdOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Prema => "prema",
            SolverKind::BPrema => "bprema",
            SolverKind::Mean => "mean",
            SolverKind::Ls => "ls",
            SolverKind::Cmtf => "cmtf",
            SolverKind::CpdOracle => "cpd-oracle",
        }
    }

    /// Whether the method needs the aggregation operator.
    pub fn needs_operator(self) -> bool {
        !matches!(self, SolverKind::BPrema | SolverKind::CpdOracle)
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|s| s.name()).join(", ")
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown solver `{s}`; valid names: {}",
                    Self::valid_names()
                ))
            })
    }
}

/// Knobs shared by all methods; each reads the ones it uses.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub rank: usize,
    /// BCD iterations for the factorization methods, CG iterations for `ls`.
    pub iterations: usize,
    pub init_sweeps: usize,
    pub mu: f64,
    pub lambda: f64,
    pub tolerance: Option<f64>,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rank: 5,
            iterations: 10,
            init_sweeps: crate::cpd::DEFAULT_INIT_SWEEPS,
            mu: 100.0,
            lambda: 1.0,
            tolerance: None,
            seed: 0,
        }
    }
}

impl SolverSettings {
    pub fn prema(&self) -> PremaConfig {
        PremaConfig {
            rank: self.rank,
            max_iterations: self.iterations,
            init_sweeps: self.init_sweeps,
            seed: self.seed,
            tolerance: self.tolerance,
            lambda: self.lambda,
        }
    }

    pub fn bprema(&self) -> BPremaConfig {
        BPremaConfig {
            rank: self.rank,
            mu: self.mu,
            max_iterations: self.iterations,
            init_sweeps: self.init_sweeps,
            seed: self.seed,
            tolerance: self.tolerance,
        }
    }
}

/// Runs `kind` and, when `truth` is given, records the NDE in the report.
pub fn run_solver(
    kind: SolverKind,
    views: &AggregatedViews,
    op: Option<&AggregationOperator>,
    truth: Option<&Tensor3>,
    settings: &SolverSettings,
) -> Result<(Tensor3, SolverReport)> {
    let need_op = || {
        op.ok_or_else(|| Error::InvalidArgument(format!("solver `{kind}` needs the aggregation operator")))
    };
    let (est, mut report) = match kind {
        SolverKind::Prema => {
            let op = need_op()?;
            let (f, report) = prema_solve(views, op, &settings.prema())?;
            (disaggregate(&f, op.fine_dims())?, report)
        }
        SolverKind::BPrema => {
            let (f, report) = bprema_solve(views, &settings.bprema())?;
            (f.reconstruct()?, report)
        }
        SolverKind::Mean => mean_baseline(views, need_op()?)?,
        SolverKind::Ls => ls_baseline(views, need_op()?, settings.iterations)?,
        SolverKind::Cmtf => cmtf_baseline(views, need_op()?, settings.rank, settings.iterations, settings.seed)?,
        SolverKind::CpdOracle => {
            let truth = truth.ok_or_else(|| {
                Error::InvalidArgument("solver `cpd-oracle` needs the ground truth".into())
            })?;
            let mask = MaskTensor3::full(truth.dims())?;
            cpd_oracle(truth, &mask, settings.rank, settings.iterations.max(settings.init_sweeps), settings.seed)?
        }
    };
    if let Some(t) = truth {
        report.nde = Some(nde(t, &est)?);
    }
    Ok((est, report))
}
