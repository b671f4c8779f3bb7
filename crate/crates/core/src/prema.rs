//! Coupled disaggregation with known aggregation operators.
//!
//! Fits `X = [[A, B, C]]` to both views by minimizing
//!
//! ```text
//!     ||Mt (.) (Yt - [[A, B, WC]])||^2 + lambda ||Mc (.) (Yc - [[UA, VB, C]])||^2
//! ```
//!
//! with cyclic exact-line-search gradient steps on `A`, `B`, `C`.

use std::time::Instant;

use crate::aggregation::{rank_bound, AggregatedViews, AggregationOperator, ModeOperator};
use crate::bcd::{ms, run_bcd, BcdSettings};
use crate::cpd::{prema_init, InitBranch, DEFAULT_INIT_SWEEPS};
use crate::error::{Error, Result};
use crate::kernels::{CoupledObjective, DataTerm, Slot};
use crate::report::SolverReport;
use crate::tensor::{check_dims, reconstruct, Dims, FactorTriple, Matrix, Tensor3};

pub const BLOCK_A: usize = 0;
pub const BLOCK_B: usize = 1;
pub const BLOCK_C: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PremaConfig {
    pub rank: usize,
    pub max_iterations: usize,
    pub init_sweeps: usize,
    pub seed: u64,
    /// Stop when a full cycle lowers the cost by less than this fraction.
    pub tolerance: Option<f64>,
    /// Weight of the contemporaneous term.
    pub lambda: f64,
}

impl Default for PremaConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            max_iterations: 10,
            init_sweeps: DEFAULT_INIT_SWEEPS,
            seed: 0,
            tolerance: None,
            lambda: 1.0,
        }
    }
}

impl PremaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if self.max_iterations == 0 || self.init_sweeps == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations and init_sweeps must be at least 1".into(),
            ));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

fn slot(var: usize, op: &ModeOperator) -> Slot {
    if op.is_identity() {
        Slot::plain(var)
    } else {
        Slot::aggregated(var, op.matrix().clone())
    }
}

pub(crate) fn check_views(views: &AggregatedViews, op: &AggregationOperator) -> Result<()> {
    check_dims(views.y_t.dims(), op.temporal_dims(), "temporal view vs operator")?;
    check_dims(views.mask_t.dims(), op.temporal_dims(), "temporal mask vs operator")?;
    check_dims(views.y_c.dims(), op.contemporaneous_dims(), "contemporaneous view vs operator")?;
    check_dims(views.mask_c.dims(), op.contemporaneous_dims(), "contemporaneous mask vs operator")
}

/// The coupled objective over blocks `A`, `B`, `C`.
pub fn prema_objective(
    views: &AggregatedViews,
    op: &AggregationOperator,
    rank: usize,
    lambda: f64,
) -> Result<CoupledObjective> {
    check_views(views, op)?;
    let d = op.fine_dims();
    let t = DataTerm::new(
        "temporal",
        &views.y_t,
        &views.mask_t,
        [Slot::plain(BLOCK_A), Slot::plain(BLOCK_B), slot(BLOCK_C, &op.w)],
        1.0,
    )?;
    let c = DataTerm::new(
        "contemporaneous",
        &views.y_c,
        &views.mask_c,
        [slot(BLOCK_A, &op.u), slot(BLOCK_B, &op.v), Slot::plain(BLOCK_C)],
        lambda,
    )?;
    CoupledObjective::new(vec![t, c], None, vec![d.i, d.j, d.k], rank)
}

/// Gradients of the coupled objective with respect to `A`, `B` and `C`.
pub fn prema_gradients(
    views: &AggregatedViews,
    op: &AggregationOperator,
    f: &FactorTriple,
    lambda: f64,
) -> Result<[Matrix; 3]> {
    let obj = prema_objective(views, op, f.rank(), lambda)?;
    let vars = [f.a.clone(), f.b.clone(), f.c.clone()];
    let mut ws = obj.workspace(&vars)?;
    Ok([
        obj.gradient(&vars, BLOCK_A, &mut ws)?,
        obj.gradient(&vars, BLOCK_B, &mut ws)?,
        obj.gradient(&vars, BLOCK_C, &mut ws)?,
    ])
}

pub fn prema_cost(views: &AggregatedViews, op: &AggregationOperator, f: &FactorTriple, lambda: f64) -> Result<f64> {
    let obj = prema_objective(views, op, f.rank(), lambda)?;
    obj.cost(&[f.a.clone(), f.b.clone(), f.c.clone()])
}

/// Initializes from the views, then runs the block updates.
pub fn prema_solve(
    views: &AggregatedViews,
    op: &AggregationOperator,
    cfg: &PremaConfig,
) -> Result<(FactorTriple, SolverReport)> {
    cfg.validate()?;
    check_views(views, op)?;
    let start = Instant::now();
    let (init, branch) = prema_init(views, op, cfg.rank, cfg.init_sweeps, cfg.seed)?;
    log::debug!(
        "initialized in {:.1} ms from the {} view",
        ms(start),
        match branch {
            InitBranch::Contemporaneous => "contemporaneous",
            InitBranch::Temporal => "temporal",
        }
    );
    solve_from(views, op, cfg, init, start)
}

/// Runs the block updates from given factors.
pub fn prema_solve_from(
    views: &AggregatedViews,
    op: &AggregationOperator,
    cfg: &PremaConfig,
    init: FactorTriple,
) -> Result<(FactorTriple, SolverReport)> {
    cfg.validate()?;
    solve_from(views, op, cfg, init, Instant::now())
}

fn solve_from(
    views: &AggregatedViews,
    op: &AggregationOperator,
    cfg: &PremaConfig,
    init: FactorTriple,
    start: Instant,
) -> Result<(FactorTriple, SolverReport)> {
    let dims = op.fine_dims();
    if init.dims() != dims || init.rank() != cfg.rank {
        return Err(Error::ShapeMismatch(format!(
            "initial factors are {} with rank {}, expected {} with rank {}",
            init.dims(),
            init.rank(),
            dims,
            cfg.rank
        )));
    }
    let mut report = SolverReport::new("prema");
    let bound = rank_bound(dims, op);
    if cfg.rank > bound {
        report.warn(format!(
            "rank {} exceeds the identifiability bound {bound}; the recovered tensor may not be unique",
            cfg.rank
        ));
    }
    let obj = prema_objective(views, op, cfg.rank, cfg.lambda)?;
    let mut vars = vec![init.a, init.b, init.c];
    let settings = BcdSettings {
        order: &[(BLOCK_A, "A"), (BLOCK_B, "B"), (BLOCK_C, "C")],
        max_iterations: cfg.max_iterations,
        tolerance: cfg.tolerance,
        record_gap: false,
    };
    run_bcd(&obj, &mut vars, &settings, &mut report, start)?;
    report.wall_ms = ms(start);
    let c = vars.pop().unwrap_or_default();
    let b = vars.pop().unwrap_or_default();
    let a = vars.pop().unwrap_or_default();
    Ok((FactorTriple::new(a, b, c)?, report))
}

/// `[[A, B, C]]` at the fine resolution.
pub fn disaggregate(f: &FactorTriple, dims: Dims) -> Result<Tensor3> {
    reconstruct(f, dims)
}
