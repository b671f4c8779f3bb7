//! Cyclic block coordinate descent with exact line search over a
//! [`CoupledObjective`].

use std::time::Instant;

use crate::error::Result;
use crate::kernels::CoupledObjective;
use crate::report::{SolverReport, SolverStatus, TraceEntry};
use crate::tensor::Matrix;

pub(crate) struct BcdSettings<'a> {
    /// `(block index, label)` in update order.
    pub order: &'a [(usize, &'static str)],
    pub max_iterations: usize,
    pub tolerance: Option<f64>,
    pub record_gap: bool,
}

/// Runs BCD in place, appending to `report`. `start` anchors elapsed times.
pub(crate) fn run_bcd(
    obj: &CoupledObjective,
    vars: &mut [Matrix],
    settings: &BcdSettings,
    report: &mut SolverReport,
    start: Instant,
) -> Result<()> {
    let mut ws = obj.workspace(vars)?;
    let gap_norm = |vars: &[Matrix]| {
        obj.penalty()
            .filter(|_| settings.record_gap)
            .map(|p| p.gap(vars).iter().map(|g| g * g).sum::<f64>().sqrt())
    };
    report.trace.push(TraceEntry {
        iteration: 0,
        block: "init",
        cost: ws.cost(),
        step: 0.0,
        elapsed_ms: ms(start),
        column_sum_gap: gap_norm(vars),
    });
    report.status = SolverStatus::MaxIterations;
    let mut cycle_start_cost = ws.cost();
    for it in 1..=settings.max_iterations {
        let mut all_zero = true;
        for &(block, label) in settings.order {
            let u = obj.update_block(vars, block, &mut ws)?;
            all_zero &= u.step == 0.0;
            report.trace.push(TraceEntry {
                iteration: it,
                block: label,
                cost: u.cost_after,
                step: u.step,
                elapsed_ms: ms(start),
                column_sum_gap: gap_norm(vars),
            });
        }
        report.iterations = it;
        let cost = ws.cost();
        if all_zero {
            report.status = SolverStatus::Stationary;
            break;
        }
        if let Some(tol) = settings.tolerance {
            if cycle_start_cost > 0.0 && (cycle_start_cost - cost) / cycle_start_cost < tol {
                report.status = SolverStatus::Converged;
                break;
            }
        }
        cycle_start_cost = cost;
    }
    // The cached cost drifts by rounding only; report a fresh evaluation.
    report.final_cost = obj.cost(vars)?;
    report.khatri_rao_evals += ws.khatri_rao_evals;
    Ok(())
}

pub(crate) fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
