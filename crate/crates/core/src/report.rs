//! Per-update cost traces and run summaries shared by every solver.

use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    MaxIterations,
    /// Relative cost decrease over one full cycle fell below the tolerance.
    Converged,
    /// Every block took a zero step in the last cycle.
    Stationary,
    /// The solver has no iterations (closed-form baselines).
    Direct,
}

impl SolverStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolverStatus::MaxIterations => "max_iterations",
            SolverStatus::Converged => "converged",
            SolverStatus::Stationary => "stationary",
            SolverStatus::Direct => "direct",
        }
    }
}

/// Cost after one single-block update. Iteration 0 holds the cost of the
/// initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub block: &'static str,
    pub cost: f64,
    pub step: f64,
    pub elapsed_ms: f64,
    /// `||1^T C - 1^T C~||` for the blind solver.
    pub column_sum_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub solver: String,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    pub status: SolverStatus,
    pub iterations: usize,
    pub final_cost: f64,
    pub nde: Option<f64>,
    pub wall_ms: f64,
    pub khatri_rao_evals: usize,
}

impl SolverReport {
    pub fn new(solver: impl Into<String>) -> Self {
        Self {
            solver: solver.into(),
            trace: Vec::new(),
            warnings: Vec::new(),
            status: SolverStatus::Direct,
            iterations: 0,
            final_cost: f64::NAN,
            nde: None,
            wall_ms: 0.0,
            khatri_rao_evals: 0,
        }
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{}: {}", self.solver, msg);
        self.warnings.push(msg);
    }

    /// Costs in update order, starting with the initialization cost.
    pub fn costs(&self) -> Vec<f64> {
        self.trace.iter().map(|e| e.cost).collect()
    }

    /// Wall time spent in each completed iteration.
    pub fn iteration_times_ms(&self) -> Vec<f64> {
        let mut ends: Vec<(usize, f64)> = Vec::new();
        for e in &self.trace {
            match ends.last_mut() {
                Some(last) if last.0 == e.iteration => last.1 = e.elapsed_ms,
                _ => ends.push((e.iteration, e.elapsed_ms)),
            }
        }
        ends.windows(2).map(|w| w[1].1 - w[0].1).collect()
    }

    pub fn write_trace_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let gap = self.trace.iter().any(|e| e.column_sum_gap.is_some());
        write!(w, "iteration,block,cost,step,elapsed_ms")?;
        if gap {
            write!(w, ",column_sum_gap")?;
        }
        writeln!(w)?;
        for e in &self.trace {
            write!(w, "{},{},{:e},{:e},{:.3}", e.iteration, e.block, e.cost, e.step, e.elapsed_ms)?;
            if gap {
                match e.column_sum_gap {
                    Some(g) => write!(w, ",{g:e}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_summary_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "solver,status,iterations,final_cost,nde,wall_ms,warnings")?;
        let nde = self.nde.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{:e},{},{:.3},{}",
            self.solver,
            self.status.name(),
            self.iterations,
            self.final_cost,
            nde,
            self.wall_ms,
            self.warnings.len()
        )
    }
}
