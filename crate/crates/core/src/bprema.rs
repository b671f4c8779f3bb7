//! Blind disaggregation: the aggregation operators are unknown, so the
//! aggregated factors `A~ = UA` and `C~ = WC` become free blocks. The
//! objective is
//!
//! ```text
//!     ||Mt (.) (Yt - [[A, B, C~]])||^2 + ||Mc (.) (Yc - [[A~, B, C]])||^2
//!         + mu ||1^T C - 1^T C~||^2
//! ```
//!
//! where the last term pins down the scaling that the two data terms leave
//! free.

use std::time::Instant;

use crate::aggregation::{contiguous_groups, AggregatedViews};
use crate::bcd::{ms, run_bcd, BcdSettings};
use crate::cpd::{cpd_als, solve_third_factor, DEFAULT_INIT_SWEEPS};
use crate::error::{shape_err, Error, Result};
use crate::kernels::{khatri_rao, ColumnSumPenalty, CoupledObjective, DataTerm, Slot};
use crate::report::SolverReport;
use crate::tensor::{reconstruct, Dims, FactorTriple, Matrix, Mode, Tensor3};

pub const BLOCK_A: usize = 0;
pub const BLOCK_A_TILDE: usize = 1;
pub const BLOCK_B: usize = 2;
pub const BLOCK_C: usize = 3;
pub const BLOCK_C_TILDE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BlindFactors {
    /// `I x R`
    pub a: Matrix,
    /// `I_u x R`
    pub a_tilde: Matrix,
    /// `J x R`
    pub b: Matrix,
    /// `K x R`
    pub c: Matrix,
    /// `K_w x R`
    pub c_tilde: Matrix,
}

impl BlindFactors {
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    /// The fine-resolution factors `(A, B, C)`.
    pub fn fine(&self) -> Result<FactorTriple> {
        FactorTriple::new(self.a.clone(), self.b.clone(), self.c.clone())
    }

    pub fn reconstruct(&self) -> Result<Tensor3> {
        reconstruct(&self.fine()?, self.dims())
    }

    /// `||1^T C - 1^T C~||`.
    pub fn column_sum_gap(&self) -> f64 {
        let d = self.c.row_sum() - self.c_tilde.row_sum();
        d.norm()
    }

    fn into_vars(self) -> Vec<Matrix> {
        vec![self.a, self.a_tilde, self.b, self.c, self.c_tilde]
    }

    fn from_vars(mut v: Vec<Matrix>) -> Self {
        let c_tilde = v.pop().unwrap_or_default();
        let c = v.pop().unwrap_or_default();
        let b = v.pop().unwrap_or_default();
        let a_tilde = v.pop().unwrap_or_default();
        let a = v.pop().unwrap_or_default();
        Self {
            a,
            a_tilde,
            b,
            c,
            c_tilde,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BPremaConfig {
    pub rank: usize,
    pub mu: f64,
    pub max_iterations: usize,
    pub init_sweeps: usize,
    pub seed: u64,
    pub tolerance: Option<f64>,
}

impl Default for BPremaConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            mu: 100.0,
            max_iterations: 10,
            init_sweeps: DEFAULT_INIT_SWEEPS,
            seed: 0,
            tolerance: None,
        }
    }
}

impl BPremaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if self.max_iterations == 0 || self.init_sweeps == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations and init_sweeps must be at least 1".into(),
            ));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be nonnegative, got {}", self.mu)));
        }
        Ok(())
    }
}

/// Fine dims `(I, J, K)` and aggregated sizes `(I_u, K_w)` implied by the
/// two views.
pub fn blind_shapes(views: &AggregatedViews) -> Result<(Dims, usize, usize)> {
    let t = views.y_t.dims();
    let c = views.y_c.dims();
    if views.mask_t.dims() != t || views.mask_c.dims() != c {
        return shape_err("masks do not match their views");
    }
    if t.j != c.j {
        return shape_err(format!(
            "both views must keep mode 2 at full resolution, got {} and {}",
            t.j, c.j
        ));
    }
    if c.i > t.i || t.k > c.k {
        return shape_err(format!(
            "temporal view {t} and contemporaneous view {c} are not aggregated one mode each"
        ));
    }
    Ok((Dims::new(t.i, t.j, c.k), c.i, t.k))
}

pub fn bprema_objective(views: &AggregatedViews, rank: usize, mu: f64) -> Result<CoupledObjective> {
    let (d, iu, kw) = blind_shapes(views)?;
    let t = DataTerm::new(
        "temporal",
        &views.y_t,
        &views.mask_t,
        [Slot::plain(BLOCK_A), Slot::plain(BLOCK_B), Slot::plain(BLOCK_C_TILDE)],
        1.0,
    )?;
    let c = DataTerm::new(
        "contemporaneous",
        &views.y_c,
        &views.mask_c,
        [Slot::plain(BLOCK_A_TILDE), Slot::plain(BLOCK_B), Slot::plain(BLOCK_C)],
        1.0,
    )?;
    let penalty = ColumnSumPenalty {
        fine: BLOCK_C,
        coarse: BLOCK_C_TILDE,
        weight: mu,
    };
    CoupledObjective::new(vec![t, c], Some(penalty), vec![d.i, iu, d.j, d.k, kw], rank)
}

/// Rows of `c` summed over `kw` consecutive windows of width
/// `floor(K / kw)`; the last window also takes the remainder.
pub fn window_sums(c: &Matrix, kw: usize) -> Result<Matrix> {
    let k = c.nrows();
    if kw == 0 || kw > k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {k} rows into {kw} windows"
        )));
    }
    let w = k / kw;
    let mut groups = contiguous_groups(w * kw, w);
    if let Some(last) = groups.last_mut() {
        last.extend(w * kw..k);
    }
    let mut out = Matrix::zeros(kw, c.ncols());
    for (g, rows) in groups.iter().enumerate() {
        for &r in rows {
            let row = c.row(r).clone_owned();
            let mut dst = out.row_mut(g);
            dst += row;
        }
    }
    Ok(out)
}

/// CPD of the contemporaneous view gives `A~, B, C`; `C~` sums windows of
/// `C`; `A` is solved from `Y1t = (C~ . B) A^T`.
pub fn bprema_init(views: &AggregatedViews, cfg: &BPremaConfig) -> Result<BlindFactors> {
    cfg.validate()?;
    let (_, _, kw) = blind_shapes(views)?;
    let cp = cpd_als(&views.y_c, &views.mask_c, cfg.rank, cfg.init_sweeps, cfg.seed)?;
    let c_tilde = window_sums(&cp.c, kw)?;
    let lhs = khatri_rao(&c_tilde, &cp.b)?;
    let a = solve_third_factor(&views.y_t, &views.mask_t, &lhs, Mode::One)?;
    Ok(BlindFactors {
        a,
        a_tilde: cp.a,
        b: cp.b,
        c: cp.c,
        c_tilde,
    })
}

pub fn bprema_solve(views: &AggregatedViews, cfg: &BPremaConfig) -> Result<(BlindFactors, SolverReport)> {
    let start = Instant::now();
    let init = bprema_init(views, cfg)?;
    solve_from(views, cfg, init, start)
}

pub fn bprema_solve_from(
    views: &AggregatedViews,
    cfg: &BPremaConfig,
    init: BlindFactors,
) -> Result<(BlindFactors, SolverReport)> {
    cfg.validate()?;
    solve_from(views, cfg, init, Instant::now())
}

fn solve_from(
    views: &AggregatedViews,
    cfg: &BPremaConfig,
    init: BlindFactors,
    start: Instant,
) -> Result<(BlindFactors, SolverReport)> {
    let obj = bprema_objective(views, cfg.rank, cfg.mu)?;
    let mut vars = init.into_vars();
    obj.check_vars(&vars)?;
    let mut report = SolverReport::new("bprema");
    let settings = BcdSettings {
        order: &[
            (BLOCK_A, "A"),
            (BLOCK_A_TILDE, "A~"),
            (BLOCK_B, "B"),
            (BLOCK_C, "C"),
            (BLOCK_C_TILDE, "C~"),
        ],
        max_iterations: cfg.max_iterations,
        tolerance: cfg.tolerance,
        record_gap: true,
    };
    run_bcd(&obj, &mut vars, &settings, &mut report, start)?;
    report.wall_ms = ms(start);
    Ok((BlindFactors::from_vars(vars), report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_sums_integral_and_remainder() {
        let c = Matrix::from_fn(48, 2, |k, r| (k * (r + 1)) as f64);
        let s = window_sums(&c, 12).unwrap();
        for g in 0..12 {
            for r in 0..2 {
                let expect: f64 = (4 * g..4 * g + 4).map(|k| c[(k, r)]).sum();
                assert_eq!(s[(g, r)], expect);
            }
        }
        let c = Matrix::from_element(50, 1, 1.0);
        let s = window_sums(&c, 12).unwrap();
        assert!((0..11).all(|g| s[(g, 0)] == 4.0));
        assert_eq!(s[(11, 0)], 6.0);
        assert_eq!(s.sum(), 50.0);
        assert!(window_sums(&c, 51).is_err());
    }

    #[test]
    fn shape_checks() {
        use crate::tensor::MaskTensor3;
        let mk = |d: Dims| (Tensor3::zeros(d).unwrap(), MaskTensor3::full(d).unwrap());
        let (y_t, mask_t) = mk(Dims::new(8, 3, 4));
        let (y_c, mask_c) = mk(Dims::new(2, 3, 16));
        let ok = AggregatedViews { y_t, mask_t, y_c, mask_c };
        assert_eq!(blind_shapes(&ok).unwrap(), (Dims::new(8, 3, 16), 2, 4));
        let (y_c, mask_c) = mk(Dims::new(2, 4, 16));
        let bad = AggregatedViews { y_c, mask_c, ..ok };
        assert!(blind_shapes(&bad).is_err());
    }
}
