//! Reference reconstructions: per-atom Mean, minimum-norm least squares,
//! coupled matrix factorization of the mode-3 unfoldings, and a CPD fit
//! of the ground truth itself.

use std::time::Instant;

use nalgebra::SVD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{AggregatedViews, AggregationKind, AggregationOperator, ModeOperator};
use crate::bcd::ms;
use crate::cpd::{cpd_als_from, masked_row_solve, random_matrix, svd_factors};
use crate::error::Result;
use crate::kernels::{exact_step, LineSearchTerms, ResidualPair};
use crate::prema::check_views;
use crate::report::{SolverReport, SolverStatus, TraceEntry};
use crate::tensor::{check_dims, mode_product, reconstruct, unfold, MaskTensor3, Matrix, Mode, Tensor3};

/// Covering rows of every fine index and the divisor each contributes.
fn coverage(op: &ModeOperator) -> Vec<Vec<(usize, f64)>> {
    (0..op.cols())
        .map(|col| {
            op.covering_rows(col)
                .into_iter()
                .map(|row| {
                    let div = match op.kind() {
                        AggregationKind::Sum => op.row_support(row) as f64,
                        AggregationKind::Average | AggregationKind::Identity => 1.0,
                    };
                    (row, div)
                })
                .collect()
        })
        .collect()
}

/// Each aggregate is spread evenly over the atoms it covers; the estimates
/// from the two views are averaged. An entry seen by one view only takes
/// that view's estimate; an entry seen by neither is 0 and counted in a
/// report warning.
pub fn mean_baseline(views: &AggregatedViews, op: &AggregationOperator) -> Result<(Tensor3, SolverReport)> {
    check_views(views, op)?;
    let start = Instant::now();
    let dims = op.fine_dims();
    let (cu, cv, cw) = (coverage(&op.u), coverage(&op.v), coverage(&op.w));
    let mut uncovered = 0usize;
    let est = Tensor3::from_fn(dims, |i, j, k| {
        let mut t_sum = 0.0;
        let mut t_n = 0usize;
        for &(kw, div) in &cw[k] {
            if views.mask_t.get(i, j, kw) {
                t_sum += views.y_t.get(i, j, kw) / div;
                t_n += 1;
            }
        }
        let mut c_sum = 0.0;
        let mut c_n = 0usize;
        for &(iu, du) in &cu[i] {
            for &(jv, dv) in &cv[j] {
                if views.mask_c.get(iu, jv, k) {
                    c_sum += views.y_c.get(iu, jv, k) / (du * dv);
                    c_n += 1;
                }
            }
        }
        match (t_n, c_n) {
            (0, 0) => {
                uncovered += 1;
                0.0
            }
            (0, _) => c_sum / c_n as f64,
            (_, 0) => t_sum / t_n as f64,
            _ => (t_sum / t_n as f64 + c_sum / c_n as f64) / 2.0,
        }
    })?;
    let mut report = SolverReport::new("mean");
    if uncovered > 0 {
        report.warn(format!("{uncovered} entries are covered by no observed aggregate and were set to 0"));
    }
    report.wall_ms = ms(start);
    Ok((est, report))
}

/// Stacked masked aggregation `x -> (Mt (.) x x3 W, Mc (.) x x1 U x2 V)`.
struct StackedOperator<'a> {
    op: &'a AggregationOperator,
    mask_t: Tensor3,
    mask_c: Tensor3,
}

impl StackedOperator<'_> {
    fn apply(&self, x: &Tensor3) -> Result<(Tensor3, Tensor3)> {
        let t = hadamard(&self.op.temporal(x)?, &self.mask_t);
        let c = hadamard(&self.op.contemporaneous(x)?, &self.mask_c);
        Ok((t, c))
    }

    fn adjoint(&self, t: &Tensor3, c: &Tensor3) -> Result<Tensor3> {
        let from_t = mode_product(&hadamard(t, &self.mask_t), &self.op.w.matrix().transpose(), Mode::Three)?;
        let c1 = mode_product(&hadamard(c, &self.mask_c), &self.op.u.matrix().transpose(), Mode::One)?;
        let from_c = mode_product(&c1, &self.op.v.matrix().transpose(), Mode::Two)?;
        add(&from_t, &from_c, 1.0)
    }
}

fn hadamard(a: &Tensor3, b: &Tensor3) -> Tensor3 {
    let v = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
    Tensor3::from_vec(a.dims(), v).expect("same dims")
}

/// `a + s * b`
fn add(a: &Tensor3, b: &Tensor3, s: f64) -> Result<Tensor3> {
    check_dims(a.dims(), b.dims(), "tensor sum")?;
    let v = a.values().iter().zip(b.values()).map(|(x, y)| x + s * y).collect();
    Tensor3::from_vec(a.dims(), v)
}

/// Relative tolerance on the normal-equation residual for [`ls_baseline`].
pub const CG_TOLERANCE: f64 = 1e-12;

/// Minimum-norm least-squares tensor consistent with the observed
/// aggregates, by conjugate gradients on the normal equations (CGLS)
/// started at zero. The operators are only ever applied as mode products.
pub fn ls_baseline(
    views: &AggregatedViews,
    op: &AggregationOperator,
    cg_iterations: usize,
) -> Result<(Tensor3, SolverReport)> {
    check_views(views, op)?;
    let start = Instant::now();
    let a = StackedOperator {
        op,
        mask_t: views.mask_t.to_tensor(),
        mask_c: views.mask_c.to_tensor(),
    };
    let mut report = SolverReport::new("ls");
    let mut x = Tensor3::zeros(op.fine_dims())?;
    let mut r_t = views.y_t.masked(&views.mask_t)?;
    let mut r_c = views.y_c.masked(&views.mask_c)?;
    let b_norm = (r_t.frobenius_norm_sq() + r_c.frobenius_norm_sq()).sqrt();
    let mut s = a.adjoint(&r_t, &r_c)?;
    let s0 = s.frobenius_norm();
    let mut p = s.clone();
    let mut gamma = s.frobenius_norm_sq();
    let residual = |r_t: &Tensor3, r_c: &Tensor3| {
        let n = (r_t.frobenius_norm_sq() + r_c.frobenius_norm_sq()).sqrt();
        if b_norm > 0.0 {
            n / b_norm
        } else {
            0.0
        }
    };
    let push = |report: &mut SolverReport, it: usize, r: f64, step: f64| {
        report.trace.push(TraceEntry {
            iteration: it,
            block: "x",
            cost: r,
            step,
            elapsed_ms: ms(start),
            column_sum_gap: None,
        });
    };
    push(&mut report, 0, residual(&r_t, &r_c), 0.0);
    report.status = SolverStatus::MaxIterations;
    if s0 == 0.0 {
        report.status = SolverStatus::Converged;
    }
    while report.status == SolverStatus::MaxIterations && report.iterations < cg_iterations {
        let (q_t, q_c) = a.apply(&p)?;
        let qq = q_t.frobenius_norm_sq() + q_c.frobenius_norm_sq();
        if !(qq > 0.0) {
            report.status = SolverStatus::Stationary;
            break;
        }
        let alpha = gamma / qq;
        x = add(&x, &p, alpha)?;
        r_t = add(&r_t, &q_t, -alpha)?;
        r_c = add(&r_c, &q_c, -alpha)?;
        s = a.adjoint(&r_t, &r_c)?;
        let gamma_new = s.frobenius_norm_sq();
        report.iterations += 1;
        let it = report.iterations;
        push(&mut report, it, residual(&r_t, &r_c), alpha);
        if gamma_new.sqrt() <= CG_TOLERANCE * s0 {
            report.status = SolverStatus::Converged;
            break;
        }
        p = add(&s, &p, gamma_new / gamma)?;
        gamma = gamma_new;
    }
    report.final_cost = residual(&r_t, &r_c);
    if report.status == SolverStatus::MaxIterations {
        report.warn(format!(
            "conjugate gradients stopped after {} iterations with relative residual {:e}",
            report.iterations, report.final_cost
        ));
    }
    report.wall_ms = ms(start);
    Ok((x, report))
}

/// Coupled factorization of the mode-3 unfoldings,
/// `Y3t ~ A (W B)^T` and `Y3c ~ (V kron U) A B^T`, with `A: IJ x R` and
/// `B: K x R`.
pub struct CmtfProblem<'a> {
    op: &'a AggregationOperator,
    y_t: Matrix,
    w_t: Matrix,
    y_c: Matrix,
    w_c: Matrix,
}

impl<'a> CmtfProblem<'a> {
    pub fn new(views: &AggregatedViews, op: &'a AggregationOperator) -> Result<Self> {
        check_views(views, op)?;
        Ok(Self {
            op,
            y_t: unfold(&views.y_t.masked(&views.mask_t)?, Mode::Three),
            w_t: unfold(&views.mask_t.to_tensor(), Mode::Three),
            y_c: unfold(&views.y_c.masked(&views.mask_c)?, Mode::Three),
            w_c: unfold(&views.mask_c.to_tensor(), Mode::Three),
        })
    }

    /// `(V kron U) m`, column by column.
    pub fn project(&self, m: &Matrix) -> Matrix {
        let (i, j) = (self.op.u.cols(), self.op.v.cols());
        let (iu, jv) = (self.op.u.rows(), self.op.v.rows());
        let mut out = Matrix::zeros(iu * jv, m.ncols());
        for r in 0..m.ncols() {
            let slab = Matrix::from_column_slice(i, j, m.column(r).as_slice());
            let agg = self.op.u.matrix() * slab * self.op.v.matrix().transpose();
            out.set_column(r, &nalgebra::DVector::from_column_slice(agg.as_slice()));
        }
        out
    }

    /// `(V kron U)^T m`, column by column.
    pub fn project_adjoint(&self, m: &Matrix) -> Matrix {
        let (i, j) = (self.op.u.cols(), self.op.v.cols());
        let (iu, jv) = (self.op.u.rows(), self.op.v.rows());
        let mut out = Matrix::zeros(i * j, m.ncols());
        for r in 0..m.ncols() {
            let slab = Matrix::from_column_slice(iu, jv, m.column(r).as_slice());
            let back = self.op.u.matrix().transpose() * slab * self.op.v.matrix();
            out.set_column(r, &nalgebra::DVector::from_column_slice(back.as_slice()));
        }
        out
    }

    fn residuals(&self, a: &Matrix, b: &Matrix) -> (Matrix, Matrix) {
        let wb = self.op.w.matrix() * b;
        let mut e_t = a * wb.transpose();
        e_t.component_mul_assign(&self.w_t);
        e_t -= &self.y_t;
        let mut e_c = self.project(a) * b.transpose();
        e_c.component_mul_assign(&self.w_c);
        e_c -= &self.y_c;
        (e_t, e_c)
    }

    pub fn cost(&self, a: &Matrix, b: &Matrix) -> f64 {
        let (e_t, e_c) = self.residuals(a, b);
        e_t.norm_squared() + e_c.norm_squared()
    }

    /// Gradients with respect to `A` and `B`.
    pub fn gradients(&self, a: &Matrix, b: &Matrix) -> (Matrix, Matrix) {
        let (e_t, e_c) = self.residuals(a, b);
        let wb = self.op.w.matrix() * b;
        let ga = (&e_t * &wb + self.project_adjoint(&(&e_c * b))) * 2.0;
        let gb = (self.op.w.matrix().transpose() * e_t.transpose() * a + e_c.transpose() * self.project(a)) * 2.0;
        (ga, gb)
    }

    /// Exact step along `-dir` for block `A` (`block_a`) or `B`.
    pub fn exact_step(&self, a: &Matrix, b: &Matrix, dir: &Matrix, block_a: bool) -> f64 {
        let (e_t, e_c) = self.residuals(a, b);
        let (mut g_t, mut g_c) = if block_a {
            (dir * (self.op.w.matrix() * b).transpose(), self.project(dir) * b.transpose())
        } else {
            (a * (self.op.w.matrix() * dir).transpose(), self.project(a) * dir.transpose())
        };
        g_t.component_mul_assign(&self.w_t);
        g_c.component_mul_assign(&self.w_c);
        let terms = LineSearchTerms {
            residuals: vec![
                ResidualPair {
                    term: 0,
                    e: e_t.as_slice(),
                    g: g_t.as_slice(),
                    weight: 1.0,
                },
                ResidualPair {
                    term: 1,
                    e: e_c.as_slice(),
                    g: g_c.as_slice(),
                    weight: 1.0,
                },
            ],
            penalty: None,
        };
        exact_step(&terms).step
    }

    /// Truncated SVD of the zero-filled temporal unfolding gives `A`;
    /// `B` is then fitted row by row to the contemporaneous unfolding.
    pub fn init(&self, rank: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let svd = SVD::new(self.y_t.clone(), true, false);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
        let rows = self.y_t.nrows();
        let mut a = random_matrix(rows, rank, &mut rng) * 1e-3;
        for (c, &idx) in order.iter().take(rank).enumerate() {
            let sv = svd.singular_values[idx];
            if sv > 0.0 {
                a.set_column(c, &(u.column(idx) * sv));
            }
        }
        let mut b = random_matrix(self.y_c.ncols(), rank, &mut rng);
        masked_row_solve(&self.y_c, &self.w_c, &self.project(&a), &mut b);
        (a, b)
    }
}

pub fn cmtf_baseline(
    views: &AggregatedViews,
    op: &AggregationOperator,
    rank: usize,
    iterations: usize,
    seed: u64,
) -> Result<(Tensor3, SolverReport)> {
    if rank == 0 {
        return Err(crate::Error::InvalidArgument("rank must be at least 1".into()));
    }
    let start = Instant::now();
    let prob = CmtfProblem::new(views, op)?;
    let (mut a, mut b) = prob.init(rank, seed);
    let mut report = SolverReport::new("cmtf");
    let push = |report: &mut SolverReport, it: usize, block: &'static str, cost: f64, step: f64| {
        report.trace.push(TraceEntry {
            iteration: it,
            block,
            cost,
            step,
            elapsed_ms: ms(start),
            column_sum_gap: None,
        })
    };
    push(&mut report, 0, "init", prob.cost(&a, &b), 0.0);
    report.status = SolverStatus::MaxIterations;
    for it in 1..=iterations {
        let (ga, _) = prob.gradients(&a, &b);
        let sa = prob.exact_step(&a, &b, &ga, true);
        a -= &ga * sa;
        push(&mut report, it, "A", prob.cost(&a, &b), sa);
        let (_, gb) = prob.gradients(&a, &b);
        let sb = prob.exact_step(&a, &b, &gb, false);
        b -= &gb * sb;
        push(&mut report, it, "B", prob.cost(&a, &b), sb);
        report.iterations = it;
        if sa == 0.0 && sb == 0.0 {
            report.status = SolverStatus::Stationary;
            break;
        }
    }
    report.final_cost = prob.cost(&a, &b);
    let x3 = a * b.transpose();
    let x = Tensor3::from_vec(op.fine_dims(), x3.as_slice().to_vec())?;
    report.wall_ms = ms(start);
    Ok((x, report))
}

/// CPD fitted to the ground truth on `mask`; a lower reference for the
/// coupled solvers.
pub fn cpd_oracle(
    x: &Tensor3,
    mask: &MaskTensor3,
    rank: usize,
    sweeps: usize,
    seed: u64,
) -> Result<(Tensor3, SolverReport)> {
    let start = Instant::now();
    let mut report = SolverReport::new("cpd-oracle");
    if mask.count_observed() == 0 {
        report.warn("no observed entries; returning the starting point");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = svd_factors(x, mask, rank, &mut rng)?;
    let f = cpd_als_from(x, mask, init, sweeps)?;
    report.iterations = sweeps;
    report.status = SolverStatus::MaxIterations;
    report.final_cost = crate::cpd::masked_cost(x, mask, &f)?;
    report.wall_ms = ms(start);
    Ok((reconstruct(&f, x.dims())?, report))
}
