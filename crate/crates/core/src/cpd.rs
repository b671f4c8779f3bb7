//! Masked CPD by alternating least squares, the per-slab linear solve for
//! a third factor, and the two-branch initialization of the coupled solver.

use nalgebra::{DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{AggregatedViews, AggregationOperator};
use crate::error::{shape_err, Error, Result};
use crate::kernels::khatri_rao;
use crate::linalg::{lstsq_full_rank, solve_spd};
use crate::tensor::{check_dims, masked_residual, unfold, Dims, FactorTriple, MaskTensor3, Matrix, Mode, Tensor3};

/// Default number of ALS sweeps used to seed the gradient solvers.
pub const DEFAULT_INIT_SWEEPS: usize = 10;

/// `rows x rank` matrix with i.i.d. uniform(-1, 1) entries.
pub fn random_matrix(rows: usize, rank: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, rank, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_factors(dims: Dims, rank: usize, rng: &mut impl Rng) -> Result<FactorTriple> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    FactorTriple::new(
        random_matrix(dims.i, rank, rng),
        random_matrix(dims.j, rank, rng),
        random_matrix(dims.k, rank, rng),
    )
}

/// Leading left singular vectors of each unfolding of the zero-filled
/// tensor. Columns beyond the mode size are uniform(-1, 1) draws from
/// `rng`. Each column is signed so its largest-magnitude entry is
/// positive, which makes the start invariant to rescaling `t`.
pub fn svd_factors(t: &Tensor3, mask: &MaskTensor3, rank: usize, rng: &mut impl Rng) -> Result<FactorTriple> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let data = t.masked(mask)?;
    let leading = |mode: Mode, rng: &mut dyn rand::RngCore| {
        let u = unfold(&data, mode);
        let n = u.ncols();
        let eig = u.tr_mul(&u).symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut f = Matrix::zeros(n, rank);
        for c in 0..rank {
            if c < n {
                let v = eig.eigenvectors.column(order[c]);
                let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                f.set_column(c, &(v * sign));
            } else {
                for r in 0..n {
                    f[(r, c)] = rng.random_range(-1.0..1.0);
                }
            }
        }
        f
    };
    FactorTriple::new(
        leading(Mode::One, rng),
        leading(Mode::Two, rng),
        leading(Mode::Three, rng),
    )
}

/// Masked CPD of `t` started from [`svd_factors`]; `seed` only matters
/// when `rank` exceeds a mode size.
pub fn cpd_als(t: &Tensor3, mask: &MaskTensor3, rank: usize, sweeps: usize, seed: u64) -> Result<FactorTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = svd_factors(t, mask, rank, &mut rng)?;
    cpd_als_from(t, mask, init, sweeps)
}

/// Masked CPD of `t` from a uniform(-1, 1) start drawn from `seed`.
pub fn cpd_als_random(t: &Tensor3, mask: &MaskTensor3, rank: usize, sweeps: usize, seed: u64) -> Result<FactorTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = random_factors(t.dims(), rank, &mut rng)?;
    cpd_als_from(t, mask, init, sweeps)
}

/// Masked CPD of `t` starting from `init`. Each factor row is solved from
/// its own observed entries; rows with no observations keep their value.
pub fn cpd_als_from(t: &Tensor3, mask: &MaskTensor3, init: FactorTriple, sweeps: usize) -> Result<FactorTriple> {
    check_dims(t.dims(), mask.dims(), "cpd_als mask")?;
    if init.dims() != t.dims() {
        return shape_err(format!("initial factors are {}, tensor is {}", init.dims(), t.dims()));
    }
    if sweeps == 0 {
        return Err(Error::InvalidArgument("at least one ALS sweep is required".into()));
    }
    let full = mask.is_full();
    let data = t.masked(mask)?;
    let m_t = mask.to_tensor();
    let y: [Matrix; 3] = Mode::ALL.map(|m| unfold(&data, m));
    let w: [Matrix; 3] = Mode::ALL.map(|m| unfold(&m_t, m));
    let mut f = [init.a, init.b, init.c];
    for _ in 0..sweeps {
        for mode in Mode::ALL {
            let n = mode.index();
            let kr = match mode {
                Mode::One => khatri_rao(&f[2], &f[1])?,
                Mode::Two => khatri_rao(&f[2], &f[0])?,
                Mode::Three => khatri_rao(&f[1], &f[0])?,
            };
            als_update(&y[n], &w[n], &kr, full, &mut f[n]);
        }
    }
    let [a, b, c] = f;
    FactorTriple::new(a, b, c)
}

/// Least-squares update of every row of `factor` against the observed
/// rows of `y = lhs * factor^T` (`w` holds the 0/1 mask). Rows with no
/// observations are left alone.
pub(crate) fn masked_row_solve(y: &Matrix, w: &Matrix, lhs: &Matrix, factor: &mut Matrix) {
    let full = w.iter().all(|&v| v != 0.0);
    als_update(y, w, lhs, full, factor);
}

fn als_update(y: &Matrix, w: &Matrix, kr: &Matrix, full: bool, factor: &mut Matrix) {
    let r = kr.ncols();
    if full {
        let gram = kr.tr_mul(kr);
        let rhs = y.tr_mul(kr);
        for row in 0..factor.nrows() {
            let b: DVector<f64> = rhs.row(row).transpose();
            if let Some(x) = solve_spd(&gram, &b) {
                factor.set_row(row, &x.transpose());
            }
        }
        return;
    }
    let mut gram = Matrix::zeros(r, r);
    let mut b = DVector::zeros(r);
    for col in 0..factor.nrows() {
        gram.fill(0.0);
        b.fill(0.0);
        let mut seen = false;
        for p in 0..kr.nrows() {
            if w[(p, col)] == 0.0 {
                continue;
            }
            seen = true;
            let krow = kr.row(p);
            let yv = y[(p, col)];
            for a in 0..r {
                b[a] += yv * krow[a];
                for c in 0..r {
                    gram[(a, c)] += krow[a] * krow[c];
                }
            }
        }
        if !seen {
            continue;
        }
        if let Some(x) = solve_spd(&gram, &b) {
            factor.set_row(col, &RowDVector::from_iterator(r, x.iter().copied()));
        }
    }
}

/// Masked squared residual of a CPD fit.
pub fn masked_cost(t: &Tensor3, mask: &MaskTensor3, f: &FactorTriple) -> Result<f64> {
    Ok(masked_residual(t, f, mask)?.1)
}

/// Solves `Y_(mode) = lhs * F^T` for `F` slab by slab, using only the
/// observed rows of each slab. `lhs` has one row per row of the mode
/// unfolding.
pub fn solve_third_factor(y: &Tensor3, mask: &MaskTensor3, lhs: &Matrix, mode: Mode) -> Result<Matrix> {
    check_dims(y.dims(), mask.dims(), "solve_third_factor mask")?;
    let (rows, slabs) = y.dims().unfolded_shape(mode);
    if lhs.nrows() != rows {
        return shape_err(format!(
            "left-hand side has {} rows, mode-{} unfolding has {}",
            lhs.nrows(),
            mode.index() + 1,
            rows
        ));
    }
    let rank = lhs.ncols();
    let yu = unfold(y, mode);
    let wu = unfold(&mask.to_tensor(), mode);
    let mut out = Matrix::zeros(slabs, rank);
    for s in 0..slabs {
        let observed: Vec<usize> = (0..rows).filter(|&p| wu[(p, s)] != 0.0).collect();
        let deficient = Error::RankDeficient {
            slab: s,
            observed: observed.len(),
            rank,
        };
        if observed.len() < rank {
            return Err(deficient);
        }
        let sub = lhs.select_rows(observed.iter());
        let rhs = DVector::from_iterator(observed.len(), observed.iter().map(|&p| yu[(p, s)]));
        let x = lstsq_full_rank(&sub, &rhs).ok_or(deficient)?;
        out.set_row(s, &x.transpose());
    }
    Ok(out)
}

/// Which view the initial CPD was fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitBranch {
    /// CPD of the contemporaneous view, then `A` from the temporal view.
    Contemporaneous,
    /// CPD of the temporal view, then `C` from the contemporaneous view.
    Temporal,
}

/// Seeds the coupled solver. When `V = I` and `K > I` the contemporaneous
/// view is decomposed and `A` solved from `Y1t = ((W C) . B) A^T`;
/// otherwise the temporal view is decomposed and `C` solved from
/// `Y3c = ((V B) . (U A)) C^T`. Missing entries count as zeros only here.
pub fn prema_init(
    views: &AggregatedViews,
    op: &AggregationOperator,
    rank: usize,
    sweeps: usize,
    seed: u64,
) -> Result<(FactorTriple, InitBranch)> {
    let dims = op.fine_dims();
    check_dims(views.y_t.dims(), op.temporal_dims(), "temporal view")?;
    check_dims(views.y_c.dims(), op.contemporaneous_dims(), "contemporaneous view")?;
    if op.v.is_identity() && dims.k > dims.i {
        let cp = cpd_als(&views.y_c, &views.mask_c, rank, sweeps, seed)?;
        let wc = op.w.matrix() * &cp.c;
        let lhs = khatri_rao(&wc, &cp.b)?;
        let a = solve_third_factor(&views.y_t, &views.mask_t, &lhs, Mode::One)?;
        Ok((FactorTriple::new(a, cp.b, cp.c)?, InitBranch::Contemporaneous))
    } else {
        let cp = cpd_als(&views.y_t, &views.mask_t, rank, sweeps, seed)?;
        let vb = op.v.matrix() * &cp.b;
        let ua = op.u.matrix() * &cp.a;
        let lhs = khatri_rao(&vb, &ua)?;
        let c = solve_third_factor(&views.y_c, &views.mask_c, &lhs, Mode::Three)?;
        Ok((FactorTriple::new(cp.a, cp.b, c)?, InitBranch::Temporal))
    }
}
