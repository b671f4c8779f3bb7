//! Khatri-Rao products, masked coupled-CPD gradients and exact line search.
//!
//! Every objective in this crate is a weighted sum of masked CPD fits
//!
//! ```text
//!     w * || Omega (.) ( [[ P1 F_a, P2 F_b, P3 F_c ]] - Y ) ||_F^2
//! ```
//!
//! where each `F` is one of the block variables and each `P` is either an
//! aggregation matrix or the identity, plus optionally the column-sum
//! penalty `mu * || 1^T F_fine - 1^T F_coarse ||^2`. [`CoupledObjective`]
//! describes such a sum once; gradients and exact steps for any block come
//! out of the same code path.
//!
//! Residuals are stored as `model - data` throughout. Moving block `F` to
//! `F - s * G` changes each masked residual to `E - s * Gdir`, so the cost
//! along the line is a quadratic in `s` whose nonnegative minimizer is
//! `max(0, sum w <E, Gdir> / sum w <Gdir, Gdir>)`.

use std::borrow::Cow;

use crate::error::{shape_err, Result};
use crate::tensor::{unfold, Dims, MaskTensor3, Matrix, Mode, Tensor3};

/// Column-wise Kronecker product. Row `p * Q + q` of the result is
/// `m1[p, :] .* m2[q, :]`, so `khatri_rao(B, A)` pairs with the mode-3
/// unfolding and `khatri_rao(C, B)` with mode 1.
pub fn khatri_rao(m1: &Matrix, m2: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(0, 0);
    khatri_rao_into(m1, m2, &mut out)?;
    Ok(out)
}

fn khatri_rao_into(m1: &Matrix, m2: &Matrix, out: &mut Matrix) -> Result<()> {
    if m1.ncols() != m2.ncols() {
        return shape_err(format!(
            "Khatri-Rao operands have {} and {} columns",
            m1.ncols(),
            m2.ncols()
        ));
    }
    let (p, q, r) = (m1.nrows(), m2.nrows(), m1.ncols());
    if out.shape() != (p * q, r) {
        *out = Matrix::zeros(p * q, r);
    }
    for c in 0..r {
        let a = m1.column(c);
        let b = m2.column(c);
        let mut dst = out.column_mut(c);
        for (pi, &av) in a.iter().enumerate() {
            let base = pi * q;
            for (qi, &bv) in b.iter().enumerate() {
                dst[base + qi] = av * bv;
            }
        }
    }
    Ok(())
}

/// One factor position of a data term: the effective factor is
/// `op * vars[var]`, or `vars[var]` itself when `op` is `None`.
#[derive(Debug, Clone)]
pub struct Slot {
    pub var: usize,
    pub op: Option<Matrix>,
}

impl Slot {
    pub fn plain(var: usize) -> Self {
        Self { var, op: None }
    }

    pub fn aggregated(var: usize, op: Matrix) -> Self {
        Self { var, op: Some(op) }
    }

    fn effective<'a>(&self, vars: &'a [Matrix]) -> Cow<'a, Matrix> {
        match &self.op {
            Some(op) => Cow::Owned(op * &vars[self.var]),
            None => Cow::Borrowed(&vars[self.var]),
        }
    }
}

/// A masked CPD fit of one observed tensor.
#[derive(Debug, Clone)]
pub struct DataTerm {
    label: &'static str,
    slots: [Slot; 3],
    weight: f64,
    dims: Dims,
    data: [Matrix; 3],
    /// `None` when every entry is observed.
    mask: Option<[Matrix; 3]>,
    observed: usize,
}

impl DataTerm {
    pub fn new(
        label: &'static str,
        data: &Tensor3,
        mask: &MaskTensor3,
        slots: [Slot; 3],
        weight: f64,
    ) -> Result<Self> {
        let zero_filled = data.masked(mask)?;
        let unf = |t: &Tensor3| Mode::ALL.map(|m| unfold(t, m));
        Ok(Self {
            label,
            slots,
            weight,
            dims: data.dims(),
            data: unf(&zero_filled),
            mask: (!mask.is_full()).then(|| unf(&mask.to_tensor())),
            observed: mask.count_observed(),
        })
    }

    pub fn label(&self) -> &'static str {
        self.label
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn observed(&self) -> usize {
        self.observed
    }

    fn mode_of(&self, var: usize) -> Option<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| self.slots[m.index()].var == var)
    }

    fn kr_into(&self, vars: &[Matrix], mode: Mode, out: &mut Matrix) -> Result<()> {
        let eff = |m: Mode| self.slots[m.index()].effective(vars);
        match mode {
            Mode::One => khatri_rao_into(&eff(Mode::Three), &eff(Mode::Two), out),
            Mode::Two => khatri_rao_into(&eff(Mode::Three), &eff(Mode::One), out),
            Mode::Three => khatri_rao_into(&eff(Mode::Two), &eff(Mode::One), out),
        }
    }

    fn apply_mask(&self, mode: Mode, m: &mut Matrix) {
        if let Some(mask) = &self.mask {
            m.component_mul_assign(&mask[mode.index()]);
        }
    }

    /// Unweighted masked squared residual.
    fn cost(&self, vars: &[Matrix], scratch: &mut Matrix) -> Result<f64> {
        self.kr_into(vars, Mode::Three, scratch)?;
        let c = self.slots[2].effective(vars);
        let mut model = &*scratch * c.transpose();
        self.apply_mask(Mode::Three, &mut model);
        Ok(model
            .iter()
            .zip(self.data[2].iter())
            .map(|(&m, &y)| (m - y) * (m - y))
            .sum())
    }
}

/// `mu * || 1^T F_fine - 1^T F_coarse ||^2`, tying a fine factor to its
/// aggregated counterpart.
#[derive(Debug, Clone, Copy)]
pub struct ColumnSumPenalty {
    pub fine: usize,
    pub coarse: usize,
    pub weight: f64,
}

impl ColumnSumPenalty {
    pub fn gap(&self, vars: &[Matrix]) -> Vec<f64> {
        let f = column_sums(&vars[self.fine]);
        let c = column_sums(&vars[self.coarse]);
        f.iter().zip(&c).map(|(a, b)| a - b).collect()
    }

    pub fn value(&self, vars: &[Matrix]) -> f64 {
        self.weight * self.gap(vars).iter().map(|v| v * v).sum::<f64>()
    }

    fn sign(&self, var: usize) -> Option<f64> {
        if var == self.fine {
            Some(1.0)
        } else if var == self.coarse {
            Some(-1.0)
        } else {
            None
        }
    }
}

pub fn column_sums(m: &Matrix) -> Vec<f64> {
    m.column_iter().map(|c| c.sum()).collect()
}

/// Sum of data terms plus an optional column-sum penalty over block
/// variables `vars[0..n]`.
#[derive(Debug, Clone)]
pub struct CoupledObjective {
    terms: Vec<DataTerm>,
    penalty: Option<ColumnSumPenalty>,
    var_rows: Vec<usize>,
    rank: usize,
}

impl CoupledObjective {
    /// `var_rows[v]` is the row count of block `v`; every block has `rank`
    /// columns.
    pub fn new(
        terms: Vec<DataTerm>,
        penalty: Option<ColumnSumPenalty>,
        var_rows: Vec<usize>,
        rank: usize,
    ) -> Result<Self> {
        for t in &terms {
            for mode in Mode::ALL {
                let slot = &t.slots[mode.index()];
                let Some(&rows) = var_rows.get(slot.var) else {
                    return shape_err(format!("{} term refers to unknown block {}", t.label, slot.var));
                };
                let eff_rows = match &slot.op {
                    Some(op) => {
                        if op.ncols() != rows {
                            return shape_err(format!(
                                "{} term: operator has {} columns, block {} has {} rows",
                                t.label,
                                op.ncols(),
                                slot.var,
                                rows
                            ));
                        }
                        op.nrows()
                    }
                    None => rows,
                };
                if eff_rows != t.dims.size(mode) {
                    return shape_err(format!(
                        "{} term: mode-{} size {} but effective factor has {} rows",
                        t.label,
                        mode.index() + 1,
                        t.dims.size(mode),
                        eff_rows
                    ));
                }
            }
        }
        if let Some(p) = &penalty {
            if p.fine >= var_rows.len() || p.coarse >= var_rows.len() || p.fine == p.coarse {
                return shape_err("column-sum penalty refers to invalid blocks");
            }
        }
        Ok(Self {
            terms,
            penalty,
            var_rows,
            rank,
        })
    }

    pub fn terms(&self) -> &[DataTerm] {
        &self.terms
    }

    pub fn penalty(&self) -> Option<&ColumnSumPenalty> {
        self.penalty.as_ref()
    }

    pub fn num_blocks(&self) -> usize {
        self.var_rows.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn check_vars(&self, vars: &[Matrix]) -> Result<()> {
        if vars.len() != self.var_rows.len() {
            return shape_err(format!(
                "expected {} blocks, got {}",
                self.var_rows.len(),
                vars.len()
            ));
        }
        for (v, (m, &rows)) in vars.iter().zip(&self.var_rows).enumerate() {
            if m.shape() != (rows, self.rank) {
                return shape_err(format!(
                    "block {v} must be {}x{}, got {}x{}",
                    rows,
                    self.rank,
                    m.nrows(),
                    m.ncols()
                ));
            }
        }
        Ok(())
    }

    /// Weighted per-term costs (penalty excluded).
    pub fn term_costs(&self, vars: &[Matrix]) -> Result<Vec<f64>> {
        self.check_vars(vars)?;
        let mut scratch = Matrix::zeros(0, 0);
        self.terms
            .iter()
            .map(|t| Ok(t.weight * t.cost(vars, &mut scratch)?))
            .collect()
    }

    pub fn cost(&self, vars: &[Matrix]) -> Result<f64> {
        let data: f64 = self.term_costs(vars)?.iter().sum();
        Ok(data + self.penalty.map_or(0.0, |p| p.value(vars)))
    }

    pub fn workspace(&self, vars: &[Matrix]) -> Result<GradientWorkspace> {
        let mut ws = GradientWorkspace::default();
        ws.reset(self, vars)?;
        Ok(ws)
    }

    /// Gradient of the whole objective with respect to block `var`. Leaves
    /// the Khatri-Rao products and masked residuals of every term touching
    /// `var` in `ws` for [`Self::directional_terms`].
    pub fn gradient(&self, vars: &[Matrix], var: usize, ws: &mut GradientWorkspace) -> Result<Matrix> {
        self.check_vars(vars)?;
        ws.ensure_terms(self.terms.len());
        ws.block = Some(var);
        let mut grad = Matrix::zeros(self.var_rows[var], self.rank);
        for (t, scratch) in self.terms.iter().zip(ws.terms.iter_mut()) {
            scratch.mode = t.mode_of(var);
            let Some(mode) = scratch.mode else { continue };
            let slot = &t.slots[mode.index()];
            t.kr_into(vars, mode, &mut scratch.kr)?;
            ws.khatri_rao_evals += 1;

            // E = mask (.) (KR * F_eff^T) - Y, where Y is already zero-filled.
            let eff = slot.effective(vars);
            let eff_t = eff.transpose();
            let rows = scratch.kr.nrows();
            if scratch.resid.shape() != (rows, eff.nrows()) {
                scratch.resid = Matrix::zeros(rows, eff.nrows());
            }
            scratch.resid.gemm(1.0, &scratch.kr, &eff_t, 0.0);
            t.apply_mask(mode, &mut scratch.resid);
            scratch.resid -= &t.data[mode.index()];

            let m = scratch.resid.tr_mul(&scratch.kr);
            let contrib = match &slot.op {
                Some(op) => op.tr_mul(&m),
                None => m,
            };
            grad += contrib * (2.0 * t.weight);
        }
        if let Some(p) = &self.penalty {
            if let Some(sign) = p.sign(var) {
                let gap = p.gap(vars);
                for (r, g) in gap.iter().enumerate() {
                    grad.column_mut(r).add_scalar_mut(sign * 2.0 * p.weight * g);
                }
            }
        }
        Ok(grad)
    }

    /// Residual/direction pairs for moving block `var` along `-dir`.
    /// Reuses the Khatri-Rao products and residuals left by
    /// [`Self::gradient`]; call it right after, with the same `vars`.
    pub fn directional_terms<'a>(
        &self,
        vars: &[Matrix],
        var: usize,
        dir: &Matrix,
        ws: &'a mut GradientWorkspace,
    ) -> Result<LineSearchTerms<'a>> {
        if ws.block != Some(var) || ws.terms.len() != self.terms.len() {
            return shape_err(format!(
                "workspace holds block {:?}, directional terms requested for block {var}",
                ws.block
            ));
        }
        if dir.shape() != (self.var_rows[var], self.rank) {
            return shape_err("direction shape differs from its block");
        }
        for (t, scratch) in self.terms.iter().zip(ws.terms.iter_mut()) {
            let Some(mode) = scratch.mode else { continue };
            let slot = &t.slots[mode.index()];
            let d_eff = match &slot.op {
                Some(op) => op * dir,
                None => dir.clone(),
            };
            let rows = scratch.kr.nrows();
            if scratch.dir.shape() != (rows, d_eff.nrows()) {
                scratch.dir = Matrix::zeros(rows, d_eff.nrows());
            }
            scratch.dir.gemm(1.0, &scratch.kr, &d_eff.transpose(), 0.0);
            t.apply_mask(mode, &mut scratch.dir);
        }
        let penalty = match &self.penalty {
            Some(p) => p.sign(var).map(|sign| PenaltyPair {
                e: p.gap(vars),
                d: column_sums(dir).into_iter().map(|s| sign * s).collect(),
                weight: p.weight,
            }),
            None => None,
        };
        let ws: &'a GradientWorkspace = ws;
        let residuals = self
            .terms
            .iter()
            .zip(ws.terms.iter())
            .enumerate()
            .filter(|(_, (_, s))| s.mode.is_some())
            .map(|(idx, (t, s))| ResidualPair {
                term: idx,
                e: s.resid.as_slice(),
                g: s.dir.as_slice(),
                weight: t.weight,
            })
            .collect();
        Ok(LineSearchTerms { residuals, penalty })
    }

    /// One BCD update of block `var`: negative-gradient direction with the
    /// exact step. Keeps the cost cache in `ws` current.
    pub fn update_block(
        &self,
        vars: &mut [Matrix],
        var: usize,
        ws: &mut GradientWorkspace,
    ) -> Result<BlockUpdate> {
        if ws.term_costs.len() != self.terms.len() {
            ws.reset(self, vars)?;
        }
        let cost_before = ws.cost();
        let grad = self.gradient(vars, var, ws)?;
        let (step, per_term, penalty_after) = {
            let terms = self.directional_terms(vars, var, &grad, ws)?;
            let step = exact_step(&terms);
            let per_term: Vec<(usize, f64)> = terms
                .residuals
                .iter()
                .map(|p| (p.term, p.cost_at(step.step)))
                .collect();
            let penalty_after = terms.penalty.as_ref().map(|p| p.cost_at(step.step));
            (step, per_term, penalty_after)
        };
        for (idx, c) in per_term {
            ws.term_costs[idx] = c;
        }
        if let Some(c) = penalty_after {
            ws.penalty_cost = c;
        }
        if step.step > 0.0 {
            vars[var] -= &grad * step.step;
        }
        Ok(BlockUpdate {
            block: var,
            step: step.step,
            stationary: step.stationary,
            cost_before,
            cost_after: ws.cost(),
        })
    }
}

#[derive(Debug, Clone)]
struct TermScratch {
    mode: Option<Mode>,
    kr: Matrix,
    resid: Matrix,
    dir: Matrix,
}

impl Default for TermScratch {
    fn default() -> Self {
        Self {
            mode: None,
            kr: Matrix::zeros(0, 0),
            resid: Matrix::zeros(0, 0),
            dir: Matrix::zeros(0, 0),
        }
    }
}

/// Scratch buffers reused across BCD updates: one Khatri-Rao product,
/// masked residual and directional derivative per data term, plus the
/// running cost of each term. Buffers are resized whenever the requested
/// shape changes.
#[derive(Debug, Clone, Default)]
pub struct GradientWorkspace {
    terms: Vec<TermScratch>,
    block: Option<usize>,
    term_costs: Vec<f64>,
    penalty_cost: f64,
    /// Number of Khatri-Rao products formed so far.
    pub khatri_rao_evals: usize,
}

impl GradientWorkspace {
    fn ensure_terms(&mut self, n: usize) {
        if self.terms.len() != n {
            self.terms = vec![TermScratch::default(); n];
        }
    }

    /// Recomputes the cost cache from scratch.
    pub fn reset(&mut self, obj: &CoupledObjective, vars: &[Matrix]) -> Result<()> {
        self.term_costs = obj.term_costs(vars)?;
        self.penalty_cost = obj.penalty.map_or(0.0, |p| p.value(vars));
        self.ensure_terms(obj.terms.len());
        self.block = None;
        Ok(())
    }

    /// Cached objective value after the last update.
    pub fn cost(&self) -> f64 {
        self.term_costs.iter().sum::<f64>() + self.penalty_cost
    }

    pub fn term_costs(&self) -> &[f64] {
        &self.term_costs
    }

    pub fn penalty_cost(&self) -> f64 {
        self.penalty_cost
    }
}

/// Vectorized masked residual `e` of one data term and the matching
/// directional derivative `g`.
#[derive(Debug, Clone)]
pub struct ResidualPair<'a> {
    pub term: usize,
    pub e: &'a [f64],
    pub g: &'a [f64],
    pub weight: f64,
}

impl ResidualPair<'_> {
    pub fn cost_at(&self, step: f64) -> f64 {
        self.weight
            * self
                .e
                .iter()
                .zip(self.g)
                .map(|(e, g)| {
                    let r = e - step * g;
                    r * r
                })
                .sum::<f64>()
    }
}

/// Column-sum gap `e` and its rate of change `d` along the search line.
#[derive(Debug, Clone)]
pub struct PenaltyPair {
    pub e: Vec<f64>,
    pub d: Vec<f64>,
    pub weight: f64,
}

impl PenaltyPair {
    pub fn cost_at(&self, step: f64) -> f64 {
        self.weight
            * self
                .e
                .iter()
                .zip(&self.d)
                .map(|(e, d)| {
                    let r = e - step * d;
                    r * r
                })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LineSearchTerms<'a> {
    pub residuals: Vec<ResidualPair<'a>>,
    pub penalty: Option<PenaltyPair>,
}

impl LineSearchTerms<'_> {
    /// Cost of the touched terms at `step` along the line.
    pub fn cost_at(&self, step: f64) -> f64 {
        self.residuals.iter().map(|p| p.cost_at(step)).sum::<f64>()
            + self.penalty.as_ref().map_or(0.0, |p| p.cost_at(step))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    pub step: f64,
    /// The search direction vanished on every term.
    pub stationary: bool,
}

pub const DENOMINATOR_FLOOR: f64 = 1e-300;

/// Nonnegative minimizer of the quadratic cost along the line.
pub fn exact_step(terms: &LineSearchTerms) -> StepSize {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut num = 0.0;
    let mut den = 0.0;
    for p in &terms.residuals {
        debug_assert_eq!(p.e.len(), p.g.len());
        num += p.weight * dot(p.e, p.g);
        den += p.weight * dot(p.g, p.g);
    }
    if let Some(p) = &terms.penalty {
        num += p.weight * dot(&p.e, &p.d);
        den += p.weight * dot(&p.d, &p.d);
    }
    if !(den >= DENOMINATOR_FLOOR) {
        return StepSize {
            step: 0.0,
            stationary: true,
        };
    }
    StepSize {
        step: (num / den).max(0.0),
        stationary: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockUpdate {
    pub block: usize,
    pub step: f64,
    pub stationary: bool,
    pub cost_before: f64,
    pub cost_after: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn khatri_rao_small_cases() {
        let a = Matrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let b = Matrix::from_row_slice(2, 1, &[3.0, 4.0]);
        let k = khatri_rao(&a, &b).unwrap();
        assert_eq!(k.as_slice(), &[3.0, 4.0, 6.0, 8.0]);

        let eye = Matrix::identity(2, 2);
        let k = khatri_rao(&eye, &eye).unwrap();
        let expected = Matrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(k, expected);
        assert!(khatri_rao(&a, &eye).is_err());
    }

    #[test]
    fn khatri_rao_matches_columnwise_kronecker() {
        let a = Matrix::from_fn(3, 2, |i, r| (i as f64 - 1.0) * (r as f64 + 0.5));
        let b = Matrix::from_fn(4, 2, |i, r| (i * r) as f64 + 0.25);
        let k = khatri_rao(&a, &b).unwrap();
        for r in 0..2 {
            let kron = a.column(r).kronecker(&b.column(r));
            assert_eq!(k.column(r), kron.column(0));
        }
    }

    fn exact_terms(e: &[f64], g: &[f64]) -> f64 {
        let terms = LineSearchTerms {
            residuals: vec![ResidualPair {
                term: 0,
                e,
                g,
                weight: 1.0,
            }],
            penalty: None,
        };
        let s = exact_step(&terms);
        assert!(!s.stationary || s.step == 0.0);
        s.step
    }

    #[test]
    fn exact_step_edge_cases() {
        assert_eq!(exact_terms(&[1.0, -2.0], &[1.0, -2.0]), 1.0);
        assert_eq!(exact_terms(&[1.0, 0.0], &[-1.0, 0.0]), 0.0);
        let s = exact_step(&LineSearchTerms {
            residuals: vec![ResidualPair {
                term: 0,
                e: &[1.0],
                g: &[0.0],
                weight: 1.0,
            }],
            penalty: None,
        });
        assert_eq!(s, StepSize { step: 0.0, stationary: true });
    }

    fn tiny_objective(with_penalty: bool) -> (CoupledObjective, Vec<Matrix>) {
        let d_t = Dims::new(3, 2, 2);
        let d_c = Dims::new(2, 2, 4);
        let y_t = Tensor3::from_fn(d_t, |i, j, k| (i as f64 - j as f64 + 0.3 * k as f64).sin()).unwrap();
        let y_c = Tensor3::from_fn(d_c, |i, j, k| (0.7 * i as f64 + j as f64 - 0.2 * k as f64).cos()).unwrap();
        let mut m_t = MaskTensor3::full(d_t).unwrap();
        m_t.set(1, 1, 0, false);
        let m_c = MaskTensor3::full(d_c).unwrap();
        let u = Matrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let w = Matrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        // blocks: 0 = A (3), 1 = B (2), 2 = C (4), 3 = coarse C (2)
        let t = DataTerm::new(
            "t",
            &y_t,
            &m_t,
            [Slot::plain(0), Slot::plain(1), Slot::aggregated(2, w)],
            1.0,
        )
        .unwrap();
        let c = DataTerm::new(
            "c",
            &y_c,
            &m_c,
            [Slot::aggregated(0, u), Slot::plain(1), Slot::plain(2)],
            0.6,
        )
        .unwrap();
        let (penalty, rows) = if with_penalty {
            (
                Some(ColumnSumPenalty {
                    fine: 2,
                    coarse: 3,
                    weight: 5.0,
                }),
                vec![3, 2, 4, 2],
            )
        } else {
            (None, vec![3, 2, 4])
        };
        let obj = CoupledObjective::new(vec![t, c], penalty, rows.clone(), 2).unwrap();
        let vars = rows
            .iter()
            .enumerate()
            .map(|(v, &n)| Matrix::from_fn(n, 2, |i, r| ((v * 7 + i * 3 + r) as f64 * 0.37).sin()))
            .collect();
        (obj, vars)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for with_penalty in [false, true] {
            let (obj, vars) = tiny_objective(with_penalty);
            let mut ws = obj.workspace(&vars).unwrap();
            for var in 0..obj.num_blocks() {
                let g = obj.gradient(&vars, var, &mut ws).unwrap();
                for idx in 0..g.len() {
                    let h = 1e-6;
                    let mut plus = vars.clone();
                    plus[var].as_mut_slice()[idx] += h;
                    let mut minus = vars.clone();
                    minus[var].as_mut_slice()[idx] -= h;
                    let fd = (obj.cost(&plus).unwrap() - obj.cost(&minus).unwrap()) / (2.0 * h);
                    let an = g.as_slice()[idx];
                    assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "block {var} entry {idx}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn line_cost_matches_objective_and_update_descends() {
        let (obj, mut vars) = tiny_objective(true);
        let mut ws = obj.workspace(&vars).unwrap();
        for var in 0..obj.num_blocks() {
            let g = obj.gradient(&vars, var, &mut ws).unwrap();
            let base = obj.cost(&vars).unwrap();
            let untouched: f64 = {
                let terms = obj.directional_terms(&vars, var, &g, &mut ws).unwrap();
                base - terms.cost_at(0.0)
            };
            let terms = obj.directional_terms(&vars, var, &g, &mut ws).unwrap();
            for s in [0.0, 1e-3, 0.05] {
                let mut moved = vars.clone();
                moved[var] -= &g * s;
                let direct = obj.cost(&moved).unwrap();
                let along = untouched + terms.cost_at(s);
                assert!((direct - along).abs() < 1e-10 * (1.0 + direct));
            }
        }
        let mut prev = f64::INFINITY;
        for _ in 0..5 {
            for var in 0..obj.num_blocks() {
                let u = obj.update_block(&mut vars, var, &mut ws).unwrap();
                assert!(u.cost_after <= u.cost_before + 1e-12);
                assert!((u.cost_after - obj.cost(&vars).unwrap()).abs() < 1e-9);
                prev = u.cost_after;
            }
        }
        assert!(prev.is_finite());
    }

    #[test]
    fn objective_rejects_mismatched_blocks() {
        let (obj, vars) = tiny_objective(false);
        assert!(obj.check_vars(&vars[..2]).is_err());
        let d = Dims::new(2, 2, 2);
        let y = Tensor3::zeros(d).unwrap();
        let m = MaskTensor3::full(d).unwrap();
        let t = DataTerm::new("x", &y, &m, [Slot::plain(0), Slot::plain(0), Slot::plain(0)], 1.0).unwrap();
        assert!(CoupledObjective::new(vec![t], None, vec![3], 1).is_err());
    }
}
