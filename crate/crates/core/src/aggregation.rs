//! Aggregation operators and generation of aggregated, partially observed
//! views from a fine-resolution tensor.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{mode_product, Dims, MaskTensor3, Matrix, Mode, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationKind {
    Sum,
    Average,
    Identity,
}

impl AggregationKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregationKind::Sum => "sum",
            AggregationKind::Average => "average",
            AggregationKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "average" | "mean" => Ok(Self::Average),
            "identity" => Ok(Self::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown aggregation kind `{other}` (expected sum, average or identity)"
            ))),
        }
    }
}

/// Builds the aggregation matrix whose row `g` sums (or averages) the
/// members of `groups[g]`. Indices are 0-based. Indices in no group give
/// all-zero columns; indices in several groups give overlapping columns.
pub fn build_partition_operator(
    n: usize,
    groups: &[Vec<usize>],
    kind: AggregationKind,
) -> Result<Matrix> {
    if kind == AggregationKind::Identity {
        return Err(Error::InvalidArgument(
            "identity operators are not built from groups".into(),
        ));
    }
    let mut m = Matrix::zeros(groups.len(), n);
    for (g, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!("group {g} is empty")));
        }
        let weight = match kind {
            AggregationKind::Sum => 1.0,
            _ => 1.0 / members.len() as f64,
        };
        for &idx in members {
            if idx >= n {
                return Err(Error::InvalidArgument(format!(
                    "group {g} contains index {idx}, out of range for size {n}"
                )));
            }
            m[(g, idx)] = weight;
        }
    }
    Ok(m)
}

/// Contiguous windows of `width` indices over `0..n`; the last window is
/// shorter when `width` does not divide `n`.
pub fn contiguous_groups(n: usize, width: usize) -> Vec<Vec<usize>> {
    let width = width.max(1);
    (0..n)
        .step_by(width)
        .map(|start| (start..(start + width).min(n)).collect())
        .collect()
}

/// Aggregation along a single mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOperator {
    matrix: Matrix,
    kind: AggregationKind,
    overlapping: bool,
}

impl ModeOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: Matrix::identity(n, n),
            kind: AggregationKind::Identity,
            overlapping: false,
        }
    }

    pub fn from_groups(n: usize, groups: &[Vec<usize>], kind: AggregationKind) -> Result<Self> {
        let matrix = build_partition_operator(n, groups, kind)?;
        Self::from_matrix(matrix, kind)
    }

    pub fn contiguous(n: usize, width: usize, kind: AggregationKind) -> Result<Self> {
        if width <= 1 || kind == AggregationKind::Identity {
            return Ok(Self::identity(n));
        }
        Self::from_groups(n, &contiguous_groups(n, width), kind)
    }

    /// Validates an explicit matrix against the structural rules of `kind`.
    pub fn from_matrix(matrix: Matrix, kind: AggregationKind) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("empty aggregation matrix".into()));
        }
        if rows > cols {
            return Err(Error::InvalidArgument(format!(
                "aggregation matrix must be fat, got {rows}x{cols}"
            )));
        }
        if matrix.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "aggregation matrix entries must be finite and nonnegative".into(),
            ));
        }
        match kind {
            AggregationKind::Identity => {
                if matrix != Matrix::identity(rows, cols) {
                    return Err(Error::InvalidArgument("identity kind with a non-identity matrix".into()));
                }
            }
            AggregationKind::Sum => {
                if matrix.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidArgument("sum-kind entries must be 0 or 1".into()));
                }
            }
            AggregationKind::Average => {
                for (r, row) in matrix.row_iter().enumerate() {
                    if (row.sum() - 1.0).abs() > 1e-12 {
                        return Err(Error::InvalidArgument(format!(
                            "average-kind row {r} sums to {}, expected 1",
                            row.sum()
                        )));
                    }
                }
            }
        }
        let overlapping = matrix
            .column_iter()
            .any(|c| c.iter().filter(|&&v| v != 0.0).count() > 1);
        Ok(Self {
            matrix,
            kind,
            overlapping,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn kind(&self) -> AggregationKind {
        self.kind
    }

    pub fn is_overlapping(&self) -> bool {
        self.overlapping
    }

    pub fn is_identity(&self) -> bool {
        self.kind == AggregationKind::Identity
            || (self.matrix.is_square() && self.matrix == Matrix::identity(self.rows(), self.cols()))
    }

    /// Aggregated size.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Fine size.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Aggregated rows that include fine index `col`.
    pub fn covering_rows(&self, col: usize) -> Vec<usize> {
        (0..self.rows())
            .filter(|&r| self.matrix[(r, col)] != 0.0)
            .collect()
    }

    /// Number of fine indices aggregated into `row`.
    pub fn row_support(&self, row: usize) -> usize {
        self.matrix.row(row).iter().filter(|&&v| v != 0.0).count()
    }
}

/// The triple `(U, V, W)`: `U` aggregates mode 1 and `V` mode 2 of the
/// contemporaneous view; `W` aggregates mode 3 of the temporal view.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOperator {
    pub u: ModeOperator,
    pub v: ModeOperator,
    pub w: ModeOperator,
}

impl AggregationOperator {
    pub fn new(u: ModeOperator, v: ModeOperator, w: ModeOperator) -> Self {
        Self { u, v, w }
    }

    pub fn identity(dims: Dims) -> Self {
        Self {
            u: ModeOperator::identity(dims.i),
            v: ModeOperator::identity(dims.j),
            w: ModeOperator::identity(dims.k),
        }
    }

    /// Fine dims implied by the operator.
    pub fn fine_dims(&self) -> Dims {
        Dims::new(self.u.cols(), self.v.cols(), self.w.cols())
    }

    pub fn temporal_dims(&self) -> Dims {
        Dims::new(self.u.cols(), self.v.cols(), self.w.rows())
    }

    pub fn contemporaneous_dims(&self) -> Dims {
        Dims::new(self.u.rows(), self.v.rows(), self.w.cols())
    }

    pub fn check_fine(&self, dims: Dims) -> Result<()> {
        if self.fine_dims() != dims {
            return shape_err(format!(
                "operator acts on {} tensors, got {}",
                self.fine_dims(),
                dims
            ));
        }
        Ok(())
    }

    /// `x x_3 W`.
    pub fn temporal(&self, x: &Tensor3) -> Result<Tensor3> {
        self.check_fine(x.dims())?;
        mode_product(x, self.w.matrix(), Mode::Three)
    }

    /// `x x_1 U x_2 V`.
    pub fn contemporaneous(&self, x: &Tensor3) -> Result<Tensor3> {
        self.check_fine(x.dims())?;
        let y = mode_product(x, self.u.matrix(), Mode::One)?;
        mode_product(&y, self.v.matrix(), Mode::Two)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Contemporaneous view aggregated over mode 1 only (`V = I`).
    A,
    /// Contemporaneous view aggregated over modes 1 and 2.
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub temporal_window: usize,
    pub mode1_group: usize,
    /// Ignored under scenario A.
    pub mode2_group: usize,
    pub kind: AggregationKind,
    pub missing_t: f64,
    pub missing_c: f64,
    /// Minimum observed entries per frontal slab of the contemporaneous view.
    pub mask_floor: Option<usize>,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            scenario: Scenario::A,
            temporal_window: 4,
            mode1_group: 4,
            mode2_group: 1,
            kind: AggregationKind::Sum,
            missing_t: 0.0,
            missing_c: 0.0,
            mask_floor: None,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    /// Contiguous-window operator for `dims`.
    pub fn operator(&self, dims: Dims) -> Result<AggregationOperator> {
        let u = ModeOperator::contiguous(dims.i, self.mode1_group, self.kind)?;
        let v = match self.scenario {
            Scenario::A => ModeOperator::identity(dims.j),
            Scenario::B => ModeOperator::contiguous(dims.j, self.mode2_group, self.kind)?,
        };
        let w = ModeOperator::contiguous(dims.k, self.temporal_window, self.kind)?;
        Ok(AggregationOperator::new(u, v, w))
    }

    /// Number of fine atoms behind one contemporaneous measurement times the
    /// temporal window; a single scalar for plotting sweeps.
    pub fn aggregation_level(&self) -> usize {
        let m2 = match self.scenario {
            Scenario::A => 1,
            Scenario::B => self.mode2_group.max(1),
        };
        self.temporal_window.max(1) * self.mode1_group.max(1) * m2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedViews {
    pub y_t: Tensor3,
    pub mask_t: MaskTensor3,
    pub y_c: Tensor3,
    pub mask_c: MaskTensor3,
}

/// Forms both views of `x`, then hides entries at the requested rates.
/// Hidden entries are stored as 0.
pub fn aggregate_views(
    x: &Tensor3,
    op: &AggregationOperator,
    spec: &ScenarioSpec,
) -> Result<AggregatedViews> {
    for (name, rate) in [("missing_t", spec.missing_t), ("missing_c", spec.missing_c)] {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {rate}")));
        }
    }
    if spec.scenario == Scenario::A && !op.v.is_identity() {
        return Err(Error::InvalidArgument("scenario A requires V = I".into()));
    }
    let y_t = op.temporal(x)?;
    let y_c = op.contemporaneous(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mask_t = sample_mask(y_t.dims(), spec.missing_t, &mut rng)?;
    let mut mask_c = sample_mask(y_c.dims(), spec.missing_c, &mut rng)?;
    if let Some(floor) = spec.mask_floor {
        enforce_slab_floor(&mut mask_c, floor, &mut rng)?;
    }
    Ok(AggregatedViews {
        y_t: y_t.masked(&mask_t)?,
        mask_t,
        y_c: y_c.masked(&mask_c)?,
        mask_c,
    })
}

/// Hides `round(rate * n)` uniformly chosen entries.
pub fn sample_mask(dims: Dims, rate: f64, rng: &mut ChaCha8Rng) -> Result<MaskTensor3> {
    let mut mask = MaskTensor3::full(dims)?;
    let n = dims.len();
    let hidden = ((rate * n as f64).round() as usize).min(n);
    if hidden == 0 {
        return Ok(mask);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut bits = mask.bits().to_vec();
    for &idx in &order[..hidden] {
        bits[idx] = false;
    }
    mask = MaskTensor3::from_bits(dims, bits)?;
    Ok(mask)
}

/// Re-reveals random entries until every frontal slab has at least `floor`
/// observed entries.
pub fn enforce_slab_floor(mask: &mut MaskTensor3, floor: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let d = mask.dims();
    let slab = d.i * d.j;
    if floor > slab {
        return Err(Error::InfeasibleMaskFloor {
            floor,
            slab_size: slab,
        });
    }
    for k in 0..d.k {
        let mut hidden: Vec<(usize, usize)> = Vec::new();
        let mut observed = 0;
        for j in 0..d.j {
            for i in 0..d.i {
                if mask.get(i, j, k) {
                    observed += 1;
                } else {
                    hidden.push((i, j));
                }
            }
        }
        if observed >= floor {
            continue;
        }
        hidden.shuffle(rng);
        for &(i, j) in hidden.iter().take(floor - observed) {
            mask.set(i, j, k, true);
        }
    }
    Ok(())
}

/// Largest rank for which the coupled model is identifiable almost surely:
/// `floor(min(IJ, I K_w, J K_w, 16 I_u J_v) / 16)`.
pub fn rank_bound(dims: Dims, op: &AggregationOperator) -> usize {
    let kw = op.w.rows();
    let (iu, jv) = (op.u.rows(), op.v.rows());
    let m = [dims.i * dims.j, dims.i * kw, dims.j * kw, 16 * iu * jv]
        .into_iter()
        .min()
        .unwrap_or(0);
    m / 16
}
