//! Dense third-order tensors, observation masks and CPD factor triples.
//!
//! Storage is first-index-fastest: entry `(i, j, k)` of an `I x J x K`
//! tensor lives at offset `i + I * (j + J * k)`. With this layout the
//! mode-3 unfolding is the raw buffer read as a column-major `IJ x K`
//! matrix, which is what [`nalgebra::DMatrix`] stores natively.

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::kernels::khatri_rao;

pub type Matrix = DMatrix<f64>;

/// Tensor mode, numbered 1..=3 as in the usual unfolding notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }

    pub fn from_number(n: usize) -> Result<Mode> {
        match n {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            _ => Err(Error::InvalidArgument(format!("mode must be 1, 2 or 3, got {n}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Dims {
    pub fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }

    pub fn len(&self) -> usize {
        self.i * self.j * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn size(&self, mode: Mode) -> usize {
        match mode {
            Mode::One => self.i,
            Mode::Two => self.j,
            Mode::Three => self.k,
        }
    }

    pub fn with_size(self, mode: Mode, n: usize) -> Self {
        let mut d = self;
        match mode {
            Mode::One => d.i = n,
            Mode::Two => d.j = n,
            Mode::Three => d.k = n,
        }
        d
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.i * (j + self.j * k)
    }

    /// Shape `(rows, cols)` of the mode-`mode` unfolding.
    pub fn unfolded_shape(&self, mode: Mode) -> (usize, usize) {
        match mode {
            Mode::One => (self.j * self.k, self.i),
            Mode::Two => (self.i * self.k, self.j),
            Mode::Three => (self.i * self.j, self.k),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.i == 0 || self.j == 0 || self.k == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor dims must be positive, got {}x{}x{}",
                self.i, self.j, self.k
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.i, self.j, self.k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: Dims,
    values: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: Dims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            values: vec![0.0; dims.len()],
        })
    }

    /// Wraps a first-index-fastest buffer. Rejects non-finite values.
    pub fn from_vec(dims: Dims, values: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if values.len() != dims.len() {
            return shape_err(format!(
                "{} values supplied for a {} tensor",
                values.len(),
                dims
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at offset {pos}"
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        dims.validate()?;
        let mut values = Vec::with_capacity(dims.len());
        for k in 0..dims.k {
            for j in 0..dims.j {
                for i in 0..dims.i {
                    values.push(f(i, j, k));
                }
            }
        }
        Self::from_vec(dims, values)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.dims.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let off = self.dims.offset(i, j, k);
        self.values[off] = v;
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        check_dims(self.dims, other.dims, "tensor subtraction")?;
        Ok(Tensor3 {
            dims: self.dims,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// Copy with every entry under a zero mask bit set to 0.
    pub fn masked(&self, mask: &MaskTensor3) -> Result<Tensor3> {
        check_dims(self.dims, mask.dims, "mask application")?;
        Ok(Tensor3 {
            dims: self.dims,
            values: self
                .values
                .iter()
                .zip(&mask.bits)
                .map(|(&v, &b)| if b { v } else { 0.0 })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTensor3 {
    dims: Dims,
    bits: Vec<bool>,
}

impl MaskTensor3 {
    pub fn full(dims: Dims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            bits: vec![true; dims.len()],
        })
    }

    pub fn empty(dims: Dims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            bits: vec![false; dims.len()],
        })
    }

    pub fn from_bits(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        dims.validate()?;
        if bits.len() != dims.len() {
            return shape_err(format!("{} mask bits for a {} tensor", bits.len(), dims));
        }
        Ok(Self { dims, bits })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.dims.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, observed: bool) {
        let off = self.dims.offset(i, j, k);
        self.bits[off] = observed;
    }

    pub fn count_observed(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// The mask as a 0/1 tensor, convenient for branch-free Hadamard products.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            values: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// CPD factor matrices `A: I x R`, `B: J x R`, `C: K x R`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTriple {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl FactorTriple {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let r = a.ncols();
        if r == 0 || b.ncols() != r || c.ncols() != r {
            return shape_err(format!(
                "factor column counts differ or are zero: {}, {}, {}",
                a.ncols(),
                b.ncols(),
                c.ncols()
            ));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite factor entry".into()));
        }
        Ok(Self { a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    pub fn factor(&self, mode: Mode) -> &Matrix {
        match mode {
            Mode::One => &self.a,
            Mode::Two => &self.b,
            Mode::Three => &self.c,
        }
    }
}

pub(crate) fn check_dims(a: Dims, b: Dims, what: &str) -> Result<()> {
    if a != b {
        return shape_err(format!("{what}: {a} vs {b}"));
    }
    Ok(())
}

/// Mode-n matricization: mode 1 is `JK x I`, mode 2 is `IK x J`, mode 3 is
/// `IJ x K`. Column `n` holds the vectorized n-th slab.
pub fn unfold(t: &Tensor3, mode: Mode) -> Matrix {
    unfold_slice(t.dims, &t.values, mode)
}

pub(crate) fn unfold_slice(d: Dims, values: &[f64], mode: Mode) -> Matrix {
    match mode {
        Mode::Three => Matrix::from_column_slice(d.i * d.j, d.k, values),
        Mode::One => {
            let mut m = Matrix::zeros(d.j * d.k, d.i);
            for k in 0..d.k {
                for j in 0..d.j {
                    let row = j + d.j * k;
                    let base = d.i * (j + d.j * k);
                    for i in 0..d.i {
                        m[(row, i)] = values[base + i];
                    }
                }
            }
            m
        }
        Mode::Two => {
            let mut m = Matrix::zeros(d.i * d.k, d.j);
            for k in 0..d.k {
                for j in 0..d.j {
                    let base = d.i * (j + d.j * k);
                    for i in 0..d.i {
                        m[(i + d.i * k, j)] = values[base + i];
                    }
                }
            }
            m
        }
    }
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: Mode, dims: Dims) -> Result<Tensor3> {
    dims.validate()?;
    let expected = dims.unfolded_shape(mode);
    if m.shape() != expected {
        return shape_err(format!(
            "mode-{} unfolding of a {} tensor must be {}x{}, got {}x{}",
            mode.index() + 1,
            dims,
            expected.0,
            expected.1,
            m.nrows(),
            m.ncols()
        ));
    }
    let d = dims;
    let values = match mode {
        Mode::Three => m.as_slice().to_vec(),
        Mode::One => {
            let mut v = vec![0.0; d.len()];
            for k in 0..d.k {
                for j in 0..d.j {
                    let row = j + d.j * k;
                    let base = d.i * row;
                    for i in 0..d.i {
                        v[base + i] = m[(row, i)];
                    }
                }
            }
            v
        }
        Mode::Two => {
            let mut v = vec![0.0; d.len()];
            for k in 0..d.k {
                for j in 0..d.j {
                    let base = d.i * (j + d.j * k);
                    for i in 0..d.i {
                        v[base + i] = m[(i + d.i * k, j)];
                    }
                }
            }
            v
        }
    };
    Tensor3::from_vec(dims, values)
}

/// `t x_mode m`: every mode-`mode` fiber is multiplied by `m`.
pub fn mode_product(t: &Tensor3, m: &Matrix, mode: Mode) -> Result<Tensor3> {
    let n = t.dims.size(mode);
    if m.ncols() != n {
        return shape_err(format!(
            "mode-{} product needs a matrix with {} columns, got {}x{}",
            mode.index() + 1,
            n,
            m.nrows(),
            m.ncols()
        ));
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidArgument("mode product with an empty matrix".into()));
    }
    let unfolded = unfold(t, mode);
    let product = unfolded * m.transpose();
    fold(&product, mode, t.dims.with_size(mode, m.nrows()))
}

/// Kruskal reconstruction `[[A, B, C]]`.
pub fn reconstruct(f: &FactorTriple, dims: Dims) -> Result<Tensor3> {
    if f.dims() != dims {
        return shape_err(format!(
            "factors describe a {} tensor, requested {}",
            f.dims(),
            dims
        ));
    }
    let x3 = khatri_rao(&f.b, &f.a)? * f.c.transpose();
    Tensor3::from_vec(dims, x3.as_slice().to_vec())
}

/// Masked residual `mask * (t - [[A,B,C]])` and its squared Frobenius norm.
pub fn masked_residual(
    t: &Tensor3,
    f: &FactorTriple,
    mask: &MaskTensor3,
) -> Result<(Tensor3, f64)> {
    check_dims(t.dims, mask.dims, "masked residual")?;
    let model = reconstruct(f, t.dims)?;
    let values: Vec<f64> = t
        .values
        .iter()
        .zip(&model.values)
        .zip(&mask.bits)
        .map(|((&x, &m), &b)| if b { x - m } else { 0.0 })
        .collect();
    let cost = values.iter().map(|v| v * v).sum();
    Ok((Tensor3 { dims: t.dims, values }, cost))
}
