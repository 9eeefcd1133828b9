//! Symmetric and positive definite matrices, the `vec`/Kronecker/commutation
//! toolkit, and flat coordinates on the tangent space `R^k x S(k) x R`.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_error, McdError, Result};

/// Relative eigenvalue floor used to decide positive definiteness.
pub const PD_RELATIVE_FLOOR: f64 = 1e-10;

/// A real symmetric `k x k` matrix. Symmetrized as `(M + M')/2` on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(shape_error("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    pub fn identity(k: usize) -> Self {
        SymMatrix(DMatrix::identity(k, k))
    }

    pub fn zeros(k: usize) -> Self {
        SymMatrix(DMatrix::zeros(k, k))
    }

    /// Builds a matrix from its upper triangle listed row-wise.
    pub fn from_upper(k: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != k * (k + 1) / 2 {
            return Err(shape_error(k * (k + 1) / 2, upper.len()));
        }
        let mut m = DMatrix::zeros(k, k);
        let mut idx = 0;
        for i in 0..k {
            for j in i..k {
                m[(i, j)] = upper[idx];
                m[(j, i)] = upper[idx];
                idx += 1;
            }
        }
        Ok(SymMatrix(m))
    }

    /// Upper triangle, row-wise: `A11, A12, ..., A1k, A22, ..., Akk`.
    pub fn upper(&self) -> Vec<f64> {
        let k = self.dim();
        let mut out = Vec::with_capacity(k * (k + 1) / 2);
        for i in 0..k {
            for j in i..k {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// A symmetric positive definite matrix.
///
/// Construction rejects matrices whose smallest eigenvalue does not exceed
/// `PD_RELATIVE_FLOOR` times the largest one.
#[derive(Debug, Clone, PartialEq)]
pub struct PdsMatrix(DMatrix<f64>);

impl PdsMatrix {
    pub fn new(m: SymMatrix) -> Result<Self> {
        let ev = m.eigenvalues();
        let max = ev.last().copied().unwrap_or(0.0);
        let min = ev.first().copied().unwrap_or(0.0);
        let floor = PD_RELATIVE_FLOOR * max.abs();
        if !(max > 0.0) || !(min > floor) || !min.is_finite() || !max.is_finite() {
            return Err(McdError::DegenerateMatrix {
                min_eigenvalue: min,
                floor,
            });
        }
        Ok(PdsMatrix(m.0))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SymMatrix::new(m)?)
    }

    pub fn identity(k: usize) -> Self {
        PdsMatrix(DMatrix::identity(k, k))
    }

    pub fn scaled_identity(k: usize, c: f64) -> Result<Self> {
        Self::from_matrix(DMatrix::identity(k, k) * c)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn as_sym(&self) -> SymMatrix {
        SymMatrix(self.0.clone())
    }

    pub fn determinant(&self) -> f64 {
        match self.0.clone().cholesky() {
            Some(ch) => {
                let d = ch.l_dirty().diagonal();
                d.iter().map(|x| x * x).product()
            }
            None => self.0.determinant(),
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = match self.0.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => self.0.clone().try_inverse().expect("positive definite matrix is invertible"),
        };
        (&inv + inv.transpose()) * 0.5
    }

    /// Multiplies by a scalar `c > 0`.
    pub fn scale(&self, c: f64) -> Result<Self> {
        Self::from_matrix(&self.0 * c)
    }
}

/// Symmetric positive definite square root `V diag(sqrt(l)) V'`.
pub fn pds_sqrt(c: &PdsMatrix) -> PdsMatrix {
    let eig = c.0.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    PdsMatrix((&root + root.transpose()) * 0.5)
}

/// Column stacking: entry `(j-1)k + i` holds `M_ij`.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// The `k^2 x k^2` commutation matrix with `C vec(A) = vec(A')`.
pub fn commutation_matrix(k: usize) -> DMatrix<f64> {
    let n = k * k;
    let mut c = DMatrix::zeros(n, n);
    // block (i, j) is the unit matrix with a one at entry (j, i)
    for i in 0..k {
        for j in 0..k {
            c[(i * k + j, j * k + i)] = 1.0;
        }
    }
    c
}

/// Kronecker product; block `(i, j)` equals `m_ij N`.
pub fn kron(m: &DMatrix<f64>, n: &DMatrix<f64>) -> DMatrix<f64> {
    m.kronecker(n)
}

/// Dimension of the tangent space `R^k x S(k) x R`.
pub fn tangent_dim(k: usize) -> usize {
    k + k * (k + 1) / 2 + 1
}

/// Location/shape/radius parameter `(m, G, r)` of a trimming ellipsoid.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams {
    pub m: DVector<f64>,
    pub g: PdsMatrix,
    pub r: f64,
}

impl ThetaParams {
    pub fn new(m: DVector<f64>, g: PdsMatrix, r: f64) -> Result<Self> {
        if m.len() != g.dim() {
            return Err(shape_error(g.dim(), m.len()));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(McdError::InvalidInput(format!("radius must be positive, got {r}")));
        }
        Ok(ThetaParams { m, g, r })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// `theta + step * t`, failing if the shape leaves the positive definite cone.
    pub fn perturbed(&self, t: &TangentVector, step: f64) -> Result<Self> {
        let g = PdsMatrix::from_matrix(self.g.as_matrix() + t.a.as_matrix() * step)?;
        ThetaParams::new(&self.m + &t.h * step, g, self.r + step * t.s)
    }
}

/// A direction `(h, A, s)` in `R^k x S(k) x R`. Values of the derivative map
/// share the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub h: DVector<f64>,
    pub a: SymMatrix,
    pub s: f64,
}

impl TangentVector {
    pub fn zeros(k: usize) -> Self {
        TangentVector {
            h: DVector::zeros(k),
            a: SymMatrix::zeros(k),
            s: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    /// Flat coordinates `(h_1..h_k, A_11, A_12, .., A_kk, s)`, upper triangle row-wise.
    pub fn to_coords(&self) -> TangentCoords {
        let k = self.dim();
        let mut v = Vec::with_capacity(tangent_dim(k));
        v.extend(self.h.iter());
        v.extend(self.a.upper());
        v.push(self.s);
        TangentCoords(DVector::from_vec(v))
    }

    pub fn from_coords(k: usize, coords: &TangentCoords) -> Result<Self> {
        let c = &coords.0;
        if c.len() != tangent_dim(k) {
            return Err(shape_error(tangent_dim(k), c.len()));
        }
        let h = DVector::from_iterator(k, c.iter().take(k).copied());
        let upper: Vec<f64> = c.iter().skip(k).take(k * (k + 1) / 2).copied().collect();
        Ok(TangentVector {
            h,
            a: SymMatrix::from_upper(k, &upper)?,
            s: c[c.len() - 1],
        })
    }
}

/// Flat coordinate vector of length `tangent_dim(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentCoords(pub DVector<f64>);

impl TangentCoords {
    pub fn basis(k: usize, j: usize) -> Self {
        let mut v = DVector::zeros(tangent_dim(k));
        v[j] = 1.0;
        TangentCoords(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Recovers `k` from a tangent dimension, if it is one.
pub fn dim_from_tangent(d: usize) -> Option<usize> {
    (1..=d).find(|&k| tangent_dim(k) == d)
}

/// Coordinate labels: `h1..hk`, `A11, A12, ...`, `s`.
pub fn tangent_labels(k: usize) -> Vec<String> {
    let mut out: Vec<String> = (1..=k).map(|i| format!("h{i}")).collect();
    for i in 1..=k {
        for j in i..=k {
            out.push(format!("A{i}{j}"));
        }
    }
    out.push("s".to_string());
    out
}
