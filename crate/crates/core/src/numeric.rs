//! Complex dense linear algebra and random streams.
//!
//! Matrices are nalgebra's column-major `DMatrix<Complex64>`, so [`vec`] is a
//! plain copy of the storage and the identity `vec(B X Aᵀ) = (A ⊗ B) vec(X)`
//! holds with the usual column-major convention.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (p, q) = a.shape();
    let (m, n) = b.shape();
    let mut out = CMatrix::zeros(p * m, q * n);
    for j in 0..q {
        for i in 0..p {
            let s = a[(i, j)];
            if s == Complex64::ZERO {
                continue;
            }
            for bj in 0..n {
                for bi in 0..m {
                    out[(i * m + bi, j * n + bj)] = s * b[(bi, bj)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two column vectors.
pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let mut out = CVector::zeros(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// Column-wise Khatri-Rao product: column `j` is `a[:, j] ⊗ b[:, j]`.
///
/// The row-wise variant is obtained through transposes,
/// `(aᵀ ⋄ bᵀ)ᵀ`.
pub fn khatri_rao(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "khatri_rao: {} vs {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let (m, n) = (a.nrows(), b.nrows());
    let mut out = CMatrix::zeros(m * n, a.ncols());
    for j in 0..a.ncols() {
        for i in 0..m {
            let s = a[(i, j)];
            for k in 0..n {
                out[(i * n + k, j)] = s * b[(k, j)];
            }
        }
    }
    Ok(out)
}

/// Column-major stacking of the columns of `m`.
pub fn vec(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> Result<CMatrix> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "unvec: length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Lower-triangular factor `L` with `a = L Lᴴ`.
#[derive(Debug, Clone)]
pub struct HermitianCholesky {
    l: CMatrix,
}

impl HermitianCholesky {
    /// Factors the Hermitian part of `a`.
    ///
    /// Fails with the 1-based index of the first leading minor that is not
    /// positive.
    pub fn new(a: &CMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "Cholesky of a {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        if !is_finite(a) {
            return Err(Error::NotPositiveDefinite("non-finite entries".into()));
        }
        let n = a.nrows();
        let mut l = hermitian_part(a);
        for j in 0..n {
            let mut d = l[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite(format!(
                    "leading minor {} of {n} is not positive",
                    j + 1
                )));
            }
            let d = d.sqrt();
            l[(j, j)] = Complex64::from(d);
            for i in (j + 1)..n {
                let mut s = l[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / d;
            }
            for i in 0..j {
                l[(i, j)] = Complex64::ZERO;
            }
        }
        Ok(Self { l })
    }

    pub fn l(&self) -> &CMatrix {
        &self.l
    }

    /// Solves `L Lᴴ x = b` column by column.
    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        let n = self.l.nrows();
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            for i in 0..n {
                let mut s = col[i];
                for k in 0..i {
                    s -= self.l[(i, k)] * col[k];
                }
                col[i] = s / self.l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = col[i];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)].conj() * col[k];
                }
                col[i] = s / self.l[(i, i)];
            }
        }
        x
    }

    /// `a⁻¹`, for callers that need the full posterior covariance.
    pub fn inverse(&self) -> CMatrix {
        let n = self.l.nrows();
        let inv = self.solve(&CMatrix::identity(n, n));
        hermitian_part(&inv)
    }
}

/// Solves `a x = b` for Hermitian positive definite `a`.
///
/// `a` is symmetrized before factoring and one step of iterative refinement
/// is applied against the symmetrized matrix.
pub fn hermitian_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "hermitian_solve: a is {}x{}, b has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let chol = HermitianCholesky::new(a)?;
    let a_sym = hermitian_part(a);
    let mut x = chol.solve(b);
    let r = b - &a_sym * &x;
    x += chol.solve(&r);
    Ok(x)
}

/// Minimum-norm least-squares solution of `a x ≈ b`.
///
/// Singular values below `rtol * σ_max` are treated as zero.
pub fn lstsq_min_norm(a: &CMatrix, b: &CVector, rtol: f64) -> Result<CVector> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "lstsq: a has {} rows, b has {}",
            a.nrows(),
            b.len()
        )));
    }
    if a.ncols() == 0 {
        return Ok(CVector::zeros(0));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let cutoff = rtol * smax;
    let mut coeffs = u.adjoint() * b;
    for (c, &s) in coeffs.iter_mut().zip(svd.singular_values.iter()) {
        if s > cutoff && s > 0.0 {
            *c /= Complex64::from(s);
        } else {
            *c = Complex64::ZERO;
        }
    }
    Ok(v_t.adjoint() * coeffs)
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Deterministic random stream keyed by `(seed, stream)`.
///
/// Backed by ChaCha12; the stream id selects an independent keystream, so
/// streams with the same seed never overlap.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit mix of a key tuple, used to derive per-trial seeds.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C909, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// `n` i.i.d. draws from CN(0, variance).
pub fn sample_circ_gauss<R: Rng + ?Sized>(rng: &mut R, n: usize, variance: f64) -> Result<CVector> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "complex Gaussian variance must be finite and >= 0, got {variance}"
        )));
    }
    let sd = (variance / 2.0).sqrt();
    Ok(CVector::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(sd * re, sd * im)
    }))
}

/// Same as [`sample_circ_gauss`], shaped as a matrix (column-major fill).
pub fn sample_circ_gauss_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    variance: f64,
) -> Result<CMatrix> {
    let v = sample_circ_gauss(rng, rows * cols, variance)?;
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm_sq(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}
