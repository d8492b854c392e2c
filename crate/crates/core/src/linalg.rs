//! Dense complex linear algebra shared by every module: hermitian spectral
//! decompositions, norms, inverses and a general matrix exponential.

use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Eigendecomposition `H = F Q diag(values) Q† F†` of a hermitian matrix,
/// where `F` is an optional diagonal unitary given by its phases.
///
/// The eigenvector matrix is shared, so rescaling the spectrum or changing the
/// diagonal frame costs `O(d)` rather than a fresh decomposition.
#[derive(Clone, Debug)]
pub struct Spectral {
    values: Vec<f64>,
    vectors: Arc<CMatrix>,
    phases: Option<Vec<C64>>,
}

impl Spectral {
    pub fn of_hermitian(h: &CMatrix) -> Self {
        assert!(h.is_square(), "spectral decomposition of a non-square matrix");
        let eig = SymmetricEigen::new(hermitian_part(h));
        Spectral {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: Arc::new(eig.eigenvectors),
            phases: None,
        }
    }

    /// The zero operator on a `dim`-dimensional space.
    pub fn zero(dim: usize) -> Self {
        Spectral {
            values: alloc::vec![0.0; dim],
            vectors: Arc::new(CMatrix::identity(dim, dim)),
            phases: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &CMatrix {
        &self.vectors
    }

    pub fn scaled(&self, s: f64) -> Self {
        Spectral {
            values: self.values.iter().map(|v| v * s).collect(),
            vectors: Arc::clone(&self.vectors),
            phases: self.phases.clone(),
        }
    }

    /// Conjugates by the diagonal unitary `diag(phases)`. Composes with an
    /// existing frame.
    pub fn in_frame(mut self, phases: &[C64]) -> Self {
        assert_eq!(phases.len(), self.dim());
        self.phases = Some(match self.phases.take() {
            Some(old) => old.iter().zip(phases).map(|(a, b)| a * b).collect(),
            None => phases.to_vec(),
        });
        self
    }

    /// Conjugates by a general unitary `w`: the result decomposes `w H w†`.
    pub fn conjugated(&self, w: &CMatrix) -> Self {
        let mut q = (*self.vectors).clone();
        if let Some(ph) = &self.phases {
            scale_rows(&mut q, ph);
        }
        Spectral {
            values: self.values.clone(),
            vectors: Arc::new(w * q),
            phases: None,
        }
    }

    /// Eigenvalues clipped to `[-level, level]`.
    pub fn clipped(&self, level: f64) -> Self {
        Spectral {
            values: self.values.iter().map(|v| v.clamp(-level, level)).collect(),
            vectors: Arc::clone(&self.vectors),
            phases: self.phases.clone(),
        }
    }

    pub fn spectral_radius(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn lowest(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn highest(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `f(H) x` for a scalar function `f` applied through the spectrum.
    pub fn apply(&self, f: impl Fn(f64) -> C64, x: &CMatrix) -> CMatrix {
        let mut y = x.clone();
        if let Some(ph) = &self.phases {
            let conj: Vec<C64> = ph.iter().map(|p| p.conj()).collect();
            scale_rows(&mut y, &conj);
        }
        let mut z = gemm(&self.vectors, &y, true);
        let fv: Vec<C64> = self.values.iter().map(|&v| f(v)).collect();
        scale_rows(&mut z, &fv);
        let mut w = gemm(&self.vectors, &z, false);
        if let Some(ph) = &self.phases {
            scale_rows(&mut w, ph);
        }
        w
    }

    pub fn function(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let d = self.dim();
        self.apply(f, &CMatrix::identity(d, d))
    }

    pub fn to_matrix(&self) -> CMatrix {
        self.function(c)
    }

    /// `exp(-i dt H)`.
    pub fn unitary_step(&self, dt: f64) -> CMatrix {
        self.function(|v| (-I * (v * dt)).exp())
    }
}

/// `op(A) B` through a blocked complex gemm, `op(A) = A†` when `adjoint_a`.
pub fn gemm(a: &CMatrix, b: &CMatrix, adjoint_a: bool) -> CMatrix {
    use matrixmultiply::CGemmOption;
    let (m, k) = if adjoint_a { (a.ncols(), a.nrows()) } else { (a.nrows(), a.ncols()) };
    assert_eq!(k, b.nrows(), "gemm: inner dimensions differ");
    let n = b.ncols();
    let mut out = CMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // column-major storage: element (i, j) sits at i + j * nrows; the
    // adjoint reads a conjugated copy with transposed strides
    let conj;
    let (src, rsa, csa) = if adjoint_a {
        conj = a.map(|z| z.conj());
        (&conj, a.nrows() as isize, 1)
    } else {
        (a, 1, a.nrows() as isize)
    };
    // SAFETY: `Complex<f64>` is `repr(C)` with layout `[f64; 2]`; the strides
    // describe the dense column-major buffers of `a`, `b` and `out`, whose
    // extents match `m`, `k` and `n`.
    unsafe {
        matrixmultiply::zgemm(
            CGemmOption::Standard,
            CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            src.as_ptr() as *const [f64; 2],
            rsa,
            csa,
            b.as_ptr() as *const [f64; 2],
            1,
            b.nrows() as isize,
            [0.0, 0.0],
            out.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    out
}

pub fn scale_rows(m: &mut CMatrix, factors: &[C64]) {
    debug_assert_eq!(m.nrows(), factors.len());
    for j in 0..m.ncols() {
        let mut col = m.column_mut(j);
        for (i, f) in factors.iter().enumerate() {
            col[i] *= f;
        }
    }
}

pub fn scale_cols(m: &mut CMatrix, factors: &[C64]) {
    debug_assert_eq!(m.ncols(), factors.len());
    for (j, f) in factors.iter().enumerate() {
        for x in m.column_mut(j).iter_mut() {
            *x *= f;
        }
    }
}

pub fn diag(values: &[C64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_column_slice(values))
}

pub fn real_diag(values: &[f64]) -> CMatrix {
    CMatrix::from_fn(values.len(), values.len(), |i, j| {
        if i == j {
            c(values[i])
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5)
}

/// Largest entry of `|M - M†|`.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc: f64, x| acc.max(x.norm()))
}

pub fn norm_fro(m: &CMatrix) -> f64 {
    m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral norm (largest singular value).
pub fn norm_2(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

pub fn vector_norm(v: &CVector) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `‖U†U − 1‖₂`.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let d = u.ncols();
    norm_2(&(u.ad_mul(u) - CMatrix::identity(d, d)))
}

pub fn inverse(m: &CMatrix) -> Option<CMatrix> {
    m.clone().lu().try_inverse()
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Matrix exponential of a general square matrix by scaling and squaring
/// with a diagonal [6/6] Padé approximant.
pub fn expm(a: &CMatrix) -> CMatrix {
    const Q: usize = 6;
    let n = a.nrows();
    let one_norm = (0..n)
        .map(|j| a.column(j).iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    if one_norm > 0.5 {
        squarings = (one_norm / 0.5).log2().ceil() as u32;
    }
    let x = a * c(1.0 / (1u64 << squarings.min(62)) as f64);

    // c_k = (2q - k)! q! / ((2q)! k! (q - k)!)
    let mut coef = [0.0f64; Q + 1];
    coef[0] = 1.0;
    for k in 1..=Q {
        coef[k] = coef[k - 1] * (Q + 1 - k) as f64 / ((2 * Q + 1 - k) * k) as f64;
    }
    let id = CMatrix::identity(n, n);
    let mut num = id.clone() * c(coef[0]);
    let mut den = id.clone() * c(coef[0]);
    let mut power = id;
    for (k, ck) in coef.iter().enumerate().skip(1) {
        power = gemm(&power, &x, false);
        num += &power * c(*ck);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        den += &power * c(sign * ck);
    }
    let mut r = den
        .lu()
        .solve(&num)
        .expect("Padé denominator is nonsingular for ‖X‖₁ ≤ 1/2");
    for _ in 0..squarings {
        r = gemm(&r, &r, false);
    }
    r
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> CMatrix {
    let m = CMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    hermitian_part(&m) * c(scale)
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CVector {
    let v = CVector::from_fn(dim, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let n = vector_norm(&v);
    v / c(n)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
