//! Dense real kernels shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, which stores entries column-major;
//! [`vectorize`] therefore stacks columns with the column index slow, the same
//! ordering the statevector backend uses for `Σ_k |k⟩ ⊗ |ψ_k⟩`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Construction tolerance for [`SymmetricMatrix`] and [`SkewMatrix`].
pub const STRUCTURE_TOL: f64 = 1e-12;

/// Real symmetric matrix, checked at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix(DenseMatrix);

/// Real skew-symmetric matrix, checked at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewMatrix(DenseMatrix);

fn check_finite(m: &DenseMatrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("matrix has non-finite entries".into()))
    }
}

fn require_square(m: &DenseMatrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

impl SymmetricMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self> {
        require_square(&m, "symmetric matrix")?;
        check_finite(&m)?;
        let dev = max_abs(&(&m - m.transpose()));
        if dev > STRUCTURE_TOL {
            return Err(Error::Symmetry(format!(
                "max |M - Mᵀ| = {dev:.3e} exceeds {STRUCTURE_TOL:.0e}"
            )));
        }
        Ok(Self(m))
    }

    /// Symmetric part `(M + Mᵀ)/2` of a square matrix; never fails on shape
    /// once the input is square.
    pub fn from_sym_part(m: &DenseMatrix) -> Result<Self> {
        require_square(m, "symmetric matrix")?;
        Ok(Self((m + m.transpose()) * 0.5))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }
}

impl SkewMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self> {
        require_square(&m, "skew matrix")?;
        check_finite(&m)?;
        let dev = max_abs(&(&m + m.transpose()));
        if dev > STRUCTURE_TOL {
            return Err(Error::Symmetry(format!(
                "max |M + Mᵀ| = {dev:.3e} exceeds {STRUCTURE_TOL:.0e}"
            )));
        }
        Ok(Self(m))
    }

    /// Skew part `(M - Mᵀ)/2`, exactly skew by construction.
    pub fn from_skew_part(m: &DenseMatrix) -> Result<Self> {
        require_square(m, "skew matrix")?;
        Ok(Self((m - m.transpose()) * 0.5))
    }

    /// `M - Mᵀ` without the factor one half.
    pub(crate) fn antisymmetrize(m: &DenseMatrix) -> Self {
        Self(m - m.transpose())
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(&self.0 * s)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &SkewMatrix) -> Self {
        Self(&self.0 + &other.0 * s)
    }

    pub(crate) fn from_raw(m: DenseMatrix) -> Self {
        debug_assert!(m.is_square());
        Self(m)
    }
}

/// Splits a square matrix into symmetric and skew parts.
pub fn split_sym_skew(a: &DenseMatrix) -> Result<(SymmetricMatrix, SkewMatrix)> {
    require_square(a, "split_sym_skew input")?;
    let at = a.transpose();
    Ok((
        SymmetricMatrix((a + &at) * 0.5),
        SkewMatrix((a - &at) * 0.5),
    ))
}

/// `exp(t L)` for skew `L`; an orthogonal matrix with determinant one.
pub fn expm_skew(l: &SkewMatrix, t: f64) -> DenseMatrix {
    if t == 0.0 || l.0.iter().all(|&v| v == 0.0) {
        return DMatrix::identity(l.dim(), l.dim());
    }
    (&l.0 * t).exp()
}

pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.kronecker(b)
}

/// Stacks columns, column index slow.
pub fn vectorize(x: &DenseMatrix) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

pub fn unvectorize(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(Error::dim(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Euclidean trace product `Tr AᵀB`.
pub fn trace_inner(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.dot(b)
}

pub fn commutator(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a * b - b * a
}

pub fn anticommutator(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a * b + b * a
}

pub fn max_abs(m: &DenseMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending with the
/// matching eigenvectors as columns.
pub fn sym_eig(s: &SymmetricMatrix) -> Result<(DVector<f64>, DenseMatrix)> {
    const MAX_SWEEPS: usize = 10_000;
    let n = s.dim();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(s.0.clone(), f64::EPSILON, MAX_SWEEPS).ok_or_else(|| {
        Error::Numerical(format!(
            "symmetric eigensolver did not converge within {MAX_SWEEPS} iterations (n = {n})"
        ))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Orthonormal basis of the column span via thin QR, with column signs fixed
/// so the R diagonal is non-negative.
pub fn orthonormalize(m: &DenseMatrix) -> Result<DenseMatrix> {
    if m.ncols() > m.nrows() {
        return Err(Error::dim(format!(
            "cannot orthonormalize {} columns in dimension {}",
            m.ncols(),
            m.nrows()
        )));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Random helpers used by tests, the `check` command and synthetic fixtures.
pub mod random {
    use super::*;

    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    pub fn symmetric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SymmetricMatrix {
        let g = gaussian(n, n, rng);
        SymmetricMatrix((&g + g.transpose()) * 0.5)
    }

    pub fn skew<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SkewMatrix {
        let g = gaussian(n, n, rng);
        SkewMatrix((&g - g.transpose()) * 0.5)
    }

    /// Haar-like random orthonormal n×p frame.
    pub fn orthonormal<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DenseMatrix {
        orthonormalize(&gaussian(n, p, rng)).expect("p <= n")
    }

    /// Symmetric matrix with the given spectrum in a random eigenbasis.
    pub fn with_spectrum<R: Rng + ?Sized>(spectrum: &[f64], rng: &mut R) -> SymmetricMatrix {
        let n = spectrum.len();
        let q = orthonormal(n, n, rng);
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum));
        let m = &q * d * q.transpose();
        SymmetricMatrix((&m + m.transpose()) * 0.5)
    }
}

/// Writes `%%MatrixMarket matrix array real general`.
pub fn write_matrix_market(m: &DenseMatrix) -> String {
    let mut out = String::from("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for v in m.iter() {
        let _ = writeln!(out, "{v:e}");
    }
    out
}

/// Reads the MatrixMarket dense array format (`general` or `symmetric`).
pub fn read_matrix_market(text: &str) -> Result<DenseMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, banner) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let banner_lc = banner.to_ascii_lowercase();
    let fields: Vec<&str> = banner_lc.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unrecognized banner {banner:?}"),
        });
    }
    if fields[2] != "array" || fields[3] != "real" {
        return Err(Error::Parse {
            line: 1,
            msg: "only `array real` matrices are supported".into(),
        });
    }
    let symmetric = match fields[4] {
        "general" => false,
        "symmetric" => true,
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unsupported symmetry {other:?}"),
            })
        }
    };

    let mut data = lines
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (size_line, size) = data.next().ok_or(Error::Parse {
        line: 2,
        msg: "missing size line".into(),
    })?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            line: size_line,
            msg: format!("bad size line: {e}"),
        })?;
    if dims.len() != 2 {
        return Err(Error::Parse {
            line: size_line,
            msg: "size line needs `rows cols`".into(),
        });
    }
    let (rows, cols) = (dims[0], dims[1]);
    if symmetric && rows != cols {
        return Err(Error::Parse {
            line: size_line,
            msg: "symmetric matrix must be square".into(),
        });
    }

    let mut values = Vec::new();
    let mut last_line = size_line;
    for (lineno, l) in data {
        last_line = lineno;
        for tok in l.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("not a number: {tok:?}"),
            })?;
            values.push(v);
        }
    }

    let mut m = DMatrix::zeros(rows, cols);
    if symmetric {
        let expected = rows * (rows + 1) / 2;
        if values.len() != expected {
            return Err(Error::Parse {
                line: last_line,
                msg: format!("expected {expected} entries, found {}", values.len()),
            });
        }
        let mut it = values.into_iter();
        for j in 0..cols {
            for i in j..rows {
                let v = it.next().unwrap();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    } else {
        if values.len() != rows * cols {
            return Err(Error::Parse {
                line: last_line,
                msg: format!("expected {} entries, found {}", rows * cols, values.len()),
            });
        }
        m.as_mut_slice().copy_from_slice(&values);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn split_small_example() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let (sy, sk) = split_sym_skew(&a).unwrap();
        assert_eq!(sy.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        assert_eq!(sk.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    }

    #[test]
    fn split_symmetric_input_has_zero_skew() {
        let s = random::symmetric(4, &mut rng(3));
        let (sy, sk) = split_sym_skew(s.matrix()).unwrap();
        assert_eq!(sy.matrix(), s.matrix());
        assert_eq!(max_abs(sk.matrix()), 0.0);
    }

    #[test]
    fn split_rejects_non_square() {
        assert!(matches!(
            split_sym_skew(&DMatrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn structure_checks_at_construction() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 1e-9;
        assert!(SymmetricMatrix::new(m.clone()).is_err());
        assert!(SkewMatrix::new(m).is_err());
        assert!(SkewMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).is_ok());
    }

    #[test]
    fn expm_quarter_turn() {
        let l = SkewMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, -FRAC_PI_2, FRAC_PI_2, 0.0]))
            .unwrap();
        let q = expm_skew(&l, 1.0);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(max_abs(&(q - expected)) < 1e-12);
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let q = expm_skew(&SkewMatrix::zeros(4), 1.3);
        assert_eq!(q, DMatrix::identity(4, 4));
    }

    /// exp(L) = U exp(-i Λ) U† where iL = U Λ U† is Hermitian.
    fn spectral_expm(l: &SkewMatrix) -> DenseMatrix {
        let n = l.dim();
        let il: DMatrix<Complex<f64>> = l.matrix().map(|v| Complex::new(0.0, v));
        let eig = il.symmetric_eigen();
        let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|lam| Complex::new(0.0, -lam).exp()));
        let u = &eig.eigenvectors;
        let e = u * phases * u.adjoint();
        DMatrix::from_fn(n, n, |i, j| {
            assert!(e[(i, j)].im.abs() < 1e-10);
            e[(i, j)].re
        })
    }

    #[test]
    fn expm_matches_spectral_oracle() {
        let mut r = rng(11);
        for _ in 0..5 {
            let l = random::skew(6, &mut r);
            let q = expm_skew(&l, 1.0);
            assert!(max_abs(&(&q - spectral_expm(&l))) < 1e-10);
            assert!(max_abs(&(q.transpose() * &q - DMatrix::identity(6, 6))) < 1e-10);
            assert!((q.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn expm_one_parameter_group() {
        let l = random::skew(5, &mut rng(12));
        let lhs = expm_skew(&l, 0.4) * expm_skew(&l, 0.9);
        assert!(max_abs(&(lhs - expm_skew(&l, 1.3))) < 1e-10);
    }

    #[test]
    fn expm_orthogonal_for_large_generators() {
        let mut l = random::skew(8, &mut rng(13));
        let norm = l.matrix().norm();
        l = l.scale(10.0 / norm);
        let q = expm_skew(&l, 1.0);
        assert!(max_abs(&(q.transpose() * &q - DMatrix::identity(8, 8))) < 1e-10);
    }

    #[test]
    fn kron_identity_is_block_diagonal() {
        let a = random::gaussian(2, 3, &mut rng(1));
        let k = kron(&DMatrix::identity(2, 2), &a);
        assert_eq!(k.shape(), (4, 6));
        assert_eq!(k.view((0, 0), (2, 3)), a.view((0, 0), (2, 3)));
        assert_eq!(k.view((2, 3), (2, 3)), a.view((0, 0), (2, 3)));
        assert_eq!(max_abs(&k.view((0, 3), (2, 3)).into_owned()), 0.0);
    }

    #[test]
    fn kron_unit_matrices() {
        let mut e11 = DMatrix::zeros(2, 2);
        e11[(0, 0)] = 1.0;
        let k = kron(&e11, &e11);
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn vec_of_triple_product() {
        let mut r = rng(2);
        let a = random::gaussian(3, 4, &mut r);
        let b = random::gaussian(4, 2, &mut r);
        let c = random::gaussian(2, 5, &mut r);
        let lhs = vectorize(&(&a * &b * &c));
        let rhs = kron(&c.transpose(), &a) * vectorize(&b);
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn kron_mixed_product() {
        let mut r = rng(5);
        let [a, b, c, d] = [0, 1, 2, 3].map(|_| random::gaussian(3, 3, &mut r));
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn vectorize_unit_columns() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(vectorize(&x).as_slice(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn vectorize_round_trip_and_inner() {
        let mut r = rng(6);
        let x = random::gaussian(4, 3, &mut r);
        assert_eq!(unvectorize(&vectorize(&x), 4, 3).unwrap(), x);
        let y = random::gaussian(4, 3, &mut r);
        let lhs = vectorize(&x).dot(&vectorize(&y));
        assert!((lhs - (x.transpose() * &y).trace()).abs() < 1e-12);
        assert!((trace_inner(&x, &y) - lhs).abs() < 1e-12);
    }

    #[test]
    fn unvectorize_length_mismatch() {
        assert!(matches!(
            unvectorize(&DVector::zeros(5), 2, 3),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn sym_eig_diagonal() {
        let (vals, vecs) = sym_eig(&SymmetricMatrix::from_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(vals.as_slice(), &[1.0, 2.0, 3.0]);
        let perm = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(max_abs(&(vecs.abs() - perm)) < 1e-14);
    }

    #[test]
    fn sym_eig_pauli_x() {
        let s = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let (vals, _) = sym_eig(&s).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sym_eig_residuals() {
        let s = random::symmetric(8, &mut rng(7));
        let (vals, vecs) = sym_eig(&s).unwrap();
        for i in 0..8 {
            let v = vecs.column(i);
            assert!((s.matrix() * v - v * vals[i]).norm() <= 1e-10);
        }
        assert!(max_abs(&(vecs.transpose() * &vecs - DMatrix::identity(8, 8))) < 1e-12);
        assert!(vals.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn matrix_market_round_trip() {
        let m = random::gaussian(3, 2, &mut rng(8));
        let text = write_matrix_market(&m);
        assert_eq!(read_matrix_market(&text).unwrap(), m);
    }

    #[test]
    fn matrix_market_symmetric_and_errors() {
        let text = "%%MatrixMarket matrix array real symmetric\n% comment\n2 2\n1\n2\n3\n";
        let m = read_matrix_market(text).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
        let bad = "%%MatrixMarket matrix array real general\n2 2\n1\n2\nx\n4\n";
        assert!(matches!(read_matrix_market(bad), Err(Error::Parse { line: 5, .. })));
    }

    proptest::proptest! {
        #[test]
        fn split_recomposes(entries in proptest::collection::vec(-1.0f64..1.0, 25)) {
            let a = DMatrix::from_column_slice(5, 5, &entries);
            let (sy, sk) = split_sym_skew(&a).unwrap();
            proptest::prop_assert!(max_abs(&(sy.matrix() + sk.matrix() - &a)) <= 1e-15);
        }
    }
}
