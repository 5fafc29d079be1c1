//! Stiefel and Grassmann geometry with tangent vectors carried as actions.
//!
//! A tangent vector `Z` at `X` is stored as the pair `(L, A)` of skew
//! generators with `Z = L X - X A`, where the canonical choice is
//! `L = Z Xᵀ - X Zᵀ` and `A = Xᵀ Z`. On the Grassmannian (horizontal
//! representatives, `Xᵀ Z = 0`) the right action vanishes. The metric is the
//! Euclidean trace product expressed on the actions,
//! `⟨Z, W⟩ = ½⟨L_Z, L_W⟩ - ⟨A_Z, A_W⟩`, which only holds for canonical
//! pairs; see [`canonicalize`].

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    anticommutator, commutator, expm_skew, max_abs, trace_inner, DenseMatrix, SkewMatrix,
    SymmetricMatrix,
};

/// Default orthonormality tolerance for points.
pub const POINT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    Stiefel,
    #[serde(alias = "grassmannian")]
    Grassmann,
}

impl ManifoldKind {
    /// Rejects shapes the manifold cannot represent. `Gr(n, n)` is a single
    /// point and is refused.
    pub fn validate(self, n: usize, p: usize) -> Result<()> {
        if p == 0 || p > n {
            return Err(Error::param(format!("need 1 <= p <= n, got n = {n}, p = {p}")));
        }
        if self == ManifoldKind::Grassmann && p == n {
            return Err(Error::param(format!(
                "Gr({n}, {n}) is a single point; use p < n"
            )));
        }
        Ok(())
    }
}

/// An `n×p` frame with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelPoint {
    x: DenseMatrix,
}

/// Validates `XᵀX = I` to `tol` and wraps the frame.
pub fn check_point(x: DenseMatrix, tol: f64) -> Result<StiefelPoint> {
    let (n, p) = x.shape();
    if p == 0 || p > n {
        return Err(Error::param(format!("need 1 <= p <= n, got n = {n}, p = {p}")));
    }
    let gram = x.transpose() * &x;
    let mut worst = (0.0, 0, 0);
    for j in 0..p {
        for i in 0..p {
            let target = if i == j { 1.0 } else { 0.0 };
            let dev = (gram[(i, j)] - target).abs();
            if !(dev <= worst.0) {
                worst = (dev, i, j);
            }
        }
    }
    if !(worst.0 <= tol) {
        return Err(Error::Constraint {
            worst: worst.0,
            row: worst.1,
            col: worst.2,
            tol,
        });
    }
    Ok(StiefelPoint { x })
}

impl StiefelPoint {
    pub fn new(x: DenseMatrix) -> Result<Self> {
        check_point(x, POINT_TOL)
    }

    /// The first `p` columns of the identity.
    pub fn identity_columns(n: usize, p: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, p))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.x
    }

    /// `X Xᵀ`
    pub fn projector(&self) -> DenseMatrix {
        &self.x * self.x.transpose()
    }

    pub fn orthonormality_error(&self) -> f64 {
        let p = self.p();
        max_abs(&(self.x.transpose() * &self.x - DMatrix::identity(p, p)))
    }
}

/// Dense tangent vector, kept only at module boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentDense(DenseMatrix);

impl TangentDense {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }
}

/// Tangent vector `Z = L X - X A` as a pair of skew generators.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentAction {
    pub left: SkewMatrix,
    pub right: SkewMatrix,
}

impl TangentAction {
    pub fn new(left: SkewMatrix, right: SkewMatrix) -> Self {
        Self { left, right }
    }

    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            left: SkewMatrix::zeros(n),
            right: SkewMatrix::zeros(p),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.left.dim(), self.right.dim())
    }

    pub fn to_dense(&self, x: &StiefelPoint) -> DenseMatrix {
        self.left.matrix() * x.matrix() - x.matrix() * self.right.matrix()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            left: self.left.scale(s),
            right: self.right.scale(s),
        }
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &TangentAction) -> Self {
        Self {
            left: self.left.axpy(s, &other.left),
            right: self.right.axpy(s, &other.right),
        }
    }

    /// `½⟨L,L⟩ - ⟨A,A⟩` on canonical actions.
    pub fn inner(&self, other: &TangentAction, kind: ManifoldKind) -> f64 {
        let l = 0.5 * trace_inner(self.left.matrix(), other.left.matrix());
        match kind {
            ManifoldKind::Grassmann => l,
            ManifoldKind::Stiefel => l - trace_inner(self.right.matrix(), other.right.matrix()),
        }
    }

    pub fn norm(&self, kind: ManifoldKind) -> f64 {
        self.inner(self, kind).max(0.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.left.matrix().iter().chain(self.right.matrix().iter()).all(|v| v.is_finite())
    }
}

impl Add for &TangentAction {
    type Output = TangentAction;
    fn add(self, rhs: &TangentAction) -> TangentAction {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &TangentAction {
    type Output = TangentAction;
    fn sub(self, rhs: &TangentAction) -> TangentAction {
        self.axpy(-1.0, rhs)
    }
}

impl Mul<f64> for &TangentAction {
    type Output = TangentAction;
    fn mul(self, rhs: f64) -> TangentAction {
        self.scale(rhs)
    }
}

impl Neg for &TangentAction {
    type Output = TangentAction;
    fn neg(self) -> TangentAction {
        self.scale(-1.0)
    }
}

fn require_frame_shape(x: &StiefelPoint, v: &DenseMatrix) -> Result<()> {
    if v.shape() != x.matrix().shape() {
        return Err(Error::dim(format!(
            "expected an {}x{} matrix, got {}x{}",
            x.n(),
            x.p(),
            v.nrows(),
            v.ncols()
        )));
    }
    Ok(())
}

fn require_action_shape(x: &StiefelPoint, act: &TangentAction) -> Result<()> {
    if act.dims() != (x.n(), x.p()) {
        return Err(Error::dim(format!(
            "action of dims {:?} anchored at a {}x{} frame",
            act.dims(),
            x.n(),
            x.p()
        )));
    }
    Ok(())
}

/// Orthogonal projection onto the tangent space:
/// `Z - X sy(XᵀZ)` (Stiefel) or `Z - X XᵀZ` (Grassmann).
pub fn project_tangent(x: &StiefelPoint, v: &DenseMatrix, kind: ManifoldKind) -> Result<TangentDense> {
    require_frame_shape(x, v)?;
    kind.validate(x.n(), x.p())?;
    let xm = x.matrix();
    let xtv = xm.transpose() * v;
    let z = match kind {
        ManifoldKind::Stiefel => v - xm * ((&xtv + xtv.transpose()) * 0.5),
        ManifoldKind::Grassmann => v - xm * xtv,
    };
    Ok(TangentDense(z))
}

/// Left action `(I - αXXᵀ) Z Xᵀ - X Zᵀ (I - αXXᵀ)`; `α = 0` gives
/// `Z Xᵀ - X Zᵀ`.
pub fn left_action(x: &StiefelPoint, z: &DenseMatrix, alpha: f64) -> Result<SkewMatrix> {
    require_frame_shape(x, z)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let xm = x.matrix();
    let mut b = z * xm.transpose();
    if alpha != 0.0 {
        b -= xm * (xm.transpose() * z) * xm.transpose() * alpha;
    }
    Ok(SkewMatrix::antisymmetrize(&b))
}

/// Right action `Xᵀ Z`. For a non-tangent input this returns `sk(XᵀZ)`, the
/// right action of its Stiefel projection.
pub fn right_action(x: &StiefelPoint, z: &DenseMatrix) -> Result<SkewMatrix> {
    require_frame_shape(x, z)?;
    SkewMatrix::from_skew_part(&(x.matrix().transpose() * z))
}

/// Canonical action pair of a dense tangent vector.
pub fn action_of(x: &StiefelPoint, z: &TangentDense, kind: ManifoldKind) -> Result<TangentAction> {
    let left = left_action(x, z.matrix(), 0.0)?;
    let right = match kind {
        ManifoldKind::Stiefel => right_action(x, z.matrix())?,
        ManifoldKind::Grassmann => SkewMatrix::zeros(x.p()),
    };
    Ok(TangentAction { left, right })
}

/// Re-derives the canonical pair for the tangent vector `act` represents
/// after projecting it onto the tangent space of `kind` at `x`.
pub fn canonicalize(x: &StiefelPoint, act: &TangentAction, kind: ManifoldKind) -> Result<TangentAction> {
    require_action_shape(x, act)?;
    let z = project_tangent(x, &act.to_dense(x), kind)?;
    action_of(x, &z, kind)
}

/// Actions of the projected tangent `P_X(B X K)`.
///
/// With `k = None` the Grassmann branch uses
/// `[sy B, XXᵀ] + {sk B, XXᵀ} - 2 XXᵀ sk(B) XXᵀ`, which reduces to
/// `[B, XXᵀ]` for symmetric `B`. The Stiefel branch uses
/// `L = [sy B, XKXᵀ] + {sk B, XKXᵀ}` and
/// `A = ½{Xᵀ sk(B) X, K} + ½[Xᵀ sy(B) X, K]`.
pub fn action_from_operator(
    x: &StiefelPoint,
    b: &DenseMatrix,
    k: Option<&SymmetricMatrix>,
    kind: ManifoldKind,
) -> Result<TangentAction> {
    let (n, p) = (x.n(), x.p());
    if b.shape() != (n, n) {
        return Err(Error::dim(format!("operator must be {n}x{n}, got {:?}", b.shape())));
    }
    if let Some(k) = k {
        if k.dim() != p {
            return Err(Error::dim(format!("K must be {p}x{p}, got {}", k.dim())));
        }
    }
    kind.validate(n, p)?;
    let xm = x.matrix();
    let proj = x.projector();
    let (sy, sk) = crate::linalg::split_sym_skew(b)?;
    let xk = match k {
        Some(k) => xm * k.matrix() * xm.transpose(),
        None => proj.clone(),
    };
    match kind {
        ManifoldKind::Grassmann => {
            let left = match k {
                None => {
                    commutator(sy.matrix(), &proj) + anticommutator(sk.matrix(), &proj)
                        - &proj * sk.matrix() * &proj * 2.0
                }
                Some(_) => {
                    // 𝒳⊥ B XKXᵀ - XKXᵀ Bᵀ 𝒳⊥
                    let perp = DMatrix::identity(n, n) - &proj;
                    let m = &perp * b * &xk;
                    &m - m.transpose()
                }
            };
            Ok(TangentAction {
                left: SkewMatrix::from_skew_part(&left)?,
                right: SkewMatrix::zeros(p),
            })
        }
        ManifoldKind::Stiefel => {
            let left = commutator(sy.matrix(), &xk) + anticommutator(sk.matrix(), &xk);
            let kmat = match k {
                Some(k) => k.matrix().clone(),
                None => DMatrix::identity(p, p),
            };
            let xskx = xm.transpose() * sk.matrix() * xm;
            let xsyx = xm.transpose() * sy.matrix() * xm;
            let right = anticommutator(&xskx, &kmat) * 0.5 + commutator(&xsyx, &kmat) * 0.5;
            Ok(TangentAction {
                left: SkewMatrix::from_skew_part(&left)?,
                right: SkewMatrix::from_skew_part(&right)?,
            })
        }
    }
}

/// `J_X(B) = 𝒳⊥ B - Bᵀ 𝒳⊥` with `𝒳⊥ = I - XXᵀ`.
pub fn j_action(x: &StiefelPoint, b: &DenseMatrix) -> Result<SkewMatrix> {
    let n = x.n();
    if b.shape() != (n, n) {
        return Err(Error::dim(format!("operator must be {n}x{n}, got {:?}", b.shape())));
    }
    let perp = DMatrix::identity(n, n) - x.projector();
    let m = &perp * b;
    Ok(SkewMatrix::antisymmetrize(&m))
}

/// Metric on two actions anchored at `x`.
pub fn inner(x: &StiefelPoint, u: &TangentAction, v: &TangentAction, kind: ManifoldKind) -> Result<f64> {
    require_action_shape(x, u)?;
    require_action_shape(x, v)?;
    Ok(u.inner(v, kind))
}

/// Exponential retraction `e^{t L^α} X e^{(2α-1) t A}` with
/// `L^α = L - 2α X A Xᵀ`. `α = 0` is `e^{tL} X e^{-tA}`.
pub fn retract(x: &StiefelPoint, act: &TangentAction, t: f64, alpha: f64) -> Result<StiefelPoint> {
    require_action_shape(x, act)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if t == 0.0 {
        return Ok(x.clone());
    }
    let xm = x.matrix();
    let left = if alpha == 0.0 {
        act.left.clone()
    } else {
        let shift = xm * act.right.matrix() * xm.transpose() * (2.0 * alpha);
        SkewMatrix::from_raw(act.left.matrix() - shift)
    };
    let y = expm_skew(&left, t) * xm * expm_skew(&act.right, (2.0 * alpha - 1.0) * t);
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("retraction produced non-finite entries".into()));
    }
    check_point(y, POINT_TOL).map_err(|e| match e {
        Error::Constraint { worst, .. } => {
            Error::Numerical(format!("retraction left the manifold (deviation {worst:.3e})"))
        }
        other => other,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportOrder {
    /// Actions are carried over unchanged.
    #[default]
    Identity,
    /// `L + [L_Z, L]`
    First,
    /// `L + [L_Z, L] + ½[L_Z, [L_Z, L]]`
    Second,
    /// `e^{L_Z} L e^{-L_Z}`
    Exact,
}

impl TransportOrder {
    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            0 => Ok(Self::Identity),
            1 => Ok(Self::First),
            2 => Ok(Self::Second),
            _ => Err(Error::param(format!(
                "unknown transport order {order}; use 0, 1, 2 or the exact mode"
            ))),
        }
    }
}

fn bch_conjugate(gen: &SkewMatrix, m: &SkewMatrix, order: TransportOrder) -> SkewMatrix {
    let g = gen.matrix();
    let a = m.matrix();
    let out = match order {
        TransportOrder::Identity => a.clone(),
        TransportOrder::First => a + commutator(g, a),
        TransportOrder::Second => {
            let c1 = commutator(g, a);
            let c2 = commutator(g, &c1);
            a + c1 + c2 * 0.5
        }
        TransportOrder::Exact => {
            let e = expm_skew(gen, 1.0);
            &e * a * e.transpose()
        }
    };
    SkewMatrix::from_raw(out)
}

/// Carries the actions of `eta` along the retraction by `z` (unit step).
/// Both the left and right actions are conjugated by their own generator.
pub fn transport_action(z: &TangentAction, eta: &TangentAction, order: TransportOrder) -> Result<TangentAction> {
    if z.dims() != eta.dims() {
        return Err(Error::dim(format!(
            "transport of {:?} along {:?}",
            eta.dims(),
            z.dims()
        )));
    }
    Ok(TangentAction {
        left: bch_conjugate(&z.left, &eta.left, order),
        right: bch_conjugate(&z.right, &eta.right, order),
    })
}
