//! Cost, Riemannian gradient and Hessian-vector products for
//!
//! * the subspace problem `f_Gr(X) = ½ Tr XᵀHX` on `Gr(n, p)`, and
//! * the ordered eigenvector problem `f_St(X) = ½ Tr XᵀHXK` on `St(n, p)`
//!   with `K` diagonal and distinct.
//!
//! Everything is computed from the measurable quantities exposed by
//! [`FrameMeasure`] (`X K Xᵀ` and `Xᵀ B X`), so the same code serves the dense
//! frame and the simulated statevector.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{anticommutator, commutator, random, DenseMatrix, SkewMatrix, SymmetricMatrix};
use crate::manifold::{self, ManifoldKind, StiefelPoint, TangentAction};

/// Quantities a backend can report about its current frame `X`.
pub trait FrameMeasure {
    /// `(n, p)`
    fn dims(&self) -> (usize, usize);

    /// `X K Xᵀ`, or `X Xᵀ` when `k` is `None`. `K` need not be symmetric.
    fn system_density(&self, k: Option<&DenseMatrix>) -> Result<DenseMatrix>;

    /// `Xᵀ B X`
    fn subspace_matrix(&self, b: &DenseMatrix) -> Result<DenseMatrix>;
}

impl FrameMeasure for StiefelPoint {
    fn dims(&self) -> (usize, usize) {
        (self.n(), self.p())
    }

    fn system_density(&self, k: Option<&DenseMatrix>) -> Result<DenseMatrix> {
        let x = self.matrix();
        match k {
            None => Ok(x * x.transpose()),
            Some(k) => {
                if k.shape() != (self.p(), self.p()) {
                    return Err(Error::dim(format!(
                        "K must be {0}x{0}, got {1:?}",
                        self.p(),
                        k.shape()
                    )));
                }
                Ok(x * k * x.transpose())
            }
        }
    }

    fn subspace_matrix(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.shape() != (self.n(), self.n()) {
            return Err(Error::dim(format!(
                "operator must be {0}x{0}, got {1:?}",
                self.n(),
                b.shape()
            )));
        }
        let x = self.matrix();
        Ok(x.transpose() * b * x)
    }
}

#[derive(Clone, Debug)]
pub struct GrassmannProblem {
    h: SymmetricMatrix,
}

impl GrassmannProblem {
    pub fn new(h: SymmetricMatrix) -> Self {
        Self { h }
    }
}

#[derive(Clone, Debug)]
pub struct StiefelProblem {
    h: SymmetricMatrix,
    k: Vec<f64>,
}

impl StiefelProblem {
    /// `k` holds the diagonal of `K`; entries must be pairwise distinct.
    pub fn new(h: SymmetricMatrix, k: Vec<f64>) -> Result<Self> {
        if k.is_empty() {
            return Err(Error::param("K must have at least one entry"));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("K entries must be finite"));
        }
        for i in 0..k.len() {
            for j in 0..i {
                if k[i] == k[j] {
                    return Err(Error::param(format!(
                        "K entries must be distinct; K[{j}] = K[{i}] = {}",
                        k[i]
                    )));
                }
            }
        }
        Ok(Self { h, k })
    }

    /// `K = diag(±1)`: minimizes the `+1` columns and maximizes the `-1`
    /// columns, splitting an invariant block in two.
    pub fn with_signs(h: SymmetricMatrix, plus: &[bool]) -> Result<Self> {
        if plus.is_empty() {
            return Err(Error::param("sign pattern must be non-empty"));
        }
        let k = plus.iter().map(|&s| if s { 1.0 } else { -1.0 }).collect();
        Ok(Self { h, k })
    }

    /// `(p, p-1, …, 1)`
    pub fn default_weights(p: usize) -> Vec<f64> {
        (1..=p).rev().map(|v| v as f64).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.k
    }

    pub fn k_matrix(&self) -> DenseMatrix {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.k))
    }
}

/// `(M - Mᵀ)/2`, removing rounding asymmetry from measured commutators.
fn skew_part(m: &DenseMatrix) -> SkewMatrix {
    SkewMatrix::from_raw((m - m.transpose()) * 0.5)
}

/// Confines motion to a family of mutually orthogonal subspaces of the
/// system, each spanned by a group of frame columns. Rotations stay inside
/// their group's subspace, so the subspaces are invariant and their
/// projectors can be measured once.
#[derive(Clone, Debug)]
pub struct BlockRestriction {
    projectors: Vec<DenseMatrix>,
    groups: Vec<usize>,
}

impl BlockRestriction {
    /// `groups[j]` is the group of column `j`; group `b` spans `X K_b Xᵀ`
    /// with `K_b` the indicator of its columns.
    pub fn from_frame<M: FrameMeasure + ?Sized>(m: &M, groups: &[usize]) -> Result<Self> {
        let (_, p) = m.dims();
        if groups.len() != p {
            return Err(Error::dim(format!("{} groups for {p} columns", groups.len())));
        }
        let count = groups.iter().max().map_or(0, |g| g + 1);
        let projectors = (0..count)
            .map(|b| {
                let ind = DVector::from_iterator(p, groups.iter().map(|&g| if g == b { 1.0 } else { 0.0 }));
                m.system_density(Some(&DMatrix::from_diagonal(&ind)))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            projectors,
            groups: groups.to_vec(),
        })
    }

    pub fn group(&self, column: usize) -> usize {
        self.groups[column]
    }

    /// Relabels the columns a restriction acts on; the projectors are kept.
    pub fn with_groups(&self, groups: &[usize]) -> Result<Self> {
        if groups.iter().any(|&g| g >= self.projectors.len()) {
            return Err(Error::param("group index out of range"));
        }
        Ok(Self {
            projectors: self.projectors.clone(),
            groups: groups.to_vec(),
        })
    }

    /// `L ↦ Σ_b P_b L P_b`, `A ↦ A` with cross-group entries dropped.
    pub fn project(&self, act: &TangentAction) -> TangentAction {
        let l = act.left.matrix();
        let mut left = DMatrix::zeros(l.nrows(), l.ncols());
        for pb in &self.projectors {
            left += pb * l * pb;
        }
        let mut right = act.right.matrix().clone();
        if right.nrows() == self.groups.len() {
            for i in 0..right.nrows() {
                for j in 0..right.ncols() {
                    if self.groups[i] != self.groups[j] {
                        right[(i, j)] = 0.0;
                    }
                }
            }
        }
        TangentAction::new(skew_part(&left), skew_part(&right))
    }
}

#[derive(Clone, Debug)]
pub enum Problem {
    Grassmann(GrassmannProblem),
    Stiefel(StiefelProblem),
    /// The base problem restricted to block-internal motion.
    Restricted(Box<Problem>, BlockRestriction),
}

/// Measurements at one point, shared by the gradient and every Hessian
/// application there.
#[derive(Clone, Debug)]
pub struct PointData {
    /// `X Xᵀ`
    proj: DenseMatrix,
    /// `X K Xᵀ` (Stiefel only; equals `proj` otherwise)
    proj_k: DenseMatrix,
    /// `Xᵀ H X`
    energy: DenseMatrix,
    /// `[H, XXᵀ]`
    grad_gr: DenseMatrix,
    /// `[H, XKXᵀ]`
    grad_k: DenseMatrix,
}

impl PointData {
    pub fn energy(&self) -> &DenseMatrix {
        &self.energy
    }

    pub fn projector(&self) -> &DenseMatrix {
        &self.proj
    }
}

impl From<GrassmannProblem> for Problem {
    fn from(p: GrassmannProblem) -> Self {
        Problem::Grassmann(p)
    }
}

impl From<StiefelProblem> for Problem {
    fn from(p: StiefelProblem) -> Self {
        Problem::Stiefel(p)
    }
}

impl Problem {
    pub fn grassmann(h: SymmetricMatrix) -> Self {
        Problem::Grassmann(GrassmannProblem::new(h))
    }

    pub fn stiefel(h: SymmetricMatrix, k: Vec<f64>) -> Result<Self> {
        Ok(Problem::Stiefel(StiefelProblem::new(h, k)?))
    }

    pub fn restricted(self, restriction: BlockRestriction) -> Self {
        Problem::Restricted(Box::new(self), restriction)
    }

    fn base(&self) -> &Problem {
        match self {
            Problem::Restricted(b, _) => b.base(),
            other => other,
        }
    }

    fn restrict(&self, act: TangentAction) -> TangentAction {
        match self {
            Problem::Restricted(b, r) => r.project(&b.restrict(act)),
            _ => act,
        }
    }

    /// [`Problem::restrict`] followed by canonicalization at the current
    /// point and, for a Stiefel base, removal of the rotations among
    /// equal-weight columns of one group. Rotations that leave the cost
    /// unchanged carry null curvature, and rounding noise along them stalls
    /// the inner solver. A restricted canonical pair has `L = 2 X A Xᵀ`, so
    /// dropping part `A_s` of `A` subtracts `2 X A_s Xᵀ` from `L`.
    fn restrict_at<M: FrameMeasure + ?Sized>(&self, m: &M, act: TangentAction) -> Result<TangentAction> {
        let Problem::Restricted(_, r) = self else {
            return Ok(act);
        };
        let out = self.base().canonicalize(m, &self.restrict(act))?;
        let Problem::Stiefel(s) = self.base() else {
            return Ok(out);
        };
        let a = out.right.matrix();
        let p = a.nrows();
        let mut same = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                if i != j && r.groups[i] == r.groups[j] && s.k[i] == s.k[j] {
                    same[(i, j)] = a[(i, j)];
                }
            }
        }
        if same.iter().all(|v| *v == 0.0) {
            return Ok(out);
        }
        let left = out.left.matrix() - m.system_density(Some(&same))? * 2.0;
        Ok(TangentAction::new(skew_part(&left), skew_part(&(a - same))))
    }

    pub fn kind(&self) -> ManifoldKind {
        match self.base() {
            Problem::Grassmann(_) => ManifoldKind::Grassmann,
            _ => ManifoldKind::Stiefel,
        }
    }

    pub fn hamiltonian(&self) -> &SymmetricMatrix {
        match self.base() {
            Problem::Grassmann(g) => &g.h,
            Problem::Stiefel(s) => &s.h,
            Problem::Restricted(..) => unreachable!("base is never restricted"),
        }
    }

    pub fn n(&self) -> usize {
        self.hamiltonian().dim()
    }

    fn k_matrix(&self) -> Option<DenseMatrix> {
        match self.base() {
            Problem::Stiefel(s) => Some(s.k_matrix()),
            _ => None,
        }
    }

    pub fn check_dims(&self, n: usize, p: usize) -> Result<()> {
        if n != self.n() {
            return Err(Error::dim(format!(
                "frame has {n} rows but H is {0}x{0}",
                self.n()
            )));
        }
        if let Problem::Stiefel(s) = self.base() {
            if s.k.len() != p {
                return Err(Error::dim(format!(
                    "frame has {p} columns but K has {} entries",
                    s.k.len()
                )));
            }
        }
        self.kind().validate(n, p)
    }

    /// Gathers the measurements needed at a point.
    pub fn measure<M: FrameMeasure + ?Sized>(&self, m: &M) -> Result<PointData> {
        let (n, p) = m.dims();
        self.check_dims(n, p)?;
        let h = self.hamiltonian().matrix();
        let proj = m.system_density(None)?;
        let energy = m.subspace_matrix(h)?;
        let grad_gr = commutator(h, &proj);
        let (proj_k, grad_k) = match self.k_matrix() {
            Some(k) => {
                let pk = m.system_density(Some(&k))?;
                let gk = commutator(h, &pk);
                (pk, gk)
            }
            None => (proj.clone(), grad_gr.clone()),
        };
        Ok(PointData {
            proj,
            proj_k,
            energy,
            grad_gr,
            grad_k,
        })
    }

    /// `½ Tr XᵀHX` or `½ Tr XᵀHXK`.
    pub fn cost<M: FrameMeasure + ?Sized>(&self, m: &M) -> Result<f64> {
        let (n, p) = m.dims();
        self.check_dims(n, p)?;
        let e = m.subspace_matrix(self.hamiltonian().matrix())?;
        Ok(self.cost_from_energy(&e))
    }

    pub fn cost_from_energy(&self, e: &DenseMatrix) -> f64 {
        match self.base() {
            Problem::Stiefel(s) => 0.5 * s.k.iter().enumerate().map(|(i, k)| e[(i, i)] * k).sum::<f64>(),
            _ => 0.5 * e.trace(),
        }
    }

    /// `½ Σ |k_i| |E_ii|`, the size of the terms summed into the cost. Bounds
    /// `|f|` and sets the scale of its rounding error when they cancel.
    pub fn cost_magnitude(&self, e: &DenseMatrix) -> f64 {
        match self.base() {
            Problem::Stiefel(s) => 0.5 * s.k.iter().enumerate().map(|(i, k)| (e[(i, i)] * k).abs()).sum::<f64>(),
            _ => 0.5 * (0..e.nrows()).map(|i| e[(i, i)].abs()).sum::<f64>(),
        }
    }

    /// Grassmann: `L = [H, XXᵀ]`. Stiefel: `L = [H, XKXᵀ]`, `A = ½[XᵀHX, K]`.
    pub fn gradient(&self, d: &PointData) -> TangentAction {
        let g = match self.base() {
            Problem::Stiefel(s) => {
                let k = s.k_matrix();
                TangentAction::new(
                    skew_part(&d.grad_k),
                    skew_part(&(commutator(&d.energy, &k) * 0.5)),
                )
            }
            _ => TangentAction::new(
                skew_part(&d.grad_gr),
                SkewMatrix::zeros(d.energy.nrows()),
            ),
        };
        self.restrict(g)
    }

    /// [`Problem::gradient`], canonicalized at the frame for a restricted
    /// problem. Block projection alone leaves rounding-level components the
    /// Hessian never acts on, and the inner solver amplifies them.
    pub fn gradient_at<M: FrameMeasure + ?Sized>(&self, m: &M, d: &PointData) -> Result<TangentAction> {
        match self {
            Problem::Restricted(..) => self.restrict_at(m, self.gradient(d)),
            _ => Ok(self.gradient(d)),
        }
    }

    /// Riemannian Hessian applied to the canonical action `v`.
    ///
    /// Grassmann: `L = [[H, L_V], XXᵀ]`.
    ///
    /// Stiefel, with `𝒳 = XXᵀ`, `𝒳_K = XKXᵀ`, `G = [H, 𝒳]`, `G_K = [H, 𝒳_K]`,
    /// `E = XᵀHX`:
    ///
    /// ```text
    /// L' = [[H, L], 𝒳_K] + ½[L, G_K] - ½{L, [𝒳_K, G]} - H X A K Xᵀ - X K A Xᵀ H
    /// A' = sk(Xᵀ H L X K) - ¾{A, {E, K}} - ½(E A K + K A E)
    /// ```
    ///
    /// The Stiefel pair `(L', A')` represents the right tangent vector but is
    /// not canonical, so it is passed through [`Problem::canonicalize`].
    ///
    /// A restricted problem projects `v` and the result.
    pub fn hess_vec<M: FrameMeasure + ?Sized>(
        &self,
        m: &M,
        d: &PointData,
        v: &TangentAction,
    ) -> Result<TangentAction> {
        let (n, p) = m.dims();
        if v.dims() != (n, p) {
            return Err(Error::dim(format!(
                "direction of dims {:?} at an {n}x{p} frame",
                v.dims()
            )));
        }
        if let Problem::Restricted(..) = self {
            let hv = self.base().hess_vec(m, d, &self.restrict_at(m, v.clone())?)?;
            return self.restrict_at(m, hv);
        }
        let h = self.hamiltonian().matrix();
        let l = v.left.matrix();
        match self {
            Problem::Restricted(..) => unreachable!(),
            Problem::Grassmann(_) => {
                let hl = commutator(h, l);
                Ok(TangentAction::new(
                    SkewMatrix::from_raw(commutator(&hl, &d.proj)),
                    SkewMatrix::zeros(p),
                ))
            }
            Problem::Stiefel(s) => {
                let k = s.k_matrix();
                let a = v.right.matrix();
                let e = &d.energy;

                let mut left = commutator(&commutator(h, l), &d.proj_k);
                left += commutator(l, &d.grad_k) * 0.5;
                left -= anticommutator(l, &commutator(&d.proj_k, &d.grad_gr)) * 0.5;
                left -= h * m.system_density(Some(&(a * &k)))?;
                left -= m.system_density(Some(&(&k * a)))? * h;

                let hlx = m.subspace_matrix(&(h * l))? * &k;
                let mut right = (&hlx - hlx.transpose()) * 0.5;
                right -= anticommutator(a, &anticommutator(e, &k)) * 0.75;
                right -= (e * a * &k + &k * a * e) * 0.5;

                let raw = TangentAction::new(SkewMatrix::from_raw(left), SkewMatrix::from_raw(right));
                self.canonicalize(m, &raw)
            }
        }
    }

    /// Canonical actions of the tangent vector `L'X - XA'`, projected onto
    /// the tangent space of this problem's manifold, computed from
    /// measurements only:
    ///
    /// * Stiefel: `L = L'𝒳 + 𝒳L' - 2 X A' Xᵀ`, `A = XᵀL'X - A'`
    /// * Grassmann: `L = 𝒳⊥ L' 𝒳 + 𝒳 L' 𝒳⊥`, `A = 0`
    pub fn canonicalize<M: FrameMeasure + ?Sized>(&self, m: &M, act: &TangentAction) -> Result<TangentAction> {
        let (n, p) = m.dims();
        if act.dims() != (n, p) {
            return Err(Error::dim(format!(
                "action of dims {:?} at an {n}x{p} frame",
                act.dims()
            )));
        }
        if let Problem::Restricted(..) = self {
            return self.restrict_at(m, act.clone());
        }
        let proj = m.system_density(None)?;
        let l = act.left.matrix();
        match self.kind() {
            ManifoldKind::Stiefel => {
                let xax = m.system_density(Some(act.right.matrix()))?;
                let left = l * &proj + &proj * l - xax * 2.0;
                let right = m.subspace_matrix(l)? - act.right.matrix();
                Ok(TangentAction::new(
                    SkewMatrix::from_skew_part(&left)?,
                    SkewMatrix::from_skew_part(&right)?,
                ))
            }
            ManifoldKind::Grassmann => {
                let perp = DMatrix::identity(n, n) - &proj;
                let half = &perp * l * &proj;
                Ok(TangentAction::new(
                    SkewMatrix::from_raw(&half - half.transpose()),
                    SkewMatrix::zeros(p),
                ))
            }
        }
    }

    pub fn inner(&self, u: &TangentAction, v: &TangentAction) -> f64 {
        u.inner(v, self.kind())
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    loglog_fit(xs, ys).0
}

/// Least-squares slope of `ln y` against `ln x` and the largest absolute
/// residual of that fit.
fn loglog_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let resid = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - my - slope * (x - mx)).abs())
        .fold(0.0, f64::max);
    (slope, resid)
}

/// Step sizes for the Taylor-remainder checks: 7 points from 1e-1 to 1e-4.
pub fn taylor_steps() -> Vec<f64> {
    (0..7).map(|i| 10f64.powf(-1.0 - 0.5 * i as f64)).collect()
}

/// Unit-norm random tangent action at `x`.
pub fn random_tangent(x: &StiefelPoint, kind: ManifoldKind, rng: &mut ChaCha8Rng) -> Result<TangentAction> {
    let v = random::gaussian(x.n(), x.p(), rng);
    let z = manifold::project_tangent(x, &v, kind)?;
    let act = manifold::action_of(x, &z, kind)?;
    let norm = act.norm(kind);
    if norm == 0.0 {
        return Err(Error::Numerical("random tangent has zero norm".into()));
    }
    Ok(act.scale(1.0 / norm))
}

const FD_ATTEMPTS: u64 = 8;

/// Directions whose remainder is not yet a clean power law over the whole
/// step range (a near-zero leading coefficient) are resampled.
const FIT_RESIDUAL_TOL: f64 = 0.25;

/// Slope of the Taylor remainder of `cost` along `t ↦ R_X(tV)` for random
/// unit directions `V`.
///
/// With `hess = None` the remainder is `f(R(tV)) - f - t⟨g, V⟩`, which decays
/// like `t²` when `grad` is right. With a Hessian it also subtracts
/// `½t²⟨Hess[V], V⟩` and decays like `t³`.
pub fn taylor_slope<F, H>(
    x: &StiefelPoint,
    kind: ManifoldKind,
    seed: u64,
    cost: F,
    grad: &TangentAction,
    hess: Option<H>,
) -> Result<f64>
where
    F: Fn(&StiefelPoint) -> Result<f64>,
    H: Fn(&TangentAction) -> Result<TangentAction>,
{
    let f0 = cost(x)?;
    let ts = taylor_steps();
    let floor = 1e-14 * (1.0 + f0.abs());
    let mut best: Option<(f64, f64)> = None;
    for attempt in 0..FD_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
        let v = random_tangent(x, kind, &mut rng)?;
        let slope1 = grad.inner(&v, kind);
        let curv = match &hess {
            Some(h) => h(&v)?.inner(&v, kind),
            None => 0.0,
        };
        let mut errs = Vec::with_capacity(ts.len());
        for &t in &ts {
            let y = manifold::retract(x, &v, t, 0.0)?;
            let model = f0 + t * slope1 + 0.5 * t * t * curv;
            errs.push((cost(&y)? - model).abs());
        }
        if !errs.iter().all(|e| e.is_finite() && *e > floor) {
            continue;
        }
        let (slope, resid) = loglog_fit(&ts, &errs);
        if resid <= FIT_RESIDUAL_TOL {
            return Ok(slope);
        }
        if best.is_none_or(|(_, r)| resid < r) {
            best = Some((slope, resid));
        }
    }
    best.map(|(s, _)| s).ok_or_else(|| {
        Error::Numerical(format!(
            "Taylor check degenerate for {FD_ATTEMPTS} sampled directions (remainder at roundoff level)"
        ))
    })
}

/// Gradient check on the dense frame; a correct gradient gives slope ≈ 2.
pub fn fd_check_gradient(problem: &Problem, x: &StiefelPoint, seed: u64) -> Result<f64> {
    let d = problem.measure(x)?;
    let g = problem.gradient(&d);
    taylor_slope(
        x,
        problem.kind(),
        seed,
        |y| problem.cost(y),
        &g,
        None::<fn(&TangentAction) -> Result<TangentAction>>,
    )
}

/// Hessian check on the dense frame; a correct Hessian gives slope ≈ 3.
pub fn fd_check_hessian(problem: &Problem, x: &StiefelPoint, seed: u64) -> Result<f64> {
    let d = problem.measure(x)?;
    let g = problem.gradient(&d);
    taylor_slope(
        x,
        problem.kind(),
        seed,
        |y| problem.cost(y),
        &g,
        Some(|v: &TangentAction| problem.hess_vec(x, &d, v)),
    )
}
