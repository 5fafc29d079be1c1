//! Riemannian trust-region Newton (truncated CG inner solve) and nonlinear
//! conjugate gradient with the Hestenes–Stiefel update.
//!
//! Both solvers only touch the iterate through a [`Backend`]: they ask it to
//! retract along an action and read measurements through
//! [`FrameMeasure`]. Every direction handed to the problem is a canonical
//! action at the current point.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::eigenproblems::{FrameMeasure, PointData, Problem};
use crate::error::{Error, Result};
use crate::manifold::{self, ManifoldKind, StiefelPoint, TangentAction, TransportOrder};

/// Something that can hold a frame, move it along an action and report
/// measurements about it.
pub trait Backend {
    type State: FrameMeasure + Clone;

    fn prepare(&self, x: &StiefelPoint) -> Result<Self::State>;

    /// `R_X(t·act)`
    fn retract(&self, state: &Self::State, act: &TangentAction, t: f64) -> Result<Self::State>;

    /// Reads the frame back out (a simulator may peek at its amplitudes).
    fn frame(&self, state: &Self::State) -> Result<StiefelPoint>;
}

/// Dense frame with the α-family exponential retraction.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClassicalBackend {
    pub alpha: f64,
}

impl Backend for ClassicalBackend {
    type State = StiefelPoint;

    fn prepare(&self, x: &StiefelPoint) -> Result<StiefelPoint> {
        Ok(x.clone())
    }

    fn retract(&self, state: &StiefelPoint, act: &TangentAction, t: f64) -> Result<StiefelPoint> {
        manifold::retract(state, act, t, self.alpha)
    }

    fn frame(&self, state: &StiefelPoint) -> Result<StiefelPoint> {
        Ok(state.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub step_or_radius: f64,
    pub inner_iters: usize,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegionConfig {
    pub initial_radius: f64,
    pub max_radius: f64,
    pub max_inner_cg: usize,
    pub grad_tol: f64,
    pub max_outer: usize,
    pub accept_rho: f64,
    pub expand_rho: f64,
    pub shrink_factor: f64,
    pub growth_factor: f64,
    /// Truncated-CG residual exponent θ.
    pub tcg_theta: f64,
    /// Truncated-CG linear residual target κ.
    pub tcg_kappa: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            initial_radius: 0.25,
            max_radius: 1.0,
            max_inner_cg: 3,
            grad_tol: 1e-3,
            max_outer: 100,
            accept_rho: 0.1,
            expand_rho: 0.75,
            shrink_factor: 0.25,
            growth_factor: 2.0,
            tcg_theta: 1.0,
            tcg_kappa: 0.1,
        }
    }
}

impl TrustRegionConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.initial_radius > 0.0 && self.initial_radius <= self.max_radius) {
            v.push(format!(
                "trust region: need 0 < initial_radius <= max_radius, got {} and {}",
                self.initial_radius, self.max_radius
            ));
        }
        if self.max_inner_cg == 0 {
            v.push("trust region: max_inner_cg must be at least 1".into());
        }
        if !(self.grad_tol >= 0.0) {
            v.push(format!("trust region: grad_tol must be non-negative, got {}", self.grad_tol));
        }
        if !(0.0 <= self.accept_rho && self.accept_rho < self.expand_rho && self.expand_rho < 1.0) {
            v.push(format!(
                "trust region: need 0 <= accept_rho < expand_rho < 1, got {} and {}",
                self.accept_rho, self.expand_rho
            ));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            v.push(format!("trust region: shrink_factor must lie in (0, 1), got {}", self.shrink_factor));
        }
        if !(self.growth_factor > 1.0) {
            v.push(format!("trust region: growth_factor must exceed 1, got {}", self.growth_factor));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CGConfig {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
    pub transport: TransportOrder,
}

impl Default for CGConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 1000,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            max_backtracks: 50,
            transport: TransportOrder::Identity,
        }
    }
}

impl CGConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            v.push(format!("cg: armijo_c1 must lie in (0, 1), got {}", self.armijo_c1));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            v.push(format!("cg: backtrack_factor must lie in (0, 1), got {}", self.backtrack_factor));
        }
        if !(self.initial_step > 0.0) {
            v.push(format!("cg: initial_step must be positive, got {}", self.initial_step));
        }
        if !(self.grad_tol >= 0.0) {
            v.push(format!("cg: grad_tol must be non-negative, got {}", self.grad_tol));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcgStop {
    /// Inner budget used up.
    MaxInner,
    /// Step hit the trust-region boundary.
    Boundary,
    /// Non-positive curvature; step extended to the boundary.
    NegativeCurvature,
    /// Residual dropped below `‖g‖·min(‖g‖^θ, κ)`.
    Converged,
    /// The model value stopped decreasing, which happens once the residual
    /// is at roundoff; the previous step is kept.
    ModelIncreased,
}

#[derive(Clone, Debug)]
pub struct TcgOutcome {
    pub step: TangentAction,
    /// `Hess[step]`, accumulated alongside the step.
    pub hess_step: TangentAction,
    pub hess_applications: usize,
    pub stop: TcgStop,
}

impl TcgOutcome {
    /// `m(0) - m(η) = -⟨g, η⟩ - ½⟨η, Hη⟩`
    pub fn model_decrease(&self, grad: &TangentAction, kind: ManifoldKind) -> f64 {
        -grad.inner(&self.step, kind) - 0.5 * self.step.inner(&self.hess_step, kind)
    }
}

fn boundary_tau(e_pe: f64, e_pd: f64, d_pd: f64, radius: f64) -> f64 {
    (-e_pd + (e_pd * e_pd + d_pd * (radius * radius - e_pe)).max(0.0).sqrt()) / d_pd
}

/// Steihaug–Toint truncated CG for `min ⟨g,η⟩ + ½⟨η, Hη⟩` over `⟨η,η⟩ ≤ Δ²`.
pub fn truncated_cg<F>(
    grad: &TangentAction,
    mut hess: F,
    radius: f64,
    max_inner: usize,
    kind: ManifoldKind,
    theta: f64,
    kappa: f64,
) -> Result<TcgOutcome>
where
    F: FnMut(&TangentAction) -> Result<TangentAction>,
{
    if !(radius > 0.0) {
        return Err(Error::param(format!("trust radius must be positive, got {radius}")));
    }
    let (n, p) = grad.dims();
    let mut eta = TangentAction::zeros(n, p);
    let mut h_eta = TangentAction::zeros(n, p);
    let mut r = grad.clone();
    let r0 = r.norm(kind);
    let mut z_r = r.inner(&r, kind);
    let mut delta = r.scale(-1.0);
    let mut e_pe = 0.0;
    let mut e_pd = 0.0;
    let mut d_pd = z_r;
    let mut model = 0.0;
    let mut apps = 0;
    let mut stop = TcgStop::MaxInner;
    if r0 == 0.0 {
        return Ok(TcgOutcome {
            step: eta,
            hess_step: h_eta,
            hess_applications: 0,
            stop: TcgStop::Converged,
        });
    }
    for _ in 0..max_inner {
        let h_delta = hess(&delta)?;
        apps += 1;
        if !h_delta.is_finite() {
            return Err(Error::Numerical("Hessian application produced non-finite values".into()));
        }
        let d_hd = delta.inner(&h_delta, kind);
        let alpha = z_r / d_hd;
        let e_pe_new = e_pe + 2.0 * alpha * e_pd + alpha * alpha * d_pd;
        if d_hd <= 0.0 || e_pe_new >= radius * radius {
            let tau = boundary_tau(e_pe, e_pd, d_pd, radius);
            eta = eta.axpy(tau, &delta);
            h_eta = h_eta.axpy(tau, &h_delta);
            stop = if d_hd <= 0.0 {
                TcgStop::NegativeCurvature
            } else {
                TcgStop::Boundary
            };
            break;
        }
        let eta_new = eta.axpy(alpha, &delta);
        let h_eta_new = h_eta.axpy(alpha, &h_delta);
        let model_new = grad.inner(&eta_new, kind) + 0.5 * eta_new.inner(&h_eta_new, kind);
        if model_new >= model {
            stop = TcgStop::ModelIncreased;
            break;
        }
        model = model_new;
        e_pe = e_pe_new;
        eta = eta_new;
        h_eta = h_eta_new;
        r = r.axpy(alpha, &h_delta);
        let rn = r.norm(kind);
        if rn <= r0 * r0.powf(theta).min(kappa) {
            stop = TcgStop::Converged;
            break;
        }
        let z_r_new = r.inner(&r, kind);
        let beta = z_r_new / z_r;
        z_r = z_r_new;
        delta = delta.scale(beta).axpy(-1.0, &r);
        e_pd = beta * (e_pd + alpha * d_pd);
        d_pd = z_r + beta * beta * d_pd;
    }
    Ok(TcgOutcome {
        step: eta,
        hess_step: h_eta,
        hess_applications: apps,
        stop,
    })
}

/// Trust-radius update from the agreement ratio `rho`. Shrinks below
/// `accept_rho`, grows (capped) above `expand_rho`.
pub fn update_radius(radius: f64, rho: f64, cfg: &TrustRegionConfig) -> f64 {
    if !(rho >= cfg.accept_rho) {
        radius * cfg.shrink_factor
    } else if rho > cfg.expand_rho {
        (radius * cfg.growth_factor).min(cfg.max_radius)
    } else {
        radius
    }
}

struct Iterate<S> {
    state: S,
    data: PointData,
    f: f64,
    /// Scale of the rounding error in `f`, at least one.
    f_scale: f64,
    grad: TangentAction,
    grad_norm: f64,
}

fn evaluate<S: FrameMeasure>(problem: &Problem, state: S) -> Result<Iterate<S>> {
    let data = problem.measure(&state)?;
    let f = problem.cost_from_energy(data.energy());
    if !f.is_finite() {
        return Err(Error::Numerical(format!("cost evaluated to {f}")));
    }
    let f_scale = problem.cost_magnitude(data.energy()).max(1.0);
    let grad = problem.gradient_at(&state, &data)?;
    let grad_norm = grad.norm(problem.kind());
    Ok(Iterate {
        state,
        data,
        f,
        f_scale,
        grad,
        grad_norm,
    })
}

/// Result of a solver run: the final state, its frame and the log.
#[derive(Clone, Debug)]
pub struct SolveOutcome<S> {
    pub state: S,
    pub frame: StiefelPoint,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

/// Riemannian trust-region Newton starting from `x0`.
pub fn solve_rtr<B: Backend>(
    problem: &Problem,
    x0: &StiefelPoint,
    cfg: &TrustRegionConfig,
    backend: &B,
) -> Result<SolveOutcome<B::State>> {
    solve_rtr_observed(problem, x0, cfg, backend, |_, _, _| Ok(()))
}

/// [`solve_rtr`] with a callback invoked on every accepted step. It receives
/// the state the step was taken from, the action and the step length `t`
/// such that the new state is `R(t·act)`.
pub fn solve_rtr_observed<B, O>(
    problem: &Problem,
    x0: &StiefelPoint,
    cfg: &TrustRegionConfig,
    backend: &B,
    mut observer: O,
) -> Result<SolveOutcome<B::State>>
where
    B: Backend,
    O: FnMut(&B::State, &TangentAction, f64) -> Result<()>,
{
    cfg.validate()?;
    let kind = problem.kind();
    let clock = Instant::now();
    let mut cur = evaluate(problem, backend.prepare(x0)?)?;
    let mut radius = cfg.initial_radius;
    let mut records = vec![IterationRecord {
        iter: 0,
        f: cur.f,
        grad_norm: cur.grad_norm,
        step_or_radius: radius,
        inner_iters: 0,
        wall_time: clock.elapsed().as_secs_f64(),
    }];
    for k in 1..=cfg.max_outer {
        if cur.grad_norm <= cfg.grad_tol {
            break;
        }
        let tcg = truncated_cg(
            &cur.grad,
            |v| problem.hess_vec(&cur.state, &cur.data, v),
            radius,
            cfg.max_inner_cg,
            kind,
            cfg.tcg_theta,
            cfg.tcg_kappa,
        )?;
        let model = tcg.model_decrease(&cur.grad, kind);
        let cand_state = backend.retract(&cur.state, &tcg.step, 1.0)?;
        let cand = evaluate(problem, cand_state)?;
        // Guard both differences against roundoff near convergence.
        let eps = 1e-15 * cur.f_scale;
        let rho = (cur.f - cand.f + eps) / (model + eps);
        radius = update_radius(radius, rho, cfg);
        let accept = rho >= cfg.accept_rho && model > 0.0 && cand.f <= cur.f + 1e-12;
        if accept {
            observer(&cur.state, &tcg.step, 1.0)?;
            cur = cand;
        }
        records.push(IterationRecord {
            iter: k,
            f: cur.f,
            grad_norm: cur.grad_norm,
            step_or_radius: radius,
            inner_iters: tcg.hess_applications,
            wall_time: clock.elapsed().as_secs_f64(),
        });
        if radius < 1e-14 {
            break;
        }
    }
    let converged = cur.grad_norm <= cfg.grad_tol;
    let frame = backend.frame(&cur.state)?;
    Ok(SolveOutcome {
        state: cur.state,
        frame,
        records,
        converged,
    })
}

/// Relative cost noise below which Armijo falls back to the approximate test.
const ARMIJO_NOISE: f64 = 1e-14;

/// Slope reduction required by the approximate test.
const APPROX_WOLFE_SIGMA: f64 = 0.9;

/// `β = ⟨g₊, y⟩ / ⟨d, y⟩` with `y = g₊ - 𝒯g`.
pub fn hestenes_stiefel_beta(gnew_dot_y: f64, d_dot_y: f64) -> f64 {
    gnew_dot_y / d_dot_y
}

/// Riemannian nonlinear CG with Armijo backtracking.
///
/// The trial step starts at `initial_step`, then at twice the previously
/// accepted step so the search can lengthen as well as shorten.
pub fn solve_rcg<B: Backend>(
    problem: &Problem,
    x0: &StiefelPoint,
    cfg: &CGConfig,
    backend: &B,
) -> Result<SolveOutcome<B::State>> {
    solve_rcg_observed(problem, x0, cfg, backend, |_, _, _| Ok(()))
}

/// [`solve_rcg`] with the same accepted-step callback as
/// [`solve_rtr_observed`].
pub fn solve_rcg_observed<B, O>(
    problem: &Problem,
    x0: &StiefelPoint,
    cfg: &CGConfig,
    backend: &B,
    mut observer: O,
) -> Result<SolveOutcome<B::State>>
where
    B: Backend,
    O: FnMut(&B::State, &TangentAction, f64) -> Result<()>,
{
    cfg.validate()?;
    let kind = problem.kind();
    let clock = Instant::now();
    let mut cur = evaluate(problem, backend.prepare(x0)?)?;
    let (n, p) = cur.state.dims();
    let restart_every = (n * p).max(1);
    let mut dir = cur.grad.scale(-1.0);
    let mut trial = cfg.initial_step;
    let mut records = vec![IterationRecord {
        iter: 0,
        f: cur.f,
        grad_norm: cur.grad_norm,
        step_or_radius: 0.0,
        inner_iters: 0,
        wall_time: clock.elapsed().as_secs_f64(),
    }];
    for k in 1..=cfg.max_iter {
        if cur.grad_norm <= cfg.grad_tol {
            break;
        }
        let mut slope = cur.grad.inner(&dir, kind);
        if !(slope < 0.0) {
            dir = cur.grad.scale(-1.0);
            slope = -cur.grad_norm * cur.grad_norm;
        }
        let mut t = trial;
        let mut accepted = None;
        let mut tries = 0;
        let noise = ARMIJO_NOISE * cur.f_scale;
        while tries <= cfg.max_backtracks {
            let cand = evaluate(problem, backend.retract(&cur.state, &dir, t)?)?;
            let decrease = cand.f - cur.f;
            // Compare the decrease itself: `cur.f + tiny` rounds to `cur.f`
            // and would accept steps that do not move.
            let armijo = decrease <= cfg.armijo_c1 * t * slope;
            // Below the cost's roundoff the decrease cannot be resolved; accept
            // a step that stays within the noise and flattens the slope.
            let approx = !armijo && decrease.abs() <= noise && {
                let moved = manifold::transport_action(&dir.scale(t), &dir, cfg.transport)?;
                let d_new = problem.canonicalize(&cand.state, &moved)?;
                cand.grad.inner(&d_new, kind) >= APPROX_WOLFE_SIGMA * slope
            };
            if armijo || approx {
                accepted = Some(cand);
                break;
            }
            t *= cfg.backtrack_factor;
            tries += 1;
        }
        let Some(next) = accepted else {
            return Err(Error::Stagnation {
                backtracks: cfg.max_backtracks,
                last: records.last().cloned().expect("initial record"),
            });
        };
        trial = 2.0 * t;
        observer(&cur.state, &dir, t)?;

        let step = dir.scale(t);
        let g_old = problem.canonicalize(&next.state, &manifold::transport_action(&step, &cur.grad, cfg.transport)?)?;
        let d_old = problem.canonicalize(&next.state, &manifold::transport_action(&step, &dir, cfg.transport)?)?;
        let y = &next.grad - &g_old;
        let beta = hestenes_stiefel_beta(next.grad.inner(&y, kind), d_old.inner(&y, kind));
        dir = if beta.is_finite() && k % restart_every != 0 {
            d_old.scale(beta).axpy(-1.0, &next.grad)
        } else {
            next.grad.scale(-1.0)
        };
        cur = next;
        records.push(IterationRecord {
            iter: k,
            f: cur.f,
            grad_norm: cur.grad_norm,
            step_or_radius: t,
            inner_iters: tries,
            wall_time: clock.elapsed().as_secs_f64(),
        });
    }
    let converged = cur.grad_norm <= cfg.grad_tol;
    let frame = backend.frame(&cur.state)?;
    Ok(SolveOutcome {
        state: cur.state,
        frame,
        records,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::screen_initial_frame;
    use crate::linalg::{random, sym_eig, DenseMatrix, SymmetricMatrix};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn perturbed_diagonal(n: usize, eps: f64, r: &mut ChaCha8Rng) -> SymmetricMatrix {
        let d = DMatrix::from_diagonal(&DVector::from_iterator(n, (1..=n).map(|v| v as f64)));
        SymmetricMatrix::new(d + random::symmetric(n, r).matrix() * eps).unwrap()
    }

    /// Smallest squared cosine of the principal angles between two frames.
    fn subspace_overlap(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        let s = (a.transpose() * b).singular_values();
        s.min().powi(2)
    }

    fn lowest(h: &SymmetricMatrix, p: usize) -> DenseMatrix {
        sym_eig(h).unwrap().1.columns(0, p).into_owned()
    }

    fn identity_hess(v: &TangentAction) -> Result<TangentAction> {
        Ok(v.clone())
    }

    fn sample_grad(scale: f64, r: &mut ChaCha8Rng) -> (StiefelPoint, TangentAction) {
        let x = StiefelPoint::new(random::orthonormal(6, 2, r)).unwrap();
        let g = crate::eigenproblems::random_tangent(&x, ManifoldKind::Grassmann, r).unwrap();
        (x, g.scale(scale))
    }

    #[test]
    fn tcg_identity_hessian_gives_newton_step() {
        let mut r = rng(1);
        let (_, g) = sample_grad(0.1, &mut r);
        let out = truncated_cg(&g, identity_hess, 0.25, 3, ManifoldKind::Grassmann, 1.0, 0.1).unwrap();
        assert_eq!(out.stop, TcgStop::Converged);
        assert_eq!(out.hess_applications, 1);
        assert!((&out.step + &g).norm(ManifoldKind::Grassmann) < 1e-15);
        assert!(out.model_decrease(&g, ManifoldKind::Grassmann) > 0.0);
    }

    #[test]
    fn tcg_identity_hessian_clips_to_radius() {
        let mut r = rng(2);
        let (_, g) = sample_grad(2.0, &mut r);
        let out = truncated_cg(&g, identity_hess, 0.25, 3, ManifoldKind::Grassmann, 1.0, 0.1).unwrap();
        assert_eq!(out.stop, TcgStop::Boundary);
        assert!((out.step.norm(ManifoldKind::Grassmann) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tcg_negative_curvature_lands_on_boundary() {
        let mut r = rng(3);
        let (_, g) = sample_grad(0.01, &mut r);
        let neg = |v: &TangentAction| Ok(v.scale(-1.0));
        let out = truncated_cg(&g, neg, 0.5, 3, ManifoldKind::Grassmann, 1.0, 0.1).unwrap();
        assert_eq!(out.stop, TcgStop::NegativeCurvature);
        let nn = out.step.inner(&out.step, ManifoldKind::Grassmann);
        assert!((nn - 0.25).abs() < 1e-10);
        assert!(out.model_decrease(&g, ManifoldKind::Grassmann) >= 0.0);
    }

    #[test]
    fn tcg_respects_inner_budget() {
        let mut r = rng(4);
        let h = perturbed_diagonal(10, 0.3, &mut r);
        let problem = Problem::grassmann(h.clone());
        let x = StiefelPoint::new(random::orthonormal(10, 3, &mut r)).unwrap();
        let d = problem.measure(&x).unwrap();
        let g = problem.gradient(&d);
        let mut calls = 0;
        let out = truncated_cg(
            &g,
            |v| {
                calls += 1;
                problem.hess_vec(&x, &d, v)
            },
            100.0,
            3,
            ManifoldKind::Grassmann,
            1.0,
            1e-12,
        )
        .unwrap();
        assert!(out.hess_applications <= 3);
        assert_eq!(calls, out.hess_applications);
        assert!(out.step.norm(ManifoldKind::Grassmann) <= 100.0 + 1e-12);
    }

    #[test]
    fn tcg_rejects_bad_radius_and_non_finite_hessian() {
        let mut r = rng(5);
        let (_, g) = sample_grad(0.1, &mut r);
        assert!(truncated_cg(&g, identity_hess, 0.0, 3, ManifoldKind::Grassmann, 1.0, 0.1).is_err());
        let nan = |v: &TangentAction| Ok(v.scale(f64::NAN));
        let out = truncated_cg(&g, nan, 1.0, 3, ManifoldKind::Grassmann, 1.0, 0.1);
        assert!(matches!(out, Err(Error::Numerical(_))));
    }

    #[test]
    fn radius_update_follows_rho_rule() {
        let cfg = TrustRegionConfig::default();
        let script = [
            (0.25, 0.05, 0.0625),
            (0.25, f64::NAN, 0.0625),
            (0.25, -3.0, 0.0625),
            (0.25, 0.5, 0.25),
            (0.25, 0.9, 0.5),
            (0.5, 0.9, 1.0),
            (1.0, 0.9, 1.0),
            (0.25, 0.75, 0.25),
            (0.25, 0.1, 0.25),
        ];
        for (radius, rho, want) in script {
            assert_eq!(update_radius(radius, rho, &cfg), want, "rho = {rho}");
        }
    }

    #[test]
    fn config_violations_are_collected() {
        let cfg = TrustRegionConfig {
            initial_radius: 2.0,
            max_inner_cg: 0,
            accept_rho: 0.9,
            ..Default::default()
        };
        assert_eq!(cfg.violations().len(), 3);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cg = CGConfig {
            armijo_c1: 1.0,
            backtrack_factor: 0.0,
            ..Default::default()
        };
        assert_eq!(cg.violations().len(), 2);
        assert!(TrustRegionConfig::default().validate().is_ok());
        assert!(CGConfig::default().validate().is_ok());
    }

    #[test]
    fn rtr_returns_converged_start_unchanged() {
        let h = SymmetricMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let x0 = StiefelPoint::identity_columns(4, 2).unwrap();
        let out = solve_rtr(&Problem::grassmann(h), &x0, &TrustRegionConfig::default(), &ClassicalBackend::default())
            .unwrap();
        assert!(out.converged);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.frame.matrix(), x0.matrix());
    }

    #[test]
    fn rtr_finds_lowest_invariant_subspace() {
        let mut r = rng(6);
        let h = perturbed_diagonal(8, 0.01, &mut r);
        let problem = Problem::grassmann(h.clone());
        let x0 = screen_initial_frame(&h, 2).unwrap();
        let cfg = TrustRegionConfig {
            grad_tol: 1e-8,
            max_outer: 15,
            ..Default::default()
        };
        let mut last_f = problem.cost(&x0).unwrap();
        let mut steps = 0;
        let backend = ClassicalBackend::default();
        let out = solve_rtr_observed(&problem, &x0, &cfg, &backend, |s, act, t| {
            let next = backend.retract(s, act, t)?;
            let f = problem.cost(&next)?;
            assert!(f <= last_f + 1e-12);
            assert!(next.orthonormality_error() < 1e-9);
            last_f = f;
            steps += 1;
            Ok(())
        })
        .unwrap();
        assert!(out.converged, "records: {:?}", out.records.last());
        assert!(steps > 0 && out.records.len() <= 16);
        assert!(subspace_overlap(&lowest(&h, 2), out.frame.matrix()) >= 1.0 - 1e-8);
    }

    #[test]
    fn rtr_reaches_loose_threshold_quickly() {
        let mut r = rng(7);
        let spectrum: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let h = random::with_spectrum(&spectrum, &mut r);
        let problem = Problem::grassmann(h.clone());
        let x0 = screen_initial_frame(&h, 4).unwrap();
        let cfg = TrustRegionConfig::default();
        let out = solve_rtr(&problem, &x0, &cfg, &ClassicalBackend::default()).unwrap();
        assert!(out.converged);
        assert!(out.records.len() - 1 <= 10, "took {} iterations", out.records.len() - 1);
        for w in out.records.windows(2) {
            assert!(w[1].f <= w[0].f + 1e-12);
            assert!(w[1].grad_norm >= 0.0);
        }
    }

    #[test]
    fn rcg_on_sphere_finds_ground_state() {
        let h = SymmetricMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let x0 = StiefelPoint::new(DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 10.0]).normalize()).unwrap();
        let problem = Problem::grassmann(h);
        let backend = ClassicalBackend::default();
        let out = solve_rcg_observed(&problem, &x0, &CGConfig::default(), &backend, |s, d, t| {
            let f0 = problem.cost(s)?;
            let g = problem.gradient(&problem.measure(s)?);
            let next = backend.retract(s, d, t)?;
            assert!(problem.cost(&next)? - f0 <= (1e-4 * t * g.inner(d, problem.kind())).max(1e-14 * f0.abs().max(1.0)));
            assert!(next.orthonormality_error() < 1e-9);
            Ok(())
        })
        .unwrap();
        assert!(out.converged);
        assert!(out.frame.matrix()[(0, 0)].powi(2) >= 1.0 - 1e-8);
    }

    #[test]
    fn rcg_orders_columns_by_weights() {
        let mut r = rng(8);
        let h = perturbed_diagonal(8, 0.05, &mut r);
        let (_, u) = sym_eig(&h).unwrap();
        let x0 = StiefelPoint::new(random::orthonormal(8, 4, &mut r)).unwrap();
        let cfg = CGConfig::default();
        let backend = ClassicalBackend::default();
        let fwd = solve_rcg(&Problem::stiefel(h.clone(), vec![4.0, 3.0, 2.0, 1.0]).unwrap(), &x0, &cfg, &backend).unwrap();
        let rev = solve_rcg(&Problem::stiefel(h.clone(), vec![1.0, 2.0, 3.0, 4.0]).unwrap(), &x0, &cfg, &backend).unwrap();
        assert!(fwd.converged && rev.converged, "{:?} {:?}", fwd.records.last(), rev.records.last());
        for j in 0..4 {
            let a = fwd.frame.matrix().column(j).dot(&u.column(j)).powi(2);
            let b = rev.frame.matrix().column(j).dot(&u.column(3 - j)).powi(2);
            assert!(a >= 0.99, "forward column {j}: {a}");
            assert!(b >= 0.99, "flipped column {j}: {b}");
        }
    }

    #[test]
    fn rcg_with_exact_transport_converges() {
        let mut r = rng(9);
        let h = perturbed_diagonal(8, 0.1, &mut r);
        let x0 = StiefelPoint::new(random::orthonormal(8, 3, &mut r)).unwrap();
        for transport in [TransportOrder::First, TransportOrder::Second, TransportOrder::Exact] {
            let cfg = CGConfig {
                transport,
                ..Default::default()
            };
            let out = solve_rcg(&Problem::grassmann(h.clone()), &x0, &cfg, &ClassicalBackend::default()).unwrap();
            assert!(out.converged, "{transport:?}");
            assert!(subspace_overlap(&lowest(&h, 3), out.frame.matrix()) >= 1.0 - 1e-10);
        }
    }

    /// Backend whose retraction never moves, so no step can pass Armijo.
    struct Stuck;

    impl Backend for Stuck {
        type State = StiefelPoint;
        fn prepare(&self, x: &StiefelPoint) -> Result<StiefelPoint> {
            Ok(x.clone())
        }
        fn retract(&self, s: &StiefelPoint, _: &TangentAction, _: f64) -> Result<StiefelPoint> {
            Ok(s.clone())
        }
        fn frame(&self, s: &StiefelPoint) -> Result<StiefelPoint> {
            Ok(s.clone())
        }
    }

    #[test]
    fn rcg_reports_stagnation() {
        let mut r = rng(10);
        let h = perturbed_diagonal(5, 0.1, &mut r);
        let x0 = StiefelPoint::new(random::orthonormal(5, 2, &mut r)).unwrap();
        let out = solve_rcg(&Problem::grassmann(h), &x0, &CGConfig::default(), &Stuck);
        match out {
            Err(Error::Stagnation { backtracks, last }) => {
                assert_eq!(backtracks, 50);
                assert_eq!(last.iter, 0);
            }
            other => panic!("expected stagnation, got {other:?}"),
        }
    }

    #[test]
    fn hestenes_stiefel_recovers_linear_cg() {
        // Minimize ½xᵀAx - bᵀx on R⁴ with exact line search; the HS update
        // must produce A-conjugate directions and finish in four steps.
        let a = DMatrix::from_row_slice(4, 4, &[4.0, 1.0, 0.0, 0.5, 1.0, 3.0, 0.2, 0.0, 0.0, 0.2, 2.0, 0.3, 0.5, 0.0, 0.3, 1.5]);
        let b = DVector::from_column_slice(&[1.0, -2.0, 0.5, 3.0]);
        let mut x = DVector::zeros(4);
        let mut g = &a * &x - &b;
        let mut d = -g.clone();
        let mut dirs = Vec::new();
        for _ in 0..4 {
            let t = -g.dot(&d) / d.dot(&(&a * &d));
            x += &d * t;
            let g_new = &a * &x - &b;
            let y = &g_new - &g;
            let beta = hestenes_stiefel_beta(g_new.dot(&y), d.dot(&y));
            dirs.push(d.clone());
            d = -&g_new + &d * beta;
            g = g_new;
        }
        for i in 0..4 {
            for j in 0..i {
                assert!(dirs[i].dot(&(&a * &dirs[j])).abs() < 1e-10);
            }
        }
        let exact = a.clone().lu().solve(&b).unwrap();
        assert!((x - exact).amax() < 1e-10);
    }

    #[test]
    fn rtr_restricted_block_split_converges_tightly() {
        use crate::eigenproblems::{BlockRestriction, StiefelProblem};
        for seed in 0..4 {
            let mut r = rng(40 + seed);
            let h = random::symmetric(64, &mut r);
            let (_, v) = sym_eig(&h).unwrap();
            let x0 = StiefelPoint::new(v.columns(0, 8) * random::orthonormal(8, 8, &mut r)).unwrap();
            let plus = [true, false, true, true, false, false, true, false];
            let rest = BlockRestriction::from_frame(&x0, &[0; 8]).unwrap();
            let problem = Problem::Stiefel(StiefelProblem::with_signs(h.clone(), &plus).unwrap()).restricted(rest);
            let cfg = TrustRegionConfig {
                grad_tol: 1e-12,
                max_outer: 60,
                max_inner_cg: 100,
                ..Default::default()
            };
            let out = solve_rtr(&problem, &x0, &cfg, &ClassicalBackend::default()).unwrap();
            assert!(out.converged, "seed {seed}: {:?}", out.records.last());
            let y = out.frame.matrix();
            let minus: Vec<usize> = (0..8).filter(|&i| !plus[i]).collect();
            let pos: Vec<usize> = (0..8).filter(|&i| plus[i]).collect();
            let pick = |idx: &[usize]| DMatrix::from_columns(&idx.iter().map(|&j| y.column(j).into_owned()).collect::<Vec<_>>());
            assert!(subspace_overlap(&v.columns(0, 4).into_owned(), &pick(&pos)) >= 1.0 - 1e-12);
            assert!(subspace_overlap(&v.columns(4, 4).into_owned(), &pick(&minus)) >= 1.0 - 1e-12);
        }
    }
}
