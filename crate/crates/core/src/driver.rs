//! End-to-end eigensolver strategies, run configuration and output files.
//!
//! 1. Stiefel solve with distinct weights `K`; columns come out as
//!    individual eigenvectors in `K` order.
//! 2. Grassmann solve for the lowest `p`-dimensional invariant subspace, then
//!    a dense diagonalization of `E = XᵀHX`.
//! 3. Grassmann solve, then a Stiefel solve over `O(p)` on `E`.
//! 4. Grassmann solve, then `log₂ p` block-splitting stages, either
//!    Grassmann solves on half of the columns with the rest carried along
//!    (mode A) or Stiefel solves with `K = ±1` (mode B).
//!
//! A run writes `iterations.jsonl`, `eigenvalues.csv` and `summary.json` into
//! its output directory, also when it fails part way.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eigenproblems::{BlockRestriction, FrameMeasure, Problem, StiefelProblem};
use crate::error::{Error, Result};
use crate::hamiltonian::{self, build_jw_hamiltonian, parse_fcidump, pauli_to_matrix, screen_initial_frame};
use crate::linalg::{read_matrix_market, sym_eig, DenseMatrix, SkewMatrix, SymmetricMatrix};
use crate::manifold::{ManifoldKind, StiefelPoint, TangentAction};
use crate::optim::{
    solve_rcg_observed, solve_rtr_observed, Backend, CGConfig, ClassicalBackend, IterationRecord, SolveOutcome,
    TrustRegionConfig,
};
use crate::qsim::{self, PauliSum, ShotBudget, StatevectorBackend};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianFormat {
    Fcidump,
    MatrixMarket,
    Pauli,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSource {
    pub path: PathBuf,
    pub format: HamiltonianFormat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sector {
    pub n_electrons: usize,
    pub sz_twice: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Rtr(TrustRegionConfig),
    Rcg(CGConfig),
}

/// Tighter than the optimizer's own defaults: full pipelines run to `1e-6`,
/// where three inner steps per outer iteration converge too slowly on the
/// ordered problem.
impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Rtr(TrustRegionConfig {
            grad_tol: 1e-6,
            max_inner_cg: 30,
            max_outer: 500,
            ..TrustRegionConfig::default()
        })
    }
}

impl OptimizerConfig {
    pub fn grad_tol(&self) -> f64 {
        match self {
            OptimizerConfig::Rtr(c) => c.grad_tol,
            OptimizerConfig::Rcg(c) => c.grad_tol,
        }
    }

    pub fn with_grad_tol(&self, tol: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            OptimizerConfig::Rtr(c) => c.grad_tol = tol,
            OptimizerConfig::Rcg(c) => c.grad_tol = tol,
        }
        out
    }

    fn violations(&self) -> Vec<String> {
        match self {
            OptimizerConfig::Rtr(c) => c.violations(),
            OptimizerConfig::Rcg(c) => c.violations(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    #[default]
    Classical,
    StatevectorExact,
    /// Optimizes with exact measurements and estimates the final subspace
    /// energies from `shots` samples per Pauli term.
    StatevectorShots { shots: u64, seed: u64 },
}

impl BackendConfig {
    pub fn name(&self) -> &'static str {
        match self {
            BackendConfig::Classical => "classical",
            BackendConfig::StatevectorExact => "statevector-exact",
            BackendConfig::StatevectorShots { .. } => "statevector-shots",
        }
    }
}

/// How strategy 4 splits a block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockMode {
    /// Grassmann solve on half of the columns; the other half is moved by the
    /// same left rotations.
    #[default]
    #[serde(rename = "a", alias = "grassmann")]
    A,
    /// Stiefel solve on all columns with `K = ±1`.
    #[serde(rename = "b", alias = "signed")]
    B,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_block_threshold() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub hamiltonian: HamiltonianSource,
    #[serde(default)]
    pub sector: Option<Sector>,
    pub p: usize,
    pub manifold: ManifoldKind,
    pub strategy: u8,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub k_diagonal: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha: f64,
    /// Trotter steps for statevector retractions; 0 means exact.
    #[serde(default)]
    pub trotter_steps: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Largest off-block coupling tolerated between strategy-4 stages.
    #[serde(default = "default_block_threshold")]
    pub block_threshold: f64,
    #[serde(default)]
    pub block_mode: BlockMode,
}

impl RunConfig {
    /// A configuration with defaults for everything but the essentials.
    pub fn new(hamiltonian: HamiltonianSource, p: usize, strategy: u8) -> Self {
        let manifold = if strategy == 1 {
            ManifoldKind::Stiefel
        } else {
            ManifoldKind::Grassmann
        };
        Self {
            hamiltonian,
            sector: None,
            p,
            manifold,
            strategy,
            optimizer: OptimizerConfig::default(),
            backend: BackendConfig::default(),
            k_diagonal: None,
            alpha: 0.0,
            trotter_steps: 0,
            output_dir: default_output_dir(),
            block_threshold: default_block_threshold(),
            block_mode: BlockMode::default(),
        }
    }

    /// Reads a JSON configuration. A relative Hamiltonian path is taken
    /// relative to the configuration file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        if cfg.hamiltonian.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.hamiltonian.path = dir.join(&cfg.hamiltonian.path);
            }
        }
        Ok(cfg)
    }

    /// Every problem with the configuration, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.p == 0 {
            v.push("p must be at least 1".into());
        }
        match self.strategy {
            1 => {
                if self.manifold != ManifoldKind::Stiefel {
                    v.push("strategy 1 runs on the Stiefel manifold; set manifold to \"stiefel\"".into());
                }
            }
            2..=4 => {
                if self.manifold != ManifoldKind::Grassmann {
                    v.push(format!(
                        "strategy {} starts on the Grassmann manifold; set manifold to \"grassmann\"",
                        self.strategy
                    ));
                }
            }
            s => v.push(format!("strategy must be 1, 2, 3 or 4, got {s}")),
        }
        if self.strategy == 4 && self.p > 0 && !self.p.is_power_of_two() {
            v.push(format!("strategy 4 needs p to be a power of two, got {}", self.p));
        }
        if let Some(k) = &self.k_diagonal {
            if !matches!(self.strategy, 1 | 3) {
                v.push(format!("k_diagonal is only used by strategies 1 and 3, not {}", self.strategy));
            }
            if k.len() != self.p {
                v.push(format!("k_diagonal has {} entries but p = {}", k.len(), self.p));
            }
            if let Err(e) = StiefelProblem::new(SymmetricMatrix::identity(1), k.clone()) {
                v.push(format!("k_diagonal: {e}"));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            v.push(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.alpha != 0.0 && self.backend != BackendConfig::Classical {
            v.push("alpha != 0 is only available on the classical backend".into());
        }
        if self.trotter_steps > 0 && self.backend == BackendConfig::Classical {
            v.push("trotter_steps requires a statevector backend".into());
        }
        if let BackendConfig::StatevectorShots { shots: 0, .. } = self.backend {
            v.push("statevector-shots needs at least one shot".into());
        }
        if !(self.block_threshold > 0.0) {
            v.push(format!("block_threshold must be positive, got {}", self.block_threshold));
        }
        v.extend(self.optimizer.violations());
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

    fn k_weights(&self) -> Vec<f64> {
        self.k_diagonal
            .clone()
            .unwrap_or_else(|| StiefelProblem::default_weights(self.p))
    }
}

/// Loads the Hamiltonian as a dense symmetric matrix, restricted to the
/// sector when one is given.
pub fn load_hamiltonian(src: &HamiltonianSource, sector: Option<Sector>) -> Result<SymmetricMatrix> {
    let text = fs::read_to_string(&src.path)?;
    let full = match src.format {
        HamiltonianFormat::Fcidump => {
            let data = parse_fcidump(&text)?;
            SymmetricMatrix::from_sym_part(&pauli_to_matrix(&build_jw_hamiltonian(&data)?)?)?
        }
        HamiltonianFormat::MatrixMarket => SymmetricMatrix::new(read_matrix_market(&text)?)?,
        HamiltonianFormat::Pauli => {
            let ps: PauliSum = text.parse()?;
            SymmetricMatrix::new(pauli_to_matrix(&ps)?)?
        }
    };
    match sector {
        Some(s) => Ok(hamiltonian::sector_project(&full, s.n_electrons, s.sz_twice)?.1),
        None => Ok(full),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseIterations {
    pub phase: String,
    pub iterations: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: u8,
    pub backend: String,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Standard errors of the eigenvalues in shot mode.
    pub standard_errors: Option<Vec<f64>>,
    pub final_grad_norm: f64,
    pub iterations: Vec<PhaseIterations>,
    /// `overlaps[i][j] = (u_iᵀ x_j)²` against the `i`-th lowest oracle
    /// eigenvector.
    pub overlaps: Option<Vec<Vec<f64>>>,
    /// `‖UᵀX‖²_F / p`, the mean squared cosine of the principal angles.
    pub subspace_overlap: Option<f64>,
    /// Block-diagonal residual after each strategy-4 stage.
    pub stage_residuals: Vec<f64>,
    pub wall_time: f64,
    pub converged: bool,
    pub error: Option<String>,
}

/// Iteration log shared by all phases of a run, renumbered so `iter`
/// increases strictly across phases.
#[derive(Debug)]
pub struct RunLog {
    clock: Instant,
    records: Vec<IterationRecord>,
    phases: Vec<PhaseIterations>,
    final_grad_norm: f64,
    stage_residuals: Vec<f64>,
}

impl Default for RunLog {
    fn default() -> Self {
        Self::new()
    }
}

impl RunLog {
    pub fn new() -> Self {
        Self {
            clock: Instant::now(),
            records: Vec::new(),
            phases: Vec::new(),
            final_grad_norm: f64::NAN,
            stage_residuals: Vec::new(),
        }
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn phases(&self) -> &[PhaseIterations] {
        &self.phases
    }

    fn absorb(&mut self, phase: &str, recs: &[IterationRecord], started: f64) {
        let offset = self.records.last().map_or(0, |r| r.iter + 1);
        for r in recs {
            self.records.push(IterationRecord {
                iter: r.iter + offset,
                wall_time: r.wall_time + started,
                ..r.clone()
            });
        }
        if let Some(last) = recs.last() {
            self.final_grad_norm = last.grad_norm;
        }
        self.phases.push(PhaseIterations {
            phase: phase.to_string(),
            iterations: recs.len().saturating_sub(1),
        });
    }

    fn elapsed(&self) -> f64 {
        self.clock.elapsed().as_secs_f64()
    }
}

/// Runs one optimizer phase and logs it. A run that stops above its
/// gradient tolerance is a convergence failure.
fn solve_phase<B, O>(
    phase: &str,
    problem: &Problem,
    x0: &StiefelPoint,
    opt: &OptimizerConfig,
    backend: &B,
    log: &mut RunLog,
    observer: O,
) -> Result<SolveOutcome<B::State>>
where
    B: Backend,
    O: FnMut(&B::State, &TangentAction, f64) -> Result<()>,
{
    let started = log.elapsed();
    let result = match opt {
        OptimizerConfig::Rtr(c) => solve_rtr_observed(problem, x0, c, backend, observer),
        OptimizerConfig::Rcg(c) => solve_rcg_observed(problem, x0, c, backend, observer),
    };
    let out = match result {
        Ok(out) => out,
        Err(Error::Stagnation { backtracks, last }) => {
            log.absorb(phase, std::slice::from_ref(&last), started);
            return Err(Error::Stagnation { backtracks, last });
        }
        Err(e) => return Err(e),
    };
    log.absorb(phase, &out.records, started);
    if !out.converged {
        return Err(Error::NotConverged {
            phase: phase.to_string(),
            grad_norm: out.records.last().map_or(f64::NAN, |r| r.grad_norm),
            tol: opt.grad_tol(),
        });
    }
    Ok(out)
}

fn no_observer<S>(_: &S, _: &TangentAction, _: f64) -> Result<()> {
    Ok(())
}

/// Column signs fixed so the largest-magnitude entry of each is positive.
fn fix_signs(mut q: DenseMatrix) -> DenseMatrix {
    for mut col in q.column_iter_mut() {
        let (mut best, mut val) = (0.0, 0.0);
        for v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                val = *v;
            }
        }
        if val < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// Eigenvalues of `E` ascending and the rotation `Q` with `QᵀEQ` diagonal.
pub fn strategy2_diagonalize(e: &SymmetricMatrix) -> Result<(DVector<f64>, DenseMatrix)> {
    let (vals, vecs) = sym_eig(e)?;
    Ok((vals, fix_signs(vecs)))
}

/// Finds `Q ∈ O(p)` minimizing `½ Tr QᵀEQK` by a Stiefel solve at `n = p`,
/// starting from the permutation that sorts the diagonal of `E`.
pub fn strategy3_subspace_opt(
    e: &SymmetricMatrix,
    k: &[f64],
    opt: &OptimizerConfig,
) -> Result<(DenseMatrix, Vec<IterationRecord>)> {
    let mut log = RunLog::new();
    let q = subspace_rotation(e, k, opt, &mut log)?;
    Ok((q, log.records))
}

fn subspace_rotation(e: &SymmetricMatrix, k: &[f64], opt: &OptimizerConfig, log: &mut RunLog) -> Result<DenseMatrix> {
    let p = e.dim();
    if k.len() != p {
        return Err(Error::dim(format!("K has {} entries for a {p}x{p} E", k.len())));
    }
    let problem = Problem::stiefel(e.clone(), k.to_vec())?;
    let mut order: Vec<usize> = (0..p).collect();
    // Largest weight goes to the smallest diagonal entry.
    order.sort_by(|&a, &b| k[b].total_cmp(&k[a]).then(a.cmp(&b)));
    let screened = screen_initial_frame(e, p)?;
    let mut q0 = DMatrix::zeros(p, p);
    for (rank, &col) in order.iter().enumerate() {
        q0.set_column(col, &screened.matrix().column(rank));
    }
    let q0 = StiefelPoint::new(q0)?;
    let out = solve_phase("st(p,p)", &problem, &q0, opt, &ClassicalBackend::default(), log, no_observer)?;
    Ok(out.frame.into_inner())
}

/// `log₂ p` index sets; set `k` holds the indices whose `k`-th most
/// significant bit is one.
pub fn partition_sequence(p: usize) -> Result<Vec<Vec<usize>>> {
    if p < 2 || !p.is_power_of_two() {
        return Err(Error::param(format!("p must be a power of two >= 2, got {p}")));
    }
    let bits = p.trailing_zeros() as usize;
    Ok((0..bits)
        .map(|k| {
            let bit = 1 << (bits - 1 - k);
            (0..p).filter(|i| i & bit != 0).collect()
        })
        .collect())
}

/// Largest coupling `|E_ij|` between columns in different blocks after
/// `stages` splits, together with the leak `‖(I - XXᵀ) H X‖_max` out of the
/// frame.
pub fn block_residual(h: &SymmetricMatrix, x: &StiefelPoint, stages: usize) -> f64 {
    let p = x.p();
    let e = x.matrix().transpose() * h.matrix() * x.matrix();
    let bits = p.trailing_zeros() as usize;
    let shift = bits.saturating_sub(stages);
    let mut worst = 0.0f64;
    for j in 0..p {
        for i in 0..p {
            if i >> shift != j >> shift {
                worst = worst.max(e[(i, j)].abs());
            }
        }
    }
    let leak = h.matrix() * x.matrix() - x.matrix() * &e;
    leak.iter().fold(worst, |m, v| m.max(v.abs()))
}

struct StrategyResult {
    frame: StiefelPoint,
    eigenvalues: Vec<f64>,
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn diag_of(m: &DenseMatrix) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, i)]).collect()
}

fn strategy1<B: Backend>(h: &SymmetricMatrix, cfg: &RunConfig, backend: &B, log: &mut RunLog) -> Result<StrategyResult> {
    let problem = Problem::stiefel(h.clone(), cfg.k_weights())?;
    let x0 = screen_initial_frame(h, cfg.p)?;
    let out = solve_phase("st(n,p)", &problem, &x0, &cfg.optimizer, backend, log, no_observer)?;
    let e = out.state.subspace_matrix(h.matrix())?;
    Ok(StrategyResult {
        frame: out.frame,
        eigenvalues: sorted(diag_of(&e)),
    })
}

fn grassmann_start<B: Backend>(
    h: &SymmetricMatrix,
    cfg: &RunConfig,
    opt: &OptimizerConfig,
    backend: &B,
    log: &mut RunLog,
) -> Result<(StiefelPoint, SymmetricMatrix)> {
    let problem = Problem::grassmann(h.clone());
    let x0 = screen_initial_frame(h, cfg.p)?;
    let out = solve_phase("gr(n,p)", &problem, &x0, opt, backend, log, no_observer)?;
    let e = SymmetricMatrix::from_sym_part(&out.state.subspace_matrix(h.matrix())?)?;
    Ok((out.frame, e))
}

fn strategy2<B: Backend>(h: &SymmetricMatrix, cfg: &RunConfig, backend: &B, log: &mut RunLog) -> Result<StrategyResult> {
    let (x, e) = grassmann_start(h, cfg, &cfg.optimizer, backend, log)?;
    let (vals, q) = strategy2_diagonalize(&e)?;
    Ok(StrategyResult {
        frame: StiefelPoint::new(x.matrix() * q)?,
        eigenvalues: vals.iter().copied().collect(),
    })
}

fn strategy3<B: Backend>(h: &SymmetricMatrix, cfg: &RunConfig, backend: &B, log: &mut RunLog) -> Result<StrategyResult> {
    let (x, e) = grassmann_start(h, cfg, &cfg.optimizer, backend, log)?;
    let q = subspace_rotation(&e, &cfg.k_weights(), &cfg.optimizer, log)?;
    let d = q.transpose() * e.matrix() * &q;
    Ok(StrategyResult {
        frame: StiefelPoint::new(x.matrix() * q)?,
        eigenvalues: sorted(diag_of(&d)),
    })
}

fn check_stage(h: &SymmetricMatrix, x: &StiefelPoint, stage: usize, threshold: f64, log: &mut RunLog) -> Result<()> {
    let residual = block_residual(h, x, stage);
    log.stage_residuals.push(residual);
    if !(residual <= threshold) {
        return Err(Error::StageFailure {
            stage,
            residual,
            threshold,
        });
    }
    Ok(())
}

fn strategy4<B: Backend>(h: &SymmetricMatrix, cfg: &RunConfig, backend: &B, log: &mut RunLog) -> Result<StrategyResult> {
    let p = cfg.p;
    let threshold = cfg.block_threshold;
    let opt = cfg.optimizer.with_grad_tol(cfg.optimizer.grad_tol().min(0.1 * threshold));
    let (mut x, _) = grassmann_start(h, cfg, &opt, backend, log)?;
    check_stage(h, &x, 0, threshold, log)?;
    if p > 1 {
        let bits = p.trailing_zeros() as usize;
        for (k, set) in partition_sequence(p)?.iter().enumerate() {
            let stage = k + 1;
            let phase = format!("stage {stage}");
            // Blocks left by the previous stage; each is split in two.
            let groups: Vec<usize> = (0..p).map(|i| i >> (bits - k)).collect();
            let restriction = BlockRestriction::from_frame(&x, &groups)?;
            x = match cfg.block_mode {
                BlockMode::A => split_stage_grassmann(h, &x, set, &restriction, &opt, backend, log, &phase)?,
                BlockMode::B => {
                    let plus: Vec<bool> = (0..p).map(|i| set.contains(&i)).collect();
                    let problem = Problem::Stiefel(StiefelProblem::with_signs(h.clone(), &plus)?).restricted(restriction);
                    solve_phase(&phase, &problem, &x, &opt, backend, log, no_observer)?.frame
                }
            };
            check_stage(h, &x, stage, threshold, log)?;
        }
    }
    let e = x.matrix().transpose() * h.matrix() * x.matrix();
    let d = diag_of(&e);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let cols: Vec<_> = order.iter().map(|&j| x.matrix().column(j).into_owned()).collect();
    Ok(StrategyResult {
        frame: StiefelPoint::new(DMatrix::from_columns(&cols))?,
        eigenvalues: sorted(d),
    })
}

/// Mode A stage: a `Gr(n, p/2)` solve on the columns in `set`; every accepted
/// left rotation is also applied to the remaining columns.
#[allow(clippy::too_many_arguments)]
fn split_stage_grassmann<B: Backend>(
    h: &SymmetricMatrix,
    x: &StiefelPoint,
    set: &[usize],
    restriction: &BlockRestriction,
    opt: &OptimizerConfig,
    backend: &B,
    log: &mut RunLog,
    phase: &str,
) -> Result<StiefelPoint> {
    let p = x.p();
    let rest: Vec<usize> = (0..p).filter(|i| !set.contains(i)).collect();
    let pick = |idx: &[usize]| -> Result<StiefelPoint> {
        let cols: Vec<_> = idx.iter().map(|&j| x.matrix().column(j).into_owned()).collect();
        StiefelPoint::new(DMatrix::from_columns(&cols))
    };
    let active = pick(set)?;
    let mut passengers = backend.prepare(&pick(&rest)?)?;
    let carried = rest.len();
    let active_groups: Vec<usize> = set.iter().map(|&j| restriction.group(j)).collect();
    let problem = Problem::grassmann(h.clone()).restricted(restriction.with_groups(&active_groups)?);
    let out = solve_phase(phase, &problem, &active, opt, backend, log, |_, act, t| {
        let rotation = TangentAction::new(act.left.clone(), SkewMatrix::zeros(carried));
        passengers = backend.retract(&passengers, &rotation, t)?;
        Ok(())
    })?;
    let moved = backend.frame(&passengers)?;
    let mut y = x.matrix().clone();
    for (c, &j) in set.iter().enumerate() {
        y.set_column(j, &out.frame.matrix().column(c));
    }
    for (c, &j) in rest.iter().enumerate() {
        y.set_column(j, &moved.matrix().column(c));
    }
    StiefelPoint::new(y)
}

fn dispatch<B: Backend>(h: &SymmetricMatrix, cfg: &RunConfig, backend: &B, log: &mut RunLog) -> Result<StrategyResult> {
    match cfg.strategy {
        1 => strategy1(h, cfg, backend, log),
        2 => strategy2(h, cfg, backend, log),
        3 => strategy3(h, cfg, backend, log),
        4 => strategy4(h, cfg, backend, log),
        s => Err(Error::Config(vec![format!("unknown strategy {s}")])),
    }
}

/// Squared overlaps with the `p` lowest oracle eigenvectors.
fn oracle_overlaps(h: &SymmetricMatrix, x: &StiefelPoint) -> Result<(Vec<Vec<f64>>, f64)> {
    let p = x.p();
    let (_, u) = sym_eig(h)?;
    let m = u.columns(0, p).transpose() * x.matrix();
    let sq = m.map(|v| v * v);
    let rows = (0..p).map(|i| sq.row(i).iter().copied().collect()).collect();
    Ok((rows, sq.sum() / p as f64))
}

/// Dense oracles are skipped above this dimension.
const ORACLE_MAX_DIM: usize = 1024;

/// Runs a configured strategy on an already loaded Hamiltonian. Iterations
/// are appended to `log` as they complete, so a failed run keeps its partial
/// history.
pub fn run_with_hamiltonian(h: &SymmetricMatrix, cfg: &RunConfig, log: &mut RunLog) -> Result<RunReport> {
    cfg.validate()?;
    cfg.manifold.validate(h.dim(), cfg.p)?;
    if cfg.strategy != 1 {
        ManifoldKind::Grassmann.validate(h.dim(), cfg.p)?;
    }
    let result = match cfg.backend {
        BackendConfig::Classical => dispatch(h, cfg, &ClassicalBackend { alpha: cfg.alpha }, log)?,
        BackendConfig::StatevectorExact | BackendConfig::StatevectorShots { .. } => {
            qsim::qubit_count(h.dim())?;
            let backend = if cfg.trotter_steps > 0 {
                StatevectorBackend::trotter(cfg.trotter_steps)
            } else {
                StatevectorBackend::exact()
            };
            dispatch(h, cfg, &backend, log)?
        }
    };
    let mut eigenvalues = result.eigenvalues;
    let mut standard_errors = None;
    if let BackendConfig::StatevectorShots { shots, seed } = cfg.backend {
        let state = qsim::prepare_state(&result.frame)?;
        let hp = qsim::pauli_decompose(h.matrix())?;
        let (e, err) = qsim::estimate_subspace_matrix(&state, &hp, ShotBudget::Shots(shots), seed)?;
        let mut pairs: Vec<(f64, f64)> = (0..cfg.p).map(|i| (e[(i, i)], err[(i, i)])).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        eigenvalues = pairs.iter().map(|p| p.0).collect();
        standard_errors = Some(pairs.iter().map(|p| p.1).collect());
    }
    let (overlaps, subspace_overlap) = if h.dim() <= ORACLE_MAX_DIM {
        let (o, s) = oracle_overlaps(h, &result.frame)?;
        (Some(o), Some(s))
    } else {
        (None, None)
    };
    Ok(RunReport {
        strategy: cfg.strategy,
        backend: cfg.backend.name().to_string(),
        eigenvalues,
        standard_errors,
        final_grad_norm: log.final_grad_norm,
        iterations: log.phases.clone(),
        overlaps,
        subspace_overlap,
        stage_residuals: log.stage_residuals.clone(),
        wall_time: log.elapsed(),
        converged: true,
        error: None,
    })
}

/// Writes the three output files.
pub fn write_outputs(dir: &Path, report: &RunReport, records: &[IterationRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut jsonl = fs::File::create(dir.join("iterations.jsonl"))?;
    for r in records {
        writeln!(jsonl, "{}", serde_json::to_string(r)?)?;
    }
    let mut csv = String::from("index,eigenvalue\n");
    for (i, v) in report.eigenvalues.iter().enumerate() {
        csv.push_str(&format!("{i},{v:?}\n"));
    }
    fs::write(dir.join("eigenvalues.csv"), csv)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

/// Loads the Hamiltonian, runs the strategy and writes the outputs. A failed
/// run still writes its partial log and a summary carrying the error.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let h = load_hamiltonian(&cfg.hamiltonian, cfg.sector)?;
    let mut log = RunLog::new();
    match run_with_hamiltonian(&h, cfg, &mut log) {
        Ok(report) => {
            write_outputs(&cfg.output_dir, &report, &log.records)?;
            Ok(report)
        }
        Err(e) => {
            let partial = RunReport {
                strategy: cfg.strategy,
                backend: cfg.backend.name().to_string(),
                final_grad_norm: log.final_grad_norm,
                iterations: log.phases.clone(),
                stage_residuals: log.stage_residuals.clone(),
                wall_time: log.elapsed(),
                converged: false,
                error: Some(e.to_string()),
                ..RunReport::default()
            };
            write_outputs(&cfg.output_dir, &partial, &log.records)?;
            Err(e)
        }
    }
}

/// Process exit code for an error: 2 configuration, 3 convergence, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Parameter(_)
        | Error::Dimension(_)
        | Error::Representation(_)
        | Error::Symmetry(_) => 2,
        Error::Stagnation { .. }
        | Error::StageFailure { .. }
        | Error::NotConverged { .. }
        | Error::Numerical(_)
        | Error::Constraint { .. } => 3,
        Error::Io(_) | Error::Json(_) | Error::Parse { .. } => 4,
    }
}
