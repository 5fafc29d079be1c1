//! Statevector backend for the entangled frame representation.
//!
//! A frame `X ∈ St(n, p)` with `n = 2^q` is stored as the unit vector
//! `|Ψ⟩ = p^{-1/2} Σ_k |k⟩|ψ_k⟩ = p^{-1/2} vec(X)` on an ancilla register of
//! `anc_dim = 2^a ≥ p` states (branches `k ≥ p` are zero) tensored with the
//! system. Amplitude `k·n + i` holds `X[i, k] / √p`: system qubits are the low
//! bits, ancilla qubits the high bits.
//!
//! With unit norm the measurement prefactors become `p/2` for the cost and `p`
//! for reduced matrices:
//!
//! * `f_Gr(X) = (p/2) ⟨Ψ| I ⊗ H |Ψ⟩`
//! * `X K Xᵀ = p · Tr_anc[(K ⊗ I) |Ψ⟩⟨Ψ|]`
//! * `Xᵀ B X = p · Ψᵀ B Ψ` restricted to the populated branches
//!
//! Exact mode contracts the statevector directly. Pauli strings use
//! `P = i^{|x∧z|} X^x Z^z`, so a `Y` is encoded as `x = z = 1`; qubit `j` is
//! bit `j` and the leftmost character of a label is the highest qubit.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::eigenproblems::FrameMeasure;
use crate::error::{Error, Result};
use crate::linalg::{expm_skew, DenseMatrix, SkewMatrix};
use crate::manifold::{check_point, StiefelPoint, TangentAction};
use crate::optim::Backend;

/// Largest register handled by the bitmask representation.
pub const MAX_QUBITS: usize = 30;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => I,
        2 => Complex64::new(-1.0, 0.0),
        _ => -I,
    }
}

/// `log2(n)` when `n` is a power of two.
pub fn qubit_count(n: usize) -> Result<usize> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Representation(format!(
            "dimension {n} is not a power of two"
        )));
    }
    Ok(n.trailing_zeros() as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntangledState {
    n: usize,
    p: usize,
    anc_dim: usize,
    amps: DVector<f64>,
}

/// Loads `p^{-1/2} vec(X)` into an ancilla register padded to a power of two.
pub fn prepare_state(x: &StiefelPoint) -> Result<EntangledState> {
    let (n, p) = (x.n(), x.p());
    qubit_count(n)?;
    let anc_dim = p.next_power_of_two();
    let mut amps = DVector::zeros(anc_dim * n);
    let s = 1.0 / (p as f64).sqrt();
    for k in 0..p {
        for i in 0..n {
            amps[k * n + i] = x.matrix()[(i, k)] * s;
        }
    }
    Ok(EntangledState { n, p, anc_dim, amps })
}

impl EntangledState {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn anc_dim(&self) -> usize {
        self.anc_dim
    }

    pub fn system_qubits(&self) -> usize {
        self.n.trailing_zeros() as usize
    }

    pub fn ancilla_qubits(&self) -> usize {
        self.anc_dim.trailing_zeros() as usize
    }

    pub fn total_qubits(&self) -> usize {
        self.system_qubits() + self.ancilla_qubits()
    }

    pub fn amplitudes(&self) -> &DVector<f64> {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    /// The `n × anc_dim` reshape; column `k` is branch `k`.
    pub fn psi(&self) -> DenseMatrix {
        DMatrix::from_column_slice(self.n, self.anc_dim, self.amps.as_slice())
    }

    fn with_psi(&self, psi: &DenseMatrix) -> Self {
        Self {
            n: self.n,
            p: self.p,
            anc_dim: self.anc_dim,
            amps: DVector::from_column_slice(psi.as_slice()),
        }
    }

    /// Largest amplitude on a padded branch; zero for a valid state.
    pub fn padding_leak(&self) -> f64 {
        self.amps.as_slice()[self.p * self.n..]
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Reads `√p · Ψ` on the populated branches back as a frame.
    pub fn frame(&self) -> Result<StiefelPoint> {
        let psi = self.psi();
        let x = psi.columns(0, self.p) * (self.p as f64).sqrt();
        check_point(x, 1e-9)
    }

    /// Embeds a `p×p` matrix in the ancilla space as a direct sum with a zero
    /// block; an `anc_dim` square matrix passes through.
    fn pad_ancilla(&self, k: &DenseMatrix) -> Result<DenseMatrix> {
        if k.shape() == (self.anc_dim, self.anc_dim) {
            return Ok(k.clone());
        }
        if k.shape() != (self.p, self.p) {
            return Err(Error::dim(format!(
                "ancilla operator must be {0}x{0} or {1}x{1}, got {2:?}",
                self.p,
                self.anc_dim,
                k.shape()
            )));
        }
        let mut out = DMatrix::zeros(self.anc_dim, self.anc_dim);
        out.view_mut((0, 0), (self.p, self.p)).copy_from(k);
        Ok(out)
    }
}

/// An operator on one of the registers.
#[derive(Clone, Debug)]
pub enum Operator {
    Identity,
    Dense(DenseMatrix),
    Pauli(PauliSum),
}

impl Operator {
    fn resolve(&self, dim: usize) -> Result<Option<DenseMatrix>> {
        match self {
            Operator::Identity => Ok(None),
            Operator::Dense(m) => Ok(Some(m.clone())),
            Operator::Pauli(ps) => {
                if 1usize << ps.qubits() != dim {
                    return Err(Error::dim(format!(
                        "Pauli sum on {} qubits applied to a register of dimension {dim}",
                        ps.qubits()
                    )));
                }
                Ok(Some(ps.to_real_matrix()?))
            }
        }
    }
}

/// `⟨Ψ| K ⊗ B |Ψ⟩ = Tr(Ψᵀ B Ψ Kᵀ)`.
pub fn expectation(state: &EntangledState, k: &Operator, b: &Operator) -> Result<f64> {
    let psi = state.psi();
    let bpsi = match b.resolve(state.n)? {
        None => psi.clone(),
        Some(b) => {
            if b.shape() != (state.n, state.n) {
                return Err(Error::dim(format!("system operator must be {0}x{0}", state.n)));
            }
            b * &psi
        }
    };
    let out = match k.resolve(state.anc_dim)? {
        None => psi.dot(&bpsi),
        Some(k) => {
            let k = state.pad_ancilla(&k)?;
            psi.dot(&(bpsi * k.transpose()))
        }
    };
    Ok(out)
}

/// `X K Xᵀ`, or `X Xᵀ` without `K`, from the reduced system state.
pub fn system_density(state: &EntangledState, k: Option<&DenseMatrix>) -> Result<DenseMatrix> {
    let psi = state.psi();
    let scale = state.p as f64;
    Ok(match k {
        None => &psi * psi.transpose() * scale,
        Some(k) => {
            if k.shape() != (state.p, state.p) {
                return Err(Error::dim(format!("K must be {0}x{0}, got {1:?}", state.p, k.shape())));
            }
            let k = state.pad_ancilla(k)?;
            &psi * k * psi.transpose() * scale
        }
    })
}

/// `Xᵀ B X` from the system–ancilla cross terms.
pub fn subspace_matrix(state: &EntangledState, b: &Operator) -> Result<DenseMatrix> {
    let psi = state.psi();
    let populated = psi.columns(0, state.p);
    let m = match b.resolve(state.n)? {
        None => populated.transpose() * populated,
        Some(b) => {
            if b.shape() != (state.n, state.n) {
                return Err(Error::dim(format!(
                    "operator must be {0}x{0}, got {1:?}",
                    state.n,
                    b.shape()
                )));
            }
            populated.transpose() * b * populated
        }
    };
    Ok(m * state.p as f64)
}

impl FrameMeasure for EntangledState {
    fn dims(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    fn system_density(&self, k: Option<&DenseMatrix>) -> Result<DenseMatrix> {
        system_density(self, k)
    }

    fn subspace_matrix(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        subspace_matrix(self, &Operator::Dense(b.clone()))
    }
}

fn check_action(state: &EntangledState, act: &TangentAction) -> Result<()> {
    if act.dims() != (state.n, state.p) {
        return Err(Error::dim(format!(
            "action of dims {:?} on a state with n = {}, p = {}",
            act.dims(),
            state.n,
            state.p
        )));
    }
    Ok(())
}

/// `(e^{tA} ⊕ I) ⊗ e^{tL} |Ψ⟩`, i.e. `Ψ ↦ e^{tL} Ψ e^{-tA}` on the frame.
pub fn apply_retraction_exact(state: &EntangledState, act: &TangentAction, t: f64) -> Result<EntangledState> {
    check_action(state, act)?;
    let el = expm_skew(&act.left, t);
    let ea = state.pad_ancilla(&expm_skew(&act.right, t))?;
    let psi = el * state.psi() * ea.transpose();
    Ok(state.with_psi(&psi))
}

/// The real generator `A ⊗ I + I ⊗ L` on the whole register as a Pauli sum.
pub fn retraction_generator(state: &EntangledState, act: &TangentAction) -> Result<PauliSum> {
    check_action(state, act)?;
    let qs = state.system_qubits();
    let qa = state.ancilla_qubits();
    let left = pauli_decompose(act.left.matrix())?;
    let mut gen = PauliSum::identity(qa, Complex64::new(1.0, 0.0)).tensor(&left);
    if qa > 0 {
        let right = pauli_decompose(&state.pad_ancilla(act.right.matrix())?)?;
        gen = gen.add(&right.tensor(&PauliSum::identity(qs, Complex64::new(1.0, 0.0))))?;
    }
    Ok(gen)
}

/// Second-order Trotterized retraction with an unbounded term budget.
pub fn apply_retraction_trotter(
    state: &EntangledState,
    act: &TangentAction,
    t: f64,
    steps: usize,
) -> Result<EntangledState> {
    apply_retraction_trotter_budgeted(state, act, t, steps, usize::MAX)
}

/// Second-order Trotterized retraction refusing generators with more than
/// `max_terms` Pauli terms.
pub fn apply_retraction_trotter_budgeted(
    state: &EntangledState,
    act: &TangentAction,
    t: f64,
    steps: usize,
    max_terms: usize,
) -> Result<EntangledState> {
    let gen = retraction_generator(state, act)?;
    if gen.len() > max_terms {
        return Err(Error::Representation(format!(
            "retraction generator has {} Pauli terms, budget is {max_terms}",
            gen.len()
        )));
    }
    let amps = trotter_evolve(&gen, state.amps.as_slice(), t, steps)?;
    Ok(EntangledState {
        amps: DVector::from_vec(amps),
        ..state.clone()
    })
}

/// Applies `e^{t G}` for a real skew `G = Σ iθ_j P_j` by second-order
/// splitting: each step runs the terms forward with `τ/2` and then backward
/// with `τ/2`. Every factor `cos(τθ) + sin(τθ)·iP` is real orthogonal.
pub fn trotter_evolve(gen: &PauliSum, v: &[f64], t: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::param("Trotter step count must be at least 1"));
    }
    if v.len() != 1usize << gen.qubits() {
        return Err(Error::dim(format!(
            "vector of length {} for a {}-qubit generator",
            v.len(),
            gen.qubits()
        )));
    }
    let terms: Vec<PauliString> = gen.terms().filter(|p| !p.is_identity()).collect();
    for p in &terms {
        if p.coeff.re.abs() > 1e-12 {
            return Err(Error::Representation(format!(
                "generator term {} has a real coefficient; it is not skew",
                p.label()
            )));
        }
    }
    let half = 0.5 * t / steps as f64;
    let mut out = v.to_vec();
    let mut scratch = vec![0.0; v.len()];
    for _ in 0..steps {
        for p in terms.iter() {
            apply_rotation(p, half, &mut out, &mut scratch);
        }
        for p in terms.iter().rev() {
            apply_rotation(p, half, &mut out, &mut scratch);
        }
    }
    Ok(out)
}

/// `v ← (cos(τθ) + sin(τθ)·iP) v` with the term's coefficient `iθ`.
fn apply_rotation(p: &PauliString, tau: f64, v: &mut [f64], scratch: &mut [f64]) {
    let angle = tau * p.coeff.im;
    let (s, c) = angle.sin_cos();
    let base = i_pow(1 + p.y_count()).re;
    for (b, out) in scratch.iter_mut().enumerate() {
        // (iP)|b ⊕ x⟩ lands on |b⟩.
        let src = b ^ p.x as usize;
        let sign = if (src as u64 & p.z).count_ones() % 2 == 1 { -base } else { base };
        *out = c * v[b] + s * sign * v[src];
    }
    v.copy_from_slice(scratch);
}

/// Grassmann-projected step `R_X(P^Gr(O X))`: measures `A' = Xᵀ O X` and
/// applies `e^{A'} ⊗ e^{O}`.
pub fn grassmann_dof_retract(state: &EntangledState, o: &DenseMatrix) -> Result<EntangledState> {
    let o = SkewMatrix::new(o.clone())?;
    let a = subspace_matrix(state, &Operator::Dense(o.matrix().clone()))?;
    let act = TangentAction::new(o, SkewMatrix::from_skew_part(&a)?);
    apply_retraction_exact(state, &act, 1.0)
}

/// Whether `O X` is already horizontal, i.e. `‖Xᵀ O X‖_max ≤ tol`.
pub fn is_horizontal(state: &EntangledState, o: &DenseMatrix, tol: f64) -> Result<bool> {
    let a = subspace_matrix(state, &Operator::Dense(o.clone()))?;
    Ok(a.iter().all(|v| v.abs() <= tol))
}

/// `a_P = Tr(P M) / 2^q` for every Pauli string; negligible terms dropped.
pub fn pauli_decompose(m: &DenseMatrix) -> Result<PauliSum> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!("matrix must be square, got {:?}", m.shape())));
    }
    let q = qubit_count(m.nrows())?;
    if q > 12 {
        return Err(Error::Representation(format!("{q} qubits exceeds the decomposition cap of 12")));
    }
    let dim = 1usize << q;
    let scale = 1.0 / dim as f64;
    let tol = 1e-14 * m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut out = PauliSum::zero(q);
    for x in 0..dim as u64 {
        for z in 0..dim as u64 {
            let p = PauliString::new(q, x, z, Complex64::new(1.0, 0.0));
            // Tr(PM) = Σ_c ⟨c⊕x|P|c⟩ M[c, c⊕x]
            let mut tr = Complex64::new(0.0, 0.0);
            for c in 0..dim {
                let (row, ph) = p.apply_basis(c as u64);
                tr += ph * m[(c, row as usize)];
            }
            let a = tr * scale;
            if a.norm() > tol {
                out.insert(PauliString::new(q, x, z, a));
            }
        }
    }
    Ok(out)
}

/// One weighted Pauli string.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PauliString {
    pub qubits: usize,
    pub x: u64,
    pub z: u64,
    pub coeff: Complex64,
}

impl PauliString {
    pub fn new(qubits: usize, x: u64, z: u64, coeff: Complex64) -> Self {
        Self { qubits, x, z, coeff }
    }

    /// Parses a label over `{I, X, Y, Z}`; the first character is the
    /// highest qubit.
    pub fn from_label(label: &str, coeff: Complex64) -> Result<Self> {
        let chars: Vec<char> = label.chars().collect();
        let q = chars.len();
        if q == 0 || q > MAX_QUBITS {
            return Err(Error::Representation(format!(
                "Pauli label must have 1..={MAX_QUBITS} characters, got {q}"
            )));
        }
        let (mut x, mut z) = (0u64, 0u64);
        for (pos, ch) in chars.iter().enumerate() {
            let bit = 1u64 << (q - 1 - pos);
            match ch {
                'I' => {}
                'X' => x |= bit,
                'Z' => z |= bit,
                'Y' => {
                    x |= bit;
                    z |= bit;
                }
                other => {
                    return Err(Error::Representation(format!(
                        "invalid Pauli character {other:?} in {label:?}"
                    )))
                }
            }
        }
        Ok(Self::new(q, x, z, coeff))
    }

    pub fn label(&self) -> String {
        (0..self.qubits)
            .rev()
            .map(|j| match ((self.x >> j) & 1, (self.z >> j) & 1) {
                (0, 0) => 'I',
                (1, 0) => 'X',
                (0, 1) => 'Z',
                _ => 'Y',
            })
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        self.x == 0 && self.z == 0
    }

    pub fn y_count(&self) -> u32 {
        (self.x & self.z).count_ones()
    }

    /// `P|b⟩ = phase·|b ⊕ x⟩` for the bare string (coefficient excluded).
    pub fn apply_basis(&self, b: u64) -> (u64, Complex64) {
        let mut ph = i_pow(self.y_count());
        if (b & self.z).count_ones() % 2 == 1 {
            ph = -ph;
        }
        (b ^ self.x, ph)
    }

    /// Product of two strings including coefficients.
    pub fn mul(&self, other: &PauliString) -> PauliString {
        let x = self.x ^ other.x;
        let z = self.z ^ other.z;
        let k = self.y_count() + other.y_count() + 2 * (self.z & other.x).count_ones() + 4
            - (x & z).count_ones() % 4;
        PauliString::new(self.qubits, x, z, self.coeff * other.coeff * i_pow(k))
    }
}

/// Sum of Pauli strings, merged on `(x, z)` and kept in mask order.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliSum {
    qubits: usize,
    terms: BTreeMap<(u64, u64), Complex64>,
}

impl PauliSum {
    pub fn zero(qubits: usize) -> Self {
        Self {
            qubits,
            terms: BTreeMap::new(),
        }
    }

    pub fn identity(qubits: usize, coeff: Complex64) -> Self {
        let mut s = Self::zero(qubits);
        s.insert(PauliString::new(qubits, 0, 0, coeff));
        s
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = PauliString> + '_ {
        self.terms
            .iter()
            .map(|(&(x, z), &c)| PauliString::new(self.qubits, x, z, c))
    }

    /// Coefficient of the string with masks `(x, z)`.
    pub fn coefficient(&self, x: u64, z: u64) -> Complex64 {
        self.terms.get(&(x, z)).copied().unwrap_or_default()
    }

    /// Adds a term, merging with an existing string; exact zeros are dropped.
    pub fn insert(&mut self, p: PauliString) {
        let e = self.terms.entry((p.x, p.z)).or_default();
        *e += p.coeff;
        if *e == Complex64::new(0.0, 0.0) {
            self.terms.remove(&(p.x, p.z));
        }
    }

    /// Removes terms with `|c| ≤ tol`.
    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, c| c.norm() > tol);
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            qubits: self.qubits,
            terms: self.terms.iter().map(|(k, c)| (*k, c * s)).collect(),
        }
    }

    pub fn add(&self, other: &PauliSum) -> Result<Self> {
        self.same_register(other)?;
        let mut out = self.clone();
        for p in other.terms() {
            out.insert(p);
        }
        Ok(out)
    }

    pub fn mul(&self, other: &PauliSum) -> Result<Self> {
        self.same_register(other)?;
        let mut out = Self::zero(self.qubits);
        for a in self.terms() {
            for b in other.terms() {
                out.insert(a.mul(&b));
            }
        }
        Ok(out)
    }

    /// `self ⊗ low`: `low` occupies the low qubits.
    pub fn tensor(&self, low: &PauliSum) -> Self {
        let q = self.qubits + low.qubits;
        let mut out = Self::zero(q);
        for a in self.terms() {
            for b in low.terms() {
                out.insert(PauliString::new(
                    q,
                    (a.x << low.qubits) | b.x,
                    (a.z << low.qubits) | b.z,
                    a.coeff * b.coeff,
                ));
            }
        }
        out
    }

    /// Hermitian iff every coefficient is real.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.terms.values().all(|c| c.im.abs() <= tol)
    }

    fn same_register(&self, other: &PauliSum) -> Result<()> {
        if self.qubits != other.qubits {
            return Err(Error::dim(format!(
                "Pauli sums on {} and {} qubits",
                self.qubits, other.qubits
            )));
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> Result<DMatrix<Complex64>> {
        if self.qubits > MAX_QUBITS / 2 {
            return Err(Error::Representation(format!(
                "{} qubits is too many for a dense matrix",
                self.qubits
            )));
        }
        let dim = 1usize << self.qubits;
        let mut m = DMatrix::zeros(dim, dim);
        for p in self.terms() {
            for b in 0..dim {
                let (row, ph) = p.apply_basis(b as u64);
                m[(row as usize, b)] += p.coeff * ph;
            }
        }
        Ok(m)
    }

    /// Dense realization, refusing sums whose matrix has imaginary entries.
    pub fn to_real_matrix(&self) -> Result<DenseMatrix> {
        let m = self.to_matrix()?;
        let worst = m.iter().fold(0.0f64, |a, c| a.max(c.im.abs()));
        if worst > 1e-12 {
            return Err(Error::Representation(format!(
                "Pauli sum has imaginary matrix entries (max {worst:.3e})"
            )));
        }
        Ok(m.map(|c| c.re))
    }

    /// Exact `⟨v| self |v⟩` for a real vector.
    pub fn expectation_real(&self, v: &[f64]) -> Result<f64> {
        if v.len() != 1usize << self.qubits {
            return Err(Error::dim(format!(
                "vector of length {} for a {}-qubit sum",
                v.len(),
                self.qubits
            )));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for p in self.terms() {
            acc += p.coeff * string_expectation(&p, v);
        }
        Ok(acc.re)
    }
}

/// `⟨v|P|v⟩` for the bare string and a real vector.
fn string_expectation(p: &PauliString, v: &[f64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (b, vb) in v.iter().enumerate() {
        if *vb == 0.0 {
            continue;
        }
        let (row, ph) = p.apply_basis(b as u64);
        acc += ph * (v[row as usize] * vb);
    }
    acc
}

impl fmt::Display for PauliSum {
    /// One `<coefficient> <label>` line per term.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.terms() {
            let c = p.coeff;
            if c.im == 0.0 {
                writeln!(f, "{:e} {}", c.re, p.label())?;
            } else {
                writeln!(f, "{:e}{:+e}i {}", c.re, c.im, p.label())?;
            }
        }
        Ok(())
    }
}

impl FromStr for PauliSum {
    type Err = Error;

    /// Parses `<coefficient> <label>` lines; `#` starts a comment. The
    /// coefficient may be complex, e.g. `0.5-0.25i`.
    fn from_str(text: &str) -> Result<Self> {
        let mut out: Option<PauliSum> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected `<coefficient> <label>`, got {line:?}"),
                });
            }
            let coeff = parse_coefficient(fields[0]).ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("bad coefficient {:?}", fields[0]),
            })?;
            let p = PauliString::from_label(fields[1], coeff).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            let sum = out.get_or_insert_with(|| PauliSum::zero(p.qubits));
            if sum.qubits != p.qubits {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("label {} has {} qubits, expected {}", fields[1], p.qubits, sum.qubits),
                });
            }
            sum.insert(p);
        }
        out.ok_or(Error::Parse {
            line: 0,
            msg: "no terms".into(),
        })
    }
}

fn parse_coefficient(s: &str) -> Option<Complex64> {
    if let Ok(v) = s.parse::<f64>() {
        return Some(Complex64::new(v, 0.0));
    }
    s.parse::<Complex64>().ok()
}

/// Exact evaluation or a finite number of shots per Pauli term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotBudget {
    Exact,
    Shots(u64),
}

/// Estimates `⟨Ψ|obs|Ψ⟩` by sampling each non-identity string `shots` times
/// from its exact ±1 outcome distribution. Returns the estimate and its
/// standard error `sqrt(Σ c²(1 - ⟨P⟩²) / shots)`.
///
/// `obs` may act on the system register only (identity on the ancilla) or on
/// the whole register.
pub fn sample_expectation(state: &EntangledState, obs: &PauliSum, shots: u64, seed: u64) -> Result<(f64, f64)> {
    estimate(state, obs, ShotBudget::Shots(shots), seed)
}

pub fn estimate(state: &EntangledState, obs: &PauliSum, budget: ShotBudget, seed: u64) -> Result<(f64, f64)> {
    if let ShotBudget::Shots(0) = budget {
        return Err(Error::param("shot count must be at least 1"));
    }
    if !obs.is_hermitian(1e-12) {
        return Err(Error::Representation("observable has complex coefficients".into()));
    }
    let obs = if obs.qubits() == state.system_qubits() {
        PauliSum::identity(state.ancilla_qubits(), Complex64::new(1.0, 0.0)).tensor(obs)
    } else if obs.qubits() == state.total_qubits() {
        obs.clone()
    } else {
        return Err(Error::dim(format!(
            "observable on {} qubits; state has {} system and {} total qubits",
            obs.qubits(),
            state.system_qubits(),
            state.total_qubits()
        )));
    };
    let v = state.amps.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = 0.0;
    let mut var = 0.0;
    for p in obs.terms() {
        let c = p.coeff.re;
        if p.is_identity() {
            est += c;
            continue;
        }
        let m = string_expectation(&p, v).re.clamp(-1.0, 1.0);
        match budget {
            ShotBudget::Exact => est += c * m,
            ShotBudget::Shots(shots) => {
                let prob = (0.5 * (1.0 + m)).clamp(0.0, 1.0);
                let dist = Binomial::new(shots, prob)
                    .map_err(|e| Error::Numerical(format!("binomial sampler: {e}")))?;
                let plus = dist.sample(&mut rng) as f64;
                est += c * (2.0 * plus / shots as f64 - 1.0);
                var += c * c * (1.0 - m * m) / shots as f64;
            }
        }
    }
    Ok((est, var.sqrt()))
}

/// How the statevector backend realizes retractions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetractionMode {
    Exact,
    Trotter { steps: usize, max_terms: usize },
}

/// Optimizer backend that keeps the frame as an entangled statevector and
/// measures every quantity the problems need.
#[derive(Clone, Copy, Debug)]
pub struct StatevectorBackend {
    pub mode: RetractionMode,
}

impl StatevectorBackend {
    pub fn exact() -> Self {
        Self {
            mode: RetractionMode::Exact,
        }
    }

    pub fn trotter(steps: usize) -> Self {
        Self {
            mode: RetractionMode::Trotter {
                steps,
                max_terms: usize::MAX,
            },
        }
    }
}

impl Backend for StatevectorBackend {
    type State = EntangledState;

    fn prepare(&self, x: &StiefelPoint) -> Result<EntangledState> {
        prepare_state(x)
    }

    fn retract(&self, state: &EntangledState, act: &TangentAction, t: f64) -> Result<EntangledState> {
        match self.mode {
            RetractionMode::Exact => apply_retraction_exact(state, act, t),
            RetractionMode::Trotter { steps, max_terms } => {
                apply_retraction_trotter_budgeted(state, act, t, steps, max_terms)
            }
        }
    }

    fn frame(&self, state: &EntangledState) -> Result<StiefelPoint> {
        state.frame()
    }
}

/// Sampled `Xᵀ H X`: entry `(k, l)` is `p·⟨Ψ|S_kl ⊗ H|Ψ⟩` with the Hermitian
/// ancilla operator `S_kl = (|k⟩⟨l| + |l⟩⟨k|)/2`. Each entry uses its own
/// seed derived from `seed`. Returns the estimate and per-entry standard
/// errors.
pub fn estimate_subspace_matrix(
    state: &EntangledState,
    h: &PauliSum,
    budget: ShotBudget,
    seed: u64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if h.qubits() != state.system_qubits() {
        return Err(Error::dim(format!(
            "H on {} qubits for a {}-qubit system",
            h.qubits(),
            state.system_qubits()
        )));
    }
    let p = state.p;
    let scale = p as f64;
    let mut est = DMatrix::zeros(p, p);
    let mut err = DMatrix::zeros(p, p);
    for k in 0..p {
        for l in k..p {
            let mut s = DMatrix::zeros(state.anc_dim, state.anc_dim);
            s[(k, l)] += 0.5;
            s[(l, k)] += 0.5;
            let obs = pauli_decompose(&s)?.tensor(h);
            let entry_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((k * p + l) as u64);
            let (v, e) = estimate(state, &obs, budget, entry_seed)?;
            est[(k, l)] = v * scale;
            est[(l, k)] = v * scale;
            err[(k, l)] = e * scale;
            err[(l, k)] = e * scale;
        }
    }
    Ok((est, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigenproblems::Problem;
    use crate::linalg::{expm_skew, max_abs, random, SymmetricMatrix};
    use crate::manifold::retract;
    use crate::optim::{solve_rtr, ClassicalBackend, TrustRegionConfig};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn frame(n: usize, p: usize, r: &mut ChaCha8Rng) -> StiefelPoint {
        StiefelPoint::new(random::orthonormal(n, p, r)).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_action(n: usize, p: usize, r: &mut ChaCha8Rng) -> TangentAction {
        TangentAction::new(random::skew(n, r), random::skew(p, r))
    }

    #[test]
    fn bell_state_from_identity_frame() {
        let x = StiefelPoint::identity_columns(2, 2).unwrap();
        let s = prepare_state(&x).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let want = DVector::from_vec(vec![h, 0.0, 0.0, h]);
        assert!((s.amplitudes() - want).amax() < 1e-15);
        assert_eq!(s.total_qubits(), 2);
        let z = Operator::Pauli(PauliSum::from_str("1 Z").unwrap());
        assert!(expectation(&s, &Operator::Identity, &z).unwrap().abs() < 1e-15);
        let xx = system_density(&s, None).unwrap();
        assert!(max_abs(&(xx - DMatrix::identity(2, 2))) < 1e-15);
    }

    #[test]
    fn preparation_normalizes_and_pads() {
        let mut r = rng(1);
        for (n, p) in [(4, 3), (8, 5), (16, 4), (2, 1)] {
            let s = prepare_state(&frame(n, p, &mut r)).unwrap();
            assert!((s.norm() - 1.0).abs() < 1e-14);
            assert_eq!(s.anc_dim(), p.next_power_of_two());
            assert_eq!(s.padding_leak(), 0.0);
        }
        let x = frame(6, 2, &mut r);
        assert!(matches!(prepare_state(&x), Err(Error::Representation(_))));
    }

    #[test]
    fn frame_round_trip() {
        let mut r = rng(2);
        let x = frame(8, 3, &mut r);
        let back = prepare_state(&x).unwrap().frame().unwrap();
        assert!(max_abs(&(back.matrix() - x.matrix())) < 1e-13);
    }

    #[test]
    fn expectation_reproduces_costs() {
        let mut r = rng(3);
        let x = frame(8, 3, &mut r);
        let h = random::symmetric(8, &mut r);
        let s = prepare_state(&x).unwrap();
        let hop = Operator::Dense(h.matrix().clone());
        let gr = Problem::grassmann(h.clone()).cost(&x).unwrap();
        assert!((1.5 * expectation(&s, &Operator::Identity, &hop).unwrap() - gr).abs() < 1e-12);
        let k = vec![0.5, 2.0, -1.0];
        let st = Problem::stiefel(h.clone(), k.clone()).unwrap().cost(&x).unwrap();
        let kop = Operator::Dense(DMatrix::from_diagonal(&DVector::from_vec(k)));
        assert!((1.5 * expectation(&s, &kop, &hop).unwrap() - st).abs() < 1e-12);
    }

    #[test]
    fn densities_and_subspace_matrices_match_products() {
        let mut r = rng(4);
        let x = frame(8, 2, &mut r);
        let xm = x.matrix();
        let s = prepare_state(&x).unwrap();
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        assert!(max_abs(&(system_density(&s, None).unwrap() - xm * xm.transpose())) < 1e-12);
        assert!(max_abs(&(system_density(&s, Some(&k)).unwrap() - xm * &k * xm.transpose())) < 1e-12);
        let h = random::symmetric(8, &mut r);
        let e = subspace_matrix(&s, &Operator::Dense(h.matrix().clone())).unwrap();
        assert!(max_abs(&(&e - xm.transpose() * h.matrix() * xm)) < 1e-12);
        assert!(max_abs(&(&e - e.transpose())) < 1e-15);
        let id = subspace_matrix(&s, &Operator::Identity).unwrap();
        assert!(max_abs(&(id - DMatrix::identity(2, 2))) < 1e-12);
        let o = random::skew(8, &mut r);
        let a = subspace_matrix(&s, &Operator::Dense(o.matrix().clone())).unwrap();
        assert!(max_abs(&(&a + a.transpose())) < 1e-12);
        let wrong = Operator::Dense(DMatrix::identity(4, 4));
        assert!(matches!(subspace_matrix(&s, &wrong), Err(Error::Dimension(_))));
    }

    #[test]
    fn measurements_agree_with_classical_frames() {
        let mut r = rng(5);
        for (n, p) in [(8, 2), (16, 4)] {
            let h = random::symmetric(n, &mut r);
            let k = crate::eigenproblems::StiefelProblem::default_weights(p);
            let kd = DMatrix::from_diagonal(&DVector::from_column_slice(&k));
            let st = Problem::stiefel(h.clone(), k).unwrap();
            for _ in 0..50 {
                let x = frame(n, p, &mut r);
                let s = prepare_state(&x).unwrap();
                assert!((st.cost(&s).unwrap() - st.cost(&x).unwrap()).abs() < 1e-10);
                let pairs = [
                    (s.system_density(None).unwrap(), x.system_density(None).unwrap()),
                    (s.system_density(Some(&kd)).unwrap(), x.system_density(Some(&kd)).unwrap()),
                    (s.subspace_matrix(h.matrix()).unwrap(), x.subspace_matrix(h.matrix()).unwrap()),
                ];
                for (a, b) in pairs {
                    assert!(max_abs(&(a - b)) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn exact_retraction_matches_classical() {
        let mut r = rng(6);
        for (n, p) in [(4, 2), (8, 3), (8, 1)] {
            let x = frame(n, p, &mut r);
            let s = prepare_state(&x).unwrap();
            let act = random_action(n, p, &mut r);
            let moved = apply_retraction_exact(&s, &act, 0.3).unwrap();
            let oracle = prepare_state(&retract(&x, &act, 0.3, 0.0).unwrap()).unwrap();
            assert!((moved.amplitudes() - oracle.amplitudes()).amax() < 1e-11);
            assert!((moved.norm() - 1.0).abs() < 1e-13);
            assert!(moved.padding_leak() < 1e-15);
            let still = apply_retraction_exact(&s, &TangentAction::zeros(n, p), 0.3).unwrap();
            assert_eq!(still, s);
        }
    }

    #[test]
    fn single_term_trotter_is_exact() {
        let gen = PauliSum::from_str("0+0.7i XY").unwrap();
        let mut r = rng(7);
        let v: Vec<f64> = random::gaussian(4, 1, &mut r).normalize().as_slice().to_vec();
        let g = gen.to_real_matrix().unwrap();
        let exact = (g * 0.9).exp() * DVector::from_column_slice(&v);
        for steps in [1, 3] {
            let got = trotter_evolve(&gen, &v, 0.9, steps).unwrap();
            assert!((DVector::from_vec(got) - &exact).amax() < 1e-14);
        }
    }

    fn trotter_errors(q: usize, seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        let dim = 1 << q;
        let l = random::skew(dim, &mut r);
        let gen = pauli_decompose(l.matrix()).unwrap();
        let v = random::gaussian(dim, 1, &mut r).normalize();
        let exact = expm_skew(&l, 0.5) * &v;
        [1, 2, 4, 8]
            .iter()
            .map(|&s| (DVector::from_vec(trotter_evolve(&gen, v.as_slice(), 0.5, s).unwrap()) - &exact).norm())
            .collect()
    }

    #[test]
    fn trotter_error_is_second_order() {
        let steps = [1.0, 2.0, 4.0, 8.0];
        for (q, seed) in [(2, 8), (3, 9)] {
            let errs = trotter_errors(q, seed);
            let slope = crate::eigenproblems::loglog_slope(&steps, &errs);
            assert!((slope + 2.0).abs() <= 0.15, "{q} qubits: slope {slope}, errors {errs:?}");
        }
    }

    #[test]
    fn trotter_retraction_converges_to_exact() {
        let mut r = rng(10);
        let x = frame(4, 2, &mut r);
        let s = prepare_state(&x).unwrap();
        let act = random_action(4, 2, &mut r);
        let exact = apply_retraction_exact(&s, &act, 0.4).unwrap();
        let approx = apply_retraction_trotter(&s, &act, 0.4, 64).unwrap();
        assert!((approx.amplitudes() - exact.amplitudes()).amax() < 1e-6);
        assert!((approx.norm() - 1.0).abs() < 1e-12);
        assert!(approx.padding_leak() < 1e-15);
        let refused = apply_retraction_trotter_budgeted(&s, &act, 0.4, 4, 2);
        assert!(matches!(refused, Err(Error::Representation(_))));
        assert!(matches!(apply_retraction_trotter(&s, &act, 0.4, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn trotter_rejects_non_skew_generators() {
        let gen = PauliSum::from_str("0.3 ZZ").unwrap();
        assert!(matches!(trotter_evolve(&gen, &[1.0, 0.0, 0.0, 0.0], 1.0, 1), Err(Error::Representation(_))));
    }

    #[test]
    fn grassmann_dof_retraction() {
        let mut r = rng(11);
        let x = frame(8, 3, &mut r);
        let s = prepare_state(&x).unwrap();
        let xm = x.matrix();

        // Horizontal O: X⊥ M Xᵀ - X Mᵀ X⊥ᵀ has XᵀOX = 0.
        let proj = DMatrix::identity(8, 8) - xm * xm.transpose();
        let m = random::gaussian(8, 3, &mut r);
        let o = &proj * &m * xm.transpose() - xm * m.transpose() * &proj;
        assert!(is_horizontal(&s, &o, 1e-12).unwrap());
        let a = grassmann_dof_retract(&s, &o).unwrap();
        let act = TangentAction::new(SkewMatrix::new(o.clone()).unwrap(), SkewMatrix::zeros(3));
        let b = apply_retraction_exact(&s, &act, 1.0).unwrap();
        assert!((a.amplitudes() - b.amplitudes()).amax() < 1e-12);

        let o = random::skew(8, &mut r).matrix().clone();
        assert!(!is_horizontal(&s, &o, 1e-6).unwrap());
        let moved = grassmann_dof_retract(&s, &o).unwrap();
        assert!(moved.frame().unwrap().orthonormality_error() < 1e-10);

        // First order: the motion is t·P_Gr(OX) up to O(t²).
        let z = &proj * &o * xm;
        let err = |t: f64| {
            let y = grassmann_dof_retract(&s, &(&o * t)).unwrap().frame().unwrap();
            max_abs(&(y.matrix() - xm - &z * t))
        };
        let ratio = err(1e-3) / err(1e-4);
        assert!((50.0..200.0).contains(&ratio), "ratio {ratio}");
        assert!(grassmann_dof_retract(&s, &DMatrix::identity(8, 8)).is_err());
    }

    #[test]
    fn pauli_decomposition_examples() {
        let z = pauli_decompose(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z.coefficient(0, 1), c(1.0, 0.0));
        let y = pauli_decompose(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert_eq!(y.len(), 1);
        assert_eq!(y.coefficient(1, 1), c(0.0, 1.0));
        assert!(matches!(pauli_decompose(&DMatrix::zeros(3, 3)), Err(Error::Representation(_))));
    }

    #[test]
    fn pauli_decomposition_reconstructs() {
        let mut r = rng(12);
        let m = random::gaussian(4, 4, &mut r);
        let back = pauli_decompose(&m).unwrap().to_real_matrix().unwrap();
        assert!(max_abs(&(back - &m)) < 1e-12);

        let h = random::symmetric(8, &mut r);
        let hs = pauli_decompose(h.matrix()).unwrap();
        assert!(hs.terms().all(|p| p.coeff.im == 0.0 && p.y_count() % 2 == 0));

        let l = random::skew(8, &mut r);
        let ls = pauli_decompose(l.matrix()).unwrap();
        assert!(ls.terms().all(|p| p.coeff.re == 0.0 && p.y_count() % 2 == 1));
        assert!(max_abs(&(ls.to_real_matrix().unwrap() - l.matrix())) < 1e-12);
    }

    #[test]
    fn pauli_products_match_matrices() {
        let x = PauliString::from_label("X", c(1.0, 0.0)).unwrap();
        let y = PauliString::from_label("Y", c(1.0, 0.0)).unwrap();
        let xy = x.mul(&y);
        assert_eq!(xy.label(), "Z");
        assert_eq!(xy.coeff, c(0.0, 1.0));
        assert_eq!(y.mul(&x).coeff, c(0.0, -1.0));

        let labels = ["XYZI", "YYXZ", "ZIYX", "IXXY", "YZZZ"];
        for a in labels {
            for b in labels {
                let pa = PauliSum::from_str(&format!("0.5-0.25i {a}")).unwrap();
                let pb = PauliSum::from_str(&format!("1.5 {b}")).unwrap();
                let prod = pa.mul(&pb).unwrap().to_matrix().unwrap();
                let want = pa.to_matrix().unwrap() * pb.to_matrix().unwrap();
                assert!((prod - want).camax() < 1e-14, "{a}·{b}");
            }
        }
    }

    #[test]
    fn pauli_sum_bookkeeping() {
        let a = PauliSum::from_str("1 ZI\n0.5 XX").unwrap();
        let b = PauliSum::from_str("-1 ZI\n0.25 YY").unwrap();
        let s = a.add(&b).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.is_hermitian(0.0));
        let big = PauliSum::identity(3, c(1.0, 0.0));
        assert!(matches!(a.add(&big), Err(Error::Dimension(_))));
        let t = PauliSum::from_str("2 X").unwrap().tensor(&PauliSum::from_str("3 Z").unwrap());
        assert_eq!(t.terms().next().unwrap().label(), "XZ");
        assert_eq!(t.coefficient(0b10, 0b01), c(6.0, 0.0));
        let mut p = PauliSum::from_str("1e-20 X\n1 Z").unwrap();
        p.prune(1e-15);
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn pauli_text_round_trip() {
        let text = "# hydrogen-like\n0.5 ZIZ\n-0.25 XXI  # hopping\n\n0.1+0.2i YII\n";
        let s = PauliSum::from_str(text).unwrap();
        assert_eq!(s.len(), 3);
        let again = PauliSum::from_str(&s.to_string()).unwrap();
        assert_eq!(again, s);
        match PauliSum::from_str("0.5 ZZ\n1 ZZZ") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match PauliSum::from_str("1 ZQ") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(PauliSum::from_str("abc Z"), Err(Error::Parse { .. })));
        assert!(matches!(PauliSum::from_str("# nothing"), Err(Error::Parse { .. })));
    }

    fn sample_setup() -> (EntangledState, PauliSum, f64) {
        let mut r = rng(13);
        let x = frame(8, 2, &mut r);
        let s = prepare_state(&x).unwrap();
        let h = pauli_decompose(random::symmetric(8, &mut r).matrix()).unwrap();
        let exact = expectation(&s, &Operator::Identity, &Operator::Pauli(h.clone())).unwrap();
        (s, h, exact)
    }

    #[test]
    fn exact_budget_matches_expectation() {
        let (s, h, exact) = sample_setup();
        let (v, se) = estimate(&s, &h, ShotBudget::Exact, 0).unwrap();
        assert!((v - exact).abs() < 1e-12);
        assert_eq!(se, 0.0);
        assert!(matches!(sample_expectation(&s, &h, 0, 1), Err(Error::Parameter(_))));
        let wrong = PauliSum::identity(5, c(1.0, 0.0));
        assert!(matches!(estimate(&s, &wrong, ShotBudget::Exact, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn sampling_is_reproducible_per_seed() {
        let (s, h, _) = sample_setup();
        let a = sample_expectation(&s, &h, 10_000, 42).unwrap();
        let b = sample_expectation(&s, &h, 10_000, 42).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        let c = sample_expectation(&s, &h, 10_000, 43).unwrap();
        assert_ne!(a.0.to_bits(), c.0.to_bits());
    }

    #[test]
    fn sampling_errors_stay_within_five_sigma() {
        let (s, h, exact) = sample_setup();
        let inside = (0..100)
            .filter(|&seed| {
                let (v, se) = sample_expectation(&s, &h, 10_000, seed).unwrap();
                (v - exact).abs() <= 5.0 * se
            })
            .count();
        assert!(inside >= 99, "{inside}/100 within 5 SE");
    }

    #[test]
    fn sampled_subspace_matrix() {
        let mut r = rng(14);
        let x = frame(8, 3, &mut r);
        let s = prepare_state(&x).unwrap();
        let h = random::symmetric(8, &mut r);
        let hp = pauli_decompose(h.matrix()).unwrap();
        let (e, se) = estimate_subspace_matrix(&s, &hp, ShotBudget::Exact, 1).unwrap();
        assert!(max_abs(&(e - x.matrix().transpose() * h.matrix() * x.matrix())) < 1e-12);
        assert_eq!(max_abs(&se), 0.0);
        let (a, sa) = estimate_subspace_matrix(&s, &hp, ShotBudget::Shots(5000), 7).unwrap();
        let (b, _) = estimate_subspace_matrix(&s, &hp, ShotBudget::Shots(5000), 7).unwrap();
        assert_eq!(a, b);
        assert!(max_abs(&(&a - a.transpose())) == 0.0);
        assert!(sa.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn statevector_backend_tracks_classical_rtr() {
        let mut r = rng(15);
        let h = SymmetricMatrix::new(
            DMatrix::from_diagonal(&DVector::from_iterator(8, (0..8).map(|v| v as f64)))
                + random::symmetric(8, &mut r).matrix() * 0.1,
        )
        .unwrap();
        let x0 = frame(8, 2, &mut r);
        let cfg = TrustRegionConfig {
            grad_tol: 1e-8,
            ..Default::default()
        };
        for problem in [Problem::grassmann(h.clone()), Problem::stiefel(h.clone(), vec![2.0, 1.0]).unwrap()] {
            let classical = solve_rtr(&problem, &x0, &cfg, &ClassicalBackend::default()).unwrap();
            let quantum = solve_rtr(&problem, &x0, &cfg, &StatevectorBackend::exact()).unwrap();
            assert_eq!(classical.records.len(), quantum.records.len());
            assert!(max_abs(&(classical.frame.matrix() - quantum.frame.matrix())) < 1e-9);
        }
    }
}
