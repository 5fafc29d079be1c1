//! Molecular Hamiltonians: FCIDUMP ingestion, Jordan–Wigner assembly,
//! symmetry sectors and screened starting frames.
//!
//! Spin orbitals are blocked: qubit `j < m` is `α_j`, qubit `m + j` is `β_j`
//! for `m` spatial orbitals. Annihilators are `a_j = Z_{<j} (X_j + iY_j)/2`,
//! so an occupied orbital is `|1⟩`. The electronic Hamiltonian is
//!
//! ```text
//! H = E_core + Σ_{pqσ} h_pq a†_pσ a_qσ + ½ Σ_{pqrs στ} (pq|rs) a†_pσ a†_rτ a_sτ a_qσ
//! ```
//!
//! with `(pq|rs)` in chemists' notation as written in FCIDUMP files.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SymmetricMatrix};
use crate::manifold::StiefelPoint;
use crate::qsim::{PauliString, PauliSum};

/// Largest register `pauli_to_matrix` realizes by default.
pub const DEFAULT_DENSE_CAP: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct FcidumpData {
    pub norb: usize,
    pub nelec: usize,
    pub ms2: i64,
    /// Parsed and kept; point-group symmetry is not used.
    pub orbsym: Vec<i64>,
    pub core_energy: f64,
    pub one_body: DenseMatrix,
    two_body: Vec<f64>,
}

impl FcidumpData {
    /// An all-zero integral set.
    pub fn zeros(norb: usize, nelec: usize, ms2: i64) -> Self {
        Self {
            norb,
            nelec,
            ms2,
            orbsym: Vec::new(),
            core_energy: 0.0,
            one_body: DMatrix::zeros(norb, norb),
            two_body: vec![0.0; norb.pow(4)],
        }
    }

    fn idx(&self, p: usize, q: usize, r: usize, s: usize) -> usize {
        ((p * self.norb + q) * self.norb + r) * self.norb + s
    }

    /// `(pq|rs)`, zero-based.
    pub fn eri(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.two_body[self.idx(p, q, r, s)]
    }

    /// Sets `(pq|rs)` and its seven symmetry partners.
    pub fn set_eri(&mut self, p: usize, q: usize, r: usize, s: usize, v: f64) {
        for (a, b, c, d) in [
            (p, q, r, s),
            (q, p, r, s),
            (p, q, s, r),
            (q, p, s, r),
            (r, s, p, q),
            (s, r, p, q),
            (r, s, q, p),
            (s, r, q, p),
        ] {
            let i = self.idx(a, b, c, d);
            self.two_body[i] = v;
        }
    }

    pub fn set_one_body(&mut self, p: usize, q: usize, v: f64) {
        self.one_body[(p, q)] = v;
        self.one_body[(q, p)] = v;
    }
}

fn parse_float(tok: &str) -> Option<f64> {
    tok.replace(['D', 'd'], "E").parse().ok()
}

fn parse_header(header: &str, line: usize) -> Result<BTreeMap<String, Vec<String>>> {
    let body = header.replace(',', " ");
    let mut body = body.trim_start();
    if let Some(rest) = body.strip_prefix("&FCI").or_else(|| body.strip_prefix("&fci")) {
        body = rest;
    }
    let mut keys: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut current: Option<String> = None;
    let normalized = body.replace(" =", "=").replace("= ", "=");
    for tok in normalized.split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            let key = k.trim().to_ascii_uppercase();
            let entry = keys.entry(key.clone()).or_default();
            if !v.is_empty() {
                entry.push(v.to_string());
            }
            current = Some(key);
        } else if let Some(key) = &current {
            keys.get_mut(key).expect("key inserted").push(tok.to_string());
        } else {
            return Err(Error::Parse {
                line,
                msg: format!("unexpected header token {tok:?}"),
            });
        }
    }
    Ok(keys)
}

fn header_int(keys: &BTreeMap<String, Vec<String>>, key: &str, line: usize) -> Result<i64> {
    let vals = keys.get(key).ok_or_else(|| Error::Parse {
        line,
        msg: format!("header is missing {key}"),
    })?;
    let v = vals.first().ok_or_else(|| Error::Parse {
        line,
        msg: format!("header key {key} has no value"),
    })?;
    v.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("header key {key} has non-integer value {v:?}"),
    })
}

fn is_header_end(line: &str) -> bool {
    let t = line.trim();
    t.eq_ignore_ascii_case("&END") || t == "/" || t.ends_with("&END") || t.ends_with("&end") || t.ends_with('/')
}

/// Parses a Molpro-style FCIDUMP file. Indices are 1-based; `i j 0 0` lines
/// are one-body integrals, `0 0 0 0` is the core energy and `e i 0 0 0`
/// orbital energies are skipped.
pub fn parse_fcidump(text: &str) -> Result<FcidumpData> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| l.trim_start().to_ascii_uppercase().starts_with("&FCI"))
        .ok_or(Error::Parse {
            line: 1,
            msg: "missing &FCI header".into(),
        })?;
    let mut header = String::new();
    let mut end = None;
    for (i, l) in lines.iter().enumerate().skip(start) {
        if is_header_end(l) {
            let t = l.trim();
            let cut = t
                .to_ascii_uppercase()
                .rfind("&END")
                .unwrap_or_else(|| t.rfind('/').expect("header end marker"));
            header.push_str(&t[..cut]);
            header.push(' ');
            end = Some(i);
            break;
        }
        header.push_str(l);
        header.push(' ');
    }
    let end = end.ok_or(Error::Parse {
        line: start + 1,
        msg: "header is not terminated by &END or /".into(),
    })?;
    let keys = parse_header(&header, start + 1)?;
    let norb = header_int(&keys, "NORB", start + 1)?;
    let nelec = header_int(&keys, "NELEC", start + 1)?;
    let ms2 = header_int(&keys, "MS2", start + 1)?;
    if norb <= 0 || nelec < 0 {
        return Err(Error::Parse {
            line: start + 1,
            msg: format!("NORB must be positive and NELEC non-negative, got {norb} and {nelec}"),
        });
    }
    let mut data = FcidumpData::zeros(norb as usize, nelec as usize, ms2);
    if let Some(sym) = keys.get("ORBSYM") {
        data.orbsym = sym.iter().filter_map(|s| s.parse().ok()).collect();
    }
    let norb = norb as usize;
    for (i, raw) in lines.iter().enumerate().skip(end + 1) {
        let line_no = i + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        if toks.len() != 5 {
            return Err(bad(format!("expected `value i j k l`, got {t:?}")));
        }
        let v = parse_float(toks[0]).ok_or_else(|| bad(format!("bad value {:?}", toks[0])))?;
        let mut idx = [0usize; 4];
        for (slot, tok) in idx.iter_mut().zip(&toks[1..]) {
            *slot = tok.parse().map_err(|_| bad(format!("bad index {tok:?}")))?;
            if *slot > norb {
                return Err(bad(format!("index {slot} exceeds NORB = {norb}")));
            }
        }
        match idx {
            [0, 0, 0, 0] => data.core_energy = v,
            [_, 0, 0, 0] => {}
            [p, q, 0, 0] if p > 0 && q > 0 => data.set_one_body(p - 1, q - 1, v),
            [p, q, r, s] if p > 0 && q > 0 && r > 0 && s > 0 => data.set_eri(p - 1, q - 1, r - 1, s - 1, v),
            _ => return Err(bad(format!("unsupported index pattern {idx:?}"))),
        }
    }
    Ok(data)
}

/// Writes integrals back in FCIDUMP form (unique permutations only).
pub fn write_fcidump(data: &FcidumpData) -> String {
    let m = data.norb;
    let mut out = format!(
        "&FCI NORB={},NELEC={},MS2={},\n&END\n",
        data.norb, data.nelec, data.ms2
    );
    for p in 0..m {
        for q in 0..=p {
            for r in 0..m {
                for s in 0..=r {
                    if (p * (p + 1) / 2 + q) < (r * (r + 1) / 2 + s) {
                        continue;
                    }
                    let v = data.eri(p, q, r, s);
                    if v != 0.0 {
                        out.push_str(&format!("{v:.16e} {} {} {} {}\n", p + 1, q + 1, r + 1, s + 1));
                    }
                }
            }
        }
    }
    for p in 0..m {
        for q in 0..=p {
            let v = data.one_body[(p, q)];
            if v != 0.0 {
                out.push_str(&format!("{v:.16e} {} {} 0 0\n", p + 1, q + 1));
            }
        }
    }
    out.push_str(&format!("{:.16e} 0 0 0 0\n", data.core_energy));
    out
}

/// Jordan–Wigner annihilator `a_j` on `qubits` qubits.
pub fn annihilation(j: usize, qubits: usize) -> Result<PauliSum> {
    if j >= qubits {
        return Err(Error::dim(format!("mode {j} outside a {qubits}-qubit register")));
    }
    let tail = (1u64 << j) - 1;
    let bit = 1u64 << j;
    let mut s = PauliSum::zero(qubits);
    s.insert(PauliString::new(qubits, bit, tail, Complex64::new(0.5, 0.0)));
    s.insert(PauliString::new(qubits, bit, tail | bit, Complex64::new(0.0, 0.5)));
    Ok(s)
}

/// Jordan–Wigner creator `a†_j`.
pub fn creation(j: usize, qubits: usize) -> Result<PauliSum> {
    if j >= qubits {
        return Err(Error::dim(format!("mode {j} outside a {qubits}-qubit register")));
    }
    let tail = (1u64 << j) - 1;
    let bit = 1u64 << j;
    let mut s = PauliSum::zero(qubits);
    s.insert(PauliString::new(qubits, bit, tail, Complex64::new(0.5, 0.0)));
    s.insert(PauliString::new(qubits, bit, tail | bit, Complex64::new(0.0, -0.5)));
    Ok(s)
}

/// `N = Σ_j a†_j a_j`.
pub fn number_operator(qubits: usize) -> Result<PauliSum> {
    let mut n = PauliSum::zero(qubits);
    for j in 0..qubits {
        n = n.add(&creation(j, qubits)?.mul(&annihilation(j, qubits)?)?)?;
    }
    n.prune(1e-15);
    Ok(n)
}

/// `S_z = ½ Σ_j (n_αj - n_βj)` for blocked spin orbitals.
pub fn sz_operator(norb: usize) -> Result<PauliSum> {
    let q = 2 * norb;
    let mut s = PauliSum::zero(q);
    for j in 0..norb {
        let na = creation(j, q)?.mul(&annihilation(j, q)?)?;
        let nb = creation(norb + j, q)?.mul(&annihilation(norb + j, q)?)?;
        s = s.add(&na.scale(Complex64::new(0.5, 0.0)))?;
        s = s.add(&nb.scale(Complex64::new(-0.5, 0.0)))?;
    }
    s.prune(1e-15);
    Ok(s)
}

/// Qubit Hamiltonian on `2·norb` qubits.
pub fn build_jw_hamiltonian(data: &FcidumpData) -> Result<PauliSum> {
    let m = data.norb;
    let q = 2 * m;
    if q > 30 {
        return Err(Error::Representation(format!("{q} spin orbitals exceed the register limit")));
    }
    let cre: Vec<PauliSum> = (0..q).map(|j| creation(j, q)).collect::<Result<_>>()?;
    let ann: Vec<PauliSum> = (0..q).map(|j| annihilation(j, q)).collect::<Result<_>>()?;
    let mut h = PauliSum::identity(q, Complex64::new(data.core_energy, 0.0));
    let spins = [0, m];
    for p in 0..m {
        for r in 0..m {
            let v = data.one_body[(p, r)];
            if v == 0.0 {
                continue;
            }
            for &o in &spins {
                h = h.add(&cre[p + o].mul(&ann[r + o])?.scale(Complex64::new(v, 0.0)))?;
            }
        }
    }
    for p in 0..m {
        for qq in 0..m {
            for r in 0..m {
                for s in 0..m {
                    let v = data.eri(p, qq, r, s);
                    if v == 0.0 {
                        continue;
                    }
                    for &os in &spins {
                        for &ot in &spins {
                            if p + os == r + ot || s + ot == qq + os {
                                continue;
                            }
                            let term = cre[p + os]
                                .mul(&cre[r + ot])?
                                .mul(&ann[s + ot])?
                                .mul(&ann[qq + os])?;
                            h = h.add(&term.scale(Complex64::new(0.5 * v, 0.0)))?;
                        }
                    }
                }
            }
        }
    }
    h.prune(1e-14);
    Ok(h)
}

/// Dense real matrix of a Pauli sum on at most [`DEFAULT_DENSE_CAP`] qubits.
pub fn pauli_to_matrix(ps: &PauliSum) -> Result<DenseMatrix> {
    pauli_to_matrix_capped(ps, DEFAULT_DENSE_CAP)
}

pub fn pauli_to_matrix_capped(ps: &PauliSum, cap: usize) -> Result<DenseMatrix> {
    if ps.qubits() > cap {
        return Err(Error::Representation(format!(
            "{} qubits exceeds the dense cap of {cap}",
            ps.qubits()
        )));
    }
    ps.to_real_matrix()
}

/// Computational basis states with fixed electron number and `2 S_z`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SectorBasis {
    pub qubits: usize,
    pub indices: Vec<usize>,
    pub n_electrons: usize,
    pub sz_twice: i64,
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn spin_counts(norb: usize, n_electrons: usize, sz_twice: i64) -> Result<(usize, usize)> {
    let n = n_electrons as i64;
    if (n + sz_twice) % 2 != 0 || sz_twice.abs() > n {
        return Err(Error::param(format!(
            "N = {n_electrons} and 2Sz = {sz_twice} are incompatible"
        )));
    }
    let na = ((n + sz_twice) / 2) as usize;
    let nb = ((n - sz_twice) / 2) as usize;
    if na > norb || nb > norb {
        return Err(Error::param(format!(
            "{na} alpha and {nb} beta electrons do not fit in {norb} orbitals"
        )));
    }
    Ok((na, nb))
}

/// `C(norb, n_α) · C(norb, n_β)`.
pub fn sector_dimension(norb: usize, n_electrons: usize, sz_twice: i64) -> Result<usize> {
    let (na, nb) = spin_counts(norb, n_electrons, sz_twice)?;
    Ok(binomial(norb, na) * binomial(norb, nb))
}

/// Basis of the `(N, 2S_z)` sector on `2·norb` qubits, ascending.
pub fn sector_basis(norb: usize, n_electrons: usize, sz_twice: i64) -> Result<SectorBasis> {
    let (na, nb) = spin_counts(norb, n_electrons, sz_twice)?;
    let mask = (1usize << norb) - 1;
    let indices = (0..1usize << (2 * norb))
        .filter(|b| (b & mask).count_ones() as usize == na && (b >> norb).count_ones() as usize == nb)
        .collect();
    Ok(SectorBasis {
        qubits: 2 * norb,
        indices,
        n_electrons,
        sz_twice,
    })
}

/// Restricts `H` to a symmetry sector after checking that it conserves both
/// electron number and `S_z` (couplings across sectors above 1e-8 are refused).
pub fn sector_project(h: &SymmetricMatrix, n_electrons: usize, sz_twice: i64) -> Result<(SectorBasis, SymmetricMatrix)> {
    let dim = h.dim();
    if dim == 0 || !dim.is_power_of_two() || !dim.trailing_zeros().is_multiple_of(2) {
        return Err(Error::dim(format!(
            "H of dimension {dim} is not a register of 2·norb qubits"
        )));
    }
    let norb = dim.trailing_zeros() as usize / 2;
    let mask = (1usize << norb) - 1;
    let charge = |b: usize| {
        let a = (b & mask).count_ones() as i64;
        let bb = (b >> norb).count_ones() as i64;
        (a + bb, a - bb)
    };
    let m = h.matrix();
    for j in 0..dim {
        for i in 0..dim {
            let v = m[(i, j)];
            if v.abs() > 1e-8 && charge(i) != charge(j) {
                return Err(Error::Symmetry(format!(
                    "H couples basis states {i} and {j} with different (N, 2Sz): {:?} vs {:?}",
                    charge(i),
                    charge(j)
                )));
            }
        }
    }
    let basis = sector_basis(norb, n_electrons, sz_twice)?;
    let k = basis.indices.len();
    let sub = DMatrix::from_fn(k, k, |a, b| m[(basis.indices[a], basis.indices[b])]);
    Ok((basis, SymmetricMatrix::from_sym_part(&sub)?))
}

/// Computational basis columns at the `p` smallest diagonal entries of `H`,
/// ascending, ties broken by index.
pub fn screen_initial_frame(h: &SymmetricMatrix, p: usize) -> Result<StiefelPoint> {
    let n = h.dim();
    if p == 0 || p > n {
        return Err(Error::param(format!("need 1 <= p <= n, got p = {p}, n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| h.matrix()[(a, a)].total_cmp(&h.matrix()[(b, b)]).then(a.cmp(&b)));
    let mut x = DMatrix::zeros(n, p);
    for (col, &row) in order.iter().take(p).enumerate() {
        x[(row, col)] = 1.0;
    }
    StiefelPoint::new(x)
}
