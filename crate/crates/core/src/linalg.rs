//! Small dense complex linear algebra and two-qubit state primitives.
//!
//! Every Hilbert space in this crate is tiny (at most seven levels), so all
//! operators are stored as dense row-major matrices and decomposed with a
//! cyclic Jacobi sweep.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};
use std::str::FromStr;

use num_complex::Complex64 as C64;
use thiserror::Error;

/// Default tolerance for physicality checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Off-diagonal norm at which the Jacobi sweep stops.
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Dense complex square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Vec<C64>,
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    /// Builds from row-major entries. Panics unless `entries.len()` is a
    /// perfect square.
    pub fn from_row_major(entries: Vec<C64>) -> Self {
        let dim = (entries.len() as f64).sqrt().round() as usize;
        assert_eq!(dim * dim, entries.len(), "entries do not form a square matrix");
        Self { dim, data: entries }
    }

    pub fn from_real(dim: usize, entries: &[f64]) -> Self {
        assert_eq!(entries.len(), dim * dim);
        Self { dim, data: entries.iter().map(|&x| C64::new(x, 0.0)).collect() }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    /// `|a⟩⟨b|` between basis states of a `dim`-level space.
    pub fn transition(dim: usize, a: usize, b: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(a, b)] = ONE;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn conj(&self) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, z: C64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&x| x * z).collect() }
    }

    pub fn scale_re(&self, x: f64) -> Self {
        self.scale(C64::new(x, 0.0))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest absolute row sum, a cheap upper bound on the spectral radius.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn hermitian_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Symmetrizes `(A + A†)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.dim, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    /// `tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * other.data[k * n + i];
            }
        }
        acc
    }

    /// Real part of `tr(self · other)`; exact for Hermitian pairs.
    pub fn expectation(&self, observable: &Self) -> f64 {
        self.trace_product(observable).re
    }

    pub fn apply(&self, ket: &Ket) -> Ket {
        assert_eq!(self.dim, ket.dim());
        let n = self.dim;
        let amps = (0..n)
            .map(|i| (0..n).map(|j| self.data[i * n + j] * ket.amps[j]).sum())
            .collect();
        Ket { amps }
    }

    /// `U · self · U†`.
    pub fn conjugate_by(&self, u: &Self) -> Self {
        &(u * self) * &u.dagger()
    }

    /// Cyclic-Jacobi eigendecomposition of a Hermitian matrix.
    ///
    /// Returns ascending eigenvalues and the eigenvectors as matrix columns.
    pub fn eigh(&self) -> (Vec<f64>, Operator) {
        jacobi_eigh(self)
    }

    pub fn eigenvalues_hermitian(&self) -> Vec<f64> {
        self.eigh().0
    }

    /// Applies `f` to the eigenvalues of a Hermitian matrix.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Operator {
        let (vals, vecs) = self.eigh();
        let n = self.dim;
        Operator::from_fn(n, |i, j| {
            (0..n).map(|k| vecs[(i, k)] * vecs[(j, k)].conj() * f(vals[k])).sum()
        })
    }

    /// Principal square root of a positive semidefinite matrix; negative
    /// eigenvalues from round-off are clipped to zero.
    pub fn sqrt_psd(&self) -> Operator {
        self.map_spectrum(|x| x.max(0.0).sqrt())
    }

    pub fn purity(&self) -> f64 {
        self.trace_product(self).re
    }

    /// Copies the sub-block on `indices` (in order) into a new operator.
    pub fn submatrix(&self, indices: &[usize]) -> Operator {
        Operator::from_fn(indices.len(), |i, j| self[(indices[i], indices[j])])
    }
}

impl Index<(usize, usize)> for Operator {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for Operator {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim);
        Operator { dim: self.dim, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl AddAssign<&Operator> for Operator {
    fn add_assign(&mut self, rhs: &Operator) {
        assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim);
        Operator { dim: self.dim, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        Operator { dim: n, data: out }
    }
}

/// State vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    amps: Vec<C64>,
}

impl Ket {
    pub fn new(amps: Vec<C64>) -> Self {
        Self { amps }
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut amps = vec![ZERO; dim];
        amps[k] = ONE;
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self { amps: self.amps.iter().map(|z| z / n).collect() }
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &Ket) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|self⟩⟨self|`
    pub fn projector(&self) -> Operator {
        Operator::from_fn(self.dim(), |i, j| self.amps[i] * self.amps[j].conj())
    }

    pub fn tensor(&self, other: &Ket) -> Ket {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Ket { amps }
    }
}

/// Kronecker product `a ⊗ b`.
pub fn tensor(a: &Operator, b: &Operator) -> Operator {
    let (da, db) = (a.dim, b.dim);
    Operator::from_fn(da * db, |i, j| a[(i / db, j / db)] * b[(i % db, j % db)])
}

/// Which factor of a bipartite space to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    A,
    B,
}

/// Traces out one factor of a `dA·dB` operator.
pub fn partial_trace(rho: &Operator, dims: (usize, usize), keep: Subsystem) -> Result<Operator, LinalgError> {
    let (da, db) = dims;
    if rho.dim != da * db {
        return Err(LinalgError::DimensionMismatch { expected: da * db, got: rho.dim });
    }
    Ok(match keep {
        Subsystem::A => Operator::from_fn(da, |i, j| (0..db).map(|k| rho[(i * db + k, j * db + k)]).sum()),
        Subsystem::B => Operator::from_fn(db, |i, j| (0..da).map(|k| rho[(k * db + i, k * db + j)]).sum()),
    })
}

/// Pauli measurement axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(format!("unknown Pauli axis '{other}'")),
        }
    }
}

pub fn pauli(axis: Axis) -> Operator {
    match axis {
        Axis::X => Operator::from_row_major(vec![ZERO, ONE, ONE, ZERO]),
        Axis::Y => Operator::from_row_major(vec![ZERO, -I, I, ZERO]),
        Axis::Z => Operator::from_row_major(vec![ONE, ZERO, ZERO, -ONE]),
    }
}

/// `(I ± σ)/2` for the given sign of the eigenvalue.
pub fn pauli_projector(axis: Axis, positive: bool) -> Operator {
    let sign = if positive { 0.5 } else { -0.5 };
    &Operator::identity(2).scale_re(0.5) + &pauli(axis).scale_re(sign)
}

/// `n·σ` for a real three-vector.
pub fn bloch_observable(n: [f64; 3]) -> Operator {
    let mut m = pauli(Axis::X).scale_re(n[0]);
    m += &pauli(Axis::Y).scale_re(n[1]);
    m += &pauli(Axis::Z).scale_re(n[2]);
    m
}

/// Which physicality condition failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DensityViolation {
    Hermiticity,
    Trace,
    Positivity,
}

impl fmt::Display for DensityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DensityViolation::Hermiticity => "hermiticity",
            DensityViolation::Trace => "trace",
            DensityViolation::Positivity => "positivity",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityCheck {
    pub violation: Option<DensityViolation>,
    pub detail: String,
}

impl DensityCheck {
    pub fn is_ok(&self) -> bool {
        self.violation.is_none()
    }
}

/// Checks Hermiticity, unit trace and positivity in that order.
pub fn check_density_matrix(rho: &Operator, tol: f64) -> DensityCheck {
    let herm = rho.hermitian_deviation();
    if herm > tol {
        return DensityCheck {
            violation: Some(DensityViolation::Hermiticity),
            detail: format!("hermiticity: max |ρ - ρ†| = {herm:.3e}"),
        };
    }
    let tr = rho.trace();
    if (tr - ONE).norm() > tol {
        return DensityCheck {
            violation: Some(DensityViolation::Trace),
            detail: format!("trace: tr ρ = {:.12}{:+.3e}i", tr.re, tr.im),
        };
    }
    let min_eig = rho.hermitian_part().eigenvalues_hermitian()[0];
    if min_eig < -tol {
        return DensityCheck {
            violation: Some(DensityViolation::Positivity),
            detail: format!("positivity: smallest eigenvalue {min_eig:.3e}"),
        };
    }
    DensityCheck { violation: None, detail: "ok".into() }
}

/// `½‖ρ − σ‖₁`
pub fn trace_distance(rho: &Operator, sigma: &Operator) -> f64 {
    let diff = (rho - sigma).hermitian_part();
    0.5 * diff.eigenvalues_hermitian().iter().map(|x| x.abs()).sum::<f64>()
}

fn off_diagonal_norm(a: &Operator) -> f64 {
    let n = a.dim;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

fn jacobi_eigh(input: &Operator) -> (Vec<f64>, Operator) {
    let n = input.dim;
    let mut a = input.hermitian_part();
    let mut v = Operator::identity(n);
    let scale = a.frobenius_norm().max(1.0);

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag < f64::MIN_POSITIVE {
                    continue;
                }
                // Phase-rotate q so that a_pq is real, then a real Givens rotation.
                let phase = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let jpp = C64::new(c, 0.0);
                let jpq = C64::new(s, 0.0);
                let jqp = -phase.conj() * s;
                let jqq = phase.conj() * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * jpp + akq * jqp;
                    a[(k, q)] = akp * jpq + akq * jqq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = jpp.conj() * apk + jqp.conj() * aqk;
                    a[(q, k)] = jpq.conj() * apk + jqq.conj() * aqk;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * jpp + vkq * jqp;
                    v[(k, q)] = vkp * jpq + vkq * jqq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let vals = order.iter().map(|&i| a[(i, i)].re).collect();
    let vecs = Operator::from_fn(n, |i, j| v[(i, order[j])]);
    (vals, vecs)
}

fn format_entry(z: C64) -> String {
    format!("{:.11e}{:+.11e}i", z.re, z.im)
}

fn parse_entry(token: &str) -> Option<C64> {
    let body = token.strip_suffix('i')?;
    // The imaginary part starts at the last sign that is not an exponent sign.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'))?;
    let re = body[..split].parse().ok()?;
    let im = body[split..].parse().ok()?;
    Some(C64::new(re, im))
}

impl fmt::Display for Operator {
    /// Row-major text, one row per line, entries as `re+imi` with 12
    /// significant digits.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# dim {}", self.dim)?;
        for i in 0..self.dim {
            let row: Vec<String> = (0..self.dim).map(|j| format_entry(self[(i, j)])).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for Operator {
    type Err = LinalgError;

    fn from_str(s: &str) -> Result<Self, LinalgError> {
        let mut rows: Vec<Vec<C64>> = Vec::new();
        let mut declared = None;
        let mut last_line = 0;
        for (idx, raw) in s.lines().enumerate() {
            let line_no = idx + 1;
            last_line = line_no;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(d) = rest.trim().strip_prefix("dim") {
                    let d = d.trim().parse::<usize>().map_err(|_| LinalgError::Parse {
                        line: line_no,
                        msg: format!("bad dimension header '{line}'"),
                    })?;
                    declared = Some(d);
                }
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    parse_entry(tok).ok_or_else(|| LinalgError::Parse {
                        line: line_no,
                        msg: format!("bad complex entry '{tok}'"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(LinalgError::Parse {
                        line: line_no,
                        msg: format!("row has {} entries, expected {}", row.len(), first.len()),
                    });
                }
            }
            rows.push(row);
        }
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.len() != dim || dim == 0 {
            return Err(LinalgError::Parse {
                line: last_line,
                msg: format!("expected a square matrix, found {} rows of {} entries", rows.len(), dim),
            });
        }
        if let Some(d) = declared {
            if d != dim {
                return Err(LinalgError::Parse { line: last_line, msg: format!("header declares dim {d}, data has {dim}") });
            }
        }
        Ok(Operator::from_row_major(rows.into_iter().flatten().collect()))
    }
}
