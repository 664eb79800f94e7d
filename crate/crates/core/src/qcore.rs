//! Dense density-matrix engine over labeled registers.
//!
//! Registers are ordered as listed in the layout, with the first register as
//! the most significant digit of the flat index. Channels act on any subset
//! of registers via index arithmetic, so no full-space operator is built.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-9;
pub const KRAUS_TOL: f64 = 1e-9;
/// Branches below this probability carry no state.
pub const EMPTY_BRANCH_PROB: f64 = 1e-14;
pub const DEFAULT_DIM_CAP: usize = 256;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QcoreError {
    #[error("duplicate register label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown register label `{0}`")]
    UnknownLabel(String),
    #[error("register `{label}` has invalid dimension {dim}")]
    InvalidDimension { label: String, dim: usize },
    #[error("total dimension {total} exceeds cap {cap}")]
    DimensionCap { total: usize, cap: usize },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("norm or trace {0} is not 1")]
    NotNormalized(f64),
    #[error("matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("matrix has eigenvalue {0:e} below tolerance")]
    NotPositive(f64),
    #[error("Kraus operators are not complete (deviation {0:e})")]
    IncompleteKraus(f64),
    #[error("Kraus operators increase trace (excess {0:e})")]
    TraceIncreasing(f64),
    #[error("invalid projector set (deviation {0:e})")]
    InvalidProjectors(f64),
    #[error("empty operator set")]
    Empty,
    #[error("non-finite value encountered")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, QcoreError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterLayout {
    labels: Vec<String>,
    dims: Vec<usize>,
}

impl RegisterLayout {
    pub fn new<S: Into<String>>(regs: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        Self::with_cap(regs, DEFAULT_DIM_CAP)
    }

    pub fn with_cap<S: Into<String>>(regs: impl IntoIterator<Item = (S, usize)>, cap: usize) -> Result<Self> {
        let mut labels: Vec<String> = Vec::new();
        let mut dims = Vec::new();
        let mut total: usize = 1;
        for (label, dim) in regs {
            let label = label.into();
            if dim < 2 {
                return Err(QcoreError::InvalidDimension { label, dim });
            }
            if labels.contains(&label) {
                return Err(QcoreError::DuplicateLabel(label));
            }
            total = total.saturating_mul(dim);
            labels.push(label);
            dims.push(dim);
        }
        if labels.is_empty() {
            return Err(QcoreError::Empty);
        }
        if total > cap {
            return Err(QcoreError::DimensionCap { total, cap });
        }
        Ok(Self { labels, dims })
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| QcoreError::UnknownLabel(label.to_string()))
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.dims[self.position(label)?])
    }

    /// Tensor product layout `self ⊗ other`.
    pub fn join(&self, other: &RegisterLayout) -> Result<Self> {
        let regs = self
            .labels
            .iter()
            .cloned()
            .zip(self.dims.iter().copied())
            .chain(other.labels.iter().cloned().zip(other.dims.iter().copied()));
        Self::new(regs)
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.dims[i + 1];
        }
        s
    }

    fn positions(&self, targets: &[&str]) -> Result<Vec<usize>> {
        let mut pos = Vec::with_capacity(targets.len());
        for t in targets {
            let p = self.position(t)?;
            if pos.contains(&p) {
                return Err(QcoreError::DuplicateLabel(t.to_string()));
            }
            pos.push(p);
        }
        Ok(pos)
    }
}

/// Flat indices split into a target block (in the order given) and the rest.
struct Split {
    dt: usize,
    dr: usize,
    table: Vec<usize>,
}

impl Split {
    fn new(layout: &RegisterLayout, targets: &[usize]) -> Self {
        let strides = layout.strides();
        let rest: Vec<usize> = (0..layout.len()).filter(|p| !targets.contains(p)).collect();
        let dt: usize = targets.iter().map(|&p| layout.dims[p]).product();
        let dr: usize = rest.iter().map(|&p| layout.dims[p]).product();
        let offsets = |positions: &[usize], count: usize| -> Vec<usize> {
            (0..count)
                .map(|mut idx| {
                    let mut off = 0;
                    for &p in positions.iter().rev() {
                        let d = layout.dims[p];
                        off += (idx % d) * strides[p];
                        idx /= d;
                    }
                    off
                })
                .collect()
        };
        let t_off = offsets(targets, dt);
        let r_off = offsets(&rest, dr);
        let mut table = Vec::with_capacity(dt * dr);
        for r in &r_off {
            for t in &t_off {
                table.push(r + t);
            }
        }
        Self { dt, dr, table }
    }

    #[inline]
    fn idx(&self, r: usize, t: usize) -> usize {
        self.table[r * self.dt + t]
    }
}

/// `m (K ⊗ I)^†` built column by column.
fn right_mul_adjoint(m: &CMatrix, k: &CMatrix, split: &Split) -> CMatrix {
    let n = m.nrows();
    let mut out = CMatrix::zeros(n, n);
    for r in 0..split.dr {
        for t in 0..split.dt {
            let c = split.idx(r, t);
            for tp in 0..split.dt {
                let kv = k[(t, tp)];
                if kv == ZERO {
                    continue;
                }
                let src = split.idx(r, tp);
                let kc = kv.conj();
                for i in 0..n {
                    out[(i, c)] += kc * m[(i, src)];
                }
            }
        }
    }
    out
}

/// `(K ⊗ I) rho (K ⊗ I)^†` for Hermitian `rho`.
fn conjugate(rho: &CMatrix, k: &CMatrix, split: &Split) -> CMatrix {
    // (K rho)^† = rho K^† when rho is Hermitian.
    let a = right_mul_adjoint(rho, k, split).adjoint();
    right_mul_adjoint(&a, k, split)
}

fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn symmetrize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    layout: RegisterLayout,
    amplitudes: CVector,
}

impl PureState {
    pub fn new(layout: RegisterLayout, amplitudes: CVector) -> Result<Self> {
        let d = layout.total_dim();
        if amplitudes.len() != d {
            return Err(QcoreError::ShapeMismatch { expected: d, found: amplitudes.len() });
        }
        let norm = amplitudes.norm_squared();
        if !norm.is_finite() {
            return Err(QcoreError::NonFinite);
        }
        if (norm - 1.0).abs() > TRACE_TOL {
            return Err(QcoreError::NotNormalized(norm));
        }
        Ok(Self { layout, amplitudes })
    }

    /// Normalizes the given amplitudes first.
    pub fn normalized(layout: RegisterLayout, amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(QcoreError::NotNormalized(norm));
        }
        Self::new(layout, amplitudes / Complex64::new(norm, 0.0))
    }

    /// Computational basis state; `digits` lists one level per register.
    pub fn basis(layout: RegisterLayout, digits: &[usize]) -> Result<Self> {
        if digits.len() != layout.len() {
            return Err(QcoreError::ShapeMismatch { expected: layout.len(), found: digits.len() });
        }
        let strides = layout.strides();
        let mut idx = 0;
        for (p, &d) in digits.iter().enumerate() {
            if d >= layout.dims[p] {
                return Err(QcoreError::ShapeMismatch { expected: layout.dims[p], found: d });
            }
            idx += d * strides[p];
        }
        let mut v = CVector::zeros(layout.total_dim());
        v[idx] = ONE;
        Ok(Self { layout, amplitudes: v })
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn to_mixed(&self) -> MixedState {
        MixedState { layout: self.layout.clone(), rho: &self.amplitudes * self.amplitudes.adjoint() }
    }

    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let layout = self.layout.join(&other.layout)?;
        Ok(PureState { layout, amplitudes: self.amplitudes.kronecker(&other.amplitudes) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedState {
    layout: RegisterLayout,
    rho: CMatrix,
}

impl MixedState {
    /// Validates shape, Hermiticity, unit trace and positivity.
    pub fn new(layout: RegisterLayout, rho: CMatrix) -> Result<Self> {
        let d = layout.total_dim();
        if rho.nrows() != d || rho.ncols() != d {
            return Err(QcoreError::ShapeMismatch { expected: d, found: rho.nrows() });
        }
        let s = Self { layout, rho };
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn from_raw(layout: RegisterLayout, mut rho: CMatrix) -> Self {
        symmetrize(&mut rho);
        Self { layout, rho }
    }

    pub fn maximally_mixed(layout: RegisterLayout) -> Self {
        let d = layout.total_dim();
        let rho = CMatrix::identity(d, d) / Complex64::new(d as f64, 0.0);
        Self { layout, rho }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QcoreError::NonFinite);
        }
        let h = hermitian_deviation(&self.rho);
        if h > HERMITIAN_TOL {
            return Err(QcoreError::NotHermitian(h));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(QcoreError::NotNormalized(tr));
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(QcoreError::NotPositive(min));
        }
        Ok(())
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        trace_re(&self.rho)
    }

    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.rho)[0]
    }

    pub fn hermitian_deviation(&self) -> f64 {
        hermitian_deviation(&self.rho)
    }

    /// `<psi|rho|psi>` for a pure state on the same layout.
    pub fn fidelity_with_pure(&self, psi: &PureState) -> Result<f64> {
        if psi.layout != self.layout {
            return Err(QcoreError::ShapeMismatch { expected: self.layout.total_dim(), found: psi.layout.total_dim() });
        }
        let v = &psi.amplitudes;
        Ok((v.adjoint() * &self.rho * v)[(0, 0)].re)
    }

    pub fn tensor(&self, other: &MixedState) -> Result<MixedState> {
        let layout = self.layout.join(&other.layout)?;
        Ok(MixedState { layout, rho: self.rho.kronecker(&other.rho) })
    }

    /// Convex combination of states on one layout. Weights are renormalized.
    pub fn mixture(parts: &[(f64, &MixedState)]) -> Result<MixedState> {
        let first = parts.first().ok_or(QcoreError::Empty)?.1;
        let total: f64 = parts.iter().map(|(w, _)| *w).sum();
        if total <= 0.0 || !total.is_finite() || parts.iter().any(|(w, _)| *w < 0.0) {
            return Err(QcoreError::NotNormalized(total));
        }
        let d = first.layout.total_dim();
        let mut rho = CMatrix::zeros(d, d);
        for (w, s) in parts {
            if s.layout != first.layout {
                return Err(QcoreError::ShapeMismatch { expected: d, found: s.layout.total_dim() });
            }
            rho += &s.rho * Complex64::new(w / total, 0.0);
        }
        Ok(MixedState::from_raw(first.layout.clone(), rho))
    }

    /// Diagonal of the density matrix.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.rho.nrows()).map(|i| self.rho[(i, i)].re.max(0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumChannel {
    kraus: Vec<CMatrix>,
    dim: usize,
    trace_preserving: bool,
}

impl QuantumChannel {
    /// Trace-preserving channel; completeness is checked to `KRAUS_TOL`.
    pub fn new(kraus: Vec<CMatrix>) -> Result<Self> {
        let (dim, sum) = Self::gram(&kraus)?;
        let dev = (sum - CMatrix::identity(dim, dim)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev > KRAUS_TOL {
            return Err(QcoreError::IncompleteKraus(dev));
        }
        Ok(Self { kraus, dim, trace_preserving: true })
    }

    /// Trace-non-increasing channel (`sum K^†K <= I`); the deficit is a loss.
    pub fn new_trace_non_increasing(kraus: Vec<CMatrix>) -> Result<Self> {
        let (dim, sum) = Self::gram(&kraus)?;
        let max = *hermitian_eigenvalues(&sum).last().unwrap_or(&0.0);
        if max > 1.0 + KRAUS_TOL {
            return Err(QcoreError::TraceIncreasing(max - 1.0));
        }
        Ok(Self { kraus, dim, trace_preserving: false })
    }

    fn gram(kraus: &[CMatrix]) -> Result<(usize, CMatrix)> {
        let dim = kraus.first().ok_or(QcoreError::Empty)?.nrows();
        let mut sum = CMatrix::zeros(dim, dim);
        for k in kraus {
            if k.nrows() != dim || k.ncols() != dim {
                return Err(QcoreError::ShapeMismatch { expected: dim, found: k.nrows() });
            }
            sum += k.adjoint() * k;
        }
        Ok((dim, sum))
    }

    pub fn unitary(u: CMatrix) -> Result<Self> {
        Self::new(vec![u])
    }

    pub fn identity(dim: usize) -> Self {
        Self { kraus: vec![CMatrix::identity(dim, dim)], dim, trace_preserving: true }
    }

    /// Qubit dephasing that scales the off-diagonal element by `coherence`.
    pub fn dephasing(coherence: f64) -> Result<Self> {
        let c = coherence.clamp(-1.0, 1.0);
        let k0 = CMatrix::identity(2, 2) * Complex64::new(((1.0 + c) / 2.0).sqrt(), 0.0);
        let k1 = pauli_z() * Complex64::new(((1.0 - c) / 2.0).sqrt(), 0.0);
        Self::new(vec![k0, k1])
    }

    pub fn bit_flip(p: f64) -> Result<Self> {
        let p = p.clamp(0.0, 1.0);
        let k0 = CMatrix::identity(2, 2) * Complex64::new((1.0 - p).sqrt(), 0.0);
        let k1 = pauli_x() * Complex64::new(p.sqrt(), 0.0);
        Self::new(vec![k0, k1])
    }

    pub fn depolarizing(p: f64) -> Result<Self> {
        let p = p.clamp(0.0, 1.0);
        let a = Complex64::new((1.0 - 0.75 * p).sqrt(), 0.0);
        let b = Complex64::new((p / 4.0).sqrt(), 0.0);
        Self::new(vec![CMatrix::identity(2, 2) * a, pauli_x() * b, pauli_y() * b, pauli_z() * b])
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_trace_preserving(&self) -> bool {
        self.trace_preserving
    }
}

/// Outcome of a heralded operation. `state` is `None` for an empty branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub probability: f64,
    pub state: Option<MixedState>,
}

fn apply_raw(state: &MixedState, channel: &QuantumChannel, targets: &[&str]) -> Result<CMatrix> {
    let pos = state.layout.positions(targets)?;
    let split = Split::new(&state.layout, &pos);
    if split.dt != channel.dim {
        return Err(QcoreError::ShapeMismatch { expected: split.dt, found: channel.dim });
    }
    let n = state.rho.nrows();
    let mut out = CMatrix::zeros(n, n);
    for k in &channel.kraus {
        out += conjugate(&state.rho, k, &split);
    }
    Ok(out)
}

/// Applies a trace-preserving channel to the listed registers (in that order).
pub fn apply_channel(state: &MixedState, channel: &QuantumChannel, targets: &[&str]) -> Result<MixedState> {
    if !channel.trace_preserving {
        return Err(QcoreError::IncompleteKraus(f64::NAN));
    }
    let out = apply_raw(state, channel, targets)?;
    Ok(MixedState::from_raw(state.layout.clone(), out))
}

/// Applies a trace-non-increasing channel; the kept trace is the branch probability.
pub fn apply_channel_heralded(state: &MixedState, channel: &QuantumChannel, targets: &[&str]) -> Result<Branch> {
    let out = apply_raw(state, channel, targets)?;
    Ok(normalize_branch(&state.layout, out))
}

pub fn apply_unitary(state: &MixedState, u: &CMatrix, targets: &[&str]) -> Result<MixedState> {
    apply_channel(state, &QuantumChannel::unitary(u.clone())?, targets)
}

fn normalize_branch(layout: &RegisterLayout, rho: CMatrix) -> Branch {
    let p = trace_re(&rho).max(0.0);
    if p < EMPTY_BRANCH_PROB {
        return Branch { probability: p, state: None };
    }
    let rho = rho / Complex64::new(p, 0.0);
    Branch { probability: p, state: Some(MixedState::from_raw(layout.clone(), rho)) }
}

/// Projective measurement of one register. Projectors must be Hermitian,
/// idempotent and sum to the identity.
pub fn measure_projective(state: &MixedState, target: &str, projectors: &[CMatrix]) -> Result<Vec<Branch>> {
    let d = state.layout.dim_of(target)?;
    if projectors.is_empty() {
        return Err(QcoreError::Empty);
    }
    let mut sum = CMatrix::zeros(d, d);
    for p in projectors {
        if p.nrows() != d || p.ncols() != d {
            return Err(QcoreError::ShapeMismatch { expected: d, found: p.nrows() });
        }
        let herm = hermitian_deviation(p);
        let idem = (p * p - p).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > KRAUS_TOL || idem > KRAUS_TOL {
            return Err(QcoreError::InvalidProjectors(herm.max(idem)));
        }
        sum += p;
    }
    let dev = (sum - CMatrix::identity(d, d)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if dev > KRAUS_TOL {
        return Err(QcoreError::InvalidProjectors(dev));
    }
    let pos = state.layout.positions(&[target])?;
    let split = Split::new(&state.layout, &pos);
    Ok(projectors.iter().map(|p| normalize_branch(&state.layout, conjugate(&state.rho, p, &split))).collect())
}

/// Reduced state on `keep`; kept registers stay in layout order.
pub fn partial_trace(state: &MixedState, keep: &[&str]) -> Result<MixedState> {
    let mut pos = state.layout.positions(keep)?;
    pos.sort_unstable();
    let layout = RegisterLayout::new(pos.iter().map(|&p| (state.layout.labels[p].clone(), state.layout.dims[p])))?;
    let split = Split::new(&state.layout, &pos);
    let mut out = CMatrix::zeros(split.dt, split.dt);
    for j in 0..split.dt {
        for i in 0..split.dt {
            let mut acc = ZERO;
            for r in 0..split.dr {
                acc += state.rho[(split.idx(r, i), split.idx(r, j))];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(MixedState::from_raw(layout, out))
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMatrix {
    let i = Complex64::new(0.0, 1.0);
    CMatrix::from_row_slice(2, 2, &[ZERO, -i, i, ZERO])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

pub fn hadamard() -> CMatrix {
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    CMatrix::from_row_slice(2, 2, &[h, h, h, -h])
}

/// Phase gate adjoint, `diag(1, -i)`.
pub fn s_dagger() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, Complex64::new(0.0, -1.0)])
}

/// `|i><i|` in dimension `d`.
pub fn projector(d: usize, i: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m[(i, i)] = ONE;
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn qubits(n: usize) -> RegisterLayout {
        RegisterLayout::new((0..n).map(|i| (format!("q{i}"), 2))).unwrap()
    }

    fn bell() -> MixedState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = CVector::from_vec(vec![c(h), c(0.0), c(0.0), c(h)]);
        PureState::new(qubits(2), v).unwrap().to_mixed()
    }

    #[test]
    fn layout_rejects_duplicates_and_cap() {
        assert!(matches!(RegisterLayout::new([("a", 2), ("a", 2)]), Err(QcoreError::DuplicateLabel(_))));
        assert!(matches!(
            RegisterLayout::new([("a", 16), ("b", 32)]),
            Err(QcoreError::DimensionCap { total: 512, cap: 256 })
        ));
        assert!(matches!(RegisterLayout::new([("a", 1)]), Err(QcoreError::InvalidDimension { .. })));
    }

    #[test]
    fn pure_state_norm_checked() {
        let v = CVector::from_vec(vec![c(1.0), c(1.0)]);
        assert!(matches!(PureState::new(qubits(1), v), Err(QcoreError::NotNormalized(_))));
    }

    #[test]
    fn bell_reduces_to_maximally_mixed() {
        let r = partial_trace(&bell(), &["q0"]).unwrap();
        assert_abs_diff_eq!(r.matrix()[(0, 0)].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.matrix()[(1, 1)].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.matrix()[(0, 1)].norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn embedded_channel_matches_kronecker() {
        // X on the middle qubit of three, compared with the explicit I ⊗ X ⊗ I.
        let psi = PureState::basis(qubits(3), &[1, 0, 1]).unwrap().to_mixed();
        let out = apply_unitary(&psi, &pauli_x(), &["q1"]).unwrap();
        let full = CMatrix::identity(2, 2).kronecker(&pauli_x()).kronecker(&CMatrix::identity(2, 2));
        let expect = &full * psi.matrix() * full.adjoint();
        assert_abs_diff_eq!((out.matrix() - expect).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn target_order_is_respected() {
        // CNOT with control q1 and target q0.
        let mut cnot = CMatrix::zeros(4, 4);
        for (i, j) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            cnot[(i, j)] = ONE;
        }
        let psi = PureState::basis(qubits(2), &[0, 1]).unwrap().to_mixed();
        let out = apply_unitary(&psi, &cnot, &["q1", "q0"]).unwrap();
        // |q0=0,q1=1> -> |q0=1,q1=1>, flat index 3
        assert_abs_diff_eq!(out.matrix()[(3, 3)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn incomplete_kraus_rejected() {
        let k = CMatrix::identity(2, 2) * c(0.9);
        assert!(matches!(QuantumChannel::new(vec![k.clone()]), Err(QcoreError::IncompleteKraus(_))));
        assert!(QuantumChannel::new_trace_non_increasing(vec![k]).is_ok());
        let big = CMatrix::identity(2, 2) * c(1.1);
        assert!(QuantumChannel::new_trace_non_increasing(vec![big]).is_err());
    }

    #[test]
    fn heralded_channel_reports_deficit() {
        let k = projector(2, 0) * c(0.5f64.sqrt());
        let ch = QuantumChannel::new_trace_non_increasing(vec![k]).unwrap();
        let plus = MixedState::maximally_mixed(qubits(1));
        let b = apply_channel_heralded(&plus, &ch, &["q0"]).unwrap();
        assert_abs_diff_eq!(b.probability, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(b.state.unwrap().matrix()[(0, 0)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn measurement_flags_empty_branch() {
        let zero = PureState::basis(qubits(1), &[0]).unwrap().to_mixed();
        let br = measure_projective(&zero, "q0", &[projector(2, 0), projector(2, 1)]).unwrap();
        assert_abs_diff_eq!(br[0].probability, 1.0, epsilon = 1e-12);
        assert!(br[1].state.is_none());
    }

    #[test]
    fn bad_projectors_rejected() {
        let zero = PureState::basis(qubits(1), &[0]).unwrap().to_mixed();
        assert!(measure_projective(&zero, "q0", &[projector(2, 0)]).is_err());
        assert!(measure_projective(&zero, "qx", &[projector(2, 0), projector(2, 1)]).is_err());
    }

    #[test]
    fn dephasing_scales_coherence() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = PureState::new(qubits(1), CVector::from_vec(vec![c(h), c(h)])).unwrap().to_mixed();
        let out = apply_channel(&plus, &QuantumChannel::dephasing(0.3).unwrap(), &["q0"]).unwrap();
        assert_abs_diff_eq!(out.matrix()[(0, 1)].re, 0.15, epsilon = 1e-12);
    }

    #[test]
    fn new_validates_positivity() {
        let rho = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.5), c(-0.5)]));
        assert!(matches!(MixedState::new(qubits(1), rho), Err(QcoreError::NotPositive(_))));
    }

    #[test]
    fn mixture_weights() {
        let a = PureState::basis(qubits(1), &[0]).unwrap().to_mixed();
        let b = PureState::basis(qubits(1), &[1]).unwrap().to_mixed();
        let m = MixedState::mixture(&[(3.0, &a), (1.0, &b)]).unwrap();
        assert_abs_diff_eq!(m.matrix()[(0, 0)].re, 0.75, epsilon = 1e-12);
        assert!(m.validate().is_ok());
    }
}
