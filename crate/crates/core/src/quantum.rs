//! Dense complex linear algebra over quantum states.
//!
//! Density matrices, pure states and POVMs, the standard distance measures
//! between states, Born probabilities, purification and Haar-random unitaries.
//! Every Hermitian operator also carries a real "feature" vector of length D²
//! in an orthonormal Hermitian basis, so that `Tr(A B) = <f(A), f(B)>`. The hot
//! loops (likelihoods, information gain) run on those vectors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Result, TomographyError};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default absolute tolerance for structural checks.
pub const TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;

/// Real coordinates of a Hermitian matrix in an orthonormal basis:
/// diagonal entries, then `sqrt(2) Re` and `sqrt(2) Im` of the upper triangle.
pub fn hermitian_features(m: &CMatrix) -> Vec<f64> {
    let d = m.nrows();
    let mut f = Vec::with_capacity(d * d);
    for i in 0..d {
        f.push(m[(i, i)].re);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let z = m[(i, j)];
            f.push(std::f64::consts::SQRT_2 * z.re);
            f.push(std::f64::consts::SQRT_2 * z.im);
        }
    }
    f
}

/// Inverse of [`hermitian_features`].
pub fn matrix_from_features(f: &[f64]) -> CMatrix {
    let d = (f.len() as f64).sqrt().round() as usize;
    let mut m = CMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = C64::new(f[i], 0.0);
    }
    let mut k = d;
    for i in 0..d {
        for j in (i + 1)..d {
            let z = C64::new(f[k], f[k + 1]) / std::f64::consts::SQRT_2;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 2;
        }
    }
    m
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Square root of a positive semidefinite Hermitian matrix; negative
/// eigenvalues from round-off are clamped to zero.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let diag = CMatrix::from_diagonal(&CVector::from_iterator(
        vals.len(),
        vals.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)),
    ));
    &vecs * diag * vecs.adjoint()
}

/// Kronecker product.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Standard complex Gaussian entry: real and imaginary parts i.i.d. N(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// `rows x cols` Ginibre matrix.
pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// Haar-distributed unitary: QR of a Ginibre matrix with the phases of
/// `diag(R)` moved into `Q`.
pub fn haar_random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let z = ginibre(dim, dim, rng);
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Largest elementwise deviation of `U U^dagger` from the identity.
pub fn unitarity_residual(u: &CMatrix) -> f64 {
    let p = u * u.adjoint();
    let id = CMatrix::identity(u.nrows(), u.ncols());
    (p - id).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// A unit-norm state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amps: CVector,
}

impl PureState {
    /// Wraps `amps`, which must already have unit norm (to 1e-12).
    pub fn new(amps: CVector) -> Result<Self> {
        let n = amps.norm();
        if amps.is_empty() || (n - 1.0).abs() > HERMITIAN_TOL {
            return Err(TomographyError::InvalidState(format!("state vector norm {n} is not 1")));
        }
        Ok(Self { amps })
    }

    /// Normalizes `amps`; fails on the zero vector.
    pub fn normalized(amps: CVector) -> Result<Self> {
        let n = amps.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(TomographyError::InvalidState("cannot normalize a zero vector".into()));
        }
        Ok(Self { amps: amps / C64::new(n, 0.0) })
    }

    pub fn from_slice(amps: &[C64]) -> Result<Self> {
        Self::normalized(CVector::from_column_slice(amps))
    }

    /// Computational basis vector `|index>`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = CVector::zeros(dim);
        v[index] = C64::new(1.0, 0.0);
        Self { amps: v }
    }

    /// Haar-random pure state.
    pub fn haar<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        loop {
            let v = CVector::from_fn(dim, |_, _| complex_normal(rng));
            if let Ok(s) = Self::normalized(v) {
                return s;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &PureState) -> C64 {
        self.amps.dotc(&other.amps)
    }

    pub fn tensor(&self, other: &PureState) -> PureState {
        Self { amps: self.amps.kronecker(&other.amps) }
    }

    pub fn projector(&self) -> CMatrix {
        &self.amps * self.amps.adjoint()
    }
}

/// A density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    mat: CMatrix,
    features: Vec<f64>,
}

impl PartialEq for DensityMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
    }
}

impl DensityMatrix {
    /// Validates `mat` against the density-matrix invariants.
    pub fn new(mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(TomographyError::InvalidState("matrix is not square".into()));
        }
        let herm = (&mat - mat.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > HERMITIAN_TOL {
            return Err(TomographyError::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(TomographyError::InvalidState(format!("trace {tr} is not 1")));
        }
        let min_eig = hermitian_eigenvalues(&mat)[0];
        if min_eig < -TOL {
            return Err(TomographyError::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self::from_matrix_unchecked(mat))
    }

    /// Symmetrizes and renormalizes `mat` without checking positivity.
    /// Callers guarantee `mat` is PSD up to round-off.
    pub(crate) fn from_matrix_unchecked(mat: CMatrix) -> Self {
        let mut m = (&mat + mat.adjoint()) * C64::new(0.5, 0.0);
        let tr = m.trace().re;
        m /= C64::new(tr, 0.0);
        let features = hermitian_features(&m);
        Self { mat: m, features }
    }

    /// `A A^dagger / Tr(A A^dagger)`; fails only for `A = 0`.
    pub fn from_gram(a: &CMatrix) -> Result<Self> {
        let g = a * a.adjoint();
        let tr = g.trace().re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(TomographyError::InvalidState("zero Gram matrix".into()));
        }
        Ok(Self::from_matrix_unchecked(g))
    }

    pub fn from_pure(psi: &PureState) -> Self {
        Self::from_matrix_unchecked(psi.projector())
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self::from_matrix_unchecked(CMatrix::identity(dim, dim))
    }

    /// Diagonal state with the given eigenvalues (must form a probability vector).
    pub fn from_diagonal(lambdas: &[f64]) -> Result<Self> {
        let s: f64 = lambdas.iter().sum();
        if lambdas.iter().any(|&l| l < 0.0 || !l.is_finite()) || (s - 1.0).abs() > TRACE_TOL {
            return Err(TomographyError::InvalidState(format!("{lambdas:?} is not a probability vector")));
        }
        let d = CVector::from_iterator(lambdas.len(), lambdas.iter().map(|&l| C64::new(l, 0.0)));
        Ok(Self::from_matrix_unchecked(CMatrix::from_diagonal(&d)))
    }

    /// Rebuilds a state from its feature vector (unit trace assumed).
    pub(crate) fn from_features_unchecked(f: &[f64]) -> Self {
        Self::from_matrix_unchecked(matrix_from_features(f))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.mat)
    }

    pub fn eigen(&self) -> (Vec<f64>, CMatrix) {
        hermitian_eigen(&self.mat)
    }

    pub fn purity(&self) -> f64 {
        dot(&self.features, &self.features)
    }

    /// `<e|rho|e>`.
    pub fn expectation(&self, e: &PureState) -> f64 {
        e.amps.dotc(&(&self.mat * &e.amps)).re
    }

    /// `sum_k w_k rho_k`; weights must be nonnegative and sum to one.
    pub fn convex_combination(weights: &[f64], states: &[DensityMatrix]) -> Result<Self> {
        if weights.len() != states.len() || states.is_empty() {
            return Err(TomographyError::InvalidArgument("weights and states differ in length".into()));
        }
        let dim = states[0].dim();
        let mut f = vec![0.0; dim * dim];
        for (w, s) in weights.iter().zip(states) {
            check_dim(dim, s.dim())?;
            for (acc, x) in f.iter_mut().zip(&s.features) {
                *acc += w * x;
            }
        }
        Ok(Self::from_features_unchecked(&f))
    }

    /// Largest elementwise deviation from another matrix.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (&self.mat - &other.mat).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Complex matrices serialize as row-major rows of `[re, im]` pairs.
#[derive(Serialize, Deserialize)]
#[serde(transparent)]
pub(crate) struct MatrixRepr(pub Vec<Vec<[f64; 2]>>);

impl MatrixRepr {
    pub fn from_matrix(m: &CMatrix) -> Self {
        Self((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect())
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let n = self.0.len();
        if n == 0 || self.0.iter().any(|r| r.len() != n) {
            return Err(TomographyError::InvalidState("matrix must be square and non-empty".into()));
        }
        Ok(CMatrix::from_fn(n, n, |i, j| C64::new(self.0[i][j][0], self.0[i][j][1])))
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr::from_matrix(&self.mat).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MatrixRepr::deserialize(d)?;
        let m = repr.to_matrix().map_err(serde::de::Error::custom)?;
        DensityMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// A complete set of positive operators.
#[derive(Clone, Debug)]
pub struct Povm {
    dim: usize,
    elements: Vec<CMatrix>,
    /// Row-major `outcomes x dim^2` feature table.
    features: Vec<f64>,
}

impl Povm {
    /// Validates positivity and completeness of `elements`.
    pub fn new(elements: Vec<CMatrix>) -> Result<Self> {
        let dim = elements.first().map(|m| m.nrows()).ok_or_else(|| TomographyError::InvalidPovm("no elements".into()))?;
        let mut sum = CMatrix::zeros(dim, dim);
        for (k, m) in elements.iter().enumerate() {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(TomographyError::InvalidPovm(format!("element {k} has the wrong shape")));
            }
            let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if herm > TOL {
                return Err(TomographyError::InvalidPovm(format!("element {k} is not Hermitian")));
            }
            if hermitian_eigenvalues(m)[0] < -TOL {
                return Err(TomographyError::InvalidPovm(format!("element {k} is not positive")));
            }
            sum += m;
        }
        let resid = (sum - CMatrix::identity(dim, dim)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if resid > TOL {
            return Err(TomographyError::InvalidPovm(format!("elements do not sum to identity (residual {resid:e})")));
        }
        Ok(Self::from_elements_unchecked(elements))
    }

    pub(crate) fn from_elements_unchecked(elements: Vec<CMatrix>) -> Self {
        let dim = elements[0].nrows();
        let features = elements.iter().flat_map(hermitian_features).collect();
        Self { dim, elements, features }
    }

    /// Rank-one projectors onto the columns of a unitary.
    pub fn from_basis(u: &CMatrix) -> Result<Self> {
        if u.nrows() != u.ncols() {
            return Err(TomographyError::InvalidPovm("basis matrix is not square".into()));
        }
        let r = unitarity_residual(u);
        if r > TOL {
            return Err(TomographyError::InvalidPovm(format!("basis is not unitary (residual {r:e})")));
        }
        Ok(Self::from_basis_unchecked(u))
    }

    pub(crate) fn from_basis_unchecked(u: &CMatrix) -> Self {
        let elements = (0..u.ncols())
            .map(|j| {
                let c = u.column(j);
                &c * c.adjoint()
            })
            .collect();
        Self::from_elements_unchecked(elements)
    }

    /// Rank-one projectors onto orthonormal states.
    pub fn from_states(states: &[PureState]) -> Result<Self> {
        let dim = states.first().map(PureState::dim).unwrap_or(0);
        if states.len() != dim {
            return Err(TomographyError::InvalidPovm("need exactly dim orthonormal states".into()));
        }
        let u = CMatrix::from_fn(dim, dim, |i, j| states[j].amps[i]);
        Self::from_basis(&u)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcome_count(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    pub fn element_features(&self, outcome: usize) -> &[f64] {
        let n = self.dim * self.dim;
        &self.features[outcome * n..(outcome + 1) * n]
    }

    pub(crate) fn feature_table(&self) -> &[f64] {
        &self.features
    }

    /// `Tr(M_outcome rho)` clamped to [0, 1]; no dimension check.
    #[inline]
    pub fn probability(&self, outcome: usize, rho: &DensityMatrix) -> f64 {
        dot(self.element_features(outcome), rho.features()).clamp(0.0, 1.0)
    }

    /// Born probabilities of all outcomes.
    pub fn born_probabilities(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        check_dim(self.dim, rho.dim())?;
        Ok((0..self.outcome_count()).map(|g| self.probability(g, rho)).collect())
    }

    /// Largest elementwise deviation of `sum_g M_g` from the identity.
    pub fn completeness_residual(&self) -> f64 {
        let mut sum = CMatrix::zeros(self.dim, self.dim);
        for m in &self.elements {
            sum += m;
        }
        (sum - CMatrix::identity(self.dim, self.dim)).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Born-rule outcome probabilities `Tr(M_g rho)`.
pub fn born_probabilities(povm: &Povm, rho: &DensityMatrix) -> Result<Vec<f64>> {
    povm.born_probabilities(rho)
}

/// Fidelity against a fixed reference state, with `sqrt(sigma)` cached.
/// A numerically pure reference takes the rank-one path `<psi|rho|psi>`.
#[derive(Clone, Debug)]
pub struct FidelityReference {
    kind: ReferenceKind,
}

#[derive(Clone, Debug)]
enum ReferenceKind {
    Pure(CVector),
    Mixed(CMatrix),
}

impl FidelityReference {
    pub fn new(reference: &DensityMatrix) -> Self {
        let (vals, vecs) = reference.eigen();
        let top = vals.len() - 1;
        if vals[top] >= 1.0 - 1e-12 {
            return Self { kind: ReferenceKind::Pure(vecs.column(top).into_owned()) };
        }
        Self::general(reference)
    }

    /// Always uses the matrix square root, even for pure references.
    pub fn general(reference: &DensityMatrix) -> Self {
        Self { kind: ReferenceKind::Mixed(psd_sqrt(reference.matrix())) }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ReferenceKind::Pure(v) => v.len(),
            ReferenceKind::Mixed(m) => m.nrows(),
        }
    }

    /// `(Tr sqrt(sqrt(sigma) rho sqrt(sigma)))^2`, clamped to [0, 1].
    pub fn fidelity(&self, rho: &DensityMatrix) -> f64 {
        match &self.kind {
            ReferenceKind::Pure(v) => v.dotc(&(rho.matrix() * v)).re.clamp(0.0, 1.0),
            ReferenceKind::Mixed(sqrt_ref) => {
                let m = sqrt_ref * rho.matrix() * sqrt_ref;
                let s: f64 = hermitian_eigenvalues(&m).iter().map(|&l| l.max(0.0).sqrt()).sum();
                (s * s).clamp(0.0, 1.0)
            }
        }
    }

    pub fn bures_sq(&self, rho: &DensityMatrix) -> f64 {
        bures_from_fidelity(self.fidelity(rho))
    }
}

#[inline]
pub fn bures_from_fidelity(f: f64) -> f64 {
    (2.0 - 2.0 * f.clamp(0.0, 1.0).sqrt()).clamp(0.0, 2.0)
}

/// Uhlmann fidelity `F(rho, sigma) = Tr^2 sqrt(sqrt(rho) sigma sqrt(rho))`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dim(rho.dim(), sigma.dim())?;
    let reference = FidelityReference::new(rho);
    if let ReferenceKind::Mixed(_) = reference.kind {
        let other = FidelityReference::new(sigma);
        if let ReferenceKind::Pure(_) = other.kind {
            return Ok(other.fidelity(rho));
        }
    }
    Ok(reference.fidelity(sigma))
}

/// Squared Bures distance `2 - 2 sqrt(F)`.
pub fn bures_sq(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    Ok(bures_from_fidelity(fidelity(rho, sigma)?))
}

/// `|<psi|phi>|^2`, the fidelity between pure states.
pub fn fidelity_pure(psi: &PureState, phi: &PureState) -> Result<f64> {
    check_dim(psi.dim(), phi.dim())?;
    Ok(psi.inner(phi).norm_sqr().clamp(0.0, 1.0))
}

/// Half the trace norm of `rho - sigma`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dim(rho.dim(), sigma.dim())?;
    let diff = rho.matrix() - sigma.matrix();
    let s: f64 = hermitian_eigenvalues(&diff).iter().map(|l| l.abs()).sum();
    Ok((0.5 * s).clamp(0.0, 1.0))
}

/// `Tr[(rho - sigma)^2]`.
pub fn hs_distance_sq(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dim(rho.dim(), sigma.dim())?;
    Ok(rho.features().iter().zip(sigma.features()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `Tr(rho^2)`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.purity()
}

/// Purification `|psi> = sum_ij A_ij |ij>` with `rho = A A^dagger`,
/// `A = V sqrt(Lambda)` from the eigendecomposition.
pub fn purify(rho: &DensityMatrix) -> PureState {
    let d = rho.dim();
    let (vals, vecs) = rho.eigen();
    let mut amps = CVector::zeros(d * d);
    for i in 0..d {
        for j in 0..d {
            amps[i * d + j] = vecs[(i, j)] * vals[j].max(0.0).sqrt();
        }
    }
    // The clamped spectrum can be a hair off unit trace.
    PureState::normalized(amps).expect("density matrix has unit trace")
}

/// Reduced state of a bipartite pure state of dimension `D^2`.
/// `keep_first` traces out the second factor.
pub fn partial_trace(state: &PureState, keep_first: bool) -> Result<DensityMatrix> {
    let n = state.dim();
    let d = (n as f64).sqrt().round() as usize;
    if d * d != n {
        return Err(TomographyError::InvalidArgument(format!("state dimension {n} is not a square")));
    }
    Ok(reduced_state(state.amplitudes().as_slice(), d, keep_first))
}

pub(crate) fn reduced_state(amps: &[C64], d: usize, keep_first: bool) -> DensityMatrix {
    let a = if keep_first {
        CMatrix::from_fn(d, d, |i, j| amps[i * d + j])
    } else {
        CMatrix::from_fn(d, d, |j, i| amps[i * d + j])
    };
    DensityMatrix::from_matrix_unchecked(&a * a.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        DensityMatrix::from_gram(&ginibre(dim, dim, rng)).unwrap()
    }

    fn h() -> DensityMatrix {
        DensityMatrix::from_pure(&PureState::basis(2, 0))
    }

    fn v() -> DensityMatrix {
        DensityMatrix::from_pure(&PureState::basis(2, 1))
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let not_herm = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, 0.0), c(0.2, 0.0), c(0.5, 0.0)]);
        assert!(DensityMatrix::new(not_herm).is_err());
        let bad_trace = CMatrix::identity(2, 2);
        assert!(DensityMatrix::new(bad_trace).is_err());
        let negative = CMatrix::from_row_slice(2, 2, &[c(1.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.5, 0.0)]);
        assert!(DensityMatrix::new(negative).is_err());
        assert!(DensityMatrix::new(CMatrix::identity(2, 2) * c(0.5, 0.0)).is_ok());
    }

    #[test]
    fn feature_roundtrip_and_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_state(4, &mut rng);
        let b = random_state(4, &mut rng);
        let back = matrix_from_features(a.features());
        assert!((back - a.matrix()).iter().all(|z| z.norm() < 1e-14));
        let tr = (a.matrix() * b.matrix()).trace().re;
        assert_abs_diff_eq!(dot(a.features(), b.features()), tr, epsilon = 1e-14);
    }

    #[test]
    fn fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let r = random_state(4, &mut rng);
            assert_abs_diff_eq!(fidelity(&r, &r).unwrap(), 1.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(fidelity(&h(), &v()).unwrap(), 0.0, epsilon = 1e-12);
        let psi = DensityMatrix::from_pure(&PureState::haar(4, &mut rng));
        let mixed = DensityMatrix::maximally_mixed(4);
        assert_abs_diff_eq!(fidelity(&psi, &mixed).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(fidelity(&mixed, &psi).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn fidelity_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_state(4, &mut rng);
            let b = random_state(4, &mut rng);
            assert_abs_diff_eq!(fidelity(&a, &b).unwrap(), fidelity(&b, &a).unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = DensityMatrix::maximally_mixed(2);
        let b = DensityMatrix::maximally_mixed(4);
        assert!(matches!(fidelity(&a, &b), Err(TomographyError::DimensionMismatch { .. })));
        assert!(bures_sq(&a, &b).is_err());
        assert!(trace_distance(&a, &b).is_err());
        assert!(hs_distance_sq(&a, &b).is_err());
    }

    #[test]
    fn bures_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_state(4, &mut rng);
        assert_abs_diff_eq!(bures_sq(&r, &r).unwrap(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(bures_sq(&h(), &v()).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bures_from_fidelity(0.5), 2.0 - 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(bures_from_fidelity(0.5), 0.58579, epsilon = 1e-5);
    }

    #[test]
    fn trace_and_hs_distance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_state(4, &mut rng);
        assert_abs_diff_eq!(trace_distance(&r, &r).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trace_distance(&h(), &v()).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hs_distance_sq(&r, &r).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hs_distance_sq(&h(), &v()).unwrap(), 2.0, epsilon = 1e-15);
        for _ in 0..50 {
            let a = random_state(4, &mut rng);
            let b = random_state(4, &mut rng);
            let frob: f64 = (a.matrix() - b.matrix()).iter().map(|z| z.norm_sqr()).sum();
            assert_abs_diff_eq!(hs_distance_sq(&a, &b).unwrap(), frob, epsilon = 1e-13);
        }
    }

    #[test]
    fn purity_examples() {
        assert_abs_diff_eq!(purity(&h()), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(purity(&DensityMatrix::maximally_mixed(4)), 0.25, epsilon = 1e-15);
        let plateau = DensityMatrix::from_diagonal(&[0.9925, 0.0025, 0.0025, 0.0025]).unwrap();
        assert_abs_diff_eq!(purity(&plateau), 0.9925f64.powi(2) + 3.0 * 0.0025f64.powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(purity(&plateau), 0.98508, epsilon = 1e-5);
    }

    #[test]
    fn metric_sandwich_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in 0..1000 {
            let a = random_state(4, &mut rng);
            // Mix in pure and nearly-pure pairs.
            let b = if k % 3 == 0 { DensityMatrix::from_pure(&PureState::haar(4, &mut rng)) } else { random_state(4, &mut rng) };
            let f = fidelity(&a, &b).unwrap();
            let dtr = trace_distance(&a, &b).unwrap();
            let db = bures_sq(&a, &b).unwrap().sqrt();
            let mid = (1.0 - f).sqrt();
            assert!(0.0 <= dtr && dtr <= mid + 1e-9 && mid <= db + 1e-9 && db <= 2f64.sqrt() + 1e-12, "{dtr} {mid} {db}");
        }
    }

    #[test]
    fn pure_fidelity_matches_general_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let psi = PureState::haar(4, &mut rng);
            let phi = PureState::haar(4, &mut rng);
            let (a, b) = (DensityMatrix::from_pure(&psi), DensityMatrix::from_pure(&phi));
            let exact = fidelity_pure(&psi, &phi).unwrap();
            assert_abs_diff_eq!(fidelity(&a, &b).unwrap(), exact, epsilon = 1e-12);
            // Square-root route: spurious O(1e-16) eigenvalues enter through their roots.
            assert_abs_diff_eq!(FidelityReference::general(&a).fidelity(&b), exact, epsilon = 1e-6);
        }
    }

    #[test]
    fn born_probability_examples() {
        let hv = Povm::from_basis(&CMatrix::identity(2, 2)).unwrap();
        assert_eq!(born_probabilities(&hv, &h()).unwrap(), vec![1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = haar_random_unitary(4, &mut rng);
        let povm = Povm::from_basis(&u).unwrap();
        let p = born_probabilities(&povm, &DensityMatrix::maximally_mixed(4)).unwrap();
        for x in &p {
            assert_abs_diff_eq!(*x, 0.25, epsilon = 1e-12);
        }
        for _ in 0..100 {
            let u = haar_random_unitary(4, &mut rng);
            let povm = Povm::from_basis(&u).unwrap();
            let r = random_state(4, &mut rng);
            let p = born_probabilities(&povm, &r).unwrap();
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        }
        assert!(born_probabilities(&hv, &DensityMatrix::maximally_mixed(4)).is_err());
    }

    #[test]
    fn born_probabilities_are_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let povm = Povm::from_basis(&haar_random_unitary(4, &mut rng)).unwrap();
            let a = random_state(4, &mut rng);
            let b = random_state(4, &mut rng);
            let t: f64 = rng.random();
            let mix = DensityMatrix::convex_combination(&[t, 1.0 - t], &[a.clone(), b.clone()]).unwrap();
            let pm = povm.born_probabilities(&mix).unwrap();
            let pa = povm.born_probabilities(&a).unwrap();
            let pb = povm.born_probabilities(&b).unwrap();
            for g in 0..4 {
                assert_abs_diff_eq!(pm[g], t * pa[g] + (1.0 - t) * pb[g], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn povm_validation() {
        let half = CMatrix::identity(2, 2) * c(0.5, 0.0);
        assert!(Povm::new(vec![half.clone(), half.clone()]).is_ok());
        assert!(Povm::new(vec![half.clone()]).is_err());
        let neg = CMatrix::from_row_slice(2, 2, &[c(1.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.5, 0.0)]);
        let comp = CMatrix::identity(2, 2) - &neg;
        assert!(Povm::new(vec![neg, comp]).is_err());
    }

    #[test]
    fn purify_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // Pure input gives a product purification.
        let phi = PureState::haar(4, &mut rng);
        let psi = purify(&DensityMatrix::from_pure(&phi));
        let schmidt = reduced_state(psi.amplitudes().as_slice(), 4, true).eigenvalues();
        assert_abs_diff_eq!(schmidt[3], 1.0, epsilon = 1e-10);
        // I/2 purifies to a maximally entangled state.
        let psi = purify(&DensityMatrix::maximally_mixed(2));
        let schmidt = partial_trace(&psi, false).unwrap().eigenvalues();
        assert_abs_diff_eq!(schmidt[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(schmidt[1], 0.5, epsilon = 1e-12);
        for _ in 0..200 {
            let r = random_state(4, &mut rng);
            let back = partial_trace(&purify(&r), true).unwrap();
            assert!(back.max_abs_diff(&r) < 1e-10);
        }
    }

    #[test]
    fn partial_trace_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phi = PureState::haar(2, &mut rng);
        let e = PureState::haar(2, &mut rng);
        let r = partial_trace(&phi.tensor(&e), true).unwrap();
        assert!(r.max_abs_diff(&DensityMatrix::from_pure(&phi)) < 1e-12);
        let r2 = partial_trace(&phi.tensor(&e), false).unwrap();
        assert!(r2.max_abs_diff(&DensityMatrix::from_pure(&e)) < 1e-12);
        let s = 1.0 / 2f64.sqrt();
        let bell = PureState::from_slice(&[c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)]).unwrap();
        let r = partial_trace(&bell, true).unwrap();
        assert!(r.max_abs_diff(&DensityMatrix::maximally_mixed(2)) < 1e-12);
        let any = PureState::haar(16, &mut rng);
        assert_abs_diff_eq!(partial_trace(&any, true).unwrap().matrix().trace().re, 1.0, epsilon = 1e-12);
        assert!(partial_trace(&PureState::haar(3, &mut rng), true).is_err());
    }

    #[test]
    fn haar_unitaries_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            assert!(unitarity_residual(&haar_random_unitary(4, &mut rng)) <= 1e-10);
        }
    }

    #[test]
    fn haar_first_column_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 100_000;
        let d = 4;
        let mut sum = vec![C64::new(0.0, 0.0); d];
        let mut abs2 = vec![Vec::with_capacity(n); d];
        for _ in 0..n {
            let u = haar_random_unitary(d, &mut rng);
            for i in 0..d {
                sum[i] += u[(i, 0)];
                abs2[i].push(u[(i, 0)].norm_sqr());
            }
        }
        // |U_i0|^2 ~ Beta(1, D-1): mean 1/D, variance (D-1)/(D^2 (D+1)).
        let var_abs2 = (d as f64 - 1.0) / ((d * d) as f64 * (d as f64 + 1.0));
        for i in 0..d {
            let mean = sum[i] / n as f64;
            // Re and Im parts each have variance 1/(2D).
            let se = (1.0 / (2.0 * d as f64) / n as f64).sqrt();
            assert!(mean.re.abs() < 3.0 * se && mean.im.abs() < 3.0 * se, "{mean}");
            let m2 = abs2[i].iter().sum::<f64>() / n as f64;
            assert!((m2 - 0.25).abs() < 3.0 * (var_abs2 / n as f64).sqrt(), "{m2}");
        }
    }

    #[test]
    fn haar_eigenphases_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let bins = 20;
        let mut counts = vec![0u64; bins];
        for _ in 0..5000 {
            let u = haar_random_unitary(4, &mut rng);
            for z in u.clone().schur().unpack().1.diagonal().iter() {
                let t = (z.arg() + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
                counts[((t * bins as f64) as usize).min(bins - 1)] += 1;
            }
        }
        let p = stats::chi_square_uniform_pvalue(&counts);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn haar_is_left_invariant() {
        // Compare |U_00|^2 against |(V U)_00|^2 for a fixed V.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let fixed = haar_random_unitary(4, &mut rng);
        let a: Vec<f64> = (0..4000).map(|_| haar_random_unitary(4, &mut rng)[(0, 0)].norm_sqr()).collect();
        let b: Vec<f64> = (0..4000).map(|_| (&fixed * haar_random_unitary(4, &mut rng))[(0, 0)].norm_sqr()).collect();
        assert!(stats::ks_two_sample_pvalue(&a, &b) > 0.01);
    }
}
