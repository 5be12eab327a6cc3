//! Complex linear algebra over qubit registers.
//!
//! Conventions shared by every module in the crate:
//!
//! * basis index `x` of an `n`-qubit register has bit `i` equal to qubit `i`
//!   (qubit 0 is the least significant bit);
//! * a register made of several sub-registers (tensor factors) is indexed
//!   little-endian as well: factor 0 occupies the lowest digits, so the tuple
//!   `z = (z_0, ..., z_{q-1})` over local dimension `N` sits at
//!   `z_0 + N z_1 + ... + N^{q-1} z_{q-1}`;
//! * the `st` slots of an `s`-block, `t`-copy register are flattened row-major,
//!   slot `(j, i)` (zero based) being `j * t + i`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Default cap on the dimension of any state or operator built by the crate.
pub const DEFAULT_DIM_CAP: usize = 1 << 20;

/// Largest block handed to a dense SVD or eigensolver.
pub const DENSE_SVD_CAP: usize = 4096;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Pure state of an `n`-qubit register.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(n: usize, amps: Vec<C64>) -> Result<Self> {
        let expected = 1usize.checked_shl(n as u32).ok_or(Error::CapExceeded {
            what: "qubit count",
            requested: n as u128,
            cap: 63,
        })?;
        if amps.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: amps.len() });
        }
        Ok(Self { n, amps })
    }

    /// Normalizes the amplitudes before construction.
    pub fn normalized(n: usize, mut amps: Vec<C64>) -> Result<Self> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("zero or non-finite norm".into()));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Self::new(n, amps)
    }

    pub fn basis(n: usize, x: usize) -> Result<Self> {
        let dim = 1usize << n;
        if x >= dim {
            return Err(Error::InvalidState(format!("basis label {x} out of range for n={n}")));
        }
        let mut amps = vec![ZERO; dim];
        amps[x] = ONE;
        Self::new(n, amps)
    }

    /// `|+...+>`, every amplitude `2^{-n/2}`.
    pub fn uniform(n: usize) -> Self {
        let dim = 1usize << n;
        let a = C64::new((dim as f64).sqrt().recip(), 0.0);
        Self { n, amps: vec![a; dim] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amps(&self) -> &[C64] {
        &self.amps
    }

    pub fn amps_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amps(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `|psi><psi|` as a dense density operator.
    pub fn density(&self) -> DensityOperator {
        let v = nalgebra::DVector::from_column_slice(&self.amps);
        DensityOperator::from_dense_unchecked(&v * v.adjoint())
    }
}

/// An `st`-tuple of pairwise distinct `n`-bit strings.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UniqueTuple(Vec<usize>);

impl UniqueTuple {
    pub fn new(entries: Vec<usize>, n: usize) -> Result<Self> {
        let domain = 1usize << n;
        for (k, &e) in entries.iter().enumerate() {
            if e >= domain {
                return Err(Error::InvalidState(format!("entry {e} >= 2^{n}")));
            }
            if entries[..k].contains(&e) {
                return Err(Error::InvalidState(format!("entry {e} repeats")));
            }
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    pub fn index(&self, local_dim: usize) -> usize {
        tuple_index(&self.0, local_dim)
    }
}

/// Little-endian index of a tuple over local dimension `local_dim`.
pub fn tuple_index(z: &[usize], local_dim: usize) -> usize {
    z.iter().rev().fold(0, |acc, &d| acc * local_dim + d)
}

/// Inverse of [`tuple_index`], writing `len` digits into `out`.
pub fn tuple_digits_into(mut index: usize, local_dim: usize, out: &mut [usize]) {
    for d in out.iter_mut() {
        *d = index % local_dim;
        index /= local_dim;
    }
}

pub fn tuple_digits(index: usize, local_dim: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    tuple_digits_into(index, local_dim, &mut out);
    out
}

/// True iff no entry of the tuple repeats (membership in the support of the
/// uniqueness projector).
pub fn is_unique_tuple(z: &[usize]) -> bool {
    z.iter().enumerate().all(|(k, e)| !z[..k].contains(e))
}

/// `N(N-1)...(N-len+1)`, as a float (exact for desk-scale arguments).
pub fn falling_factorial(n: usize, len: usize) -> f64 {
    (0..len).map(|k| n.saturating_sub(k) as f64).product()
}

/// Number of the form `N^len`, refusing overflow of `usize`.
pub fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    (0..exp).try_fold(1usize, |acc, _| acc.checked_mul(base))
}

/// Tensor product with factor 0 in the least significant qubits.
pub fn tensor_product_state(states: &[StateVector]) -> Result<StateVector> {
    tensor_product_state_capped(states, DEFAULT_DIM_CAP)
}

pub fn tensor_product_state_capped(states: &[StateVector], cap: usize) -> Result<StateVector> {
    if states.is_empty() {
        return Err(Error::EmptyInput("tensor product of zero states"));
    }
    let n_total: usize = states.iter().map(|s| s.n).sum();
    if n_total >= 64 || (1u128 << n_total) > cap as u128 {
        return Err(Error::CapExceeded {
            what: "tensor product dimension",
            requested: 1u128 << n_total.min(127),
            cap: cap as u128,
        });
    }
    let mut amps = vec![ONE];
    for s in states {
        // new index = old + len(old) * x_s, so the new factor is more significant
        let mut next = Vec::with_capacity(amps.len() * s.dim());
        for b in &s.amps {
            next.extend(amps.iter().map(|a| a * b));
        }
        amps = next;
    }
    StateVector::new(n_total, amps)
}

/// Sparse square matrix with deterministic (ordered) iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    entries: BTreeMap<(usize, usize), C64>,
}

impl SparseMatrix {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add(&mut self, row: usize, col: usize, value: C64) {
        debug_assert!(row < self.dim && col < self.dim);
        *self.entries.entry((row, col)).or_insert(ZERO) += value;
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries.get(&(row, col)).copied().unwrap_or(ZERO)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.entries.iter().map(|(&(r, c), &v)| (r, c, v))
    }

    pub fn scale(&mut self, factor: C64) {
        self.entries.values_mut().for_each(|v| *v *= factor);
    }

    pub fn transpose(&self) -> Self {
        Self { dim: self.dim, entries: self.entries.iter().map(|(&(r, c), &v)| ((c, r), v)).collect() }
    }

    pub fn trace(&self) -> C64 {
        self.iter().filter(|(r, c, _)| r == c).map(|(_, _, v)| v).sum()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    /// Sum of singular values, decomposed over the connected components of
    /// the sparsity graph.
    pub fn trace_norm(&self) -> Result<f64> {
        let comps = components_from_edges(self.dim, self.entries.keys().copied());
        let mut total = 0.0;
        for comp in comps {
            let pos: BTreeMap<usize, usize> = comp.iter().enumerate().map(|(k, &i)| (i, k)).collect();
            let mut block = DMatrix::zeros(comp.len(), comp.len());
            for &i in &comp {
                for (&(_, c), &v) in self.entries.range((i, 0)..(i, usize::MAX)) {
                    block[(pos[&i], pos[&c])] = v;
                }
            }
            total += dense_singular_sum(&block)?;
        }
        Ok(total)
    }
}

#[derive(Clone, Debug)]
enum Storage {
    Dense(DMatrix<C64>),
    Sparse(SparseMatrix),
}

/// Hermitian operator on a multi-register space, stored densely or as a
/// sparse map of entries.
#[derive(Clone, Debug)]
pub struct DensityOperator {
    storage: Storage,
}

impl DensityOperator {
    pub fn from_dense(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        Ok(Self::from_dense_unchecked(m))
    }

    fn from_dense_unchecked(m: DMatrix<C64>) -> Self {
        Self { storage: Storage::Dense(m) }
    }

    pub fn from_sparse(m: SparseMatrix) -> Self {
        Self { storage: Storage::Sparse(m) }
    }

    /// `I / dim`.
    pub fn maximally_mixed(dim: usize) -> Self {
        let mut m = SparseMatrix::new(dim);
        let w = C64::new(1.0 / dim as f64, 0.0);
        for i in 0..dim {
            m.add(i, i, w);
        }
        Self::from_sparse(m)
    }

    pub fn dim(&self) -> usize {
        match &self.storage {
            Storage::Dense(m) => m.nrows(),
            Storage::Sparse(m) => m.dim(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        match &self.storage {
            Storage::Dense(m) => m[(row, col)],
            Storage::Sparse(m) => m.get(row, col),
        }
    }

    pub fn trace(&self) -> C64 {
        match &self.storage {
            Storage::Dense(m) => m.trace(),
            Storage::Sparse(m) => m.trace(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse(m) => m.to_dense(),
        }
    }

    pub fn into_dense(self) -> DMatrix<C64> {
        match self.storage {
            Storage::Dense(m) => m,
            Storage::Sparse(m) => m.to_dense(),
        }
    }

    pub fn as_sparse(&self) -> Option<&SparseMatrix> {
        match &self.storage {
            Storage::Sparse(m) => Some(m),
            Storage::Dense(_) => None,
        }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        match &self.storage {
            Storage::Dense(m) => Self::from_dense_unchecked(m * factor),
            Storage::Sparse(m) => {
                let mut m = m.clone();
                m.scale(factor);
                Self::from_sparse(m)
            }
        }
    }

    /// Largest entrywise deviation from the conjugate transpose.
    pub fn hermiticity_defect(&self) -> f64 {
        match &self.storage {
            Storage::Dense(m) => {
                let d = m.nrows();
                let mut worst = 0.0f64;
                for r in 0..d {
                    for c in r..d {
                        worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
                    }
                }
                worst
            }
            Storage::Sparse(m) => m.iter().map(|(r, c, v)| (v - m.get(c, r).conj()).norm()).fold(0.0, f64::max),
        }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// `self - other`; sparse when both operands are.
    pub fn sub(&self, other: &DensityOperator) -> Result<DensityOperator> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(match (&self.storage, &other.storage) {
            (Storage::Sparse(a), Storage::Sparse(b)) => {
                let mut out = a.clone();
                for (r, c, v) in b.iter() {
                    out.add(r, c, -v);
                }
                Self::from_sparse(out)
            }
            _ => Self::from_dense_unchecked(self.to_dense() - other.to_dense()),
        })
    }

    pub fn max_abs_diff(&self, other: &DensityOperator) -> Result<f64> {
        let d = self.sub(other)?;
        Ok(match &d.storage {
            Storage::Dense(m) => m.iter().map(|v| v.norm()).fold(0.0, f64::max),
            Storage::Sparse(m) => m.iter().map(|(_, _, v)| v.norm()).fold(0.0, f64::max),
        })
    }

    /// Sum of singular values.
    pub fn trace_norm(&self) -> Result<f64> {
        match &self.storage {
            Storage::Dense(m) => trace_norm(m),
            Storage::Sparse(m) => m.trace_norm(),
        }
    }

    /// Trace norm of a Hermitian operator from its eigenvalues.
    pub fn hermitian_trace_norm(&self) -> Result<f64> {
        match &self.storage {
            Storage::Dense(m) => hermitian_trace_norm(m),
            Storage::Sparse(m) => hermitian_trace_norm(&m.to_dense()),
        }
    }
}

/// Connected components of the graph on `0..dim` whose edges are the given
/// index pairs. Components are returned sorted, each ascending.
fn components_from_edges(dim: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..dim).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut touched = vec![false; dim];
    for (a, b) in edges {
        touched[a] = true;
        touched[b] = true;
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in (0..dim).filter(|&i| touched[i]) {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

fn dense_components(m: &DMatrix<C64>) -> Vec<Vec<usize>> {
    let d = m.nrows();
    let edges = (0..d).flat_map(move |r| (0..d).map(move |c| (r, c))).filter(|&(r, c)| m[(r, c)] != ZERO);
    components_from_edges(d, edges)
}

fn submatrix(m: &DMatrix<C64>, idx: &[usize]) -> DMatrix<C64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

fn dense_singular_sum(m: &DMatrix<C64>) -> Result<f64> {
    if m.nrows() > DENSE_SVD_CAP {
        return Err(Error::CapExceeded {
            what: "dense SVD block",
            requested: m.nrows() as u128,
            cap: DENSE_SVD_CAP as u128,
        });
    }
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].norm());
    }
    Ok(m.clone().singular_values().iter().sum())
}

/// `||A||_1`, the sum of singular values. The matrix is first split into the
/// connected components of its nonzero pattern; each block goes to a dense SVD.
pub fn trace_norm(m: &DMatrix<C64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    dense_components(m).iter().map(|comp| dense_singular_sum(&submatrix(m, comp))).sum()
}

/// `||A||_1` from one SVD of the whole matrix.
pub fn trace_norm_dense(m: &DMatrix<C64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    dense_singular_sum(m)
}

/// `||A||_1` for Hermitian `A`: sum of absolute eigenvalues, block by block.
pub fn hermitian_trace_norm(m: &DMatrix<C64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    let mut total = 0.0;
    for comp in dense_components(m) {
        if comp.len() > DENSE_SVD_CAP {
            return Err(Error::CapExceeded {
                what: "dense eigensolver block",
                requested: comp.len() as u128,
                cap: DENSE_SVD_CAP as u128,
            });
        }
        if comp.len() == 1 {
            total += m[(comp[0], comp[0])].re.abs();
            continue;
        }
        let block = submatrix(m, &comp);
        total += block.symmetric_eigenvalues().iter().map(|l| l.abs()).sum::<f64>();
    }
    Ok(total)
}

/// `TD(rho, sigma) = ||rho - sigma||_1 / 2`.
pub fn trace_distance(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), got: sigma.dim() });
    }
    for op in [rho, sigma] {
        let tr = op.trace();
        if (tr - ONE).norm() > 1e-6 {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
    }
    let diff = rho.sub(sigma)?;
    Ok(0.5 * hermitian_trace_norm(&diff.into_dense())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn tensor_of_zeros_is_zero() {
        let z = StateVector::basis(1, 0).unwrap();
        let p = tensor_product_state(&[z.clone(), z]).unwrap();
        assert_eq!(p.n(), 2);
        assert_eq!(p.amps()[0], ONE);
        assert!(p.amps()[1..].iter().all(|a| *a == ZERO));
    }

    #[test]
    fn tensor_of_plus_states_is_uniform() {
        let p = tensor_product_state(&[StateVector::uniform(1), StateVector::uniform(1)]).unwrap();
        for a in p.amps() {
            assert!((a - c(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn tensor_factor_order_is_little_endian() {
        let a = StateVector::basis(1, 1).unwrap();
        let b = StateVector::basis(2, 2).unwrap();
        let p = tensor_product_state(&[a, b]).unwrap();
        // factor 0 (a=1) is the low bit, factor 1 (b=2) the next two bits
        assert_eq!(p.amps()[1 + 2 * 2], ONE);
    }

    #[test]
    fn tensor_rejects_empty_and_oversized() {
        assert_eq!(tensor_product_state(&[]), Err(Error::EmptyInput("tensor product of zero states")));
        let big = StateVector::uniform(11);
        assert!(matches!(tensor_product_state(&[big.clone(), big]), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn trace_norm_of_identity_and_units() {
        let id = DMatrix::<C64>::identity(7, 7);
        assert!((trace_norm(&id).unwrap() - 7.0).abs() < 1e-12);
        let mut unit = DMatrix::<C64>::zeros(5, 5);
        unit[(1, 3)] = ONE;
        assert!((trace_norm(&unit).unwrap() - 1.0).abs() < 1e-12);
        assert!((trace_norm_dense(&unit).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_norm_rejects_non_square() {
        let m = DMatrix::<C64>::zeros(2, 3);
        assert_eq!(trace_norm(&m), Err(Error::NotSquare { rows: 2, cols: 3 }));
    }

    #[test]
    fn trace_distance_basic_cases() {
        let zero = StateVector::basis(1, 0).unwrap().density();
        let one = StateVector::basis(1, 1).unwrap().density();
        let mixed = DensityOperator::maximally_mixed(2);
        assert!(trace_distance(&zero, &zero).unwrap().abs() < 1e-15);
        assert!((trace_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-12);
        assert!((trace_distance(&zero, &mixed).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trace_distance_dimension_mismatch() {
        let a = DensityOperator::maximally_mixed(2);
        let b = DensityOperator::maximally_mixed(4);
        assert!(matches!(trace_distance(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sparse_and_dense_trace_norms_agree() {
        let mut sp = SparseMatrix::new(6);
        sp.add(0, 1, c(1.0, 0.5));
        sp.add(1, 0, c(-0.3, 0.0));
        sp.add(3, 5, c(0.0, 2.0));
        sp.add(4, 4, c(-1.0, 0.0));
        let dense = sp.to_dense();
        let a = sp.trace_norm().unwrap();
        let b = trace_norm_dense(&dense).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn unique_tuple_validation() {
        assert!(UniqueTuple::new(vec![0, 3, 1], 2).is_ok());
        assert!(UniqueTuple::new(vec![0, 0], 2).is_err());
        assert!(UniqueTuple::new(vec![4], 2).is_err());
        assert_eq!(UniqueTuple::new(vec![1, 2], 2).unwrap().index(4), 1 + 2 * 4);
    }

    #[test]
    fn tuple_digits_roundtrip() {
        for idx in 0..64 {
            assert_eq!(tuple_index(&tuple_digits(idx, 4, 3), 4), idx);
        }
        assert_eq!(falling_factorial(4, 2), 12.0);
        assert_eq!(falling_factorial(3, 4), 0.0);
    }
}
