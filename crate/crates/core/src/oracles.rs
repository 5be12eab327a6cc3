//! The construction's building blocks: binary phase oracle, Hadamard layer,
//! basis permutation, and their composition `U_pi U_g H^n U_f`.
//!
//! All kernels act in place on a [`StateVector`]; the only matrix
//! materialization is [`Construction::matrix`], used for small-`n`
//! cross-checks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::qcore::{tensor_product_state_capped, DensityOperator, StateVector, C64, ZERO};
use crate::sampling::{KeyedPrf, KeyedPrp};

/// Largest multi-register dimension materialized as a dense density operator.
pub const DENSE_DENSITY_CAP: usize = 1 << 12;

#[derive(Clone, Debug, PartialEq)]
enum PhaseBacking {
    Table(Vec<i8>),
    Keyed(KeyedPrf),
}

/// A function `{0,1}^n -> {+1,-1}`, table-backed or keyed.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryPhaseFunction {
    n: usize,
    backing: PhaseBacking,
}

impl BinaryPhaseFunction {
    pub fn from_table(n: usize, table: Vec<i8>) -> Result<Self> {
        if table.len() != 1usize << n {
            return Err(Error::DimensionMismatch { expected: 1 << n, got: table.len() });
        }
        if let Some(bad) = table.iter().find(|v| **v != 1 && **v != -1) {
            return Err(Error::InvalidState(format!("phase value {bad} is not +-1")));
        }
        Ok(Self { n, backing: PhaseBacking::Table(table) })
    }

    pub fn constant(n: usize, value: i8) -> Result<Self> {
        Self::from_table(n, vec![value; 1 << n])
    }

    /// `f(x) = (-1)^{bits of x selected by mask}`.
    pub fn parity(n: usize, mask: usize) -> Self {
        let table = (0..1usize << n).map(|x| if (x & mask).count_ones().is_multiple_of(2) { 1 } else { -1 }).collect();
        Self { n, backing: PhaseBacking::Table(table) }
    }

    pub(crate) fn keyed(prf: KeyedPrf) -> Self {
        Self { n: prf.n(), backing: PhaseBacking::Keyed(prf) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_keyed(&self) -> bool {
        matches!(self.backing, PhaseBacking::Keyed(_))
    }

    pub fn eval(&self, x: usize) -> i8 {
        match &self.backing {
            PhaseBacking::Table(t) => t[x],
            PhaseBacking::Keyed(k) => k.eval(x),
        }
    }

    pub fn to_table(&self) -> Vec<i8> {
        match &self.backing {
            PhaseBacking::Table(t) => t.clone(),
            PhaseBacking::Keyed(k) => k.to_table(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum PermBacking {
    Table { forward: Vec<usize>, inverse: Vec<usize> },
    Keyed(KeyedPrp),
}

/// A bijection of `{0,1}^n`, table-backed or keyed.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerPermutation {
    n: usize,
    backing: PermBacking,
}

impl InnerPermutation {
    pub fn identity(n: usize) -> Self {
        let forward: Vec<usize> = (0..1usize << n).collect();
        Self { n, backing: PermBacking::Table { inverse: forward.clone(), forward } }
    }

    /// Validates that `forward` is a bijection and builds its inverse.
    pub fn from_forward(n: usize, forward: Vec<usize>) -> Result<Self> {
        let dim = 1usize << n;
        if forward.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: forward.len() });
        }
        let mut inverse = vec![usize::MAX; dim];
        for (x, &y) in forward.iter().enumerate() {
            if y >= dim || inverse[y] != usize::MAX {
                return Err(Error::InvalidPermutation(format!("value {y} out of range or repeated")));
            }
            inverse[y] = x;
        }
        Ok(Self { n, backing: PermBacking::Table { forward, inverse } })
    }

    pub(crate) fn keyed(prp: KeyedPrp) -> Self {
        Self { n: prp.n(), backing: PermBacking::Keyed(prp) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn apply(&self, x: usize) -> usize {
        match &self.backing {
            PermBacking::Table { forward, .. } => forward[x],
            PermBacking::Keyed(k) => k.forward(x),
        }
    }

    pub fn apply_inverse(&self, y: usize) -> usize {
        match &self.backing {
            PermBacking::Table { inverse, .. } => inverse[y],
            PermBacking::Keyed(k) => k.inverse(y),
        }
    }

    pub fn to_forward_table(&self) -> Vec<usize> {
        match &self.backing {
            PermBacking::Table { forward, .. } => forward.clone(),
            PermBacking::Keyed(k) => (0..1usize << self.n).map(|x| k.forward(x)).collect(),
        }
    }

    pub fn inverse(&self) -> InnerPermutation {
        match &self.backing {
            PermBacking::Table { forward, inverse } => {
                Self { n: self.n, backing: PermBacking::Table { forward: inverse.clone(), inverse: forward.clone() } }
            }
            PermBacking::Keyed(_) => {
                let forward = (0..1usize << self.n).map(|y| self.apply_inverse(y)).collect();
                Self::from_forward(self.n, forward).expect("inverse of a bijection")
            }
        }
    }
}

fn check_n(state: &StateVector, n: usize) -> Result<()> {
    if state.n() != n {
        return Err(Error::DimensionMismatch { expected: 1 << n, got: state.dim() });
    }
    Ok(())
}

/// `U_f`: multiplies amplitude `x` by `f(x)`.
pub fn apply_phase(state: &mut StateVector, f: &BinaryPhaseFunction) -> Result<()> {
    check_n(state, f.n())?;
    let table = f.to_table();
    for (a, &s) in state.amps_mut().iter_mut().zip(&table) {
        if s < 0 {
            *a = -*a;
        }
    }
    Ok(())
}

/// `H^{(x)n}` by the in-place Walsh-Hadamard butterfly, normalized once at
/// the end by `2^{-n/2}`.
pub fn apply_hadamard_all(state: &mut StateVector) {
    let amps = state.amps_mut();
    let dim = amps.len();
    let mut half = 1;
    while half < dim {
        for block in amps.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
    let scale = (dim as f64).sqrt().recip();
    amps.iter_mut().for_each(|a| *a *= scale);
}

/// `U_pi`: moves amplitude `x` to `pi(x)`.
pub fn apply_inner_permutation(state: &mut StateVector, pi: &InnerPermutation) -> Result<()> {
    check_n(state, pi.n())?;
    let forward = pi.to_forward_table();
    let old = state.amps().to_vec();
    let amps = state.amps_mut();
    for (x, a) in old.into_iter().enumerate() {
        amps[forward[x]] = a;
    }
    Ok(())
}

/// One instance `U_{f,g,pi} = U_pi U_g H^n U_f` of the construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Construction {
    pub f: BinaryPhaseFunction,
    pub g: BinaryPhaseFunction,
    pub pi: InnerPermutation,
}

impl Construction {
    pub fn new(f: BinaryPhaseFunction, g: BinaryPhaseFunction, pi: InnerPermutation) -> Result<Self> {
        let n = f.n();
        for other in [g.n(), pi.n()] {
            if other != n {
                return Err(Error::DimensionMismatch { expected: 1 << n, got: 1 << other });
            }
        }
        Ok(Self { f, g, pi })
    }

    /// `f = g = 1`, `pi = id`: reduces to the Hadamard layer.
    pub fn trivial(n: usize) -> Self {
        let one = BinaryPhaseFunction::constant(n, 1).expect("valid table");
        Self { f: one.clone(), g: one, pi: InnerPermutation::identity(n) }
    }

    pub fn n(&self) -> usize {
        self.f.n()
    }

    pub fn apply(&self, state: &mut StateVector) -> Result<()> {
        apply_construction(state, &self.f, &self.g, &self.pi)
    }

    /// Dense `2^n x 2^n` matrix, built column by column from basis inputs.
    pub fn matrix(&self) -> Result<DMatrix<C64>> {
        let n = self.n();
        if n > 12 {
            return Err(Error::CapExceeded { what: "construction matrix bits", requested: n as u128, cap: 12 });
        }
        let dim = 1usize << n;
        let mut m = DMatrix::from_element(dim, dim, ZERO);
        for x in 0..dim {
            let mut e = StateVector::basis(n, x)?;
            self.apply(&mut e)?;
            m.set_column(x, &nalgebra::DVector::from_column_slice(e.amps()));
        }
        Ok(m)
    }
}

/// Applies phase `f`, the Hadamard layer, phase `g`, then `pi`.
pub fn apply_construction(
    state: &mut StateVector,
    f: &BinaryPhaseFunction,
    g: &BinaryPhaseFunction,
    pi: &InnerPermutation,
) -> Result<()> {
    let n = state.n();
    for m in [f.n(), g.n(), pi.n()] {
        if m != n {
            return Err(Error::DimensionMismatch { expected: 1 << n, got: 1 << m });
        }
    }
    apply_phase(state, f)?;
    apply_hadamard_all(state);
    apply_phase(state, g)?;
    apply_inner_permutation(state, pi)
}

/// Density operator of `U^{(x)st}` applied to `(x)_j |psi_j><psi_j|^{(x)t_j}`,
/// where `inputs` lists each state with its multiplicity. Factor order
/// follows the list (first state in the lowest slots).
pub fn apply_construction_multi(inputs: &[(StateVector, usize)], c: &Construction) -> Result<DensityOperator> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("no input states"));
    }
    let mut factors = Vec::new();
    for (state, mult) in inputs {
        let mut out = state.clone();
        c.apply(&mut out)?;
        factors.extend(std::iter::repeat_n(out, *mult));
    }
    let product = tensor_product_state_capped(&factors, DENSE_DENSITY_CAP)?;
    Ok(product.density())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{tensor_product_state, ONE};
    use crate::sampling::{sample_construction, Backing, SeededStream};

    fn close(a: &[C64], b: &[C64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
    }

    #[test]
    fn identity_phase_and_involution() {
        let psi = crate::sampling::sample_haar_state(4, &mut SeededStream::new(1, 0).rng()).unwrap();
        let mut a = psi.clone();
        apply_phase(&mut a, &BinaryPhaseFunction::constant(4, 1).unwrap()).unwrap();
        assert_eq!(a, psi);
        let f = crate::sampling::sample_binary_function(4, &mut SeededStream::new(2, 0).rng()).unwrap();
        apply_phase(&mut a, &f).unwrap();
        apply_phase(&mut a, &f).unwrap();
        assert_eq!(a, psi);
    }

    #[test]
    fn parity_phase_acts_as_z_on_qubit_zero() {
        let plus = StateVector::uniform(1);
        let zero = StateVector::basis(2, 0).unwrap();
        let mut s = tensor_product_state(&[plus, zero.clone()]).unwrap();
        apply_phase(&mut s, &BinaryPhaseFunction::parity(3, 1)).unwrap();
        let minus = StateVector::new(1, vec![C64::new(0.5f64.sqrt(), 0.0), C64::new(-(0.5f64.sqrt()), 0.0)]).unwrap();
        let expected = tensor_product_state(&[minus, zero]).unwrap();
        assert!(close(s.amps(), expected.amps(), 1e-15));
    }

    #[test]
    fn hadamard_on_zero_and_involution() {
        let mut s = StateVector::basis(5, 0).unwrap();
        apply_hadamard_all(&mut s);
        let amp = 2f64.powf(-2.5);
        assert!(s.amps().iter().all(|a| (a.re - amp).abs() < 1e-15 && a.im == 0.0));
        let psi = crate::sampling::sample_haar_state(6, &mut SeededStream::new(3, 0).rng()).unwrap();
        let mut t = psi.clone();
        apply_hadamard_all(&mut t);
        apply_hadamard_all(&mut t);
        assert!(close(t.amps(), psi.amps(), 1e-12));
    }

    #[test]
    fn one_qubit_hadamard() {
        let (a, b) = (C64::new(0.6, 0.0), C64::new(0.0, 0.8));
        let mut s = StateVector::new(1, vec![a, b]).unwrap();
        apply_hadamard_all(&mut s);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(s.amps(), &[(a + b) * r, (a - b) * r], 1e-15));
    }

    #[test]
    fn permutation_moves_basis_states() {
        let pi = InnerPermutation::from_forward(2, vec![2, 0, 3, 1]).unwrap();
        let mut s = StateVector::basis(2, 2).unwrap();
        apply_inner_permutation(&mut s, &pi).unwrap();
        assert_eq!(s, StateVector::basis(2, 3).unwrap());
        apply_inner_permutation(&mut s, &pi.inverse()).unwrap();
        assert_eq!(s, StateVector::basis(2, 2).unwrap());
        let mut t = StateVector::uniform(2);
        apply_inner_permutation(&mut t, &InnerPermutation::identity(2)).unwrap();
        assert_eq!(t, StateVector::uniform(2));
    }

    #[test]
    fn from_forward_rejects_non_bijection() {
        assert!(InnerPermutation::from_forward(1, vec![0, 0]).is_err());
        assert!(InnerPermutation::from_forward(1, vec![0]).is_err());
        assert!(BinaryPhaseFunction::from_table(1, vec![1, 0]).is_err());
    }

    #[test]
    fn size_mismatch_errors() {
        let mut s = StateVector::uniform(3);
        assert!(apply_phase(&mut s, &BinaryPhaseFunction::constant(2, 1).unwrap()).is_err());
        assert!(apply_inner_permutation(&mut s, &InnerPermutation::identity(2)).is_err());
        let one = BinaryPhaseFunction::constant(3, 1).unwrap();
        assert!(Construction::new(one.clone(), one, InnerPermutation::identity(2)).is_err());
    }

    #[test]
    fn trivial_construction_is_hadamard_layer() {
        let mut s = StateVector::basis(3, 0).unwrap();
        Construction::trivial(3).apply(&mut s).unwrap();
        assert!(close(s.amps(), StateVector::uniform(3).amps(), 1e-15));
    }

    #[test]
    fn construction_matrix_is_real_for_table_backings() {
        for backing in [Backing::Random, Backing::Keyed] {
            let c = sample_construction(2, backing, &mut SeededStream::new(4, 0).rng()).unwrap();
            let m = c.matrix().unwrap();
            assert!(m.iter().all(|e| e.im.abs() < 1e-14));
            let id = DMatrix::<C64>::identity(4, 4);
            assert!((m.adjoint() * &m - id).iter().all(|e| e.norm() < 1e-12));
        }
    }

    #[test]
    fn multi_reduces_to_single_and_factorizes() {
        let c = sample_construction(2, Backing::Random, &mut SeededStream::new(5, 0).rng()).unwrap();
        let psi = StateVector::basis(2, 1).unwrap();
        let rho = apply_construction_multi(&[(psi.clone(), 1)], &c).unwrap();
        let mut out = psi;
        c.apply(&mut out).unwrap();
        assert!(rho.max_abs_diff(&out.density()).unwrap() < 1e-15);
        assert!((rho.trace() - ONE).norm() < 1e-10);

        let triv = Construction::trivial(1);
        let inputs = [(StateVector::basis(1, 0).unwrap(), 1), (StateVector::basis(1, 1).unwrap(), 1)];
        let rho = apply_construction_multi(&inputs, &triv).unwrap();
        let mut h0 = StateVector::basis(1, 0).unwrap();
        let mut h1 = StateVector::basis(1, 1).unwrap();
        apply_hadamard_all(&mut h0);
        apply_hadamard_all(&mut h1);
        let expected = h0.density().to_dense().kronecker(&h1.density().to_dense());
        // kronecker puts its first factor in the high digits
        let expected_le = h1.density().to_dense().kronecker(&h0.density().to_dense());
        let got = rho.to_dense();
        assert!((got - &expected_le).iter().all(|e| e.norm() < 1e-15));
        assert_eq!(expected.nrows(), 4);
    }

    #[test]
    fn multi_respects_cap() {
        let c = Construction::trivial(5);
        let inputs = [(StateVector::uniform(5), 3)];
        assert!(matches!(apply_construction_multi(&inputs, &c), Err(Error::CapExceeded { .. })));
    }
}
