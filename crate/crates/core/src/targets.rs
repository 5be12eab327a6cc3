//! Analytic objects of the flat-to-random analysis: the target state
//! `rho_uni`, the class operators `A_p`, the coefficients `nu_sigma` and
//! `nu_p`, the assembled unique restriction `rho*`, and the exact averaged
//! output `rho = E_{g,pi}[(U_pi U_g)^{st} rho_in (U_g U_pi)^{dagger st}]`.
//!
//! Tuples over the `st` slots are indexed little-endian (slot 0 lowest) and
//! an outer permutation acts by `sigma(z)(v) = z(sigma(v))`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flatness::flatness_of;
use crate::oracles::DENSE_DENSITY_CAP;
use crate::par::map_indexed;
use crate::permcomb::{
    all_permutations, block_edge_pattern, enumerate_classes, sample_class_representative, BlockEdgePattern,
    OuterPermutation,
};
use crate::qcore::{
    checked_pow, falling_factorial, is_unique_tuple, tensor_product_state_capped, tuple_digits_into, tuple_index,
    DensityOperator, SparseMatrix, StateVector, C64, ONE, ZERO,
};
use crate::sampling::{sample_binary_function, sample_inner_permutation, SeededStream};
use crate::stats::{ComplexSum, MatrixAccumulator, MatrixEstimate};

/// Cap on brute-force tuple visits for one coefficient.
pub const NU_VISIT_BUDGET: u128 = 500_000_000;

/// Cap on stored entries of a materialized permutation-sum operator.
pub const SPARSE_ENTRY_CAP: u128 = 50_000_000;

/// Largest `N!` enumerated when averaging over inner permutations.
pub const PERMUTATION_ENUMERATION_CAP: u128 = 40_320;

/// Agreement tolerance for two evaluations of the same coefficient, on the
/// normalized scale `N^(st) * nu`.
pub const NU_AGREEMENT_TOL: f64 = 1e-11;

/// `s` orthogonal `epsilon`-flat states over `n` qubits.
#[derive(Clone, Debug)]
pub struct OrthogonalFlatFamily {
    n: usize,
    states: Vec<StateVector>,
    epsilon: f64,
}

impl OrthogonalFlatFamily {
    /// Validates orthogonality (`|<a|b>| < 1e-12`) and flatness against the
    /// declared `epsilon`.
    pub fn new(states: Vec<StateVector>, epsilon: f64) -> Result<Self> {
        let n = states.first().ok_or(Error::EmptyInput("empty family"))?.n();
        for (a, sa) in states.iter().enumerate() {
            if sa.n() != n {
                return Err(Error::DimensionMismatch { expected: 1 << n, got: sa.dim() });
            }
            let fl = flatness_of(sa);
            if fl > epsilon * (1.0 + 1e-12) {
                return Err(Error::InvalidState(format!("state {a} is {fl}-flat, above declared {epsilon}")));
            }
            for (b, sb) in states.iter().enumerate().skip(a + 1) {
                let ip = sa.inner(sb)?.norm();
                if ip >= 1e-12 {
                    return Err(Error::InvalidState(format!("states {a} and {b} overlap by {ip:e}")));
                }
            }
        }
        Ok(Self { n, states, epsilon })
    }

    /// Family whose declared `epsilon` is its measured flatness.
    pub fn from_states(states: Vec<StateVector>) -> Result<Self> {
        let eps = states.iter().map(flatness_of).fold(0.0, f64::max);
        Self::new(states, eps)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn local_dim(&self) -> usize {
        1 << self.n
    }

    pub fn s(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn measured_epsilon(&self) -> f64 {
        self.states.iter().map(flatness_of).fold(0.0, f64::max)
    }

    /// The product input `(x)_j |alpha_j>^{(x)t}`, slot `j*t + i` carrying state `j`.
    pub fn product_input(&self, t: usize) -> Result<StateVector> {
        let factors: Vec<StateVector> = self.states.iter().flat_map(|s| std::iter::repeat_n(s.clone(), t)).collect();
        tensor_product_state_capped(&factors, DENSE_DENSITY_CAP)
    }
}

/// Discrete-Fourier columns `omega^{jx} / sqrt(N)` for `j < s`: exactly
/// orthogonal and exactly `1/N`-flat.
pub fn fourier_flat_family(n: usize, s: usize) -> Result<OrthogonalFlatFamily> {
    let dim = 1usize << n;
    if s > dim || s == 0 {
        return Err(Error::InvalidParameter(format!("need 1 <= s <= 2^n, got s={s}, n={n}")));
    }
    let amp = (dim as f64).sqrt().recip();
    let states = (0..s)
        .map(|j| {
            let amps = (0..dim)
                .map(|x| {
                    let phase = 2.0 * std::f64::consts::PI * ((j * x) % dim) as f64 / dim as f64;
                    C64::from_polar(amp, phase)
                })
                .collect();
            StateVector::new(n, amps)
        })
        .collect::<Result<Vec<_>>>()?;
    OrthogonalFlatFamily::new(states, 1.0 / dim as f64)
}

fn check_unique_exists(local_dim: usize, len: usize) -> Result<()> {
    if len > local_dim {
        return Err(Error::NoUniqueTuples { len, domain: local_dim });
    }
    Ok(())
}

/// Calls `visit` on every unique tuple of length `len` over `0..local_dim`,
/// depth first with an exclusion mask, in lexicographic order.
pub fn for_each_unique_tuple(local_dim: usize, len: usize, mut visit: impl FnMut(&[usize])) {
    let mut z = vec![0usize; len];
    let mut used = vec![false; local_dim];
    fn rec(depth: usize, z: &mut [usize], used: &mut [bool], visit: &mut dyn FnMut(&[usize])) {
        if depth == z.len() {
            visit(z);
            return;
        }
        for x in 0..used.len() {
            if !used[x] {
                used[x] = true;
                z[depth] = x;
                rec(depth + 1, z, used, visit);
                used[x] = false;
            }
        }
    }
    rec(0, &mut z, &mut used, &mut visit);
}

/// `sum_w weight_w sum_{z unique} |z><sigma_w(z)|` over a set of outer
/// permutations.
#[derive(Clone, Debug)]
pub struct SparsePermSumOperator {
    n: usize,
    s: usize,
    t: usize,
    terms: Vec<(OuterPermutation, C64)>,
}

impl SparsePermSumOperator {
    pub fn new(n: usize, s: usize, t: usize, terms: Vec<(OuterPermutation, C64)>) -> Result<Self> {
        if let Some((bad, _)) = terms.iter().find(|(p, _)| (p.s(), p.t()) != (s, t)) {
            return Err(Error::ShapeMismatch { s1: s, t1: t, s2: bad.s(), t2: bad.t() });
        }
        Ok(Self { n, s, t, terms })
    }

    pub fn terms(&self) -> &[(OuterPermutation, C64)] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        checked_pow(1 << self.n, self.s * self.t).unwrap_or(usize::MAX)
    }

    /// `A^T`: each `sigma` becomes `sigma^{-1}`.
    pub fn transpose(&self) -> Self {
        Self { n: self.n, s: self.s, t: self.t, terms: self.terms.iter().map(|(p, w)| (p.inverse(), *w)).collect() }
    }

    pub fn materialize(&self) -> Result<SparseMatrix> {
        let local = 1usize << self.n;
        let len = self.s * self.t;
        check_unique_exists(local, len)?;
        let dim = checked_pow(local, len).ok_or(Error::CapExceeded {
            what: "operator dimension",
            requested: u128::MAX,
            cap: usize::MAX as u128,
        })?;
        let entries = falling_factorial(local, len) as u128 * self.terms.len() as u128;
        if entries > SPARSE_ENTRY_CAP {
            return Err(Error::CapExceeded { what: "sparse entries", requested: entries, cap: SPARSE_ENTRY_CAP });
        }
        let mut m = SparseMatrix::new(dim);
        let mut image = vec![0usize; len];
        for_each_unique_tuple(local, len, |z| {
            let row = tuple_index(z, local);
            for (sigma, w) in &self.terms {
                for (v, slot) in image.iter_mut().enumerate() {
                    *slot = z[sigma.apply(v)];
                }
                m.add(row, tuple_index(&image, local), *w);
            }
        });
        Ok(m)
    }
}

/// `A_p = sum_{z unique} sum_{sigma in p} |z><sigma(z)|`.
pub fn build_a_p(n: usize, pattern: &BlockEdgePattern) -> Result<SparsePermSumOperator> {
    let members = crate::permcomb::class_members(pattern)?;
    SparsePermSumOperator::new(n, pattern.s(), pattern.t(), members.into_iter().map(|p| (p, ONE)).collect())
}

/// `rho_uni = (1 / N^(st)) sum_{z unique, sigma in S_t^s} |z><sigma(z)|`.
pub fn build_rho_uni(n: usize, s: usize, t: usize) -> Result<DensityOperator> {
    let local = 1usize << n;
    check_unique_exists(local, s * t)?;
    let group = crate::permcomb::block_preserving_group(s, t)?;
    let op = SparsePermSumOperator::new(n, s, t, group.into_iter().map(|p| (p, ONE)).collect())?;
    let mut m = op.materialize()?;
    m.scale(C64::new(1.0 / falling_factorial(local, s * t), 0.0));
    Ok(DensityOperator::from_sparse(m))
}

/// Both brute-force forms of one coefficient.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NuEvaluation {
    /// `E_x prod_v alpha^{(j_v)}_{x(v)} conj(alpha^{(j_v)}_{x(sigma v)})`.
    pub direct: C64,
    /// The same average regrouped per slot: `prod_w alpha^{(j_w)}_{x(w)}
    /// conj(alpha^{(j_{sigma^{-1} w})}_{x(w)})`, a squared magnitude on
    /// non-crossing slots.
    pub crossing_form: C64,
    /// Unique tuples visited.
    pub visits: u64,
    /// `N^(st)`.
    pub normalization: f64,
}

impl NuEvaluation {
    pub fn value(&self) -> C64 {
        self.direct
    }

    /// `|direct - crossing| * N^(st)`.
    pub fn form_disagreement(&self) -> f64 {
        (self.direct - self.crossing_form).norm() * self.normalization
    }
}

fn amplitude_tables(family: &OrthogonalFlatFamily) -> Vec<Vec<C64>> {
    family.states().iter().map(|s| s.amps().to_vec()).collect()
}

/// Exact `nu_sigma` by depth-first summation over all unique tuples, split
/// across workers on the first slot's value. Fails if the two forms
/// disagree by more than `1e-12` on the normalized scale.
pub fn nu_sigma_evaluation(family: &OrthogonalFlatFamily, sigma: &OuterPermutation) -> Result<NuEvaluation> {
    let eval = nu_sigma_forms(family, sigma)?;
    let gap = eval.form_disagreement();
    if gap > 1e-12 {
        return Err(Error::Disagreement { what: "nu direct vs crossing form", delta: gap, tol: 1e-12 });
    }
    Ok(eval)
}

/// Both forms of `nu_sigma` without the agreement assertion.
pub fn nu_sigma_forms(family: &OrthogonalFlatFamily, sigma: &OuterPermutation) -> Result<NuEvaluation> {
    let (s, t) = (sigma.s(), sigma.t());
    if s != family.s() {
        return Err(Error::InvalidParameter(format!("permutation has s={s} blocks, family has {}", family.s())));
    }
    let local = family.local_dim();
    let len = s * t;
    check_unique_exists(local, len)?;
    let total = falling_factorial(local, len);
    if total as u128 > NU_VISIT_BUDGET {
        return Err(Error::CapExceeded { what: "tuple visits", requested: total as u128, cap: NU_VISIT_BUDGET });
    }
    let amps = amplitude_tables(family);
    let inv = sigma.inverse();
    let block = |v: usize| v / t;
    // per-slot factor tables of the crossing form
    let slot_tables: Vec<Vec<C64>> = (0..len)
        .map(|w| (0..local).map(|x| amps[block(w)][x] * amps[block(inv.apply(w))][x].conj()).collect())
        .collect();
    let direct_factor = |z: &[usize]| -> C64 {
        (0..len).map(|v| amps[block(v)][z[v]] * amps[block(v)][z[sigma.apply(v)]].conj()).product()
    };

    let partials = map_indexed(local, |first| {
        let mut direct = ComplexSum::default();
        let mut crossing = ComplexSum::default();
        let mut visits = 0u64;
        let mut z = vec![0usize; len];
        let mut used = vec![false; local];
        let mut prefix = vec![ONE; len + 1];
        z[0] = first;
        used[first] = true;
        prefix[1] = slot_tables[0][first];
        // iterative depth-first search over the remaining slots
        let mut cursor = vec![0usize; len + 1];
        let mut depth = 1;
        if len == 1 {
            direct.add(direct_factor(&z));
            crossing.add(prefix[1]);
            visits += 1;
            return (direct, crossing, visits);
        }
        loop {
            if depth == 0 || depth == 1 && cursor[1] >= local {
                break;
            }
            if cursor[depth] >= local {
                cursor[depth] = 0;
                depth -= 1;
                used[z[depth]] = false;
                cursor[depth] += 1;
                continue;
            }
            let x = cursor[depth];
            if used[x] {
                cursor[depth] += 1;
                continue;
            }
            z[depth] = x;
            prefix[depth + 1] = prefix[depth] * slot_tables[depth][x];
            if depth + 1 == len {
                direct.add(direct_factor(&z));
                crossing.add(prefix[len]);
                visits += 1;
                cursor[depth] += 1;
            } else {
                used[x] = true;
                depth += 1;
                cursor[depth] = 0;
            }
        }
        (direct, crossing, visits)
    });

    let mut direct = ComplexSum::default();
    let mut crossing = ComplexSum::default();
    let mut visits = 0u64;
    for (d, c, v) in &partials {
        direct.merge(d);
        crossing.merge(c);
        visits += v;
    }
    Ok(NuEvaluation {
        direct: direct.value() / total,
        crossing_form: crossing.value() / total,
        visits,
        normalization: total,
    })
}

pub fn nu_sigma(family: &OrthogonalFlatFamily, sigma: &OuterPermutation) -> Result<C64> {
    nu_sigma_evaluation(family, sigma).map(|e| e.value())
}

/// Up to `count` distinct members of the pattern's class, starting from the
/// canonical representative and moving it by in-block cyclic shifts.
pub fn class_representatives(pattern: &BlockEdgePattern, count: usize) -> Result<Vec<OuterPermutation>> {
    let (s, t) = (pattern.s(), pattern.t());
    let rep = sample_class_representative(pattern)?;
    let shift = OuterPermutation::new(s, t, (0..s * t).map(|v| (v / t) * t + (v % t + 1) % t).collect())?;
    let first_only = {
        let mut map: Vec<usize> = (0..s * t).collect();
        if t > 1 {
            map.swap(0, 1);
        }
        OuterPermutation::new(s, t, map)?
    };
    let candidates = [
        rep.clone(),
        shift.compose(&rep)?,
        rep.compose(&shift)?,
        first_only.compose(&rep)?,
        rep.compose(&first_only)?,
        shift.compose(&rep)?.compose(&first_only)?,
    ];
    let mut out: Vec<OuterPermutation> = Vec::new();
    for c in candidates {
        if out.len() == count {
            break;
        }
        if !out.contains(&c) {
            out.push(c);
        }
    }
    debug_assert!(out.iter().all(|p| block_edge_pattern(p) == *pattern));
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct NuClassValue {
    pub value: C64,
    pub evaluations: Vec<NuEvaluation>,
    /// Largest normalized gap between representatives.
    pub spread: f64,
}

/// `nu_p` from two representatives of the class, which must agree.
pub fn nu_class(family: &OrthogonalFlatFamily, pattern: &BlockEdgePattern) -> Result<NuClassValue> {
    nu_class_with(family, pattern, 2)
}

pub fn nu_class_with(family: &OrthogonalFlatFamily, pattern: &BlockEdgePattern, reps: usize) -> Result<NuClassValue> {
    let evaluations = class_representatives(pattern, reps)?
        .iter()
        .map(|p| nu_sigma_evaluation(family, p))
        .collect::<Result<Vec<_>>>()?;
    let value = evaluations[0].value();
    let spread = evaluations.iter().map(|e| (e.value() - value).norm() * e.normalization).fold(0.0, f64::max);
    if spread > NU_AGREEMENT_TOL {
        return Err(Error::Disagreement {
            what: "nu across class representatives",
            delta: spread,
            tol: NU_AGREEMENT_TOL,
        });
    }
    Ok(NuClassValue { value, evaluations, spread })
}

/// `rho*` assembled from class coefficients, with its normalization.
#[derive(Clone, Debug)]
pub struct RhoStar {
    pub operator: DensityOperator,
    /// `1 / (N^(st) nu_{p0})`, the factor making the trace one.
    pub c1: f64,
    pub nu: BTreeMap<BlockEdgePattern, C64>,
}

/// `rho* = c1 sum_p nu_p A_p` with `c1` chosen so that `Tr rho* = 1`.
pub fn assemble_rho_star(family: &OrthogonalFlatFamily, t: usize) -> Result<RhoStar> {
    let (n, s) = (family.n(), family.s());
    let classes = enumerate_classes(s, t)?;
    let mut nu = BTreeMap::new();
    for pattern in classes.keys() {
        nu.insert(pattern.clone(), nu_class(family, pattern)?.value);
    }
    let terms = all_permutations(s * t)
        .map(|map| {
            let sigma = OuterPermutation::new(s, t, map).expect("permutation");
            let w = nu[&block_edge_pattern(&sigma)];
            (sigma, w)
        })
        .collect();
    let mut m = SparsePermSumOperator::new(n, s, t, terms)?.materialize()?;
    let trace = m.trace().re;
    let c1 = 1.0 / trace;
    m.scale(C64::new(c1, 0.0));
    Ok(RhoStar { operator: DensityOperator::from_sparse(m), c1, nu })
}

/// How the random phase `g` is averaged out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PhaseAverage {
    /// Keep exactly the coherences between tuples of equal binary type.
    BinaryTypeCollapse,
    /// Enumerate all `2^N` phase functions.
    Exhaustive,
}

/// How the random inner permutation `pi` is averaged out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PermutationAverage {
    /// Enumerate all `N!` permutations.
    Exhaustive,
    /// Average each entry over its orbit under simultaneous relabeling,
    /// which equals the uniform average over `S_N` for any `N`.
    Orbit,
    /// Monte-Carlo over sampled permutations.
    Sampled { samples: usize, stream: SeededStream },
}

#[derive(Clone, Debug)]
pub struct AverageOutput {
    pub rho: DensityOperator,
    /// Present for sampled averages.
    pub estimate: Option<MatrixEstimate>,
}

/// Histogram of tuple entries reduced mod 2, as the sorted list of entries
/// occurring an odd number of times.
pub fn binary_type(z: &[usize]) -> Vec<usize> {
    let mut sorted = z.to_vec();
    sorted.sort_unstable();
    let mut odd = Vec::new();
    for chunk in sorted.chunk_by(|a, b| a == b) {
        if chunk.len() % 2 == 1 {
            odd.push(chunk[0]);
        }
    }
    odd
}

/// `E_g[D_g X D_g]` with `D_g = diag(prod_v g(z_v))`.
fn phase_average(x: &DMatrix<C64>, local: usize, len: usize, phase: PhaseAverage) -> Result<DMatrix<C64>> {
    let dim = x.nrows();
    let mut digits = vec![0usize; len];
    match phase {
        PhaseAverage::BinaryTypeCollapse => {
            let types: Vec<Vec<usize>> = (0..dim)
                .map(|idx| {
                    tuple_digits_into(idx, local, &mut digits);
                    binary_type(&digits)
                })
                .collect();
            Ok(DMatrix::from_fn(dim, dim, |r, c| if types[r] == types[c] { x[(r, c)] } else { ZERO }))
        }
        PhaseAverage::Exhaustive => {
            let count = 1u128 << local.min(127);
            let work = count * (dim * dim) as u128;
            if local > 24 || work > 4_000_000_000 {
                return Err(Error::CapExceeded { what: "phase enumeration work", requested: work, cap: 4_000_000_000 });
            }
            // sum over all g of g_z g_z', accumulated as exact integers
            let workers = 64.min(count as usize);
            let partials = map_indexed(workers, |w| {
                let mut digits = vec![0usize; len];
                let mut acc = vec![0i64; dim * dim];
                let mut sign = vec![0i64; dim];
                for g in (w..count as usize).step_by(workers) {
                    let table: Vec<i64> = (0..local).map(|v| 1 - 2 * ((g >> v) & 1) as i64).collect();
                    for (idx, s) in sign.iter_mut().enumerate() {
                        tuple_digits_into(idx, local, &mut digits);
                        *s = digits.iter().map(|&v| table[v]).product();
                    }
                    for c in 0..dim {
                        for r in 0..dim {
                            acc[c * dim + r] += sign[r] * sign[c];
                        }
                    }
                }
                acc
            });
            let mut total = vec![0i64; dim * dim];
            for p in &partials {
                total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            }
            Ok(DMatrix::from_fn(dim, dim, |r, c| x[(r, c)] * (total[c * dim + r] as f64 / count as f64)))
        }
    }
}

/// Permutes tuple indices entrywise: `z -> pi(z)`.
fn tuple_relabeling(forward: &[usize], local: usize, len: usize) -> Vec<usize> {
    let dim = local.pow(len as u32);
    let mut digits = vec![0usize; len];
    (0..dim)
        .map(|idx| {
            tuple_digits_into(idx, local, &mut digits);
            digits.iter_mut().for_each(|d| *d = forward[*d]);
            tuple_index(&digits, local)
        })
        .collect()
}

/// Canonical form of the pair `(z, z')` under simultaneous relabeling of
/// entries: each entry replaced by its order of first appearance.
fn pair_orbit_key(z: &[usize], zp: &[usize], scratch: &mut Vec<usize>) -> Vec<u8> {
    scratch.clear();
    z.iter()
        .chain(zp)
        .map(|x| match scratch.iter().position(|y| y == x) {
            Some(p) => p as u8,
            None => {
                scratch.push(*x);
                (scratch.len() - 1) as u8
            }
        })
        .collect()
}

/// The averaged output over `g` and `pi` of the `st`-fold application to
/// the family with `t` copies of each state.
pub fn exact_average_output(
    family: &OrthogonalFlatFamily,
    t: usize,
    phase: PhaseAverage,
    perm: PermutationAverage,
) -> Result<AverageOutput> {
    let input = family.product_input(t)?.density().into_dense();
    average_channel(&input, family.local_dim(), family.s() * t, phase, perm)
}

/// `E_{g,pi}[(U_pi U_g)^{(x)len} X (U_g U_pi)^{dagger (x)len}]` for an
/// arbitrary operator `X` on `len` registers of dimension `local`.
pub fn average_channel(
    x: &DMatrix<C64>,
    local: usize,
    len: usize,
    phase: PhaseAverage,
    perm: PermutationAverage,
) -> Result<AverageOutput> {
    let dim = x.nrows();
    if checked_pow(local, len) != Some(dim) || x.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: checked_pow(local, len).unwrap_or(usize::MAX), got: dim });
    }
    if !local.is_power_of_two() {
        return Err(Error::InvalidParameter(format!("local dimension {local} is not a power of two")));
    }
    let n = local.trailing_zeros() as usize;
    let m = phase_average(x, local, len, phase)?;
    let nonzeros: Vec<(usize, usize, C64)> = (0..dim)
        .flat_map(|c| (0..dim).map(move |r| (r, c)))
        .filter(|&(r, c)| m[(r, c)] != ZERO)
        .map(|(r, c)| (r, c, m[(r, c)]))
        .collect();

    match perm {
        PermutationAverage::Exhaustive => {
            let count: u128 = (1..=local as u128).product();
            if count > PERMUTATION_ENUMERATION_CAP {
                return Err(Error::CapExceeded {
                    what: "inner permutations enumerated",
                    requested: count,
                    cap: PERMUTATION_ENUMERATION_CAP,
                });
            }
            let perms: Vec<Vec<usize>> = all_permutations(local).collect();
            let workers = 64.min(perms.len());
            let partials = map_indexed(workers, |w| {
                let mut acc = DMatrix::from_element(dim, dim, ZERO);
                for forward in perms.iter().skip(w).step_by(workers) {
                    let relabel = tuple_relabeling(forward, local, len);
                    for &(r, c, v) in &nonzeros {
                        acc[(relabel[r], relabel[c])] += v;
                    }
                }
                acc
            });
            let mut rho = DMatrix::from_element(dim, dim, ZERO);
            for p in &partials {
                rho += p;
            }
            rho.unscale_mut(perms.len() as f64);
            Ok(AverageOutput { rho: DensityOperator::from_dense(rho)?, estimate: None })
        }
        PermutationAverage::Orbit => {
            let mut sums: BTreeMap<Vec<u8>, (ComplexSum, usize)> = BTreeMap::new();
            let mut keys = Vec::with_capacity(dim * dim);
            let (mut z, mut zp, mut scratch) = (vec![0; len], vec![0; len], Vec::new());
            for c in 0..dim {
                tuple_digits_into(c, local, &mut zp);
                for r in 0..dim {
                    tuple_digits_into(r, local, &mut z);
                    let key = pair_orbit_key(&z, &zp, &mut scratch);
                    let e = sums.entry(key.clone()).or_default();
                    e.0.add(m[(r, c)]);
                    e.1 += 1;
                    keys.push(key);
                }
            }
            let means: BTreeMap<&Vec<u8>, C64> =
                sums.iter().map(|(k, (s, cnt))| (k, s.value() / *cnt as f64)).collect();
            let rho = DMatrix::from_fn(dim, dim, |r, c| means[&keys[c * dim + r]]);
            Ok(AverageOutput { rho: DensityOperator::from_dense(rho)?, estimate: None })
        }
        PermutationAverage::Sampled { samples, stream } => {
            let workers = 16.min(samples.max(1));
            let partials = map_indexed(workers, |w| {
                let mut rng = stream.substream(w as u64).rng();
                let mut acc = MatrixAccumulator::new(dim);
                let mine = samples / workers + usize::from(w < samples % workers);
                for _ in 0..mine {
                    let pi = sample_inner_permutation(n, &mut rng).expect("n within cap");
                    let relabel = tuple_relabeling(&pi.to_forward_table(), local, len);
                    let mut x = DMatrix::from_element(dim, dim, ZERO);
                    for &(r, c, v) in &nonzeros {
                        x[(relabel[r], relabel[c])] = v;
                    }
                    acc.push(&x);
                }
                acc
            });
            let mut acc = MatrixAccumulator::new(dim);
            for p in &partials {
                acc.merge(p);
            }
            let est = acc.finish();
            Ok(AverageOutput { rho: DensityOperator::from_dense(est.mean.clone())?, estimate: Some(est) })
        }
    }
}

/// Plain Monte-Carlo over sampled `(g, pi)`: applies `U_pi U_g` to each
/// input state and averages the product-state projectors.
pub fn mc_average_output(
    family: &OrthogonalFlatFamily,
    t: usize,
    samples: usize,
    stream: &SeededStream,
) -> Result<MatrixEstimate> {
    let n = family.n();
    let dim = checked_pow(family.local_dim(), family.s() * t).unwrap_or(usize::MAX);
    if dim > DENSE_DENSITY_CAP {
        return Err(Error::CapExceeded {
            what: "dense dimension",
            requested: dim as u128,
            cap: DENSE_DENSITY_CAP as u128,
        });
    }
    let workers = 16.min(samples.max(1));
    let partials = map_indexed(workers, |w| {
        let mut rng = stream.substream(w as u64).rng();
        let mut acc = MatrixAccumulator::new(dim);
        let mine = samples / workers + usize::from(w < samples % workers);
        for _ in 0..mine {
            let g = sample_binary_function(n, &mut rng).expect("n within cap");
            let pi = sample_inner_permutation(n, &mut rng).expect("n within cap");
            let outs: Vec<StateVector> = family
                .states()
                .iter()
                .map(|s| {
                    let mut o = s.clone();
                    crate::oracles::apply_phase(&mut o, &g).expect("same n");
                    crate::oracles::apply_inner_permutation(&mut o, &pi).expect("same n");
                    o
                })
                .collect();
            let factors: Vec<StateVector> = outs.iter().flat_map(|o| std::iter::repeat_n(o.clone(), t)).collect();
            let phi = tensor_product_state_capped(&factors, DENSE_DENSITY_CAP).expect("dimension checked");
            acc.push(&phi.density().into_dense());
        }
        acc
    });
    let mut acc = MatrixAccumulator::new(dim);
    for p in &partials {
        acc.merge(p);
    }
    Ok(acc.finish())
}

/// `Pi* X Pi*` restricted to unique tuples.
pub fn unique_restriction(x: &DensityOperator, local: usize, len: usize) -> DensityOperator {
    let dim = x.dim();
    let mut digits = vec![0usize; len];
    let unique: Vec<usize> = (0..dim)
        .filter(|&idx| {
            tuple_digits_into(idx, local, &mut digits);
            is_unique_tuple(&digits)
        })
        .collect();
    let mut m = SparseMatrix::new(dim);
    for &r in &unique {
        for &c in &unique {
            let v = x.get(r, c);
            if v != ZERO {
                m.add(r, c, v);
            }
        }
    }
    DensityOperator::from_sparse(m)
}

/// Largest `|X[z, z']|` with exactly one of `z`, `z'` unique.
pub fn cross_block_max(x: &DensityOperator, local: usize, len: usize) -> f64 {
    let dim = x.dim();
    let mut digits = vec![0usize; len];
    let unique: Vec<bool> = (0..dim)
        .map(|idx| {
            tuple_digits_into(idx, local, &mut digits);
            is_unique_tuple(&digits)
        })
        .collect();
    let mut worst = 0.0f64;
    for r in 0..dim {
        for c in 0..dim {
            if unique[r] != unique[c] {
                worst = worst.max(x.get(r, c).norm());
            }
        }
    }
    worst
}

/// `nu_{sigma,z} = E_pi[prod_v alpha_{pi^{-1}(z)(v)} conj(alpha_{sigma(pi^{-1} z)(v)})]`
/// for a fixed unique tuple `z`. Returns the mean and, for sampled
/// averages, its standard error.
pub fn nu_sigma_z(
    family: &OrthogonalFlatFamily,
    sigma: &OuterPermutation,
    z: &[usize],
    perm: PermutationAverage,
) -> Result<(C64, f64)> {
    let local = family.local_dim();
    let t = sigma.t();
    let len = sigma.len();
    if z.len() != len || !is_unique_tuple(z) || z.iter().any(|&x| x >= local) {
        return Err(Error::InvalidState(format!("{z:?} is not a unique tuple of length {len}")));
    }
    let amps = amplitude_tables(family);
    let integrand =
        |x: &[usize]| -> C64 { (0..len).map(|v| amps[v / t][x[v]] * amps[v / t][x[sigma.apply(v)]].conj()).product() };
    let mut x = vec![0usize; len];
    match perm {
        PermutationAverage::Exhaustive | PermutationAverage::Orbit => {
            let count: u128 = (1..=local as u128).product();
            if count > PERMUTATION_ENUMERATION_CAP {
                return Err(Error::CapExceeded {
                    what: "inner permutations enumerated",
                    requested: count,
                    cap: PERMUTATION_ENUMERATION_CAP,
                });
            }
            let perms: Vec<Vec<usize>> = all_permutations(local).collect();
            Ok((nu_sigma_z_over(family, sigma, z, &perms)?, 0.0))
        }
        PermutationAverage::Sampled { samples, stream } => {
            let mut rng = stream.rng();
            let (mut mean, mut m2) = (ZERO, 0.0);
            for k in 1..=samples {
                let pi = sample_inner_permutation(family.n(), &mut rng)?;
                for (slot, &e) in x.iter_mut().zip(z) {
                    *slot = pi.apply_inverse(e);
                }
                let v = integrand(&x);
                let delta = v - mean;
                mean += delta / k as f64;
                m2 += delta.re * (v - mean).re + delta.im * (v - mean).im;
            }
            let se = if samples > 1 { (m2 / (samples - 1) as f64 / samples as f64).sqrt() } else { f64::INFINITY };
            Ok((mean, se))
        }
    }
}

/// `nu_{sigma,z}` averaged over an explicit list of inner permutations,
/// each given as a forward table.
pub fn nu_sigma_z_over(
    family: &OrthogonalFlatFamily,
    sigma: &OuterPermutation,
    z: &[usize],
    perms: &[Vec<usize>],
) -> Result<C64> {
    let local = family.local_dim();
    let (t, len) = (sigma.t(), sigma.len());
    if z.len() != len || !is_unique_tuple(z) || z.iter().any(|&x| x >= local) {
        return Err(Error::InvalidState(format!("{z:?} is not a unique tuple of length {len}")));
    }
    if perms.is_empty() {
        return Err(Error::EmptyInput("no permutations"));
    }
    let amps = amplitude_tables(family);
    let mut x = vec![0usize; len];
    let mut sum = ComplexSum::default();
    for p in perms {
        for (slot, &e) in x.iter_mut().zip(z) {
            *slot = p[e];
        }
        let term: C64 = (0..len).map(|v| amps[v / t][x[v]] * amps[v / t][x[sigma.apply(v)]].conj()).product();
        sum.add(term);
    }
    Ok(sum.value() / perms.len() as f64)
}

/// A uniformly random unique tuple, for spot checks.
pub fn random_unique_tuple<R: Rng + ?Sized>(local: usize, len: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, local, len).into_vec()
}
