//! The `q`-fold Haar twirl `X -> E_U[U^{(x)q} X U^{dagger (x)q}]`, exactly via
//! the span of slot-permutation operators and by Monte-Carlo.
//!
//! `P_sigma |z> = |sigma(z)>` with `sigma(z)(v) = z(sigma(v))`. Permutation
//! operators are never materialized: both the projection coefficients and
//! the output are index permutations of the `q`-fold tensor index.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oracles::DENSE_DENSITY_CAP;
use crate::par::map_indexed;
use crate::permcomb::all_permutations;
use crate::qcore::{
    checked_pow, trace_distance, tuple_digits_into, tuple_index, DensityOperator, SparseMatrix, C64, ZERO,
};
use crate::sampling::{sample_haar_unitary, SeededStream};
use crate::stats::{MatrixAccumulator, MatrixEstimate};

pub const MAX_FOLD: usize = 6;

/// Precomputed structure of the twirl over `q` copies of dimension `N`.
#[derive(Clone, Debug)]
pub struct TwirlContext {
    local: usize,
    q: usize,
    perms: Vec<Vec<usize>>,
    /// `index_maps[k][c]` is the index of `sigma_k(z_c)`.
    index_maps: Vec<Vec<usize>>,
    gram: DMatrix<f64>,
    cholesky: Cholesky<f64, nalgebra::Dyn>,
}

fn cycle_count(p: &[usize]) -> usize {
    let mut seen = vec![false; p.len()];
    let mut cycles = 0;
    for start in 0..p.len() {
        if !seen[start] {
            cycles += 1;
            let mut v = start;
            while !seen[v] {
                seen[v] = true;
                v = p[v];
            }
        }
    }
    cycles
}

impl TwirlContext {
    pub fn new(local: usize, q: usize) -> Result<Self> {
        if q == 0 || q > MAX_FOLD {
            return Err(Error::InvalidParameter(format!("fold count q={q} outside 1..={MAX_FOLD}")));
        }
        if local < q {
            return Err(Error::SingularGram { dim: local, q });
        }
        let dim = checked_pow(local, q).filter(|&d| d <= DENSE_DENSITY_CAP).ok_or(Error::CapExceeded {
            what: "twirl dimension",
            requested: (local as u128).saturating_pow(q as u32),
            cap: DENSE_DENSITY_CAP as u128,
        })?;
        let perms: Vec<Vec<usize>> = all_permutations(q).collect();
        let index_maps = perms
            .iter()
            .map(|p| {
                let (mut z, mut image) = (vec![0; q], vec![0; q]);
                (0..dim)
                    .map(|c| {
                        tuple_digits_into(c, local, &mut z);
                        for (v, slot) in image.iter_mut().enumerate() {
                            *slot = z[p[v]];
                        }
                        tuple_index(&image, local)
                    })
                    .collect()
            })
            .collect();
        let m = perms.len();
        let gram = DMatrix::from_fn(m, m, |a, b| {
            // cycles of tau sigma^{-1}
            let inv = {
                let mut inv = vec![0; q];
                for (v, &w) in perms[a].iter().enumerate() {
                    inv[w] = v;
                }
                inv
            };
            let composed: Vec<usize> = inv.iter().map(|&v| perms[b][v]).collect();
            (local as f64).powi(cycle_count(&composed) as i32)
        });
        let cholesky = Cholesky::new(gram.clone()).ok_or(Error::SingularGram { dim: local, q })?;
        Ok(Self { local, q, perms, index_maps, gram, cholesky })
    }

    pub fn local_dim(&self) -> usize {
        self.local
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.index_maps[0].len()
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    fn check_dim(&self, x: &DensityOperator) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.dim() });
        }
        Ok(())
    }

    /// `Tr(P_sigma^T X)` for every `sigma`.
    pub fn overlaps(&self, x: &DensityOperator) -> Result<Vec<C64>> {
        self.check_dim(x)?;
        Ok(self.index_maps.iter().map(|map| map.iter().enumerate().map(|(c, &r)| x.get(r, c)).sum()).collect())
    }

    /// Coefficients `a` of the projection onto the span of the `P_sigma`.
    pub fn coefficients(&self, x: &DensityOperator) -> Result<Vec<C64>> {
        let b = self.overlaps(x)?;
        let re = self.cholesky.solve(&DVector::from_iterator(b.len(), b.iter().map(|z| z.re)));
        let im = self.cholesky.solve(&DVector::from_iterator(b.len(), b.iter().map(|z| z.im)));
        Ok(re.iter().zip(im.iter()).map(|(r, i)| C64::new(*r, *i)).collect())
    }

    /// `sum_sigma a_sigma P_sigma`, stored sparse.
    pub fn combination(&self, coeffs: &[C64]) -> SparseMatrix {
        let mut m = SparseMatrix::new(self.dim());
        for (map, &a) in self.index_maps.iter().zip(coeffs) {
            if a != ZERO {
                for (c, &r) in map.iter().enumerate() {
                    m.add(r, c, a);
                }
            }
        }
        m
    }

    /// Largest entry of `P_sigma X - X P_sigma` over all `sigma`.
    pub fn commutator_defect(&self, x: &DensityOperator) -> Result<f64> {
        self.check_dim(x)?;
        let dim = self.dim();
        let mut worst = 0.0f64;
        for map in &self.index_maps {
            let mut inv = vec![0; dim];
            for (c, &r) in map.iter().enumerate() {
                inv[r] = c;
            }
            for (r, &ir) in inv.iter().enumerate() {
                for (c, &mc) in map.iter().enumerate() {
                    // (P X)[r, c] = X[P^{-1} r, c] and (X P)[r, c] = X[r, P c]
                    let d = x.get(ir, c) - x.get(r, mc);
                    worst = worst.max(d.norm());
                }
            }
        }
        Ok(worst)
    }
}

/// The exact Haar `q`-fold twirl of `x`.
pub fn exact_twirl(x: &DensityOperator, ctx: &TwirlContext) -> Result<DensityOperator> {
    let a = ctx.coefficients(x)?;
    Ok(DensityOperator::from_sparse(ctx.combination(&a)))
}

/// `TD(rho, twirl(rho))`.
pub fn almost_invariance_defect(rho: &DensityOperator, ctx: &TwirlContext) -> Result<f64> {
    let tw = exact_twirl(rho, ctx)?;
    trace_distance(rho, &tw)
}

/// `m <- U^{(x)q} m`, one tensor factor at a time.
fn apply_local_left(m: &mut DMatrix<C64>, u: &DMatrix<C64>, local: usize, q: usize) {
    let dim = m.nrows();
    let mut buf = vec![ZERO; local];
    for k in 0..q {
        let stride = local.pow(k as u32);
        for mut col in m.column_iter_mut() {
            for base in (0..dim).filter(|i| (i / stride).is_multiple_of(local)) {
                for (d, b) in buf.iter_mut().enumerate() {
                    *b = col[base + d * stride];
                }
                for r in 0..local {
                    col[base + r * stride] = (0..local).map(|d| u[(r, d)] * buf[d]).sum();
                }
            }
        }
    }
}

/// `U^{(x)q} X U^{dagger (x)q}`.
pub fn conjugate_by_product(x: &DMatrix<C64>, u: &DMatrix<C64>, q: usize) -> DMatrix<C64> {
    let local = u.nrows();
    let mut left = x.clone();
    apply_local_left(&mut left, u, local, q);
    let mut both = left.adjoint();
    apply_local_left(&mut both, u, local, q);
    both.adjoint()
}

/// Monte-Carlo twirl over `samples` Haar unitaries drawn from per-worker
/// substreams of `stream`.
pub fn mc_twirl(
    x: &DensityOperator,
    q: usize,
    local: usize,
    samples: usize,
    stream: &SeededStream,
) -> Result<MatrixEstimate> {
    let dim = checked_pow(local, q).filter(|&d| d <= DENSE_DENSITY_CAP).ok_or(Error::CapExceeded {
        what: "twirl dimension",
        requested: (local as u128).saturating_pow(q as u32),
        cap: DENSE_DENSITY_CAP as u128,
    })?;
    if x.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.dim() });
    }
    if samples == 0 {
        return Err(Error::EmptyInput("zero samples"));
    }
    let dense = x.to_dense();
    let workers = 16.min(samples);
    let partials = map_indexed(workers, |w| {
        let mut rng = stream.substream(w as u64).rng();
        let mut acc = MatrixAccumulator::new(dim);
        let mine = samples / workers + usize::from(w < samples % workers);
        for _ in 0..mine {
            let u = sample_haar_unitary(local, &mut rng).expect("dimension checked");
            acc.push(&conjugate_by_product(&dense, &u, q));
        }
        acc
    });
    let mut acc = MatrixAccumulator::new(dim);
    for p in &partials {
        acc.merge(p);
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{tensor_product_state, StateVector, ONE};
    use crate::sampling::sample_haar_state;
    use crate::targets::build_rho_uni;

    fn random_density(n: usize, seed: u64) -> DensityOperator {
        let mut rng = SeededStream::new(seed, 0).rng();
        let a = sample_haar_state(n, &mut rng).unwrap().density().into_dense();
        let b = sample_haar_state(n, &mut rng).unwrap().density().into_dense();
        DensityOperator::from_dense(a * C64::new(0.3, 0.0) + b * C64::new(0.7, 0.0)).unwrap()
    }

    #[test]
    fn gram_matches_direct_count() {
        let ctx = TwirlContext::new(3, 3).unwrap();
        for (a, ma) in ctx.index_maps.iter().enumerate() {
            for (b, mb) in ctx.index_maps.iter().enumerate() {
                let count = ma.iter().zip(mb).filter(|(x, y)| x == y).count();
                assert_eq!(ctx.gram()[(a, b)], count as f64);
            }
        }
    }

    #[test]
    fn singular_and_capped_contexts_refused() {
        assert_eq!(TwirlContext::new(2, 3).unwrap_err(), Error::SingularGram { dim: 2, q: 3 });
        assert!(matches!(TwirlContext::new(128, 2), Err(Error::CapExceeded { .. })));
        assert!(TwirlContext::new(8, 7).is_err());
    }

    #[test]
    fn single_fold_gives_maximally_mixed() {
        let ctx = TwirlContext::new(8, 1).unwrap();
        let rho = random_density(3, 4);
        let tw = exact_twirl(&rho, &ctx).unwrap();
        assert!(tw.max_abs_diff(&DensityOperator::maximally_mixed(8)).unwrap() < 1e-10);
    }

    #[test]
    fn maximally_mixed_is_fixed() {
        let ctx = TwirlContext::new(4, 3).unwrap();
        let mm = DensityOperator::maximally_mixed(64);
        assert!(exact_twirl(&mm, &ctx).unwrap().max_abs_diff(&mm).unwrap() < 1e-13);
        assert!(almost_invariance_defect(&mm, &ctx).unwrap() < 1e-10);
    }

    #[test]
    fn idempotent_commutant_trace_hermitian() {
        let ctx = TwirlContext::new(4, 2).unwrap();
        let rho = random_density(4, 9);
        let once = exact_twirl(&rho, &ctx).unwrap();
        let twice = exact_twirl(&once, &ctx).unwrap();
        assert!(once.max_abs_diff(&twice).unwrap() < 1e-10);
        assert!(ctx.commutator_defect(&once).unwrap() < 1e-10);
        assert!(ctx.commutator_defect(&rho).unwrap() > 1e-3);
        assert!((once.trace() - ONE).norm() < 1e-12);
        assert!(once.is_hermitian(1e-12));
    }

    #[test]
    fn twirl_of_two_copy_basis_state() {
        // |00><00| twirls to the symmetric projector over its dimension
        let ctx = TwirlContext::new(4, 2).unwrap();
        let z = tensor_product_state(&[StateVector::basis(2, 0).unwrap(), StateVector::basis(2, 0).unwrap()]).unwrap();
        let rho = z.density();
        let tw = exact_twirl(&rho, &ctx).unwrap().to_dense();
        let sym = 4.0 * 5.0 / 2.0;
        for r in 0..16 {
            for c in 0..16 {
                let (a, b) = (r % 4, r / 4);
                let id = if r == c { 0.5 } else { 0.0 };
                let swap = if c == b + 4 * a { 0.5 } else { 0.0 };
                assert!((tw[(r, c)] - C64::new((id + swap) / sym, 0.0)).norm() < 1e-13);
            }
        }
        assert!(almost_invariance_defect(&rho, &ctx).unwrap() > 0.5);
    }

    #[test]
    fn rho_uni_defect_closed_form() {
        // twirl(rho_uni) = (N I - SWAP) / ((N+1) N (N-1)), at distance 1/(N+1)
        for n in 2..=4 {
            let local = 1usize << n;
            let ctx = TwirlContext::new(local, 2).unwrap();
            let rho = build_rho_uni(n, 2, 1).unwrap();
            let d = almost_invariance_defect(&rho, &ctx).unwrap();
            assert!((d - 1.0 / (local as f64 + 1.0)).abs() < 1e-12, "n={n}: {d}");
        }
    }

    #[test]
    fn mc_single_sample_is_a_state() {
        let rho = random_density(2, 1);
        let est = mc_twirl(&rho, 1, 4, 1, &SeededStream::new(3, 0)).unwrap();
        let tr: C64 = est.mean.diagonal().iter().sum();
        assert!((tr - ONE).norm() < 1e-10);
    }

    #[test]
    fn mc_agrees_with_exact() {
        let ctx = TwirlContext::new(4, 2).unwrap();
        let rho = random_density(4, 2);
        let exact = exact_twirl(&rho, &ctx).unwrap().to_dense();
        let est = mc_twirl(&rho, 2, 4, 10_000, &SeededStream::new(5, 0)).unwrap();
        assert!(est.max_z_score(&exact, 1e-12) < 5.0);
    }

    #[test]
    fn mc_error_scales_as_inverse_root() {
        let rho = random_density(4, 2);
        let a = mc_twirl(&rho, 2, 4, 1000, &SeededStream::new(6, 0)).unwrap();
        let b = mc_twirl(&rho, 2, 4, 4000, &SeededStream::new(6, 1)).unwrap();
        let ratio = a.mean_standard_error() / b.mean_standard_error();
        assert!((1.6..=2.4).contains(&ratio), "{ratio}");
    }
}
