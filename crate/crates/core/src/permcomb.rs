//! Outer permutations of the `s x t` slot grid, their block edge patterns,
//! and the congruence classes those patterns define.
//!
//! Slot `(j, i)` is flattened to `j * t + i`. An outer permutation acts on a
//! tuple by `sigma(z)(v) = z(sigma(v))`. Two permutations are congruent when
//! they have the same block edge pattern; this coincides with lying in the same
//! `S_t^s` double coset, which [`double_cosets_match_patterns`] checks
//! exhaustively.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest `st` for which `S_st` is enumerated.
pub const ENUMERATION_CAP: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct OuterPermutation {
    s: usize,
    t: usize,
    map: Vec<usize>,
}

impl OuterPermutation {
    pub fn new(s: usize, t: usize, map: Vec<usize>) -> Result<Self> {
        if map.len() != s * t {
            return Err(Error::DimensionMismatch { expected: s * t, got: map.len() });
        }
        let mut seen = vec![false; map.len()];
        for &v in &map {
            if v >= map.len() || seen[v] {
                return Err(Error::InvalidPermutation(format!("{map:?} is not a permutation")));
            }
            seen[v] = true;
        }
        Ok(Self { s, t, map })
    }

    pub fn identity(s: usize, t: usize) -> Self {
        Self { s, t, map: (0..s * t).collect() }
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn apply(&self, slot: usize) -> usize {
        self.map[slot]
    }

    pub fn block_of(&self, slot: usize) -> usize {
        slot / self.t
    }

    fn check_shape(&self, other: &OuterPermutation) -> Result<()> {
        if (self.s, self.t) != (other.s, other.t) {
            return Err(Error::ShapeMismatch { s1: self.s, t1: self.t, s2: other.s, t2: other.t });
        }
        Ok(())
    }

    /// `self o other`, i.e. `v -> self(other(v))`.
    pub fn compose(&self, other: &OuterPermutation) -> Result<OuterPermutation> {
        self.check_shape(other)?;
        Ok(Self { s: self.s, t: self.t, map: other.map.iter().map(|&v| self.map[v]).collect() })
    }

    pub fn inverse(&self) -> OuterPermutation {
        let mut inv = vec![0; self.map.len()];
        for (v, &w) in self.map.iter().enumerate() {
            inv[w] = v;
        }
        Self { s: self.s, t: self.t, map: inv }
    }

    pub fn is_block_preserving(&self) -> bool {
        self.map.iter().enumerate().all(|(v, &w)| v / self.t == w / self.t)
    }

    /// `sigma(z)`, with `sigma(z)(v) = z(sigma(v))`.
    pub fn act_on<T: Copy>(&self, z: &[T]) -> Vec<T> {
        self.map.iter().map(|&w| z[w]).collect()
    }
}

/// `s x s` matrix of crossing counts; the diagonal holds the non-crossing
/// count of each block and is always derived from the off-diagonal part.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BlockEdgePattern {
    s: usize,
    t: usize,
    counts: Vec<u32>,
}

impl BlockEdgePattern {
    pub fn zero(s: usize, t: usize) -> Self {
        let mut counts = vec![0; s * s];
        for j in 0..s {
            counts[j * s + j] = t as u32;
        }
        Self { s, t, counts }
    }

    /// Builds a pattern from an `s x s` matrix whose diagonal is ignored.
    /// Rejects patterns that no permutation realizes.
    pub fn from_matrix(s: usize, t: usize, rows: &[Vec<u32>]) -> Result<Self> {
        if rows.len() != s || rows.iter().any(|r| r.len() != s) {
            return Err(Error::InfeasiblePattern(format!("expected a {s}x{s} matrix")));
        }
        let mut counts = vec![0u32; s * s];
        for j in 0..s {
            for k in 0..s {
                if j != k {
                    counts[j * s + k] = rows[j][k];
                }
            }
        }
        let mut p = Self { s, t, counts };
        for j in 0..s {
            let (out, inc) = (p.out_degree(j), p.in_degree(j));
            if out != inc {
                return Err(Error::InfeasiblePattern(format!("block {j}: {out} out-crossings vs {inc} in-crossings")));
            }
            if out > t {
                return Err(Error::InfeasiblePattern(format!("block {j}: {out} crossings exceed t={t}")));
            }
            p.counts[j * s + j] = (t - out) as u32;
        }
        Ok(p)
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn get(&self, from: usize, to: usize) -> u32 {
        self.counts[from * self.s + to]
    }

    pub fn out_degree(&self, j: usize) -> usize {
        (0..self.s).filter(|&k| k != j).map(|k| self.get(j, k) as usize).sum()
    }

    pub fn in_degree(&self, j: usize) -> usize {
        (0..self.s).filter(|&k| k != j).map(|k| self.get(k, j) as usize).sum()
    }

    /// Total crossing count `k`.
    pub fn crossings(&self) -> usize {
        (0..self.s).map(|j| self.out_degree(j)).sum()
    }

    pub fn transpose(&self) -> Self {
        let s = self.s;
        Self { s, t: self.t, counts: (0..s * s).map(|idx| self.get(idx % s, idx / s)).collect() }
    }

    pub fn rows(&self) -> Vec<Vec<u32>> {
        self.counts.chunks(self.s).map(|r| r.to_vec()).collect()
    }

    /// Rows with the diagonal zeroed.
    pub fn off_diagonal(&self) -> Vec<Vec<u32>> {
        let mut rows = self.rows();
        for (j, r) in rows.iter_mut().enumerate() {
            r[j] = 0;
        }
        rows
    }

    /// `(t!)^s t^{2k}`, the over-count of permutations with this pattern.
    pub fn class_size_bound(&self) -> f64 {
        factorial(self.t).powi(self.s as i32) * (self.t as f64).powi(2 * self.crossings() as i32)
    }
}

pub fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

/// Number of slots whose image lies in another block.
pub fn crossing_count(sigma: &OuterPermutation) -> usize {
    sigma.map.iter().enumerate().filter(|(v, &w)| v / sigma.t != w / sigma.t).count()
}

pub fn block_edge_pattern(sigma: &OuterPermutation) -> BlockEdgePattern {
    let (s, t) = (sigma.s, sigma.t);
    let mut counts = vec![0u32; s * s];
    for (v, &w) in sigma.map.iter().enumerate() {
        counts[(v / t) * s + w / t] += 1;
    }
    BlockEdgePattern { s, t, counts }
}

pub fn congruent(a: &OuterPermutation, b: &OuterPermutation) -> Result<bool> {
    a.check_shape(b)?;
    Ok(block_edge_pattern(a) == block_edge_pattern(b))
}

fn check_enumerable(s: usize, t: usize) -> Result<()> {
    if s * t > ENUMERATION_CAP {
        return Err(Error::CapExceeded {
            what: "enumerated slot count st",
            requested: (s * t) as u128,
            cap: ENUMERATION_CAP as u128,
        });
    }
    Ok(())
}

/// Every permutation of `0..m`, lexicographically.
pub fn all_permutations(m: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..m).permutations(m)
}

/// Exhaustive pass over `S_st`, grouping by pattern.
pub fn enumerate_classes(s: usize, t: usize) -> Result<BTreeMap<BlockEdgePattern, usize>> {
    check_enumerable(s, t)?;
    let mut classes = BTreeMap::new();
    for map in all_permutations(s * t) {
        let sigma = OuterPermutation { s, t, map };
        *classes.entry(block_edge_pattern(&sigma)).or_insert(0) += 1;
    }
    Ok(classes)
}

/// All permutations with the given pattern, lexicographically.
pub fn class_members(pattern: &BlockEdgePattern) -> Result<Vec<OuterPermutation>> {
    let (s, t) = (pattern.s, pattern.t);
    check_enumerable(s, t)?;
    Ok(all_permutations(s * t)
        .map(|map| OuterPermutation { s, t, map })
        .filter(|sigma| block_edge_pattern(sigma) == *pattern)
        .collect())
}

/// A concrete permutation with the given pattern. Crossing edges leave each
/// block from its lowest slots (ordered by destination block) and arrive at
/// the lowest slots of the destination (ordered by source block); the
/// remaining slots are fixed.
pub fn sample_class_representative(pattern: &BlockEdgePattern) -> Result<OuterPermutation> {
    let (s, t) = (pattern.s, pattern.t);
    // re-validate: the fields are private but a pattern may come from any (s, t)
    let pattern = BlockEdgePattern::from_matrix(s, t, &pattern.off_diagonal())?;
    let mut map = vec![usize::MAX; s * t];
    let mut src_next = vec![0usize; s];
    let mut tgt_next = vec![0usize; s];
    for j in 0..s {
        for k in (0..s).filter(|&k| k != j) {
            for _ in 0..pattern.get(j, k) {
                map[j * t + src_next[j]] = k * t + tgt_next[k];
                src_next[j] += 1;
                tgt_next[k] += 1;
            }
        }
    }
    for (j, &used) in src_next.iter().enumerate() {
        for i in used..t {
            map[j * t + i] = j * t + i;
        }
    }
    OuterPermutation::new(s, t, map)
}

/// The block-preserving subgroup `S_t^s`, as a list of `(t!)^s` elements.
pub fn block_preserving_group(s: usize, t: usize) -> Result<Vec<OuterPermutation>> {
    let size = factorial(t).powi(s as i32);
    if size > 1e6 {
        return Err(Error::CapExceeded {
            what: "block-preserving group order",
            requested: size as u128,
            cap: 1_000_000,
        });
    }
    let block_perms: Vec<Vec<usize>> = all_permutations(t).collect();
    let mut out = Vec::new();
    for choice in (0..s).map(|_| 0..block_perms.len()).multi_cartesian_product() {
        let map =
            choice.iter().enumerate().flat_map(|(j, &c)| block_perms[c].iter().map(move |&i| j * t + i)).collect();
        out.push(OuterPermutation { s, t, map });
    }
    if s == 0 {
        out.push(OuterPermutation::identity(0, t));
    }
    Ok(out)
}

pub fn random_outer_permutation<R: Rng + ?Sized>(s: usize, t: usize, rng: &mut R) -> OuterPermutation {
    let mut map: Vec<usize> = (0..s * t).collect();
    map.shuffle(rng);
    OuterPermutation { s, t, map }
}

pub fn random_block_preserving<R: Rng + ?Sized>(s: usize, t: usize, rng: &mut R) -> OuterPermutation {
    let mut map = Vec::with_capacity(s * t);
    for j in 0..s {
        let mut block: Vec<usize> = (j * t..(j + 1) * t).collect();
        block.shuffle(rng);
        map.extend(block);
    }
    OuterPermutation { s, t, map }
}

/// `{a sigma b : a, b in S_t^s}`, by closure under adjacent in-block
/// transpositions applied on either side.
pub fn double_coset(sigma: &OuterPermutation) -> BTreeSet<Vec<usize>> {
    let (s, t) = (sigma.s, sigma.t);
    let gens: Vec<OuterPermutation> = (0..s)
        .flat_map(|j| (0..t.saturating_sub(1)).map(move |i| (j, i)))
        .map(|(j, i)| {
            let mut map: Vec<usize> = (0..s * t).collect();
            map.swap(j * t + i, j * t + i + 1);
            OuterPermutation { s, t, map }
        })
        .collect();
    let mut seen = BTreeSet::from([sigma.map.clone()]);
    let mut queue = VecDeque::from([sigma.clone()]);
    while let Some(cur) = queue.pop_front() {
        for g in &gens {
            for next in [g.compose(&cur).expect("same shape"), cur.compose(g).expect("same shape")] {
                if seen.insert(next.map.clone()) {
                    queue.push_back(next);
                }
            }
        }
    }
    seen
}

/// Exhaustive check that each pattern class equals the double coset of its
/// representative.
pub fn double_cosets_match_patterns(s: usize, t: usize) -> Result<bool> {
    for pattern in enumerate_classes(s, t)?.keys() {
        let members: BTreeSet<Vec<usize>> = class_members(pattern)?.into_iter().map(|m| m.map).collect();
        if double_coset(&sample_class_representative(pattern)?) != members {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One row of an exported class table.
#[derive(Clone, Debug, Serialize)]
pub struct ClassRow {
    pub pattern: Vec<Vec<u32>>,
    pub k: usize,
    pub class_size: usize,
    pub size_bound: f64,
}

pub fn class_table(s: usize, t: usize) -> Result<Vec<ClassRow>> {
    Ok(enumerate_classes(s, t)?
        .into_iter()
        .map(|(p, size)| ClassRow {
            pattern: p.off_diagonal(),
            k: p.crossings(),
            class_size: size,
            size_bound: p.class_size_bound(),
        })
        .collect())
}

/// Number of classes at each crossing count.
pub fn classes_per_crossing(s: usize, t: usize) -> Result<BTreeMap<usize, usize>> {
    let mut out = BTreeMap::new();
    for p in enumerate_classes(s, t)?.keys() {
        *out.entry(p.crossings()).or_insert(0) += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn perm(s: usize, t: usize, map: &[usize]) -> OuterPermutation {
        OuterPermutation::new(s, t, map.to_vec()).unwrap()
    }

    #[test]
    fn crossing_counts() {
        assert_eq!(crossing_count(&OuterPermutation::identity(3, 2)), 0);
        assert_eq!(crossing_count(&perm(2, 1, &[1, 0])), 2);
        // (1,1) <-> (2,1) in one-based slot notation
        assert_eq!(crossing_count(&perm(2, 2, &[2, 1, 0, 3])), 2);
    }

    #[test]
    fn patterns_of_small_permutations() {
        let id = block_edge_pattern(&OuterPermutation::identity(2, 2));
        assert_eq!(id.rows(), vec![vec![2, 0], vec![0, 2]]);
        let swap = block_edge_pattern(&perm(2, 2, &[2, 3, 0, 1]));
        assert_eq!(swap.get(0, 1), 2);
        assert_eq!(swap.get(1, 0), 2);
        let cycle = block_edge_pattern(&perm(3, 1, &[1, 2, 0]));
        assert_eq!((cycle.get(0, 1), cycle.get(1, 2), cycle.get(2, 0)), (1, 1, 1));
        assert_eq!(cycle.crossings(), 3);
    }

    #[test]
    fn congruence_examples() {
        let id = OuterPermutation::identity(2, 2);
        let within = perm(2, 2, &[1, 0, 2, 3]);
        let swap = perm(2, 2, &[2, 3, 0, 1]);
        assert!(congruent(&id, &id).unwrap());
        assert!(congruent(&id, &within).unwrap());
        assert!(!congruent(&id, &swap).unwrap());
        assert!(congruent(&id, &OuterPermutation::identity(1, 4)).is_err());
    }

    #[test]
    fn enumerate_small_cases() {
        let c = enumerate_classes(2, 1).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[&BlockEdgePattern::zero(2, 1)], 1);
        let c = enumerate_classes(1, 4).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(*c.values().next().unwrap(), 24);
        let c = enumerate_classes(2, 2).unwrap();
        assert_eq!(c.values().sum::<usize>(), 24);
        assert!(enumerate_classes(3, 3).is_err());
    }

    #[test]
    fn representatives() {
        assert_eq!(
            sample_class_representative(&BlockEdgePattern::zero(3, 2)).unwrap(),
            OuterPermutation::identity(3, 2)
        );
        let p = BlockEdgePattern::from_matrix(2, 1, &[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(sample_class_representative(&p).unwrap(), perm(2, 1, &[1, 0]));
        let p = BlockEdgePattern::from_matrix(2, 2, &[vec![0, 2], vec![2, 0]]).unwrap();
        assert_eq!(block_edge_pattern(&sample_class_representative(&p).unwrap()), p);
    }

    #[test]
    fn infeasible_patterns_rejected() {
        assert!(BlockEdgePattern::from_matrix(2, 2, &[vec![0, 1], vec![0, 0]]).is_err());
        assert!(BlockEdgePattern::from_matrix(2, 1, &[vec![0, 2], vec![2, 0]]).is_err());
        assert!(BlockEdgePattern::from_matrix(2, 1, &[vec![0, 1]]).is_err());
    }

    #[test]
    fn transpose_is_inverse_pattern() {
        let sigma = perm(3, 2, &[2, 4, 0, 1, 3, 5]);
        assert_eq!(block_edge_pattern(&sigma.inverse()), block_edge_pattern(&sigma).transpose());
    }

    #[test]
    fn block_group_order() {
        assert_eq!(block_preserving_group(2, 3).unwrap().len(), 36);
        assert!(block_preserving_group(2, 3).unwrap().iter().all(|g| g.is_block_preserving()));
    }

    #[test]
    fn double_coset_of_swap() {
        let sigma = perm(2, 2, &[2, 1, 0, 3]);
        let coset = double_coset(&sigma);
        let members: BTreeSet<_> =
            class_members(&block_edge_pattern(&sigma)).unwrap().into_iter().map(|m| m.map).collect();
        assert_eq!(coset, members);
    }

    proptest! {
        #[test]
        fn pattern_is_double_coset_invariant(s in 1usize..4, t in 1usize..3, seed in any::<u64>()) {
            let mut rng = crate::sampling::SeededStream::new(seed, 0).rng();
            let sigma = random_outer_permutation(s, t, &mut rng);
            let a = random_block_preserving(s, t, &mut rng);
            let b = random_block_preserving(s, t, &mut rng);
            let moved = a.compose(&sigma).unwrap().compose(&b).unwrap();
            prop_assert_eq!(block_edge_pattern(&moved), block_edge_pattern(&sigma));
            prop_assert_ne!(crossing_count(&sigma), 1);
        }

        #[test]
        fn representative_roundtrip(s in 1usize..4, t in 1usize..3, seed in any::<u64>()) {
            let mut rng = crate::sampling::SeededStream::new(seed, 1).rng();
            let p = block_edge_pattern(&random_outer_permutation(s, t, &mut rng));
            prop_assert_eq!(block_edge_pattern(&sample_class_representative(&p).unwrap()), p);
        }
    }
}
