//! Seeded randomness: truly random phase functions and permutations, Haar
//! unitaries, and the keyed instantiations of `F`, `G` and `P`.
//!
//! Every sampler is a deterministic function of its [`SeededStream`]. Keyed
//! primitives are built on ChaCha20 used as a random-access counter-mode
//! stream: the PRF output on `x` is the low bit of keystream word `x`, and the
//! PRP is a swap-or-not shuffle whose round keys and round functions are
//! read from the same keystream on separate stream ids.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::{BinaryPhaseFunction, Construction, InnerPermutation};
use crate::qcore::{StateVector, C64, DENSE_SVD_CAP};

/// Largest `n` for which tables of size `2^n` are materialized.
pub const TABLE_CAP: usize = 24;

pub const KEY_BYTES: usize = 32;

const PRF_STREAM: u64 = 0x0050_5246;
const PRP_KEY_STREAM: u64 = 0x0050_5250 << 16;
const PRP_ROUND_STREAM: u64 = (0x0050_5250 << 16) + 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible random stream identified by `(seed, stream)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededStream {
    pub seed: u64,
    pub stream: u64,
}

impl SeededStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Child stream for worker or trial `label`; distinct labels give
    /// distinct stream ids under the same seed.
    pub fn substream(&self, label: u64) -> SeededStream {
        Self { seed: self.seed, stream: splitmix64(self.stream ^ splitmix64(label)) }
    }
}

/// Key material for the keyed phase function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrfKey(pub [u8; KEY_BYTES]);

/// Key material for the keyed permutation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrpKey(pub [u8; KEY_BYTES]);

fn key_from_hex(s: &str) -> Result<[u8; KEY_BYTES]> {
    let bytes = hex::decode(s.trim()).map_err(|e| Error::InvalidKey(e.to_string()))?;
    bytes.try_into().map_err(|b: Vec<u8>| Error::InvalidKey(format!("expected {KEY_BYTES} bytes, got {}", b.len())))
}

macro_rules! key_impl {
    ($ty:ident) => {
        impl $ty {
            pub fn from_hex(s: &str) -> Result<Self> {
                key_from_hex(s).map(Self)
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
                let mut k = [0u8; KEY_BYTES];
                rng.fill_bytes(&mut k);
                Self(k)
            }
        }
    };
}
key_impl!(PrfKey);
key_impl!(PrpKey);

fn keystream(key: &[u8; KEY_BYTES], stream: u64, word: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::from_seed(*key);
    rng.set_stream(stream);
    rng.set_word_pos(word as u128);
    rng
}

/// Lazily evaluated keyed function `{0,1}^n -> {+1,-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyedPrf {
    key: PrfKey,
    n: usize,
}

impl KeyedPrf {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn key(&self) -> &PrfKey {
        &self.key
    }

    pub fn eval(&self, x: usize) -> i8 {
        let bit = keystream(&self.key.0, PRF_STREAM, x as u64).next_u32() & 1;
        1 - 2 * bit as i8
    }

    /// All `2^n` values, read sequentially from the keystream.
    pub fn to_table(&self) -> Vec<i8> {
        let mut rng = keystream(&self.key.0, PRF_STREAM, 0);
        (0..1usize << self.n).map(|_| 1 - 2 * (rng.next_u32() & 1) as i8).collect()
    }
}

/// Keyed swap-or-not permutation of `{0,1}^n` with `6n + 6` rounds.
///
/// Round `r` pairs `x` with `x ^ K_r` and swaps the pair when the round
/// function evaluated at the larger of the two is 1. Each round is an
/// involution, so the inverse runs the rounds backwards.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyedPrp {
    key: PrpKey,
    n: usize,
    round_keys: Vec<usize>,
}

impl KeyedPrp {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rounds(&self) -> usize {
        self.round_keys.len()
    }

    fn round_bit(&self, round: usize, x: usize) -> bool {
        keystream(&self.key.0, PRP_ROUND_STREAM + round as u64, x as u64).next_u32() & 1 == 1
    }

    fn round(&self, r: usize, x: usize) -> usize {
        let partner = x ^ self.round_keys[r];
        if self.round_bit(r, x.max(partner)) {
            partner
        } else {
            x
        }
    }

    pub fn forward(&self, x: usize) -> usize {
        (0..self.rounds()).fold(x, |x, r| self.round(r, x))
    }

    pub fn inverse(&self, y: usize) -> usize {
        (0..self.rounds()).rev().fold(y, |y, r| self.round(r, y))
    }
}

/// Which family backs `f`, `g` and `pi` in an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backing {
    /// Truly random tables.
    Random,
    /// ChaCha20-keyed PRF/PRP.
    Keyed,
}

impl std::str::FromStr for Backing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Backing::Random),
            "keyed" => Ok(Backing::Keyed),
            other => Err(Error::InvalidParameter(format!("unknown backing `{other}`"))),
        }
    }
}

fn check_table_cap(n: usize) -> Result<()> {
    if n > TABLE_CAP {
        return Err(Error::CapExceeded { what: "table bits", requested: n as u128, cap: TABLE_CAP as u128 });
    }
    Ok(())
}

/// Uniformly random `f: {0,1}^n -> {+1,-1}` as an explicit table.
pub fn sample_binary_function<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<BinaryPhaseFunction> {
    check_table_cap(n)?;
    let dim = 1usize << n;
    let mut table = Vec::with_capacity(dim);
    while table.len() < dim {
        let word = rng.next_u64();
        let take = (dim - table.len()).min(64);
        table.extend((0..take).map(|b| 1 - 2 * ((word >> b) & 1) as i8));
    }
    BinaryPhaseFunction::from_table(n, table)
}

/// Uniformly random bijection of `{0,1}^n` by Fisher-Yates.
pub fn sample_inner_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<InnerPermutation> {
    check_table_cap(n)?;
    let mut forward: Vec<usize> = (0..1usize << n).collect();
    forward.shuffle(rng);
    InnerPermutation::from_forward(n, forward)
}

/// Haar-random `dim x dim` unitary: QR of a Ginibre matrix with the columns
/// of `Q` rephased by the unit phases of `diag(R)`.
pub fn sample_haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DMatrix<C64>> {
    if dim > DENSE_SVD_CAP {
        return Err(Error::CapExceeded { what: "Haar dimension", requested: dim as u128, cap: DENSE_SVD_CAP as u128 });
    }
    if dim == 0 {
        return Err(Error::EmptyInput("Haar unitary of dimension 0"));
    }
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let ginibre = DMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    });
    let qr = ginibre.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for (k, mut col) in q.column_iter_mut().enumerate() {
        let d = r[(k, k)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        col *= phase;
    }
    Ok(q)
}

/// Haar-random pure state (normalized complex Gaussian vector).
pub fn sample_haar_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<StateVector> {
    check_table_cap(n)?;
    let amps = (0..1usize << n).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
    StateVector::normalized(n, amps)
}

pub fn keyed_prf(key: PrfKey, n: usize) -> BinaryPhaseFunction {
    BinaryPhaseFunction::keyed(KeyedPrf { key, n })
}

pub fn keyed_prp(key: PrpKey, n: usize) -> Result<InnerPermutation> {
    if n == 0 || n > 63 {
        return Err(Error::InvalidParameter(format!("keyed permutation needs 1 <= n <= 63, got {n}")));
    }
    let mask = (1usize << n) - 1;
    let rounds = 6 * n + 6;
    let mut ks = keystream(&key.0, PRP_KEY_STREAM, 0);
    let round_keys = (0..rounds).map(|_| ks.next_u64() as usize & mask).collect();
    Ok(InnerPermutation::keyed(KeyedPrp { key, n, round_keys }))
}

/// One instance `(f, g, pi)` of the construction under the given backing.
pub fn sample_construction<R: Rng + ?Sized>(n: usize, backing: Backing, rng: &mut R) -> Result<Construction> {
    match backing {
        Backing::Random => Construction::new(
            sample_binary_function(n, rng)?,
            sample_binary_function(n, rng)?,
            sample_inner_permutation(n, rng)?,
        ),
        Backing::Keyed => Construction::new(
            keyed_prf(PrfKey::random(rng), n),
            keyed_prf(PrfKey::random(rng), n),
            keyed_prp(PrpKey::random(rng), n)?,
        ),
    }
}
