//! Polar code construction, encoding, BPSK/AWGN signal chain and the
//! successive-cancellation (SC) baseline decoder.
//!
//! Index 0 is the first message bit. The generator matrix is
//! `G_N = B_N · F^{⊗n}` with `F = [[1, 0], [1, 1]]` and `B_N` the bit-reversal
//! permutation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Magnitude cap applied to LLRs inside the SC recursion.
pub const LLR_CLAMP: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolarError {
    #[error("code length {0} is not a power of two")]
    LengthNotPowerOfTwo(usize),
    #[error("information bit count {k} out of range 1..={n}")]
    InfoCountOutOfRange { n: usize, k: usize },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("bit value {0} is not 0 or 1")]
    InvalidBit(u8),
    #[error("signal value at index {0} is not finite")]
    NonFiniteSignal(usize),
    #[error("code rate must lie in (0, 1], got {0}")]
    InvalidRate(f64),
    #[error("noise standard deviation must be positive, got {0}")]
    InvalidSigma(f64),
}

/// GF(2) bit sequence; every element is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn new(bits: Vec<u8>) -> Result<Self, PolarError> {
        if let Some(&b) = bits.iter().find(|&&b| b > 1) {
            return Err(PolarError::InvalidBit(b));
        }
        Ok(Self(bits))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    /// Bits of `value`, most significant first, `len` wide.
    pub fn from_integer(value: u64, len: usize) -> Self {
        Self((0..len).map(|i| ((value >> (len - 1 - i)) & 1) as u8).collect())
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self((0..len).map(|_| rng.random_range(0..=1u8)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }

    pub fn xor(&self, other: &BitVector) -> Result<BitVector, PolarError> {
        check_len(self.len(), other.len())?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a ^ b).collect()))
    }

    /// Number of positions where the two vectors differ.
    pub fn hamming_distance(&self, other: &BitVector) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// Real-valued symbol sequence with finite entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalVector(Vec<f64>);

impl SignalVector {
    pub fn new(values: Vec<f64>) -> Result<Self, PolarError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PolarError::NonFiniteSignal(i));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// An (N, K) polar code with its information and frozen index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolarCode {
    n: usize,
    k: usize,
    log2_n: u32,
    info_set: Vec<usize>,
    frozen_set: Vec<usize>,
    frozen_mask: Vec<bool>,
}

impl PolarCode {
    /// Builds the code whose information set holds the `k` synthetic
    /// channels with the smallest Bhattacharyya parameter, starting from
    /// `z = 0.5` and applying `2z - z²` (bit 0) or `z²` (bit 1) for each
    /// index bit from most to least significant. Ties go to the lower index.
    pub fn construct(n: usize, k: usize) -> Result<Self, PolarError> {
        if n == 0 || !n.is_power_of_two() {
            return Err(PolarError::LengthNotPowerOfTwo(n));
        }
        if k == 0 || k > n {
            return Err(PolarError::InfoCountOutOfRange { n, k });
        }
        let z = bhattacharyya_parameters(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
        let mut info_set = order[..k].to_vec();
        info_set.sort_unstable();
        let mut frozen_mask = vec![true; n];
        for &i in &info_set {
            frozen_mask[i] = false;
        }
        let frozen_set = (0..n).filter(|&i| frozen_mask[i]).collect();
        Ok(Self {
            n,
            k,
            log2_n: n.trailing_zeros(),
            info_set,
            frozen_set,
            frozen_mask,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn log2_n(&self) -> u32 {
        self.log2_n
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn info_set(&self) -> &[usize] {
        &self.info_set
    }

    pub fn frozen_set(&self) -> &[usize] {
        &self.frozen_set
    }

    pub fn is_frozen(&self, index: usize) -> bool {
        self.frozen_mask[index]
    }

    /// Scatters `info_bits` into the information positions and applies `G_N`.
    pub fn encode(&self, info_bits: &BitVector) -> Result<BitVector, PolarError> {
        check_len(self.k, info_bits.len())?;
        let mut u = vec![0u8; self.n];
        for (&pos, &bit) in self.info_set.iter().zip(info_bits.as_slice()) {
            u[pos] = bit;
        }
        Ok(BitVector(polar_transform(&u)))
    }

    /// Successive-cancellation decoding of a received BPSK signal.
    ///
    /// Channel LLRs are `2y/σ²`; returns hard decisions on the information
    /// positions in ascending index order.
    pub fn sc_decode(&self, y: &SignalVector, sigma: f64) -> Result<BitVector, PolarError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(PolarError::InvalidSigma(sigma));
        }
        check_len(self.n, y.len())?;
        let scale = 2.0 / (sigma * sigma);
        // x = (u F^{⊗n}) B_N, so undo the bit reversal on the channel side.
        let llr: Vec<f64> = (0..self.n)
            .map(|m| clamp_llr(scale * y.0[bit_reverse(m, self.log2_n)]))
            .collect();
        let mut u_hat = vec![0u8; self.n];
        sc_recurse(&llr, 0, &self.frozen_mask, &mut u_hat);
        Ok(BitVector(self.info_set.iter().map(|&i| u_hat[i]).collect()))
    }
}

/// Bhattacharyya parameter of every synthetic channel for length `n`.
pub fn bhattacharyya_parameters(n: usize) -> Vec<f64> {
    let bits = n.trailing_zeros();
    (0..n)
        .map(|i| {
            (0..bits).rev().fold(0.5, |z, b| {
                if (i >> b) & 1 == 1 {
                    z * z
                } else {
                    2.0 * z - z * z
                }
            })
        })
        .collect()
}

/// Reverses the lowest `bits` bits of `index`.
pub fn bit_reverse(index: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        index.reverse_bits() >> (usize::BITS - bits)
    }
}

/// `u · B_N · F^{⊗n}` over GF(2) for a length that is a power of two.
pub fn polar_transform(u: &[u8]) -> Vec<u8> {
    let n = u.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    let mut x: Vec<u8> = (0..n).map(|j| u[bit_reverse(j, bits)]).collect();
    let mut half = 1;
    while half < n {
        for block in x.chunks_mut(2 * half) {
            let (left, right) = block.split_at_mut(half);
            for (a, b) in left.iter_mut().zip(right.iter()) {
                *a ^= *b;
            }
        }
        half <<= 1;
    }
    x
}

/// BPSK mapping `s = 1 - 2x`.
pub fn bpsk_modulate(x: &BitVector) -> SignalVector {
    SignalVector(x.0.iter().map(|&b| 1.0 - 2.0 * f64::from(b)).collect())
}

/// Noise standard deviation for a given Eb/N0 (dB) and code rate with unit
/// symbol energy: `σ² = 1 / (2 R 10^(EbN0/10))`.
pub fn ebn0_to_sigma(ebn0_db: f64, rate: f64) -> Result<f64, PolarError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(PolarError::InvalidRate(rate));
    }
    Ok((1.0 / (2.0 * rate * 10f64.powf(ebn0_db / 10.0))).sqrt())
}

/// Channel parameters derived from Eb/N0 and the code rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub ebn0_db: f64,
    pub rate: f64,
    pub sigma: f64,
}

impl ChannelConfig {
    pub fn new(ebn0_db: f64, rate: f64) -> Result<Self, PolarError> {
        Ok(Self {
            ebn0_db,
            rate,
            sigma: ebn0_to_sigma(ebn0_db, rate)?,
        })
    }

    /// Symbol SNR `1/σ²` in dB.
    pub fn snr_db(&self) -> f64 {
        -20.0 * self.sigma.log10()
    }
}

/// Adds i.i.d. `N(0, σ²)` noise drawn from `rng` to every symbol.
pub fn awgn_channel<R: Rng + ?Sized>(s: &SignalVector, sigma: f64, rng: &mut R) -> SignalVector {
    let mut y = s.0.clone();
    add_awgn(&mut y, sigma, rng);
    SignalVector(y)
}

/// In-place variant of [`awgn_channel`] for flat batches.
pub fn add_awgn<R: Rng + ?Sized>(values: &mut [f64], sigma: f64, rng: &mut R) {
    for v in values {
        let n: f64 = StandardNormal.sample(rng);
        *v += sigma * n;
    }
}

/// Exact check-node combination `2 atanh(tanh(a/2) tanh(b/2))`.
pub fn boxplus(a: f64, b: f64) -> f64 {
    let t = (clamp_llr(a) / 2.0).tanh() * (clamp_llr(b) / 2.0).tanh();
    clamp_llr(2.0 * t.atanh())
}

fn clamp_llr(v: f64) -> f64 {
    v.clamp(-LLR_CLAMP, LLR_CLAMP)
}

/// Decodes the message bits `u[offset..offset + llr.len()]` of the natural
/// order transform and returns their re-encoded partial sums.
fn sc_recurse(llr: &[f64], offset: usize, frozen: &[bool], u_hat: &mut [u8]) -> Vec<u8> {
    let n = llr.len();
    if n == 1 {
        let bit = if frozen[offset] || llr[0] >= 0.0 { 0 } else { 1 };
        u_hat[offset] = bit;
        return vec![bit];
    }
    let half = n / 2;
    let (l1, l2) = llr.split_at(half);
    let left_llr: Vec<f64> = l1.iter().zip(l2).map(|(&a, &b)| boxplus(a, b)).collect();
    let beta_left = sc_recurse(&left_llr, offset, frozen, u_hat);
    let right_llr: Vec<f64> = l1
        .iter()
        .zip(l2)
        .zip(&beta_left)
        .map(|((&a, &b), &bit)| clamp_llr(b + if bit == 0 { a } else { -a }))
        .collect();
    let beta_right = sc_recurse(&right_llr, offset + half, frozen, u_hat);
    let mut beta = Vec::with_capacity(n);
    beta.extend(beta_left.iter().zip(&beta_right).map(|(a, b)| a ^ b));
    beta.extend_from_slice(&beta_right);
    beta
}

fn check_len(expected: usize, actual: usize) -> Result<(), PolarError> {
    if expected == actual {
        Ok(())
    } else {
        Err(PolarError::LengthMismatch { expected, actual })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense `B_N F^{⊗n}` built from the matrix definitions.
    fn generator_matrix(n: usize) -> Vec<Vec<u8>> {
        let mut f = vec![vec![1u8]];
        while f.len() < n {
            let m = f.len();
            let mut next = vec![vec![0u8; 2 * m]; 2 * m];
            for i in 0..m {
                for j in 0..m {
                    next[i][j] = f[i][j];
                    next[m + i][j] = f[i][j];
                    next[m + i][m + j] = f[i][j];
                }
            }
            f = next;
        }
        let bits = n.trailing_zeros();
        // row i of B_N F = row bitrev(i) of F
        (0..n).map(|i| f[bit_reverse(i, bits)].clone()).collect()
    }

    fn mat_vec(u: &[u8], g: &[Vec<u8>]) -> Vec<u8> {
        (0..g.len())
            .map(|j| u.iter().zip(g).fold(0, |acc, (&ui, row)| acc ^ (ui & row[j])))
            .collect()
    }

    #[test]
    fn construct_small_codes() {
        assert_eq!(PolarCode::construct(2, 2).unwrap().info_set(), &[0, 1]);
        assert_eq!(PolarCode::construct(2, 1).unwrap().info_set(), &[1]);
        assert_eq!(PolarCode::construct(4, 2).unwrap().info_set(), &[2, 3]);
        assert_eq!(PolarCode::construct(8, 4).unwrap().info_set(), &[3, 5, 6, 7]);
    }

    #[test]
    fn construct_16_8_fixture() {
        let code = PolarCode::construct(16, 8).unwrap();
        assert_eq!(code.info_set(), &[7, 9, 10, 11, 12, 13, 14, 15]);
        assert_eq!(code.frozen_set(), &[0, 1, 2, 3, 4, 5, 6, 8]);
        assert_eq!(code, PolarCode::construct(16, 8).unwrap());
    }

    #[test]
    fn construct_rejects_bad_parameters() {
        assert_eq!(PolarCode::construct(12, 4), Err(PolarError::LengthNotPowerOfTwo(12)));
        assert_eq!(PolarCode::construct(0, 0), Err(PolarError::LengthNotPowerOfTwo(0)));
        assert!(matches!(
            PolarCode::construct(8, 0),
            Err(PolarError::InfoCountOutOfRange { .. })
        ));
        assert!(matches!(
            PolarCode::construct(8, 9),
            Err(PolarError::InfoCountOutOfRange { .. })
        ));
    }

    #[test]
    fn encode_examples() {
        let code = PolarCode::construct(16, 8).unwrap();
        let x = code.encode(&BitVector::zeros(8)).unwrap();
        assert_eq!(x, BitVector::zeros(16));

        let code = PolarCode::construct(2, 2).unwrap();
        let x = code.encode(&BitVector::new(vec![0, 1]).unwrap()).unwrap();
        assert_eq!(x.as_slice(), &[1, 1]);

        let code = PolarCode::construct(4, 4).unwrap();
        let x = code.encode(&BitVector::new(vec![1, 0, 0, 0]).unwrap()).unwrap();
        assert_eq!(x.as_slice(), generator_matrix(4)[0].as_slice());
        assert_eq!(x.as_slice(), &[1, 0, 0, 0]);

        assert!(matches!(
            code.encode(&BitVector::zeros(3)),
            Err(PolarError::LengthMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn transform_matches_dense_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 4, 8, 16] {
            let g = generator_matrix(n);
            for _ in 0..20 {
                let u = BitVector::random(n, &mut rng);
                assert_eq!(polar_transform(u.as_slice()), mat_vec(u.as_slice(), &g));
            }
        }
    }

    #[test]
    fn transform_is_involution() {
        for n in [2usize, 4, 8, 16] {
            for value in 0..(1u64 << n.min(12)) {
                let u = BitVector::from_integer(value, n);
                assert_eq!(polar_transform(&polar_transform(u.as_slice())), u.as_slice());
            }
        }
    }

    #[test]
    fn bpsk_mapping() {
        let s = bpsk_modulate(&BitVector::new(vec![0, 0]).unwrap());
        assert_eq!(s.as_slice(), &[1.0, 1.0]);
        let s = bpsk_modulate(&BitVector::new(vec![1]).unwrap());
        assert_eq!(s.as_slice(), &[-1.0]);
        assert_eq!(BitVector::new(vec![0, 2]), Err(PolarError::InvalidBit(2)));
    }

    #[test]
    fn sigma_conversion() {
        assert!((ebn0_to_sigma(0.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
        let s = ebn0_to_sigma(3.0103, 0.5).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        let mut prev = f64::INFINITY;
        for db in -5..15 {
            let s = ebn0_to_sigma(db as f64, 0.5).unwrap();
            assert!(s < prev);
            prev = s;
        }
        assert_eq!(ebn0_to_sigma(1.0, 0.0), Err(PolarError::InvalidRate(0.0)));
        assert_eq!(ebn0_to_sigma(1.0, 1.5), Err(PolarError::InvalidRate(1.5)));
        let ch = ChannelConfig::new(0.0, 0.5).unwrap();
        assert!(ch.snr_db().abs() < 1e-12);
    }

    #[test]
    fn awgn_zero_sigma_is_identity() {
        let s = bpsk_modulate(&BitVector::new(vec![0, 1, 1, 0]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(awgn_channel(&s, 0.0, &mut rng), s);
    }

    #[test]
    fn awgn_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut noise = vec![0.0; 1_000_000];
        add_awgn(&mut noise, 1.0, &mut rng);
        let mean = noise.iter().sum::<f64>() / noise.len() as f64;
        let var = noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / noise.len() as f64;
        assert!(mean.abs() <= 0.005, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "var {var}");
    }

    #[test]
    fn awgn_is_seeded() {
        let s = SignalVector::new(vec![1.0; 16]).unwrap();
        let a = awgn_channel(&s, 0.7, &mut ChaCha8Rng::seed_from_u64(5));
        let b = awgn_channel(&s, 0.7, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn sc_hand_example() {
        // u0 frozen, L = [6, 6]: f-step is irrelevant, g gives 12 -> bit 0.
        let code = PolarCode::construct(2, 1).unwrap();
        let y = SignalVector::new(vec![3.0, 3.0]).unwrap();
        assert_eq!(code.sc_decode(&y, 1.0).unwrap().as_slice(), &[0]);
        let y = SignalVector::new(vec![-3.0, -3.0]).unwrap();
        assert_eq!(code.sc_decode(&y, 1.0).unwrap().as_slice(), &[1]);
    }

    #[test]
    fn sc_noiseless_all_codewords() {
        for (n, k) in [(2, 1), (2, 2), (4, 2), (4, 4), (8, 4), (8, 8), (16, 8), (16, 11)] {
            let code = PolarCode::construct(n, k).unwrap();
            for value in 0..(1u64 << k) {
                let u = BitVector::from_integer(value, k);
                let y = bpsk_modulate(&code.encode(&u).unwrap());
                assert_eq!(code.sc_decode(&y, 0.5).unwrap(), u, "({n},{k}) u={value}");
            }
        }
    }

    #[test]
    fn sc_rejects_bad_sigma() {
        let code = PolarCode::construct(2, 1).unwrap();
        let y = SignalVector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(code.sc_decode(&y, 0.0), Err(PolarError::InvalidSigma(0.0)));
        assert!(code.sc_decode(&y, f64::NAN).is_err());
    }

    #[test]
    fn boxplus_properties() {
        assert!((boxplus(3.0, 1e9) - 3.0).abs() < 1e-9);
        assert_eq!(boxplus(2.0, 0.0), 0.0);
        assert!(boxplus(-2.0, 3.0) < 0.0);
        assert!(boxplus(1e9, 1e9).is_finite());
        assert!(boxplus(2.0, 3.0) < 2.0);
    }

    #[test]
    fn linearity_without_frozen_bits() {
        let code = PolarCode::construct(16, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let u = BitVector::random(16, &mut rng);
            let v = BitVector::random(16, &mut rng);
            let lhs = code.encode(&u.xor(&v).unwrap()).unwrap();
            let rhs = code.encode(&u).unwrap().xor(&code.encode(&v).unwrap()).unwrap();
            assert_eq!(lhs, rhs);
        }
    }
}
