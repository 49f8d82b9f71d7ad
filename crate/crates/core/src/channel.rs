//! Physical-layer model: geometry-driven amplitudes, signature
//! cross-correlations, correlated matched-filter noise and the
//! matched-filter-bank observation `y = R A b + n`.

use std::ops::{Mul, Neg};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::scalar::Scalar;

/// Antipodal symbol. `Plus` carries bit 0 and `Minus` carries bit 1, so the
/// product of symbols is the XOR of their bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    Plus,
    Minus,
}

impl Symbol {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Symbol::Minus
        } else {
            Symbol::Plus
        }
    }

    pub fn bit(self) -> bool {
        self == Symbol::Minus
    }

    /// Hard decision; zero resolves to `Plus`.
    pub fn from_sign<T: Scalar>(x: T) -> Self {
        if x < T::zero() {
            Symbol::Minus
        } else {
            Symbol::Plus
        }
    }

    pub fn value<T: Scalar>(self) -> T {
        match self {
            Symbol::Plus => T::one(),
            Symbol::Minus => -T::one(),
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Symbol::Plus => 1,
            Symbol::Minus => -1,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_bit(rng.random())
    }
}

impl Mul for Symbol {
    type Output = Symbol;

    fn mul(self, rhs: Symbol) -> Symbol {
        Symbol::from_bit(self.bit() ^ rhs.bit())
    }
}

impl Neg for Symbol {
    type Output = Symbol;

    fn neg(self) -> Symbol {
        Symbol::from_bit(!self.bit())
    }
}

/// Nodes on a line with the base station at the origin.
///
/// Every node, relays included, is indexed `0..K`. Relays use the same
/// transmit power as everybody else.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology<T> {
    base_position: T,
    user_positions: Vec<T>,
    relay_indices: Vec<usize>,
    transmit_power: T,
    pathloss_exponent: T,
}

impl<T: Scalar> Topology<T> {
    pub const DEFAULT_PATHLOSS_EXPONENT: f64 = 3.0;

    pub fn new(user_positions: Vec<T>, relay_indices: Vec<usize>, transmit_power: T) -> Result<Self> {
        Self::with_pathloss(
            user_positions,
            relay_indices,
            transmit_power,
            T::of(Self::DEFAULT_PATHLOSS_EXPONENT),
        )
    }

    pub fn with_pathloss(
        user_positions: Vec<T>,
        mut relay_indices: Vec<usize>,
        transmit_power: T,
        pathloss_exponent: T,
    ) -> Result<Self> {
        let base_position = T::zero();
        let k = user_positions.len();
        if k == 0 {
            return Err(Error::InvalidTopology("no users".into()));
        }
        if let Some(p) = user_positions.iter().find(|p| !(**p > base_position) || !p.is_finite()) {
            return Err(Error::InvalidTopology(format!(
                "user position {p} is not beyond the base station"
            )));
        }
        relay_indices.sort_unstable();
        relay_indices.dedup();
        if let Some(&r) = relay_indices.iter().find(|&&r| r >= k) {
            return Err(Error::InvalidTopology(format!(
                "relay index {r} out of range for {k} nodes"
            )));
        }
        if 2 * relay_indices.len() >= k {
            return Err(Error::InvalidTopology(format!(
                "{} relays among {k} nodes leaves no spectral efficiency",
                relay_indices.len()
            )));
        }
        if !(pathloss_exponent > T::zero()) {
            return Err(Error::InvalidTopology(format!(
                "path-loss exponent {pathloss_exponent} must be positive"
            )));
        }
        if !(transmit_power >= T::zero()) || !transmit_power.is_finite() {
            return Err(Error::InvalidTopology(format!(
                "transmit power {transmit_power} must be finite and non-negative"
            )));
        }
        Ok(Self {
            base_position,
            user_positions,
            relay_indices,
            transmit_power,
            pathloss_exponent,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.user_positions.len()
    }

    pub fn base_position(&self) -> T {
        self.base_position
    }

    pub fn positions(&self) -> &[T] {
        &self.user_positions
    }

    pub fn position(&self, node: usize) -> T {
        self.user_positions[node]
    }

    pub fn relays(&self) -> &[usize] {
        &self.relay_indices
    }

    pub fn is_relay(&self, node: usize) -> bool {
        self.relay_indices.binary_search(&node).is_ok()
    }

    /// Nodes that are not relays, in index order.
    pub fn sources(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&k| !self.is_relay(k)).collect()
    }

    pub fn transmit_power(&self) -> T {
        self.transmit_power
    }

    pub fn pathloss_exponent(&self) -> T {
        self.pathloss_exponent
    }

    pub fn with_transmit_power(&self, transmit_power: T) -> Result<Self> {
        Self::with_pathloss(
            self.user_positions.clone(),
            self.relay_indices.clone(),
            transmit_power,
            self.pathloss_exponent,
        )
    }

    pub fn amplitudes_at_base(&self) -> Result<Vec<T>> {
        build_amplitudes(self, self.base_position)
    }

    /// Amplitudes seen by `node`. Its own slot is zero: a node does not
    /// hear itself.
    pub fn amplitudes_at_node(&self, node: usize) -> Result<Vec<T>> {
        let here = self.user_positions[node];
        (0..self.num_nodes())
            .map(|k| {
                if k == node {
                    Ok(T::zero())
                } else {
                    amplitude(self, k, here)
                }
            })
            .collect()
    }
}

fn amplitude<T: Scalar>(topology: &Topology<T>, node: usize, receiver_position: T) -> Result<T> {
    let d = (topology.user_positions[node] - receiver_position).abs();
    if !(d > T::zero()) {
        return Err(Error::DegenerateGeometry {
            node,
            distance: d.as_f64(),
        });
    }
    Ok((topology.transmit_power / d.powf(topology.pathloss_exponent)).sqrt())
}

/// Received amplitudes `A_k = sqrt(P_t / d_k^e)` at `receiver_position`, so
/// that the received power follows the path-loss law.
pub fn build_amplitudes<T: Scalar>(topology: &Topology<T>, receiver_position: T) -> Result<Vec<T>> {
    (0..topology.num_nodes())
        .map(|k| amplitude(topology, k, receiver_position))
        .collect()
}

/// Binary antipodal spreading sequences of length `M`, packed 64 chips per
/// word. A set bit is a `-1/sqrt(M)` chip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureSet {
    spreading_gain: usize,
    words_per_user: usize,
    chips: Vec<u64>,
}

impl SignatureSet {
    pub fn random<R: RngCore + ?Sized>(num_users: usize, spreading_gain: usize, rng: &mut R) -> Self {
        assert!(spreading_gain >= 1, "spreading gain must be at least 1");
        let words_per_user = spreading_gain.div_ceil(64);
        let tail = spreading_gain % 64;
        let mut chips = Vec::with_capacity(num_users * words_per_user);
        for _ in 0..num_users {
            for w in 0..words_per_user {
                let mut word = rng.next_u64();
                if w + 1 == words_per_user && tail != 0 {
                    word &= (1u64 << tail) - 1;
                }
                chips.push(word);
            }
        }
        Self {
            spreading_gain,
            words_per_user,
            chips,
        }
    }

    pub fn num_users(&self) -> usize {
        self.chips.len() / self.words_per_user
    }

    pub fn spreading_gain(&self) -> usize {
        self.spreading_gain
    }

    fn user(&self, k: usize) -> &[u64] {
        &self.chips[k * self.words_per_user..(k + 1) * self.words_per_user]
    }

    /// Chip `c` of user `k` as ±1.
    pub fn chip(&self, k: usize, c: usize) -> i8 {
        if (self.user(k)[c / 64] >> (c % 64)) & 1 == 1 {
            -1
        } else {
            1
        }
    }

    /// Unnormalized inner product `Σ_c chip_i(c) chip_j(c)`, an integer in
    /// `[-M, M]`.
    pub fn raw_inner_product(&self, i: usize, j: usize) -> i64 {
        let disagreements: u32 = self
            .user(i)
            .iter()
            .zip(self.user(j))
            .map(|(a, b)| (a ^ b).count_ones())
            .sum();
        self.spreading_gain as i64 - 2 * i64::from(disagreements)
    }

    pub fn correlation<T: Scalar>(&self) -> CorrelationMatrix<T> {
        let k = self.num_users();
        let m = T::of_usize(self.spreading_gain);
        let mut entries = SquareMatrix::identity(k);
        for i in 0..k {
            for j in 0..i {
                let r = T::of(self.raw_inner_product(i, j) as f64) / m;
                entries[(i, j)] = r;
                entries[(j, i)] = r;
            }
        }
        CorrelationMatrix {
            entries,
            spreading_gain: Some(self.spreading_gain),
        }
    }
}

/// Signature cross-correlation matrix: symmetric, unit diagonal, PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix<T> {
    entries: SquareMatrix<T>,
    spreading_gain: Option<usize>,
}

impl<T: Scalar> CorrelationMatrix<T> {
    pub fn identity(k: usize) -> Self {
        Self {
            entries: SquareMatrix::identity(k),
            spreading_gain: None,
        }
    }

    /// Validates and wraps a directly specified matrix.
    pub fn from_matrix(entries: SquareMatrix<T>) -> Result<Self> {
        let k = entries.dim();
        let tol = T::psd_tolerance();
        if !entries.is_symmetric(tol) {
            return Err(Error::InvalidCorrelation("not symmetric".into()));
        }
        for i in 0..k {
            if entries[(i, i)] != T::one() {
                return Err(Error::InvalidCorrelation(format!(
                    "diagonal entry {i} is {}, not 1",
                    entries[(i, i)]
                )));
            }
            for j in 0..k {
                if !(entries[(i, j)].abs() <= T::one()) {
                    return Err(Error::InvalidCorrelation(format!(
                        "entry ({i}, {j}) = {} exceeds 1 in magnitude",
                        entries[(i, j)]
                    )));
                }
            }
        }
        entries.psd_cholesky()?;
        Ok(Self {
            entries,
            spreading_gain: None,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        Self::from_matrix(SquareMatrix::from_rows(rows)?)
    }

    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[(i, j)]
    }

    pub fn entries(&self) -> &SquareMatrix<T> {
        &self.entries
    }

    pub fn spreading_gain(&self) -> Option<usize> {
        self.spreading_gain
    }

    pub fn noise_shaper(&self) -> Result<NoiseShaper<T>> {
        Ok(NoiseShaper {
            factor: self.entries.psd_cholesky()?,
        })
    }
}

/// Cross-correlations of `k` random antipodal sequences of length `m`.
pub fn gen_crosscorrelation<T: Scalar, R: RngCore + ?Sized>(
    k: usize,
    m: usize,
    rng: &mut R,
) -> CorrelationMatrix<T> {
    SignatureSet::random(k, m, rng).correlation()
}

/// The two-user matrix `[[1, ρ], [ρ, 1]]`.
pub fn fixed_crosscorrelation<T: Scalar>(rho: T) -> Result<CorrelationMatrix<T>> {
    if !(rho.abs() <= T::one()) {
        return Err(Error::CorrelationOutOfRange(rho.as_f64()));
    }
    let mut entries = SquareMatrix::identity(2);
    entries[(0, 1)] = rho;
    entries[(1, 0)] = rho;
    Ok(CorrelationMatrix {
        entries,
        spreading_gain: None,
    })
}

/// Colours white Gaussian noise to covariance `σ² R` through a triangular
/// factor of `R`.
#[derive(Debug, Clone)]
pub struct NoiseShaper<T> {
    factor: SquareMatrix<T>,
}

impl<T: Scalar> NoiseShaper<T> {
    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    /// `σ L w` for a caller-supplied white vector `w`.
    pub fn shape(&self, sigma: T, white: &[T]) -> Vec<T> {
        self.factor
            .mul_vec(white)
            .into_iter()
            .map(|v| v * sigma)
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, sigma: T, rng: &mut R) -> Vec<T> {
        let white: Vec<T> = (0..self.dim()).map(|_| T::standard_normal(rng)).collect();
        self.shape(sigma, &white)
    }
}

/// One zero-mean Gaussian vector with covariance `σ² R`.
pub fn sample_correlated_noise<T: Scalar, R: Rng + ?Sized>(
    r: &CorrelationMatrix<T>,
    sigma: T,
    rng: &mut R,
) -> Result<Vec<T>> {
    if !(sigma >= T::zero()) {
        return Err(Error::InvalidArgument(format!("noise level {sigma} is negative")));
    }
    Ok(r.noise_shaper()?.sample(sigma, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

/// What every node puts on the air in one stage. `None` is a silent
/// (listening) slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolFrame {
    symbols: Vec<Option<Symbol>>,
    stage: Stage,
}

impl SymbolFrame {
    /// Silent slots must belong to `listening`.
    pub fn new(symbols: Vec<Option<Symbol>>, listening: &[usize], stage: Stage) -> Result<Self> {
        if let Some(k) = symbols
            .iter()
            .enumerate()
            .find(|(k, s)| s.is_none() && !listening.contains(k))
            .map(|(k, _)| k)
        {
            return Err(Error::InvalidSchedule(format!(
                "slot {k} is silent but node {k} is not listening"
            )));
        }
        Ok(Self { symbols, stage })
    }

    /// From `{-1, 0, +1}` entries; zeros must belong to `listening`.
    pub fn from_ints(values: &[i8], listening: &[usize], stage: Stage) -> Result<Self> {
        let symbols = values
            .iter()
            .map(|&v| match v {
                1 => Ok(Some(Symbol::Plus)),
                -1 => Ok(Some(Symbol::Minus)),
                0 => Ok(None),
                other => Err(Error::InvalidArgument(format!("symbol value {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(symbols, listening, stage)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn symbols(&self) -> &[Option<Symbol>] {
        &self.symbols
    }

    pub fn values<T: Scalar>(&self) -> Vec<T> {
        self.symbols
            .iter()
            .map(|s| s.map_or(T::zero(), Symbol::value))
            .collect()
    }

    /// Indices of transmitting slots.
    pub fn active(&self) -> Vec<usize> {
        self.symbols
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.map(|_| k))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Receiver {
    Base,
    Relay(usize),
}

/// Matched-filter-bank outputs at one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub values: Vec<T>,
    pub receiver: Receiver,
}

/// `y = R A b + n` with `A = diag(amplitudes)`.
pub fn matched_filter_receive<T: Scalar>(
    r: &CorrelationMatrix<T>,
    amplitudes: &[T],
    frame: &SymbolFrame,
    noise: &[T],
    receiver: Receiver,
) -> Result<Observation<T>> {
    let k = r.dim();
    for found in [amplitudes.len(), frame.len(), noise.len()] {
        if found != k {
            return Err(Error::DimensionMismatch { expected: k, found });
        }
    }
    let ab: Vec<T> = frame
        .values::<T>()
        .into_iter()
        .zip(amplitudes)
        .map(|(b, &a)| a * b)
        .collect();
    let values: Vec<T> = r
        .entries()
        .mul_vec(&ab)
        .into_iter()
        .zip(noise)
        .map(|(s, &n)| s + n)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite matched-filter output".into()));
    }
    Ok(Observation { values, receiver })
}
