//! Closed-form error-rate approximations, bounds and figures of merit for
//! cooperative multiuser detection.

use serde::{Deserialize, Serialize};

use crate::channel::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::mud::{cancellation_order, ActiveSet};
use crate::scalar::{clamp_probability, Arith, Scalar};

/// Largest system the union bound will enumerate error vectors for.
pub const UNION_BOUND_USER_LIMIT: usize = 12;

fn check_probability<T: Arith>(name: &str, p: T) -> Result<T> {
    if p >= T::zero() && p <= T::one() {
        Ok(p)
    } else {
        Err(Error::InvalidProbability {
            name: name.to_string(),
            value: p.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// Gaussian tail `Q(x) = P(N(0,1) > x) = erfc(x/√2)/2`.
pub fn q_function<T: Scalar>(x: T) -> T {
    T::of(0.5) * (x / T::SQRT_2()).erfc()
}

/// `Q(num / sqrt(var))` with the zero-variance limits made explicit.
fn q_of_ratio<T: Scalar>(num: T, var: T) -> T {
    if var > T::zero() {
        q_function(num / var.sqrt())
    } else if num > T::zero() {
        T::zero()
    } else {
        T::of(0.5)
    }
}

/// Successive-cancellation error rates from the interference recursion.
///
/// `amplitudes` must be ascending, so the last user is decoded first. For
/// user `i`, weaker users `j < i` are still present as interference with
/// power `A_j²/M`, and a stronger, already cancelled user `j > i` leaves a
/// residual `4 A_j² P_j / M` when it was decided wrongly. The top user is
/// evaluated first and the recursion walks down.
///
/// With `σ = 0` a user that sees no residual interference has error rate 0.
pub fn ber_sc_recursive<T: Scalar>(amplitudes: &[T], sigma: T, spreading_gain: usize) -> Result<Vec<T>> {
    if spreading_gain == 0 {
        return Err(Error::InvalidArgument("spreading gain must be at least 1".into()));
    }
    if !(sigma >= T::zero()) {
        return Err(Error::InvalidArgument(format!("noise level {sigma} is negative")));
    }
    if amplitudes.iter().any(|a| !(*a >= T::zero())) {
        return Err(Error::InvalidArgument("amplitudes must be non-negative".into()));
    }
    if amplitudes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("amplitudes must be sorted ascending".into()));
    }
    let m = T::of_usize(spreading_gain);
    let four = T::of(4.0);
    let k = amplitudes.len();
    let mut weaker_power: Vec<T> = Vec::with_capacity(k);
    let mut acc = T::zero();
    for &a in amplitudes {
        weaker_power.push(acc);
        acc = acc + a * a;
    }
    let mut ber = vec![T::zero(); k];
    let mut residual = T::zero();
    for i in (0..k).rev() {
        let var = sigma * sigma + weaker_power[i] / m + four * residual / m;
        ber[i] = clamp_probability(q_of_ratio(amplitudes[i], var));
        residual = residual + amplitudes[i] * amplitudes[i] * ber[i];
    }
    Ok(ber)
}

/// Recursion applied to an arbitrary active set, in detector order.
///
/// Returns one entry per slot; inactive slots are zero.
pub fn sc_ber_by_user<T: Scalar>(
    amplitudes: &[T],
    active: &ActiveSet,
    sigma: T,
    spreading_gain: usize,
) -> Result<Vec<T>> {
    let mut ascending = cancellation_order(amplitudes, active);
    ascending.reverse();
    let sorted: Vec<T> = ascending.iter().map(|&k| amplitudes[k]).collect();
    let ber = ber_sc_recursive(&sorted, sigma, spreading_gain)?;
    let mut out = vec![T::zero(); amplitudes.len()];
    for (&k, p) in ascending.iter().zip(ber) {
        out[k] = p;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnionBoundMode {
    /// Every error vector with a nonzero entry for the user.
    AllVectors,
    /// Only indecomposable error vectors.
    Indecomposable,
}

/// Union upper bound on the jointly optimal detector's error rate for
/// `user`:
///
/// `Σ_ε 2^{−w(ε)} Q(‖S(ε)‖/σ)` with `‖S(ε)‖² = εᵀ A R A ε` and `w(ε)` the
/// number of nonzero entries, over `ε ∈ {−1,0,+1}^K` with `ε_user ≠ 0`.
///
/// An error vector is decomposable when its support splits into two
/// nonempty parts `ε¹ + ε² = ε` with `ε¹ᵀ A R A ε² ≥ 0`; in
/// [`UnionBoundMode::Indecomposable`] those are skipped.
pub fn ber_optimal_union_bound<T: Scalar>(
    r: &CorrelationMatrix<T>,
    amplitudes: &[T],
    sigma: T,
    user: usize,
    mode: UnionBoundMode,
) -> Result<T> {
    let k = r.dim();
    if amplitudes.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: amplitudes.len(),
        });
    }
    if k > UNION_BOUND_USER_LIMIT {
        return Err(Error::Capacity {
            what: "union bound",
            size: k,
            limit: UNION_BOUND_USER_LIMIT,
        });
    }
    if user >= k {
        return Err(Error::InvalidArgument(format!("user {user} out of range for {k} users")));
    }
    if !(sigma >= T::zero()) {
        return Err(Error::InvalidArgument(format!("noise level {sigma} is negative")));
    }
    let mut h = vec![vec![T::zero(); k]; k];
    for i in 0..k {
        for j in 0..k {
            h[i][j] = amplitudes[i] * r.get(i, j) * amplitudes[j];
        }
    }

    let mut total = T::zero();
    let mut eps = vec![0i8; k];
    let mut subset_energy: Vec<T> = Vec::new();
    let others: Vec<usize> = (0..k).filter(|&j| j != user).collect();
    let combos = 3usize.pow(others.len() as u32);
    for lead in [1i8, -1] {
        for code in 0..combos {
            eps[user] = lead;
            let mut c = code;
            for &j in &others {
                eps[j] = (c % 3) as i8 - 1;
                c /= 3;
            }
            let support: Vec<usize> = (0..k).filter(|&j| eps[j] != 0).collect();
            let energy = quadratic(&h, &eps, &support);
            if mode == UnionBoundMode::Indecomposable
                && is_decomposable(&h, &eps, &support, energy, &mut subset_energy)
            {
                continue;
            }
            let weight = T::of(0.5).powi(support.len() as i32);
            total = total + weight * q_of_ratio(energy.max(T::zero()).sqrt(), sigma * sigma);
        }
    }
    Ok(total)
}

fn quadratic<T: Scalar>(h: &[Vec<T>], eps: &[i8], support: &[usize]) -> T {
    let mut q = T::zero();
    for &i in support {
        for &j in support {
            let s = T::of(f64::from(eps[i] * eps[j]));
            q = q + s * h[i][j];
        }
    }
    q
}

fn is_decomposable<T: Scalar>(
    h: &[Vec<T>],
    eps: &[i8],
    support: &[usize],
    energy: T,
    subset_energy: &mut Vec<T>,
) -> bool {
    let w = support.len();
    if w < 2 {
        return false;
    }
    // energy of every sub-vector, indexed by a mask over `support`
    let full = (1usize << w) - 1;
    subset_energy.clear();
    subset_energy.resize(1 << w, T::zero());
    for mask in 1..=full {
        let low = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        let l = support[low];
        let el = T::of(f64::from(eps[l]));
        let mut coupling = T::zero();
        let mut bits = rest;
        while bits != 0 {
            let b = bits.trailing_zeros() as usize;
            let j = support[b];
            coupling = coupling + T::of(f64::from(eps[j])) * h[l][j];
            bits &= bits - 1;
        }
        subset_energy[mask] = subset_energy[rest] + h[l][l] + T::of(2.0) * el * coupling;
    }
    let tol = T::epsilon() * T::of(64.0) * (energy.abs() + T::one());
    // the part holding support[0] enumerates each split once
    let mut part = 1usize;
    while part < full {
        if part & 1 == 1 {
            let cross = (energy - subset_energy[part] - subset_energy[full ^ part]) * T::of(0.5);
            if cross >= -tol {
                return true;
            }
        }
        part += 1;
    }
    false
}

/// Maximal-ratio combining of two branch SINRs.
pub fn mrc_sinr<T: Arith>(direct: T, relayed: T) -> T {
    direct + relayed
}

/// Error rate with one forwarding relay: wrong only if the direct decision
/// fails and the relay path (source→relay, relay→base) also fails.
pub fn ber_relay_single<T: Arith>(p_direct: T, p_source_relay: T, p_relay_base: T) -> Result<T> {
    let p_m0 = check_probability("p_m0", p_direct)?;
    let p_mi = check_probability("p_mi", p_source_relay)?;
    let p_i0 = check_probability("p_i0", p_relay_base)?;
    let relay_ok = (T::one() - p_mi) * (T::one() - p_i0);
    Ok(clamp_probability(p_m0 * (T::one() - relay_ok)))
}

/// Per-link error rates feeding the relay formulas. All indices are node
/// indices; a relay `i` is also node `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBerTable<T> {
    /// Node `k` → base station.
    pub p_direct: Vec<T>,
    /// `p_relay_in[k][i]`: node `k` → relay `i`.
    pub p_relay_in: Vec<Vec<T>>,
    /// Relay `i` → base station.
    pub p_relay_out: Vec<T>,
}

impl<T: Arith> LinkBerTable<T> {
    pub fn new(p_direct: Vec<T>, p_relay_in: Vec<Vec<T>>, p_relay_out: Vec<T>) -> Result<Self> {
        let k = p_direct.len();
        for found in std::iter::once(p_relay_in.len())
            .chain(p_relay_in.iter().map(Vec::len))
            .chain(std::iter::once(p_relay_out.len()))
        {
            if found != k {
                return Err(Error::DimensionMismatch { expected: k, found });
            }
        }
        for (n, &p) in p_direct.iter().enumerate() {
            check_probability(&format!("p_direct[{n}]"), p)?;
        }
        for (n, row) in p_relay_in.iter().enumerate() {
            for (i, &p) in row.iter().enumerate() {
                check_probability(&format!("p_relay_in[{n}][{i}]"), p)?;
            }
        }
        for (i, &p) in p_relay_out.iter().enumerate() {
            check_probability(&format!("p_relay_out[{i}]"), p)?;
        }
        Ok(Self {
            p_direct,
            p_relay_in,
            p_relay_out,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.p_direct.len()
    }
}

/// Error rate of `target` when relay `relay` forwards the XOR of
/// `coded_set`.
///
/// The coded path works only if the relay decoded every member, its symbol
/// reached the base station, and the base station decoded every other
/// member directly. Other members' base-station error rates are their
/// direct (first-stage) rates.
pub fn ber_relay_coded<T: Arith>(
    target: usize,
    coded_set: &[usize],
    relay: usize,
    table: &LinkBerTable<T>,
) -> Result<T> {
    if !coded_set.contains(&target) {
        return Err(Error::NotInCodedSet { user: target });
    }
    let k = table.num_nodes();
    if let Some(&bad) = coded_set.iter().chain([&relay]).find(|&&n| n >= k) {
        return Err(Error::InvalidArgument(format!("node {bad} out of range for {k} nodes")));
    }
    let one = T::one();
    let mut path_ok = (one - table.p_relay_in[target][relay]) * (one - table.p_relay_out[relay]);
    for &n in coded_set.iter().filter(|&&n| n != target) {
        path_ok = path_ok * (one - table.p_relay_in[n][relay]) * (one - table.p_direct[n]);
    }
    Ok(clamp_probability(table.p_direct[target] * (one - path_ok)))
}

/// SINR improvement for the second-strongest user when the strongest
/// user's error rate drops from `p_top_old` to `p_top_new`.
///
/// `amplitudes` ascending; a relay scheme with `N` relays typically gives
/// `p_top_new ≈ p_top_old^(N+1)`.
pub fn coding_gain<T: Scalar>(
    amplitudes: &[T],
    sigma: T,
    spreading_gain: usize,
    p_top_old: T,
    p_top_new: T,
) -> Result<T> {
    let k = amplitudes.len();
    if k < 2 {
        return Err(Error::InvalidArgument("coding gain needs at least two users".into()));
    }
    if spreading_gain == 0 {
        return Err(Error::InvalidArgument("spreading gain must be at least 1".into()));
    }
    if amplitudes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("amplitudes must be sorted ascending".into()));
    }
    check_probability("p_top_old", p_top_old)?;
    check_probability("p_top_new", p_top_new)?;
    let m = T::of_usize(spreading_gain);
    let top = amplitudes[k - 1] * amplitudes[k - 1];
    let weaker: T = amplitudes[..k - 2].iter().map(|&a| a * a).sum();
    let floor = sigma * sigma + weaker / m;
    let four = T::of(4.0);
    Ok((floor + four * top * p_top_old / m) / (floor + four * top * p_top_new / m))
}

/// Two users plus one relay at the base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyInputs<T> {
    pub a1: T,
    pub a2: T,
    pub ar: T,
    pub rho: T,
}

/// Asymptotic multiuser efficiency of user 1 under optimal detection when
/// an ideal relay adds its amplitude to one of the two users.
pub fn asymptotic_efficiency<T: Scalar>(inputs: EfficiencyInputs<T>) -> Result<T> {
    let EfficiencyInputs { a1, a2, ar, rho } = inputs;
    if [a1, a2, ar].iter().any(|a| !(*a >= T::zero())) {
        return Err(Error::InvalidArgument("amplitudes must be non-negative".into()));
    }
    if !(rho.abs() <= T::one()) {
        return Err(Error::CorrelationOutOfRange(rho.as_f64()));
    }
    if a1 == T::zero() && a1 + ar == T::zero() {
        return Err(Error::InvalidArgument(
            "efficiency is undefined when user 1 and the relay are both silent".into(),
        ));
    }
    let two = T::of(2.0);
    let rho = rho.abs();
    let term = |ratio: T| T::one() + ratio * ratio - two * rho * ratio;
    let mut eta = T::one();
    if a1 > T::zero() {
        eta = eta.min(term((a2 + ar) / a1));
    }
    eta = eta.min(term(a2 / (a1 + ar)));
    Ok(eta.max(T::zero()))
}

/// Error rate when every one of the `N + 1` independent links must fail.
pub fn mimo_mud_bound<T: Arith>(p_direct: T, p_relay_links: &[T]) -> Result<T> {
    let mut p = check_probability("p_direct", p_direct)?;
    for (i, &q) in p_relay_links.iter().enumerate() {
        p = p * check_probability(&format!("p_relay_links[{i}]"), q)?;
    }
    Ok(p)
}

/// Fraction of slots carrying fresh data when `n` of `k` users relay.
pub fn spectral_efficiency<T: Arith>(k: usize, n: usize) -> Result<T> {
    if 2 * n >= k {
        return Err(Error::InvalidArgument(format!(
            "{n} relays among {k} users leave no spectral efficiency"
        )));
    }
    let of = |v: usize| T::from_usize(v).ok_or_else(|| Error::InvalidArgument(format!("{v} does not convert")));
    Ok(of(k - 2 * n)? / of(k)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayAssignment<T> {
    pub relay: usize,
    pub coded_set: Vec<usize>,
    pub objective: T,
}

/// Sum of error rates over non-relay users when `relay` codes `coded_set`.
pub fn assignment_objective<T: Arith>(
    candidates: &[usize],
    relay: usize,
    coded_set: &[usize],
    table: &LinkBerTable<T>,
) -> Result<T> {
    let mut total = T::zero();
    for j in (0..table.num_nodes()).filter(|j| !candidates.contains(j)) {
        total = total
            + if coded_set.contains(&j) {
                ber_relay_coded(j, coded_set, relay, table)?
            } else {
                table.p_direct[j]
            };
    }
    Ok(total)
}

/// Picks the relay and coded set minimizing the summed error rate of all
/// non-relay users.
///
/// `coded_sets[c]` lists the candidate sets for `candidates[c]`. The search
/// is exhaustive; ties go to the smaller relay index, then to the
/// lexicographically smaller (sorted) set.
pub fn select_relay_assignment<T: Arith>(
    candidates: &[usize],
    coded_sets: &[Vec<Vec<usize>>],
    table: &LinkBerTable<T>,
) -> Result<RelayAssignment<T>> {
    if candidates.len() != coded_sets.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            found: coded_sets.len(),
        });
    }
    let mut pairs: Vec<(usize, Vec<usize>)> = Vec::new();
    for (&relay, sets) in candidates.iter().zip(coded_sets) {
        for set in sets {
            let mut set = set.clone();
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(Error::InvalidArgument(format!("empty coded set for relay {relay}")));
            }
            if let Some(&n) = set.iter().find(|n| candidates.contains(n)) {
                return Err(Error::InvalidArgument(format!(
                    "coded set for relay {relay} contains relay candidate {n}"
                )));
            }
            pairs.push((relay, set));
        }
    }
    pairs.sort();
    let mut best: Option<RelayAssignment<T>> = None;
    for (relay, set) in pairs {
        let objective = assignment_objective(candidates, relay, &set, table)?;
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(RelayAssignment {
                relay,
                coded_set: set,
                objective,
            });
        }
    }
    best.ok_or(Error::EmptyCandidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{fixed_crosscorrelation, gen_crosscorrelation};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson integration of the standard normal density on
    /// `[x, x + 12]`.
    fn q_by_quadrature(x: f64) -> f64 {
        let n = 200_000;
        let h = 12.0 / n as f64;
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(x) + pdf(x + 12.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pdf(x + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        assert!((q_function(1.6448536f64) - 0.05).abs() < 1e-6);
        assert!((q_function(1.6448536) - q_by_quadrature(1.6448536)).abs() < 1e-12);
        for x in [0.5, 1.0, 3.0, 5.0, 8.0] {
            let oracle = q_by_quadrature(x);
            assert_relative_eq!(q_function(x), oracle, max_relative = 1e-9);
        }
        assert!((q_function(3.0f32) - 1.349_898e-3).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn q_symmetry(x in -10.0f64..10.0) {
            prop_assert!((q_function(x) + q_function(-x) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sc_single_user_is_q() {
        let p = ber_sc_recursive(&[1.3], 0.7, 4).unwrap();
        assert_eq!(p, vec![q_function(1.3 / 0.7)]);
    }

    #[test]
    fn sc_vanishing_interference() {
        let a = [0.5f64, 1.0, 2.0];
        let p = ber_sc_recursive(&a, 0.6, 1_000_000_000).unwrap();
        for (pi, ai) in p.iter().zip(a) {
            assert!((pi - q_function(ai / 0.6)).abs() < 1e-6);
        }
    }

    #[test]
    fn sc_two_user_recursion_by_hand() {
        let p = ber_sc_recursive(&[1.0, 2.0], 0.5, 8).unwrap();
        let p2 = q_function(2.0 / (0.25f64 + 1.0 / 8.0).sqrt());
        let p1 = q_function(1.0 / (0.25f64 + 4.0 * 4.0 * p2 / 8.0).sqrt());
        assert_eq!(p, vec![p1, p2]);
    }

    #[test]
    fn sc_rejects_unsorted() {
        assert!(ber_sc_recursive(&[2.0, 1.0], 0.5, 8).is_err());
        assert!(ber_sc_recursive(&[1.0], 0.5, 0).is_err());
    }

    #[test]
    fn sc_noiseless_limit() {
        let p = ber_sc_recursive(&[1.0, 2.0], 0.0, 8).unwrap();
        assert_eq!(p[0], 0.0);
        // the strongest user still sees the weaker one as interference
        assert_eq!(p[1], q_function(2.0 / (1.0f64 / 8.0).sqrt()));
    }

    #[test]
    fn sc_by_user_follows_detector_order() {
        let a = [2.0, 0.5, 1.0];
        let active = ActiveSet::all(3);
        let p = sc_ber_by_user(&a, &active, 0.4, 16).unwrap();
        let sorted = ber_sc_recursive(&[0.5, 1.0, 2.0], 0.4, 16).unwrap();
        assert_eq!(p, vec![sorted[2], sorted[0], sorted[1]]);
        let p = sc_ber_by_user(&a, &ActiveSet::new(vec![0, 2]), 0.4, 16).unwrap();
        assert_eq!(p[1], 0.0);
    }

    proptest! {
        #[test]
        fn sc_outputs_are_probabilities(
            mut a in proptest::collection::vec(0.01f64..5.0, 1..7),
            sigma in 0.05f64..3.0,
            m in 1usize..64,
        ) {
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for p in ber_sc_recursive(&a, sigma, m).unwrap() {
                prop_assert!((0.0..=0.5).contains(&p));
            }
            // no underflow while the top user's SNR stays moderate
            if a[a.len() - 1] / sigma < 30.0 {
                prop_assert!(ber_sc_recursive(&a, sigma, m).unwrap().iter().all(|&p| p > 0.0));
            }
        }

        #[test]
        fn sc_top_user_monotone_in_own_amplitude(
            mut a in proptest::collection::vec(0.01f64..3.0, 2..6),
            bump in 0.0f64..2.0,
            sigma in 0.1f64..2.0,
        ) {
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let k = a.len();
            let before = ber_sc_recursive(&a, sigma, 8).unwrap();
            a[k - 1] += bump;
            let after = ber_sc_recursive(&a, sigma, 8).unwrap();
            prop_assert!(after[k - 1] <= before[k - 1]);
        }
    }

    #[test]
    fn union_bound_single_user() {
        let r = CorrelationMatrix::identity(1);
        for mode in [UnionBoundMode::AllVectors, UnionBoundMode::Indecomposable] {
            let b = ber_optimal_union_bound(&r, &[1.5], 0.5, 0, mode).unwrap();
            assert_relative_eq!(b, q_function(3.0), max_relative = 1e-14);
        }
    }

    #[test]
    fn union_bound_orthogonal_users_is_single_user_q() {
        // with R = I every multi-user error vector decomposes
        let r = CorrelationMatrix::identity(3);
        let a = [1.0, 2.0, 0.7];
        for user in 0..3 {
            let b = ber_optimal_union_bound(&r, &a, 0.5, user, UnionBoundMode::Indecomposable).unwrap();
            assert_relative_eq!(b, q_function(a[user] / 0.5), max_relative = 1e-12);
        }
    }

    #[test]
    fn union_bound_two_users_by_hand() {
        let rho: f64 = 0.8;
        let r = fixed_crosscorrelation(rho).unwrap();
        let (a1, a2, s) = (1.0f64, 1.0f64, 0.3f64);
        let single = q_function(a1 / s);
        let plus = q_function((a1 * a1 + a2 * a2 + 2.0 * rho * a1 * a2).sqrt() / s);
        let minus = q_function((a1 * a1 + a2 * a2 - 2.0 * rho * a1 * a2).sqrt() / s);
        let all = ber_optimal_union_bound(&r, &[a1, a2], s, 0, UnionBoundMode::AllVectors).unwrap();
        assert_relative_eq!(all, single + 0.5 * plus + 0.5 * minus, max_relative = 1e-12);
        // (1, 1) has positive cross-term and decomposes; (1, -1) does not
        let ind = ber_optimal_union_bound(&r, &[a1, a2], s, 0, UnionBoundMode::Indecomposable).unwrap();
        assert_relative_eq!(ind, single + 0.5 * minus, max_relative = 1e-12);
    }

    #[test]
    fn union_bound_modes_ordered_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let k = rng.random_range(1..=5);
            let r: CorrelationMatrix<f64> = gen_crosscorrelation(k, 8, &mut rng);
            let a: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..2.0)).collect();
            let s = rng.random_range(0.2..1.0);
            for user in 0..k {
                let all = ber_optimal_union_bound(&r, &a, s, user, UnionBoundMode::AllVectors).unwrap();
                let ind = ber_optimal_union_bound(&r, &a, s, user, UnionBoundMode::Indecomposable).unwrap();
                assert!(ind >= 0.0 && ind <= all + 1e-15, "{ind} > {all}");
            }
        }
    }

    #[test]
    fn union_bound_guards() {
        let k = UNION_BOUND_USER_LIMIT + 1;
        let r = CorrelationMatrix::identity(k);
        assert!(matches!(
            ber_optimal_union_bound(&r, &vec![1.0; k], 1.0, 0, UnionBoundMode::AllVectors),
            Err(Error::Capacity { .. })
        ));
        let r = CorrelationMatrix::identity(2);
        assert!(ber_optimal_union_bound(&r, &[1.0], 1.0, 0, UnionBoundMode::AllVectors).is_err());
    }

    #[test]
    fn mrc_is_additive() {
        assert_eq!(mrc_sinr(2.0, 3.0), 5.0);
        assert_eq!(mrc_sinr(4.5, 0.0), 4.5);
        assert_eq!(mrc_sinr(1.25, 7.5), mrc_sinr(7.5, 1.25));
    }

    #[test]
    fn relay_single_cases() {
        assert_eq!(ber_relay_single(0.1, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(ber_relay_single(0.1, 1.0, 0.37).unwrap(), 0.1);
        assert!((ber_relay_single(0.1f64, 0.2, 0.3).unwrap() - 0.044).abs() < 1e-15);
        assert!(matches!(
            ber_relay_single(1.2, 0.0, 0.0),
            Err(Error::InvalidProbability { .. })
        ));
    }

    fn table(p_direct: Vec<f64>, p_in: Vec<Vec<f64>>, p_out: Vec<f64>) -> LinkBerTable<f64> {
        LinkBerTable::new(p_direct, p_in, p_out).unwrap()
    }

    #[test]
    fn relay_coded_cases() {
        // nodes 0 (relay), 2 and 3 are users; node 1 is unused
        let t = table(
            vec![0.0, 0.0, 0.1, 0.1],
            vec![vec![0.0; 4], vec![0.0; 4], vec![0.05, 0.0, 0.0, 0.0], vec![0.05, 0.0, 0.0, 0.0]],
            vec![0.02, 0.0, 0.0, 0.0],
        );
        let p = ber_relay_coded(2, &[2, 3], 0, &t).unwrap();
        assert!((p - 0.1 * (1.0 - 0.95 * 0.98 * 0.95 * 0.9)).abs() < 1e-15);
        assert!((p - 0.0203995).abs() < 1e-12);
        assert_eq!(
            ber_relay_coded(2, &[2], 0, &t).unwrap(),
            ber_relay_single(0.1, 0.05, 0.02).unwrap()
        );
        assert_eq!(ber_relay_coded(1, &[2, 3], 0, &t), Err(Error::NotInCodedSet { user: 1 }));

        let mut dead = t.clone();
        dead.p_relay_in[3][0] = 1.0;
        assert_eq!(ber_relay_coded(2, &[2, 3], 0, &dead).unwrap(), 0.1);
    }

    proptest! {
        #[test]
        fn relay_formulas_never_exceed_direct(
            p in proptest::collection::vec(0.0f64..=1.0, 9),
        ) {
            prop_assert!(ber_relay_single(p[0], p[1], p[2]).unwrap() <= p[0]);
            let t = LinkBerTable::new(
                vec![0.0, p[0], p[3], p[4]],
                vec![vec![0.0; 4], vec![p[1], 0.0, 0.0, 0.0], vec![p[5], 0.0, 0.0, 0.0], vec![p[6], 0.0, 0.0, 0.0]],
                vec![p[2], 0.0, 0.0, 0.0],
            ).unwrap();
            let coded = ber_relay_coded(1, &[1, 2, 3], 0, &t).unwrap();
            prop_assert!(coded <= p[0]);
            prop_assert_eq!(
                ber_relay_coded(1, &[1], 0, &t).unwrap(),
                ber_relay_single(p[0], p[1], p[2]).unwrap()
            );
        }
    }

    #[test]
    fn coding_gain_cases() {
        let a = [0.5, 1.0, 3.0];
        assert_eq!(coding_gain(&a, 0.3, 16, 0.01, 0.01).unwrap(), 1.0);
        assert!(coding_gain(&a, 0.3, 16, 0.01, 0.0001).unwrap() > 1.0);
        // dominant strong-user limit
        let g = coding_gain(&[0.0, 0.0, 100.0], 0.01, 1, 1e-2, 1e-4).unwrap();
        assert_relative_eq!(g, 100.0, max_relative = 1e-4);
        assert!(coding_gain(&[1.0], 0.3, 16, 0.1, 0.01).is_err());
    }

    #[test]
    fn efficiency_cases() {
        let e = |a1, a2, ar, rho| asymptotic_efficiency(EfficiencyInputs { a1, a2, ar, rho }).unwrap();
        assert_eq!(e(1.0, 0.7, 0.3, 0.0), 1.0);
        assert!(e(1.0, 0.05, 100.0, 0.8) >= 0.999);
        assert_relative_eq!(e(1.0, 1.0, 100.0, 0.8), 1.0 + 1.0 / 101f64.powi(2) - 1.6 / 101.0, max_relative = 1e-12);
        assert!(e(1.0, 1.0, 1000.0, 0.8) >= 0.998);
        assert_relative_eq!(e(1.0, 1.0, 0.0, 0.8), 0.4, max_relative = 1e-12);
        assert!(asymptotic_efficiency(EfficiencyInputs { a1: 0.0, a2: 1.0, ar: 0.0, rho: 0.5 }).is_err());
        assert!(asymptotic_efficiency(EfficiencyInputs { a1: 1.0, a2: 1.0, ar: 0.0, rho: 1.5 }).is_err());
        // user 1 silent but the relay carries it
        assert!(e(0.0, 1.0, 2.0, 0.8) <= 1.0);
    }

    #[test]
    fn efficiency_nondecreasing_once_relay_dominates() {
        // Each quadratic term bottoms out where its ratio equals rho, so
        // growth in the relay amplitude helps only past both vertices.
        let rho = 0.8f64;
        for a2 in [0.1f64, 0.3, 0.5, 0.8, 1.0] {
            let start = (rho - a2).max(a2 / rho - 1.0).max(0.0);
            let mut prev = 0.0;
            for step in 0..=400 {
                let ar = start + step as f64 * 0.05;
                let eta = asymptotic_efficiency(EfficiencyInputs { a1: 1.0, a2, ar, rho }).unwrap();
                assert!((0.0..=1.0).contains(&eta));
                assert!(eta >= prev - 1e-12, "a2={a2} ar={ar}: {eta} < {prev}");
                prev = eta;
            }
            let far = asymptotic_efficiency(EfficiencyInputs { a1: 1.0, a2, ar: 1e6, rho }).unwrap();
            assert!(far > 1.0 - 1e-5);
        }
    }

    #[test]
    fn efficiency_dips_before_relay_dominates() {
        let e = |a2, ar| asymptotic_efficiency(EfficiencyInputs { a1: 1.0, a2, ar, rho: 0.8 }).unwrap();
        assert!(e(0.1, 0.3) < e(0.1, 0.0));
        assert!(e(1.0, 0.3) < e(1.0, 0.0));
    }

    #[test]
    fn mimo_and_spectral() {
        assert_eq!(mimo_mud_bound(0.3, &[]).unwrap(), 0.3);
        assert_eq!(mimo_mud_bound(0.3, &[0.2, 0.0]).unwrap(), 0.0);
        assert!((mimo_mud_bound(0.1f64, &[0.1, 0.1]).unwrap() - 0.001).abs() < 1e-18);
        assert_eq!(spectral_efficiency::<f64>(10, 1).unwrap(), 0.8);
        assert_eq!(spectral_efficiency::<f64>(7, 0).unwrap(), 1.0);
        assert_eq!(spectral_efficiency::<f64>(1000, 1).unwrap(), 0.998);
        assert!(spectral_efficiency::<f64>(4, 2).is_err());
    }

    #[test]
    fn exact_rational_formulas() {
        type Q = num_rational::Ratio<i64>;
        let r = |n, d| Q::new(n, d);
        assert_eq!(ber_relay_single(r(1, 10), r(2, 10), r(3, 10)).unwrap(), r(44, 1000));
        assert_eq!(mimo_mud_bound(r(1, 10), &[r(1, 10), r(1, 10)]).unwrap(), r(1, 1000));
        assert_eq!(spectral_efficiency::<Q>(10, 1).unwrap(), r(4, 5));
        let t = LinkBerTable::new(
            vec![r(0, 1), r(0, 1), r(1, 10), r(1, 10)],
            vec![vec![r(0, 1); 4], vec![r(0, 1); 4], vec![r(1, 20), r(0, 1), r(0, 1), r(0, 1)], vec![r(1, 20), r(0, 1), r(0, 1), r(0, 1)]],
            vec![r(1, 50), r(0, 1), r(0, 1), r(0, 1)],
        )
        .unwrap();
        assert_eq!(ber_relay_coded(2, &[2, 3], 0, &t).unwrap(), r(203_995, 10_000_000));
        assert!(ber_relay_single(r(3, 2), r(0, 1), r(0, 1)).is_err());
    }

    fn random_table(rng: &mut ChaCha8Rng, k: usize) -> LinkBerTable<f64> {
        let mut p = || rng.random_range(0.0..0.5);
        let p_direct = (0..k).map(|_| p()).collect();
        let p_in = (0..k).map(|_| (0..k).map(|_| p()).collect()).collect();
        let p_out = (0..k).map(|_| p()).collect();
        table(p_direct, p_in, p_out)
    }

    fn nonempty_subsets(items: &[usize]) -> Vec<Vec<usize>> {
        (1u32..(1 << items.len()))
            .map(|mask| {
                items
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask >> b & 1 == 1)
                    .map(|(_, &x)| x)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn selection_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..60 {
            let k = rng.random_range(3..=6);
            let t = random_table(&mut rng, k);
            let n_relays = rng.random_range(1..=(k - 1) / 2);
            let candidates: Vec<usize> = (0..n_relays).collect();
            let users: Vec<usize> = (n_relays..k).collect();
            let sets = vec![nonempty_subsets(&users); n_relays];
            let chosen = select_relay_assignment(&candidates, &sets, &t).unwrap();
            // independent re-enumeration straight from the link formulas
            for &relay in &candidates {
                for set in &sets[0] {
                    let mut obj = 0.0;
                    for &j in &users {
                        obj += if set.contains(&j) {
                            let mut ok = (1.0 - t.p_relay_in[j][relay]) * (1.0 - t.p_relay_out[relay]);
                            for &n in set.iter().filter(|&&n| n != j) {
                                ok *= (1.0 - t.p_relay_in[n][relay]) * (1.0 - t.p_direct[n]);
                            }
                            t.p_direct[j] * (1.0 - ok)
                        } else {
                            t.p_direct[j]
                        };
                    }
                    assert!(chosen.objective <= obj + 1e-12);
                }
            }
        }
    }

    #[test]
    fn selection_prefers_the_worse_direct_link() {
        // relay 0; user 1 has the much worse direct link
        let t = table(
            vec![0.0, 0.2, 0.001],
            vec![vec![0.0; 3], vec![0.01, 0.0, 0.0], vec![0.01, 0.0, 0.0]],
            vec![0.01, 0.0, 0.0],
        );
        let chosen = select_relay_assignment(&[0], &[vec![vec![1], vec![2]]], &t).unwrap();
        assert_eq!(chosen.coded_set, vec![1]);
        assert_eq!(chosen.relay, 0);
    }

    #[test]
    fn selection_trivial_and_empty() {
        let t = table(vec![0.1; 3], vec![vec![0.1; 3]; 3], vec![0.1; 3]);
        let one = select_relay_assignment(&[2], &[vec![vec![0, 1]]], &t).unwrap();
        assert_eq!((one.relay, one.coded_set), (2, vec![0, 1]));
        assert_eq!(select_relay_assignment(&[], &[], &t), Err(Error::EmptyCandidates));
        // identical links: ties resolve to the smaller relay, then set
        let t = table(vec![0.1; 5], vec![vec![0.1; 5]; 5], vec![0.1; 5]);
        let tie = select_relay_assignment(&[1, 0], &[vec![vec![3], vec![2]], vec![vec![3], vec![2]]], &t).unwrap();
        assert_eq!((tie.relay, tie.coded_set), (0, vec![2]));
    }
}
