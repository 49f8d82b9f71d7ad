//! Trial orchestration, error-rate statistics and experiment sweeps.
//!
//! Trial `t` of a run with seed `s` always draws from ChaCha8 stream `t`
//! keyed by `s`, so results do not depend on how trials are spread across
//! threads, and every protocol evaluated with the same seed sees the same
//! bits, signatures and noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mud::DetectorKind;
use crate::protocols::{CooperativeSystem, Duplex, ProtocolSpec, TrialOutcome};
use crate::scalar::Scalar;
use crate::{CorrelationMatrix, CorrelationSource, Real, Topology};

/// Two-sided 95% standard normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

const TRIALS_PER_TASK: u64 = 2048;

/// The random stream for one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Error rate with a Wilson score 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerEstimate {
    pub mean: f64,
    pub trials: u64,
    pub errors: u64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

impl BerEstimate {
    pub fn from_counts(errors: u64, trials: u64) -> Self {
        assert!(trials > 0, "an estimate needs at least one trial");
        assert!(errors <= trials, "more errors than trials");
        let n = trials as f64;
        let p = errors as f64 / n;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        let low = if errors == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
        let high = if errors == trials { 1.0 } else { (center + half).clamp(p, 1.0) };
        Self {
            mean: p,
            trials,
            errors,
            ci95_low: low,
            ci95_high: high,
        }
    }

    pub fn half_width(&self) -> f64 {
        (self.ci95_high - self.ci95_low) / 2.0
    }
}

/// Raw event counts; merging is associative and commutative.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrialCounts {
    pub trials: u64,
    pub final_errors: Vec<u64>,
    pub direct_errors: Vec<u64>,
    /// Per scheduled relay: decode errors per node.
    pub relay_decode_errors: Vec<Vec<u64>>,
    pub relay_transmissions: Vec<u64>,
    pub relay_symbol_errors: Vec<u64>,
}

impl TrialCounts {
    fn zeroed(k: usize, relays: usize) -> Self {
        Self {
            trials: 0,
            final_errors: vec![0; k],
            direct_errors: vec![0; k],
            relay_decode_errors: vec![vec![0; k]; relays],
            relay_transmissions: vec![0; relays],
            relay_symbol_errors: vec![0; relays],
        }
    }

    fn record(&mut self, outcome: &TrialOutcome) {
        self.trials += 1;
        for (c, &e) in self.final_errors.iter_mut().zip(&outcome.final_error) {
            *c += u64::from(e);
        }
        for (c, &e) in self.direct_errors.iter_mut().zip(&outcome.direct_error) {
            *c += u64::from(e);
        }
        for (r, link) in outcome.relay_links.iter().enumerate() {
            for (c, &e) in self.relay_decode_errors[r].iter_mut().zip(&link.decode_error) {
                *c += u64::from(e);
            }
            self.relay_transmissions[r] += u64::from(link.transmitted);
            self.relay_symbol_errors[r] += u64::from(link.symbol_error == Some(true));
        }
    }

    fn merge(mut self, other: Self) -> Self {
        fn add(a: &mut [u64], b: &[u64]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.trials += other.trials;
        add(&mut self.final_errors, &other.final_errors);
        add(&mut self.direct_errors, &other.direct_errors);
        for (a, b) in self.relay_decode_errors.iter_mut().zip(&other.relay_decode_errors) {
            add(a, b);
        }
        add(&mut self.relay_transmissions, &other.relay_transmissions);
        add(&mut self.relay_symbol_errors, &other.relay_symbol_errors);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayLinkEstimate {
    pub relay: usize,
    /// `(node, estimate)` for each source: relay decode error rate.
    pub decode: Vec<(usize, BerEstimate)>,
    /// Base-station error rate on the relay symbol, over the trials in which
    /// the relay transmitted. `None` if it never did.
    pub symbol: Option<BerEstimate>,
    pub transmissions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    /// `(node, estimate)` for each evaluated user, after combining.
    pub per_user: Vec<(usize, BerEstimate)>,
    /// Pooled over evaluated users.
    pub mean: BerEstimate,
    /// `(node, estimate)`: stage-one direct decisions at the base station.
    pub direct: Vec<(usize, BerEstimate)>,
    pub relays: Vec<RelayLinkEstimate>,
}

impl BerReport {
    fn from_counts(counts: &TrialCounts, users: &[usize], relays: &[usize]) -> Self {
        let n = counts.trials;
        let per_user = users
            .iter()
            .map(|&k| (k, BerEstimate::from_counts(counts.final_errors[k], n)))
            .collect();
        let pooled: u64 = users.iter().map(|&k| counts.final_errors[k]).sum();
        let mean = BerEstimate::from_counts(pooled, n * users.len().max(1) as u64);
        let direct = users
            .iter()
            .map(|&k| (k, BerEstimate::from_counts(counts.direct_errors[k], n)))
            .collect();
        let relays = relays
            .iter()
            .enumerate()
            .map(|(r, &relay)| RelayLinkEstimate {
                relay,
                decode: users
                    .iter()
                    .map(|&k| (k, BerEstimate::from_counts(counts.relay_decode_errors[r][k], n)))
                    .collect(),
                symbol: (counts.relay_transmissions[r] > 0).then(|| {
                    BerEstimate::from_counts(counts.relay_symbol_errors[r], counts.relay_transmissions[r])
                }),
                transmissions: counts.relay_transmissions[r],
            })
            .collect();
        Self {
            per_user,
            mean,
            direct,
            relays,
        }
    }

    pub fn user(&self, node: usize) -> Option<&BerEstimate> {
        self.per_user.iter().find(|(k, _)| *k == node).map(|(_, e)| e)
    }

    pub fn direct_for(&self, node: usize) -> Option<&BerEstimate> {
        self.direct.iter().find(|(k, _)| *k == node).map(|(_, e)| e)
    }
}

/// Runs trials `0..trials` and accumulates their counts.
pub fn run_trials<T: Scalar>(
    system: &CooperativeSystem<T>,
    trials: u64,
    seed: u64,
    parallel: bool,
) -> Result<TrialCounts> {
    let k = system.topology().num_nodes();
    let relays = system.schedule().relay_slots.len();
    let chunk = |start: u64, end: u64| -> Result<TrialCounts> {
        let mut counts = TrialCounts::zeroed(k, relays);
        for t in start..end {
            let outcome = system.run_trial(&mut trial_rng(seed, t))?;
            counts.record(&outcome);
        }
        Ok(counts)
    };
    let tasks = trials.div_ceil(TRIALS_PER_TASK);
    let bounds = |i: u64| (i * TRIALS_PER_TASK, ((i + 1) * TRIALS_PER_TASK).min(trials));
    if parallel {
        let parts: Vec<TrialCounts> = (0..tasks)
            .into_par_iter()
            .map(|i| {
                let (a, b) = bounds(i);
                chunk(a, b)
            })
            .collect::<Result<_>>()?;
        Ok(parts
            .into_iter()
            .fold(TrialCounts::zeroed(k, relays), TrialCounts::merge))
    } else {
        chunk(0, trials)
    }
}

/// Monte Carlo error rates of every evaluated user.
pub fn estimate_ber<T: Scalar>(system: &CooperativeSystem<T>, trials: u64, seed: u64) -> Result<BerReport> {
    estimate_ber_with(system, trials, seed, true)
}

pub fn estimate_ber_with<T: Scalar>(
    system: &CooperativeSystem<T>,
    trials: u64,
    seed: u64,
    parallel: bool,
) -> Result<BerReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let counts = run_trials(system, trials, seed, parallel)?;
    let relays: Vec<usize> = system.schedule().relay_slots.iter().map(|s| s.relay).collect();
    Ok(BerReport::from_counts(&counts, system.evaluated_users(), &relays))
}

/// Quantity varied across a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Position of the single relay.
    RelayPosition,
    /// Transmit power in dB (`P_t = 10^(value/10)`).
    TransmitPower,
    /// Number of sources, spread evenly over `user_range`.
    NumUsers,
}

impl SweepVariable {
    pub fn label(self) -> &'static str {
        match self {
            SweepVariable::RelayPosition => "relay_position",
            SweepVariable::TransmitPower => "transmit_power",
            SweepVariable::NumUsers => "num_users",
        }
    }
}

/// Fixed parameters of a sweep. Node indices put the sources first, in
/// the order given, followed by the relays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub user_positions: Vec<Real>,
    #[serde(default)]
    pub relay_positions: Vec<Real>,
    pub transmit_power_db: Real,
    pub sigma: Real,
    #[serde(default = "default_pathloss")]
    pub pathloss_exponent: Real,
    #[serde(default = "default_spreading_gain")]
    pub spreading_gain: usize,
    /// Fixed pairwise cross-correlation for every pair of nodes; random
    /// signatures are drawn each trial when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Real>,
    #[serde(default = "default_detector")]
    pub detector: DetectorKind,
    #[serde(default)]
    pub duplex: Duplex,
    /// Interval the sources are spread over when sweeping the user count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_range: Option<[Real; 2]>,
}

fn default_pathloss() -> Real {
    3.0
}

fn default_spreading_gain() -> usize {
    16
}

fn default_detector() -> DetectorKind {
    DetectorKind::SuccessiveCancellation
}

impl Scenario {
    /// Transmit power on a linear scale.
    pub fn transmit_power(&self) -> Real {
        10f64.powf(self.transmit_power_db / 10.0)
    }

    pub fn topology(&self) -> Result<Topology> {
        let k = self.user_positions.len();
        let mut positions = self.user_positions.clone();
        positions.extend_from_slice(&self.relay_positions);
        let relays = (k..positions.len()).collect();
        Topology::with_pathloss(positions, relays, self.transmit_power(), self.pathloss_exponent)
    }

    pub fn correlation_source(&self) -> Result<CorrelationSource> {
        match self.correlation {
            None => Ok(CorrelationSource::RandomSignatures {
                spreading_gain: self.spreading_gain,
            }),
            Some(rho) => {
                let k = self.user_positions.len() + self.relay_positions.len();
                let rows: Vec<Vec<Real>> = (0..k)
                    .map(|i| (0..k).map(|j| if i == j { 1.0 } else { rho }).collect())
                    .collect();
                Ok(CorrelationSource::Fixed(CorrelationMatrix::from_rows(&rows)?))
            }
        }
    }

    pub fn system(&self, spec: &ProtocolSpec) -> Result<crate::CooperativeSystem> {
        CooperativeSystem::new(
            spec,
            self.topology()?,
            self.correlation_source()?,
            self.sigma,
            self.detector,
            self.duplex,
        )
    }

    /// This scenario with the swept variable set to `value`.
    pub fn at(&self, variable: SweepVariable, value: Real) -> Result<Self> {
        let mut s = self.clone();
        match variable {
            SweepVariable::RelayPosition => {
                if s.relay_positions.len() != 1 {
                    return Err(Error::InvalidConfig(format!(
                        "sweeping the relay position needs exactly one relay, found {}",
                        s.relay_positions.len()
                    )));
                }
                s.relay_positions[0] = value;
            }
            SweepVariable::TransmitPower => s.transmit_power_db = value,
            SweepVariable::NumUsers => {
                let [lo, hi] = s.user_range.ok_or_else(|| {
                    Error::InvalidConfig("sweeping the user count needs user_range".into())
                })?;
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::InvalidConfig(format!("user count {value} is not a positive integer")));
                }
                let k = value as usize;
                s.user_positions = (0..k)
                    .map(|i| if k == 1 { lo } else { lo + (hi - lo) * i as Real / (k - 1) as Real })
                    .collect();
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub grid: Vec<Real>,
    pub protocols: Vec<ProtocolSpec>,
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    pub scenario: Scenario,
}

pub const MIN_SWEEP_TRIALS: u64 = 100;

impl SweepConfig {
    /// Checks the config and that every grid point builds.
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("grid is empty".into()));
        }
        if let Some(v) = self.grid.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("grid value {v} is not finite")));
        }
        if self.protocols.is_empty() {
            return Err(Error::InvalidConfig("no protocols listed".into()));
        }
        if self.trials < MIN_SWEEP_TRIALS {
            return Err(Error::InvalidConfig(format!(
                "trials = {} is below the minimum of {MIN_SWEEP_TRIALS}",
                self.trials
            )));
        }
        for &value in &self.grid {
            let scenario = self.scenario.at(self.variable, value)?;
            for spec in &self.protocols {
                scenario.system(spec).map_err(|e| {
                    Error::InvalidConfig(format!("{} = {value}, protocol {spec}: {e}", self.variable.label()))
                })?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: Real,
    pub protocol: ProtocolSpec,
    pub report: BerReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    /// Grid-major, protocols in config order.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, value: Real, protocol: &ProtocolSpec) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value && &r.protocol == protocol)
    }

    /// Rows of one protocol in grid order.
    pub fn series<'a>(&'a self, protocol: &'a ProtocolSpec) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| &r.protocol == protocol)
    }
}

/// Evaluates every (grid value, protocol) pair. All points share the
/// master seed, so they see the same random draws trial by trial.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut rows = Vec::with_capacity(config.grid.len() * config.protocols.len());
    for &value in &config.grid {
        let scenario = config.scenario.at(config.variable, value)?;
        for spec in &config.protocols {
            let system = scenario.system(spec)?;
            let report = estimate_ber(&system, config.trials, config.seed)?;
            rows.push(SweepRow {
                value,
                protocol: spec.clone(),
                report,
            });
        }
    }
    Ok(SweepResult {
        variable: config.variable,
        rows,
    })
}

pub const PRESET_NAMES: [&str; 4] = ["fig3", "fig4", "fig5", "fig6"];

/// Noise standard deviation shared by every preset.
pub const PRESET_SIGMA: Real = 1.0;
/// Transmit powers at which the two-user geometry without a relay runs at
/// a mean error rate near 1e-3 (high) and 1e-1 (low): about 1.04e-3 and
/// 0.107 with the default seed.
pub const HIGH_POWER_DB: Real = 32.5;
pub const LOW_POWER_DB: Real = 23.0;
pub const PRESET_TRIALS: u64 = 100_000;

fn two_user_scenario(power_db: Real, relay: Real) -> Scenario {
    Scenario {
        user_positions: vec![4.0, 6.0],
        relay_positions: vec![relay],
        transmit_power_db: power_db,
        sigma: PRESET_SIGMA,
        pathloss_exponent: default_pathloss(),
        spreading_gain: default_spreading_gain(),
        correlation: None,
        detector: default_detector(),
        duplex: Duplex::Full,
        user_range: None,
    }
}

fn protocols(labels: &[&str]) -> Vec<ProtocolSpec> {
    labels.iter().map(|l| l.parse().expect("preset labels parse")).collect()
}

fn relay_sweep(power_db: Real) -> SweepConfig {
    SweepConfig {
        variable: SweepVariable::RelayPosition,
        grid: (0..13).map(|i| 0.5 + 0.25 * i as Real).collect(),
        protocols: protocols(&["no_relay", "relay_user:1", "relay_user:2", "xor:1+2"]),
        trials: PRESET_TRIALS,
        seed: 0,
        scenario: two_user_scenario(power_db, 1.6),
    }
}

/// The four experiments: `fig3` and `fig4` move the relay at high and low
/// power, `fig5` sweeps power with the relay at 1.6, `fig6` grows the user
/// population.
pub fn preset(name: &str) -> Result<SweepConfig> {
    match name {
        "fig3" => Ok(relay_sweep(HIGH_POWER_DB)),
        "fig4" => Ok(relay_sweep(LOW_POWER_DB)),
        "fig5" => Ok(SweepConfig {
            variable: SweepVariable::TransmitPower,
            grid: (0..=12).map(|i| 10.0 + 2.5 * i as Real).collect(),
            protocols: protocols(&["no_relay", "relay_user:1", "relay_user:2", "xor:1+2", "mimo_bound"]),
            trials: PRESET_TRIALS,
            seed: 0,
            scenario: two_user_scenario(HIGH_POWER_DB, 1.6),
        }),
        "fig6" => Ok(SweepConfig {
            variable: SweepVariable::NumUsers,
            grid: vec![2.0, 3.0, 4.0, 5.0, 6.0],
            protocols: protocols(&["no_relay", "xor_nearest_two"]),
            trials: PRESET_TRIALS,
            seed: 0,
            scenario: Scenario {
                user_range: Some([4.0, 8.0]),
                ..two_user_scenario(HIGH_POWER_DB, 1.6)
            },
        }),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}
