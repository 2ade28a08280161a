//! Streaming CUSUM, Shiryaev-Roberts, SRP and SR-r detectors with single-run and
//! multi-cyclic harnesses.

use crate::model::{GaussianChangeModel, Hypothesis, StatisticMap};
use crate::oc_solver::QuasiStationary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("invalid detector specification: {0}")]
    InvalidSpec(String),
    #[error("likelihood ratio must be positive and finite, got {0}")]
    InvalidLikelihoodRatio(f64),
    #[error("detector has already raised an alarm at n = {0}")]
    AlreadyAlarmed(u64),
    #[error("quasi-stationary distribution is not normalized (total mass {0})")]
    Unnormalized(f64),
    #[error("observation sequence is empty")]
    EmptyObservations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Cusum,
    Sr,
    Srp,
    SrR,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [Self::Cusum, Self::Sr, Self::Srp, Self::SrR];

    pub fn label(self) -> &'static str {
        match self {
            Self::Cusum => "CUSUM",
            Self::Sr => "SR",
            Self::Srp => "SRP",
            Self::SrR => "SR-r",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cusum" => Ok(Self::Cusum),
            "sr" => Ok(Self::Sr),
            "srp" => Ok(Self::Srp),
            "sr-r" | "srr" => Ok(Self::SrR),
            other => Err(format!("unknown procedure '{other}' (expected cusum, sr, srp or sr-r)")),
        }
    }
}

pub fn xi_map(kind: DetectorKind) -> StatisticMap {
    match kind {
        DetectorKind::Cusum => StatisticMap::Cusum,
        _ => StatisticMap::ShiryaevRoberts,
    }
}

/// Inverse-CDF sampler for a piecewise-constant density on `[0, A]`.
#[derive(Debug, Clone)]
pub struct HeadStartSampler {
    threshold: f64,
    cumulative: Vec<f64>,
}

impl HeadStartSampler {
    pub fn new(q: &QuasiStationary) -> Result<Self, DetectorError> {
        let h = q.panel_width();
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(q.density.len());
        for d in &q.density {
            if !(*d >= 0.0) {
                return Err(DetectorError::InvalidSpec(format!("negative density value {d}")));
            }
            acc += d * h;
            cumulative.push(acc);
        }
        if (acc - 1.0).abs() > 1e-8 {
            return Err(DetectorError::Unnormalized(acc));
        }
        Ok(Self {
            threshold: q.threshold,
            cumulative,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cumulative.last().expect("nonempty");
        let u: f64 = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|c| *c <= u).min(self.cumulative.len() - 1);
        let lo = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        let frac = if self.cumulative[i] > lo {
            (u - lo) / (self.cumulative[i] - lo)
        } else {
            0.5
        };
        let h = self.threshold / self.cumulative.len() as f64;
        ((i as f64 + frac) * h).min(self.threshold * (1.0 - f64::EPSILON))
    }
}

/// One draw from the quasi-stationary distribution.
pub fn draw_head_start(q: &QuasiStationary, seed: u64) -> Result<f64, DetectorError> {
    let sampler = HeadStartSampler::new(q)?;
    Ok(sampler.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

#[derive(Debug, Clone)]
pub struct DetectorSpec {
    kind: DetectorKind,
    threshold: f64,
    head_start: f64,
    head_start_sampler: Option<Arc<HeadStartSampler>>,
}

impl DetectorSpec {
    fn check_threshold(threshold: f64) -> Result<(), DetectorError> {
        if threshold > 0.0 && threshold.is_finite() {
            Ok(())
        } else {
            Err(DetectorError::InvalidSpec(format!("threshold must be positive, got {threshold}")))
        }
    }

    /// CUSUM started at `W_0 = 1`.
    pub fn cusum(threshold: f64) -> Result<Self, DetectorError> {
        Self::cusum_from(threshold, 1.0)
    }

    /// CUSUM with an explicit `W_0 <= 1`; every such start is equivalent.
    pub fn cusum_from(threshold: f64, w0: f64) -> Result<Self, DetectorError> {
        Self::check_threshold(threshold)?;
        if !(0.0..=1.0).contains(&w0) {
            return Err(DetectorError::InvalidSpec(format!("CUSUM start must lie in [0, 1], got {w0}")));
        }
        Ok(Self {
            kind: DetectorKind::Cusum,
            threshold,
            head_start: w0,
            head_start_sampler: None,
        })
    }

    pub fn sr(threshold: f64) -> Result<Self, DetectorError> {
        Self::check_threshold(threshold)?;
        Ok(Self {
            kind: DetectorKind::Sr,
            threshold,
            head_start: 0.0,
            head_start_sampler: None,
        })
    }

    pub fn sr_r(threshold: f64, r: f64) -> Result<Self, DetectorError> {
        Self::check_threshold(threshold)?;
        if !(r >= 0.0 && r < threshold) {
            return Err(DetectorError::InvalidSpec(format!(
                "SR-r head start must satisfy 0 <= r < A, got r = {r}, A = {threshold}"
            )));
        }
        Ok(Self {
            kind: DetectorKind::SrR,
            threshold,
            head_start: r,
            head_start_sampler: None,
        })
    }

    pub fn srp(threshold: f64, q: &QuasiStationary) -> Result<Self, DetectorError> {
        Self::check_threshold(threshold)?;
        if (q.threshold - threshold).abs() > 1e-9 * threshold {
            return Err(DetectorError::InvalidSpec(format!(
                "quasi-stationary distribution lives on [0, {}] but the threshold is {threshold}",
                q.threshold
            )));
        }
        Ok(Self {
            kind: DetectorKind::Srp,
            threshold,
            head_start: q.mean,
            head_start_sampler: Some(Arc::new(HeadStartSampler::new(q)?)),
        })
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Fixed starting value; for SRP this is the mean of the head-start law.
    pub fn head_start(&self) -> f64 {
        self.head_start
    }

    pub fn statistic_map(&self) -> StatisticMap {
        xi_map(self.kind)
    }

    /// Starting value, drawn from the quasi-stationary law for SRP.
    pub fn initial_value<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.head_start_sampler {
            Some(s) => s.sample(rng),
            None => self.head_start,
        }
    }

    pub fn start<R: Rng + ?Sized>(&self, rng: &mut R) -> DetectorState {
        DetectorState::new(self.initial_value(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectorState {
    pub statistic: f64,
    pub time_index: u64,
    pub alarmed: bool,
}

impl DetectorState {
    pub fn new(statistic: f64) -> Self {
        Self {
            statistic,
            time_index: 0,
            alarmed: false,
        }
    }
}

/// `statistic <- xi(statistic) * lr`, raising the alarm at the first crossing of the threshold.
pub fn update(
    state: DetectorState,
    spec: &DetectorSpec,
    lr_value: f64,
) -> Result<DetectorState, DetectorError> {
    if state.alarmed {
        return Err(DetectorError::AlreadyAlarmed(state.time_index));
    }
    if !(lr_value > 0.0) || !lr_value.is_finite() {
        return Err(DetectorError::InvalidLikelihoodRatio(lr_value));
    }
    let statistic = spec.statistic_map().apply(state.statistic) * lr_value;
    Ok(DetectorState {
        statistic,
        time_index: state.time_index + 1,
        alarmed: statistic >= spec.threshold,
    })
}

/// First alarm time on `observations`, or `None` if the data run out first.
/// `seed` only matters for SRP, whose head start is random.
pub fn run_single(
    spec: &DetectorSpec,
    model: &GaussianChangeModel,
    observations: &[f64],
    seed: u64,
) -> Result<Option<u64>, DetectorError> {
    if observations.is_empty() {
        return Err(DetectorError::EmptyObservations);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = spec.start(&mut rng);
    for x in observations {
        state = update(state, spec, model.likelihood_ratio(*x))?;
        if state.alarmed {
            return Ok(Some(state.time_index));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlarmLog {
    pub alarm_times: Vec<u64>,
    pub cycle_lengths: Vec<u64>,
    pub statistic_trajectory: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MulticyclicOptions {
    /// Redraw the SRP head start after every alarm instead of reusing the first draw.
    pub redraw_head_start: bool,
    pub record_trajectory: bool,
    pub seed: u64,
}

impl Default for MulticyclicOptions {
    fn default() -> Self {
        Self {
            redraw_head_start: true,
            record_trajectory: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MulticyclicOutcome {
    pub log: AlarmLog,
    pub change_point: u64,
    pub false_alarms: usize,
    /// First alarm time after the change point minus the change point.
    pub detection_delay: Option<u64>,
}

/// Runs the detector over all observations, restarting after each alarm.
/// Alarms at times `<= change_point` are false.
pub fn run_multicyclic(
    spec: &DetectorSpec,
    model: &GaussianChangeModel,
    observations: &[f64],
    change_point: u64,
    options: &MulticyclicOptions,
) -> Result<MulticyclicOutcome, DetectorError> {
    let lrs: Vec<f64> = observations.iter().map(|x| model.likelihood_ratio(*x)).collect();
    run_multicyclic_lr(spec, &lrs, change_point, options)
}

/// As [`run_multicyclic`] on a precomputed likelihood-ratio stream.
pub fn run_multicyclic_lr(
    spec: &DetectorSpec,
    lrs: &[f64],
    change_point: u64,
    options: &MulticyclicOptions,
) -> Result<MulticyclicOutcome, DetectorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let first_start = spec.initial_value(&mut rng);
    let mut state = DetectorState::new(first_start);
    let mut alarm_times = Vec::new();
    let mut cycle_lengths = Vec::new();
    let mut trajectory = options.record_trajectory.then(|| Vec::with_capacity(lrs.len()));
    let mut last_alarm = 0u64;
    for (k, lr) in lrs.iter().enumerate() {
        let n = k as u64 + 1;
        state = update(state, spec, *lr)?;
        if let Some(t) = trajectory.as_mut() {
            t.push(state.statistic);
        }
        if state.alarmed {
            alarm_times.push(n);
            cycle_lengths.push(n - last_alarm);
            last_alarm = n;
            let restart = if options.redraw_head_start {
                spec.initial_value(&mut rng)
            } else {
                first_start
            };
            state = DetectorState::new(restart);
        }
    }
    let false_alarms = alarm_times.iter().filter(|t| **t <= change_point).count();
    let detection_delay = alarm_times
        .iter()
        .find(|t| **t > change_point)
        .map(|t| t - change_point);
    Ok(MulticyclicOutcome {
        log: AlarmLog {
            alarm_times,
            cycle_lengths,
            statistic_trajectory: trajectory,
        },
        change_point,
        false_alarms,
        detection_delay,
    })
}

/// Simulated stopping time with observations drawn pre-change up to `change_point`
/// (never, if `None`) and post-change afterwards; `None` when `cap` steps pass without alarm.
pub fn simulate_stopping_time<R: Rng + ?Sized>(
    spec: &DetectorSpec,
    model: &GaussianChangeModel,
    change_point: Option<u64>,
    cap: u64,
    rng: &mut R,
) -> Option<u64> {
    let xi = spec.statistic_map();
    let mut v = spec.initial_value(rng);
    for n in 1..=cap {
        let hyp = match change_point {
            Some(nu) if n > nu => Hypothesis::Post,
            _ => Hypothesis::Pre,
        };
        let x = model.sample_observation(rng, hyp);
        v = xi.apply(v) * model.likelihood_ratio(x);
        if v >= spec.threshold {
            return Some(n);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McValue {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McValue {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                samples: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            f64::NAN
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            samples: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationOptions {
    pub replications: usize,
    /// Runs longer than this many observations are censored.
    pub cap: u64,
    pub seed: u64,
    /// Change point of the multi-cyclic runs that estimate the stationary delay; skipped when `None`.
    pub stadd_change_point: Option<u64>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            replications: 10_000,
            cap: 100_000_000,
            seed: 0,
            stadd_change_point: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatedOc {
    pub arl: McValue,
    /// `(nu, ADD_nu)`, each conditional on no alarm by `nu`.
    pub add: Vec<(u64, McValue)>,
    pub stadd: Option<McValue>,
    /// Runs that hit the cap, over all estimates.
    pub censored: usize,
}

fn replication_rng(seed: u64, replication: usize, measure: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replication as u64) << 16) | measure as u64);
    rng
}

/// Delay of the first alarm after `change_point` when the detector restarts after every false alarm.
fn simulate_multicyclic_delay<R: Rng + ?Sized>(
    spec: &DetectorSpec,
    model: &GaussianChangeModel,
    change_point: u64,
    cap: u64,
    rng: &mut R,
) -> Option<u64> {
    let xi = spec.statistic_map();
    let mut v = spec.initial_value(rng);
    for n in 1..=cap {
        let hyp = if n > change_point { Hypothesis::Post } else { Hypothesis::Pre };
        let x = model.sample_observation(rng, hyp);
        v = xi.apply(v) * model.likelihood_ratio(x);
        if v >= spec.threshold {
            if n > change_point {
                return Some(n - change_point);
            }
            v = spec.initial_value(rng);
        }
    }
    None
}

/// Monte-Carlo ARL, conditional delays at `change_points` and optionally the stationary delay.
/// Replication `i` of every estimate uses its own stream, so results do not depend on thread count.
pub fn estimate_oc(
    spec: &DetectorSpec,
    model: &GaussianChangeModel,
    change_points: &[u64],
    options: &SimulationOptions,
) -> Result<SimulatedOc, DetectorError> {
    if options.replications < 2 {
        return Err(DetectorError::InvalidSpec("at least two replications are needed".into()));
    }
    if change_points.len() > 1000 {
        return Err(DetectorError::InvalidSpec("at most 1000 change points".into()));
    }
    let reps = options.replications;
    let cap = options.cap;
    let seed = options.seed;
    let run = |measure: usize, f: &(dyn Fn(&mut ChaCha8Rng) -> Option<Option<u64>> + Sync)| {
        let out: Vec<Option<Option<u64>>> = (0..reps)
            .into_par_iter()
            .map(|i| f(&mut replication_rng(seed, i, measure)))
            .collect();
        let censored = out.iter().filter(|o| matches!(o, Some(None))).count();
        let values: Vec<f64> = out.into_iter().flatten().flatten().map(|t| t as f64).collect();
        (McValue::from_samples(&values), censored)
    };
    let (arl, mut censored) = run(0, &|rng| Some(simulate_stopping_time(spec, model, None, cap, rng)));
    let mut add = Vec::with_capacity(change_points.len());
    for (j, &nu) in change_points.iter().enumerate() {
        let (v, c) = run(j + 1, &|rng| match simulate_stopping_time(spec, model, Some(nu), cap, rng) {
            Some(t) if t <= nu => None,
            Some(t) => Some(Some(t - nu)),
            None => Some(None),
        });
        censored += c;
        add.push((nu, v));
    }
    let stadd = options.stadd_change_point.map(|nu| {
        let (v, c) = run(1001, &|rng| Some(simulate_multicyclic_delay(spec, model, nu, cap, rng)));
        censored += c;
        v
    });
    Ok(SimulatedOc {
        arl,
        add,
        stadd,
        censored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_lr(spec: &DetectorSpec, lrs: &[f64]) -> Option<u64> {
        let mut s = spec.start(&mut ChaCha8Rng::seed_from_u64(0));
        for lr in lrs {
            s = update(s, spec, *lr).unwrap();
            if s.alarmed {
                return Some(s.time_index);
            }
        }
        None
    }

    #[test]
    fn xi_maps() {
        assert_eq!(xi_map(DetectorKind::Cusum).apply(0.3), 1.0);
        assert_eq!(xi_map(DetectorKind::Sr).apply(0.0), 1.0);
        assert!((xi_map(DetectorKind::SrR).apply(50.345) - 51.345).abs() < 1e-12);
    }

    #[test]
    fn sr_counts_under_unit_lr() {
        let spec = DetectorSpec::sr(5.5).unwrap();
        assert_eq!(run_lr(&spec, &[1.0; 20]), Some(6));
        let spec = DetectorSpec::sr(5.0).unwrap();
        assert_eq!(run_lr(&spec, &[1.0; 20]), Some(5));
    }

    #[test]
    fn cusum_is_stuck_at_one_under_unit_lr() {
        let spec = DetectorSpec::cusum(3.0).unwrap();
        let mut s = spec.start(&mut ChaCha8Rng::seed_from_u64(0));
        for _ in 0..1000 {
            s = update(s, &spec, 1.0).unwrap();
            assert_eq!(s.statistic, 1.0);
            assert!(!s.alarmed);
        }
    }

    #[test]
    fn sr_r_single_step() {
        let spec = DetectorSpec::sr_r(1811.0, 845.872).unwrap();
        let s = update(DetectorState::new(845.872), &spec, 1.001).unwrap();
        assert!((s.statistic - 847.718872).abs() < 1e-9);
    }

    #[test]
    fn update_errors() {
        let spec = DetectorSpec::sr(2.0).unwrap();
        assert!(update(DetectorState::new(0.0), &spec, 0.0).is_err());
        assert!(update(DetectorState::new(0.0), &spec, f64::NAN).is_err());
        let s = update(DetectorState::new(0.0), &spec, 5.0).unwrap();
        assert!(s.alarmed);
        assert_eq!(update(s, &spec, 1.0), Err(DetectorError::AlreadyAlarmed(1)));
    }

    #[test]
    fn head_start_validation() {
        assert!(DetectorSpec::sr_r(10.0, 10.0).is_err());
        assert!(DetectorSpec::sr_r(10.0, -1.0).is_err());
        assert!(DetectorSpec::cusum_from(10.0, 2.0).is_err());
        assert!(DetectorSpec::sr(0.0).is_err());
    }

    #[test]
    fn run_single_matches_theta_matched_stream() {
        // X^2 chosen so that every LR equals one.
        let md = GaussianChangeModel::new(1000.0, 1001.0, 1.0).unwrap();
        let x = (-md.log_t_min() / md.lr_curvature()).sqrt();
        assert!((md.likelihood_ratio(x) - 1.0).abs() < 1e-12);
        let spec = DetectorSpec::sr(5.0).unwrap();
        assert_eq!(run_single(&spec, &md, &[x; 10], 0).unwrap(), Some(5));
        assert_eq!(run_single(&spec, &md, &[x; 3], 0).unwrap(), None);
        assert!(run_single(&spec, &md, &[], 0).is_err());
    }

    #[test]
    fn multicyclic_at_zero_matches_single_run() {
        let md = GaussianChangeModel::new(1000.0, 1001.0, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<f64> = (0..3000).map(|_| md.sample_observation(&mut rng, Hypothesis::Post)).collect();
        let spec = DetectorSpec::sr(500.0).unwrap();
        let single = run_single(&spec, &md, &obs, 0).unwrap().unwrap();
        let multi = run_multicyclic(&spec, &md, &obs, 0, &MulticyclicOptions::default()).unwrap();
        assert_eq!(multi.log.alarm_times[0], single);
        assert_eq!(multi.false_alarms, 0);
        assert_eq!(multi.detection_delay, Some(single));
    }

    #[test]
    fn cycle_lengths_are_differences() {
        let spec = DetectorSpec::sr(3.0).unwrap();
        let out = run_multicyclic_lr(&spec, &[1.0; 10], 4, &MulticyclicOptions::default()).unwrap();
        assert_eq!(out.log.alarm_times, vec![3, 6, 9]);
        assert_eq!(out.log.cycle_lengths, vec![3, 3, 3]);
        assert_eq!(out.false_alarms, 1);
        assert_eq!(out.detection_delay, Some(2));
        assert!(out.log.statistic_trajectory.is_none());
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("sr-r".parse::<DetectorKind>().unwrap(), DetectorKind::SrR);
        assert_eq!("SR_R".parse::<DetectorKind>().unwrap(), DetectorKind::SrR);
        assert_eq!("CUSUM".parse::<DetectorKind>().unwrap(), DetectorKind::Cusum);
        assert!("ewma".parse::<DetectorKind>().is_err());
    }

    #[test]
    fn point_mass_head_start() {
        let mut density = vec![0.0; 10];
        density[3] = 1.0;
        let q = QuasiStationary {
            lambda: 0.5,
            one_minus_lambda: 0.5,
            threshold: 10.0,
            density,
            mean: 3.5,
            iterations: 1,
        };
        for seed in 0..50 {
            let r = draw_head_start(&q, seed).unwrap();
            assert!((3.0..4.0).contains(&r));
        }
        let mut bad = q.clone();
        bad.density[3] = 2.0;
        assert!(matches!(draw_head_start(&bad, 0), Err(DetectorError::Unnormalized(_))));
    }
}
