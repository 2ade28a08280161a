//! Packet-rate traces: ingestion, window statistics, goodness of fit, the attack-diminishing
//! transform, surrogate traces and calibrated multi-cyclic detection.

use crate::design::{calibrate_threshold, CalibrationOptions, CalibrationResult, DesignError};
use crate::detectors::{run_multicyclic, AlarmLog, DetectorError, DetectorKind, DetectorSpec, MulticyclicOptions};
use crate::model::{GaussianChangeModel, StatisticMap};
use crate::oc_solver::{OcSolution, SolverError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use thiserror::Error;

pub const TRACE_HEADER: [&str; 2] = ["time_s", "packets_per_s"];
/// Allowed deviation of a timestamp step from the sampling interval, in seconds.
pub const SPACING_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: malformed row: {detail}")]
    Malformed { line: u64, detail: String },
    #[error("line {line}: timestamp {time} does not increase")]
    NonMonotone { line: u64, time: f64 },
    #[error("line {line}: step {step} s differs from the sampling interval {interval} s")]
    NonUniform { line: u64, step: f64, interval: f64 },
    #[error("window {start}..{end} is too short: at least {needed} samples are needed")]
    WindowTooShort { start: usize, end: usize, needed: usize },
    #[error("window {start}..{end} lies outside the {len}-sample series")]
    WindowOutOfRange { start: usize, end: usize, len: usize },
    #[error("attack window has zero variance")]
    ZeroVariance,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSeries {
    pub start_time: f64,
    pub sample_interval: f64,
    pub values: Vec<f64>,
    /// Index of the first post-change sample.
    pub onset: Option<usize>,
    /// Index one past the last post-change sample.
    pub offset: Option<usize>,
}

impl TraceSeries {
    pub fn new(sample_interval: f64, values: Vec<f64>) -> Result<Self, TraceError> {
        if !(sample_interval > 0.0) || !sample_interval.is_finite() {
            return Err(TraceError::InvalidArgument(format!(
                "sample interval {sample_interval} must be positive"
            )));
        }
        if values.is_empty() {
            return Err(TraceError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TraceError::InvalidArgument(format!("sample {i} is not finite")));
        }
        Ok(Self {
            start_time: 0.0,
            sample_interval,
            values,
            onset: None,
            offset: None,
        })
    }

    pub fn with_labels(mut self, onset: Option<usize>, offset: Option<usize>) -> Self {
        self.onset = onset;
        self.offset = offset;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start_time + i as f64 * self.sample_interval
    }

    /// The change point in detector time: observations `1..=nu` are pre-change.
    pub fn change_point(&self) -> Option<u64> {
        self.onset.map(|i| i as u64)
    }
}

fn parse_field(field: &str, line: u64, name: &str) -> Result<f64, TraceError> {
    let v: f64 = field.trim().parse().map_err(|_| TraceError::Malformed {
        line,
        detail: format!("{name} {field:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(TraceError::Malformed {
            line,
            detail: format!("{name} {field:?} is not finite"),
        });
    }
    Ok(v)
}

/// Parses a trace CSV; the `time_s,packets_per_s` header is optional.
pub fn read_trace<R: Read>(reader: R) -> Result<TraceSeries, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| TraceError::Malformed {
            line: e.position().map_or(k as u64 + 1, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.len() != 2 {
            return Err(TraceError::Malformed {
                line,
                detail: format!("expected 2 fields, found {}", record.len()),
            });
        }
        if k == 0 && record.get(0) == Some(TRACE_HEADER[0]) {
            if record.get(1) != Some(TRACE_HEADER[1]) {
                return Err(TraceError::Malformed {
                    line,
                    detail: format!("expected header {}", TRACE_HEADER.join(",")),
                });
            }
            continue;
        }
        let t = parse_field(&record[0], line, "time")?;
        let v = parse_field(&record[1], line, "packet rate")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(TraceError::NonMonotone { line, time: t });
            }
            if times.len() >= 2 {
                let interval = times[1] - times[0];
                let step = t - prev;
                if (step - interval).abs() > SPACING_TOLERANCE {
                    return Err(TraceError::NonUniform { line, step, interval });
                }
            }
        }
        times.push(t);
        values.push(v);
    }
    match times.len() {
        0 => Err(TraceError::Empty),
        1 => Err(TraceError::InvalidArgument(
            "a single sample does not determine the sampling interval".into(),
        )),
        _ => {
            let mut s = TraceSeries::new(times[1] - times[0], values)?;
            s.start_time = times[0];
            Ok(s)
        }
    }
}

pub fn load_trace(path: &Path) -> Result<TraceSeries, TraceError> {
    read_trace(std::fs::File::open(path)?)
}

pub fn write_trace<W: Write>(mut out: W, series: &TraceSeries) -> std::io::Result<()> {
    writeln!(out, "{}", TRACE_HEADER.join(","))?;
    for (i, v) in series.values.iter().enumerate() {
        writeln!(out, "{},{}", series.time(i), v)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowStats {
    pub mean: f64,
    pub variance: f64,
    pub n: usize,
    pub a_hat: f64,
}

fn check_window(series: &TraceSeries, window: &Range<usize>, needed: usize) -> Result<(), TraceError> {
    if window.end > series.len() || window.start > window.end {
        return Err(TraceError::WindowOutOfRange {
            start: window.start,
            end: window.end,
            len: series.len(),
        });
    }
    if window.end - window.start < needed {
        return Err(TraceError::WindowTooShort {
            start: window.start,
            end: window.end,
            needed,
        });
    }
    Ok(())
}

/// Sample mean, unbiased sample variance and their ratio over `window`.
pub fn window_stats(series: &TraceSeries, window: Range<usize>) -> Result<WindowStats, TraceError> {
    check_window(series, &window, 2)?;
    Ok(stats_of(&series.values[window]))
}

fn stats_of(xs: &[f64]) -> WindowStats {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let variance = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let a_hat = if variance == 0.0 { 0.0 } else { variance / mean };
    WindowStats {
        mean,
        variance,
        n,
        a_hat,
    }
}

/// Rescales the attack window to mean `target_theta` and variance `a_pre * target_theta`.
pub fn diminish_attack(
    series: &TraceSeries,
    attack_window: Range<usize>,
    pre_stats: &WindowStats,
    target_theta: f64,
) -> Result<TraceSeries, TraceError> {
    if !(target_theta > 0.0) || !target_theta.is_finite() {
        return Err(TraceError::InvalidArgument(format!(
            "target mean {target_theta} must be positive"
        )));
    }
    if !(pre_stats.a_hat > 0.0) {
        return Err(TraceError::InvalidArgument(format!(
            "pre-change variance-to-mean ratio {} must be positive",
            pre_stats.a_hat
        )));
    }
    check_window(series, &attack_window, 2)?;
    let attack = stats_of(&series.values[attack_window.clone()]);
    if attack.variance == 0.0 {
        return Err(TraceError::ZeroVariance);
    }
    let scale = (target_theta * pre_stats.a_hat / attack.variance).sqrt();
    let mut out = series.clone();
    for x in &mut out.values[attack_window] {
        *x = scale * (*x - attack.mean) + target_theta;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofReport {
    /// `(empirical quantile of the standardized data, standard normal quantile)`, ascending.
    pub pairs: Vec<(f64, f64)>,
    pub qq_correlation: f64,
    pub stats: WindowStats,
}

/// Normal Q-Q diagnostics of the centered and scaled window.
pub fn gof_report(series: &TraceSeries, window: Range<usize>) -> Result<GofReport, TraceError> {
    check_window(series, &window, 20)?;
    let stats = stats_of(&series.values[window.clone()]);
    let sd = stats.variance.sqrt();
    let mut z: Vec<f64> = series.values[window]
        .iter()
        .map(|x| if sd > 0.0 { (x - stats.mean) / sd } else { 0.0 })
        .collect();
    z.sort_by(f64::total_cmp);
    let n = z.len();
    let normal = StdNormal::new(0.0, 1.0).expect("standard normal");
    let pairs: Vec<(f64, f64)> = z
        .iter()
        .enumerate()
        .map(|(i, e)| (*e, normal.inverse_cdf((i as f64 + 0.5) / n as f64)))
        .collect();
    Ok(GofReport {
        qq_correlation: correlation(&pairs),
        pairs,
        stats,
    })
}

fn correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

pub fn write_gof_csv<W: Write>(mut out: W, report: &GofReport) -> std::io::Result<()> {
    writeln!(out, "empirical_q,normal_q")?;
    for (e, q) in &report.pairs {
        writeln!(out, "{e},{q}")?;
    }
    writeln!(out, "# qq_correlation={}", report.qq_correlation)
}

/// Layout and moments of a synthetic packet-rate trace with one attack episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurrogateSpec {
    pub sample_interval: f64,
    pub pre_samples: usize,
    pub attack_samples: usize,
    pub post_samples: usize,
    pub legit_mean: f64,
    pub legit_variance: f64,
    pub attack_mean: f64,
    pub attack_variance: f64,
    /// Diminish the attack window to this mean with the legitimate variance-to-mean ratio.
    pub diminish_to: Option<f64>,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            sample_interval: 0.5,
            pre_samples: 204,
            attack_samples: 478,
            post_samples: 197,
            legit_mean: 13329.764,
            legit_variance: 266972.736,
            attack_mean: 17723.833,
            attack_variance: 407968.14,
            diminish_to: Some(13600.0),
        }
    }
}

impl SurrogateSpec {
    pub fn len(&self) -> usize {
        self.pre_samples + self.attack_samples + self.post_samples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn attack_window(&self) -> Range<usize> {
        self.pre_samples..self.pre_samples + self.attack_samples
    }

    pub fn legit_ratio(&self) -> f64 {
        self.legit_variance / self.legit_mean
    }

    /// The pre/post model the diminished trace follows.
    pub fn model(&self) -> Result<GaussianChangeModel, crate::model::ModelError> {
        GaussianChangeModel::new(
            self.legit_mean,
            self.diminish_to.unwrap_or(self.attack_mean),
            self.legit_ratio(),
        )
    }

    pub fn generate(&self, seed: u64) -> Result<TraceSeries, TraceError> {
        let bad = |what: &str| TraceError::InvalidArgument(format!("invalid surrogate {what}"));
        let legit = Normal::new(self.legit_mean, self.legit_variance.sqrt()).map_err(|_| bad("legitimate moments"))?;
        let attack = Normal::new(self.attack_mean, self.attack_variance.sqrt()).map_err(|_| bad("attack moments"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let window = self.attack_window();
        let values: Vec<f64> = (0..self.len())
            .map(|i| {
                if window.contains(&i) {
                    attack.sample(&mut rng)
                } else {
                    legit.sample(&mut rng)
                }
            })
            .collect();
        let series = TraceSeries::new(self.sample_interval, values)?
            .with_labels(Some(window.start), Some(window.end));
        match self.diminish_to {
            Some(theta) => {
                let pre = WindowStats {
                    mean: self.legit_mean,
                    variance: self.legit_variance,
                    n: self.pre_samples,
                    a_hat: self.legit_ratio(),
                };
                diminish_attack(&series, window, &pre, theta)
            }
            None => Ok(series),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub kind: DetectorKind,
    pub threshold: f64,
    pub head_start: f64,
    pub calibration: Option<CalibrationResult>,
    pub log: AlarmLog,
    pub change_point: Option<u64>,
    pub false_alarms: usize,
    pub delay_samples: Option<u64>,
    pub delay_seconds: Option<f64>,
}

/// Runs `spec` over the whole series, restarting after every alarm.
pub fn run_detector(
    series: &TraceSeries,
    model: &GaussianChangeModel,
    spec: &DetectorSpec,
    seed: u64,
) -> Result<DetectionReport, AnomalyError> {
    let options = MulticyclicOptions {
        seed,
        record_trajectory: true,
        ..MulticyclicOptions::default()
    };
    run_detector_with(series, model, spec, &options)
}

pub fn run_detector_with(
    series: &TraceSeries,
    model: &GaussianChangeModel,
    spec: &DetectorSpec,
    options: &MulticyclicOptions,
) -> Result<DetectionReport, AnomalyError> {
    let nu = series.change_point();
    let outcome = run_multicyclic(spec, model, &series.values, nu.unwrap_or(u64::MAX), options)?;
    let delay = if nu.is_some() { outcome.detection_delay } else { None };
    Ok(DetectionReport {
        kind: spec.kind(),
        threshold: spec.threshold(),
        head_start: spec.head_start(),
        calibration: None,
        false_alarms: outcome.false_alarms,
        change_point: nu,
        delay_samples: delay,
        delay_seconds: delay.map(|d| d as f64 * series.sample_interval),
        log: outcome.log,
    })
}

/// Builds the detector of `kind` at `threshold`; SRP needs the quasi-stationary law at that threshold.
pub fn build_detector(
    kind: DetectorKind,
    model: &GaussianChangeModel,
    threshold: f64,
    head_start: f64,
    options: &CalibrationOptions,
) -> Result<DetectorSpec, AnomalyError> {
    Ok(match kind {
        DetectorKind::Cusum => DetectorSpec::cusum(threshold)?,
        DetectorKind::Sr => DetectorSpec::sr(threshold)?,
        DetectorKind::SrR => DetectorSpec::sr_r(threshold, head_start)?,
        DetectorKind::Srp => {
            let sol = OcSolution::solve(model, StatisticMap::ShiryaevRoberts, threshold, &options.config)?;
            DetectorSpec::srp(threshold, sol.quasi_stationary()?)?
        }
    })
}

/// Calibrates `kind` to ARL `gamma` on `model` and runs it over the series.
pub fn detect_anomaly(
    series: &TraceSeries,
    model: &GaussianChangeModel,
    kind: DetectorKind,
    gamma: f64,
    head_start: f64,
    options: &CalibrationOptions,
    seed: u64,
) -> Result<DetectionReport, AnomalyError> {
    let cal = calibrate_threshold(kind, model, gamma, head_start, options)?;
    let spec = build_detector(kind, model, cal.threshold, head_start, options)?;
    let mut report = run_detector(series, model, &spec, seed)?;
    report.calibration = Some(cal);
    Ok(report)
}

pub fn write_alarm_log_csv<W: Write>(
    mut out: W,
    log: &AlarmLog,
    change_point: Option<u64>,
) -> std::io::Result<()> {
    writeln!(out, "alarm_index,cycle_length,is_false")?;
    for (t, c) in log.alarm_times.iter().zip(&log.cycle_lengths) {
        let is_false = change_point.is_none_or(|nu| *t <= nu);
        writeln!(out, "{t},{c},{is_false}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurrogateSummary {
    pub kind: DetectorKind,
    pub replications: usize,
    pub detected: usize,
    pub mean_delay: f64,
    pub delay_std_error: f64,
    pub mean_false_alarms: f64,
    pub delays: Vec<Option<u64>>,
}

/// Runs each detector on `replications` independent surrogate traces; trace `i` uses seed `seed + i`
/// for every detector, so the detectors see the same data.
pub fn surrogate_study(
    surrogate: &SurrogateSpec,
    model: &GaussianChangeModel,
    detectors: &[DetectorSpec],
    replications: usize,
    seed: u64,
) -> Result<Vec<SurrogateSummary>, AnomalyError> {
    let runs: Vec<Result<Vec<(Option<u64>, usize)>, AnomalyError>> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let trace = surrogate.generate(seed.wrapping_add(i as u64))?;
            detectors
                .iter()
                .map(|d| {
                    let r = run_detector(&trace, model, d, seed.wrapping_add(i as u64))?;
                    Ok((r.delay_samples, r.false_alarms))
                })
                .collect()
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(detectors
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let delays: Vec<Option<u64>> = runs.iter().map(|r| r[j].0).collect();
            let observed: Vec<f64> = delays.iter().flatten().map(|d| *d as f64).collect();
            let n = observed.len() as f64;
            let mean = observed.iter().sum::<f64>() / n;
            let var = observed.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            SurrogateSummary {
                kind: d.kind(),
                replications,
                detected: observed.len(),
                mean_delay: mean,
                delay_std_error: (var / n).sqrt(),
                mean_false_alarms: runs.iter().map(|r| r[j].1 as f64).sum::<f64>() / replications as f64,
                delays,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_with_and_without_header() {
        let s = read_trace("0.0,100\n0.5,110".as_bytes()).unwrap();
        assert_eq!(s.values, vec![100.0, 110.0]);
        assert_eq!(s.sample_interval, 0.5);
        let h = read_trace("time_s,packets_per_s\n1.0,5\n1.5,6\n2.0,7\n".as_bytes()).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.start_time, 1.0);
    }

    #[test]
    fn distinct_parse_errors() {
        match read_trace("0.0,100\n0.5,NaN\n".as_bytes()) {
            Err(TraceError::Malformed { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_trace("0.0,1\n0.0,2\n".as_bytes()), Err(TraceError::NonMonotone { line: 2, .. })));
        assert!(matches!(
            read_trace("0.0,1\n0.5,2\n1.1,3\n".as_bytes()),
            Err(TraceError::NonUniform { line: 3, .. })
        ));
        assert!(matches!(read_trace("".as_bytes()), Err(TraceError::Empty)));
        assert!(matches!(read_trace("time_s,packets_per_s\n".as_bytes()), Err(TraceError::Empty)));
        assert!(matches!(read_trace("0.0,1,2\n".as_bytes()), Err(TraceError::Malformed { .. })));
        assert!(matches!(read_trace("0.0,abc\n".as_bytes()), Err(TraceError::Malformed { line: 1, .. })));
    }

    #[test]
    fn round_trip() {
        let s = TraceSeries::new(0.5, vec![1.0, 2.5, 3.25]).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &s).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn window_statistics() {
        let s = TraceSeries::new(1.0, vec![1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0]).unwrap();
        let w = window_stats(&s, 0..4).unwrap();
        assert_eq!((w.mean, w.n), (2.5, 4));
        assert!((w.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!((w.a_hat - w.variance / w.mean).abs() < 1e-15);
        let c = window_stats(&s, 4..7).unwrap();
        assert_eq!((c.variance, c.a_hat), (0.0, 0.0));
        assert!(window_stats(&s, 3..4).is_err());
        assert!(window_stats(&s, 5..9).is_err());
    }

    #[test]
    fn diminish_hits_the_targets() {
        let spec = SurrogateSpec {
            diminish_to: None,
            ..SurrogateSpec::default()
        };
        let raw = spec.generate(3).unwrap();
        let pre = window_stats(&raw, 0..spec.pre_samples).unwrap();
        let out = diminish_attack(&raw, spec.attack_window(), &pre, 13600.0).unwrap();
        let w = window_stats(&out, spec.attack_window()).unwrap();
        assert!((w.mean - 13600.0).abs() < 1e-9 * 13600.0);
        assert!((w.variance - 13600.0 * pre.a_hat).abs() < 1e-9 * 13600.0 * pre.a_hat);
        assert_eq!(out.values[..spec.pre_samples], raw.values[..spec.pre_samples]);
        let z = TraceSeries::new(1.0, vec![5.0; 10]).unwrap();
        assert!(matches!(diminish_attack(&z, 2..8, &pre, 1.0), Err(TraceError::ZeroVariance)));
    }

    #[test]
    fn identity_diminish() {
        let s = TraceSeries::new(1.0, vec![3.0, 5.0, 4.0, 9.0, 1.0]).unwrap();
        let w = window_stats(&s, 0..5).unwrap();
        let out = diminish_attack(&s, 0..5, &w, w.mean).unwrap();
        for (a, b) in s.values.iter().zip(&out.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn qq_correlation_separates_normal_from_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal: Vec<f64> = (0..10_000).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect();
        let expo: Vec<f64> = (0..10_000).map(|_| rand_distr::Exp1.sample(&mut rng)).collect();
        let rn = gof_report(&TraceSeries::new(1.0, normal).unwrap(), 0..10_000).unwrap();
        let re = gof_report(&TraceSeries::new(1.0, expo).unwrap(), 0..10_000).unwrap();
        assert!(rn.qq_correlation > 0.999, "{}", rn.qq_correlation);
        assert!(re.qq_correlation < 0.99, "{}", re.qq_correlation);
        assert!(gof_report(&TraceSeries::new(1.0, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 0..5).is_err());
        let mut buf = Vec::new();
        write_gof_csv(&mut buf, &rn).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("empirical_q,normal_q\n"));
        assert!(text.trim_end().lines().last().unwrap().starts_with("# qq_correlation="));
    }

    #[test]
    fn surrogate_layout() {
        let spec = SurrogateSpec::default();
        let s = spec.generate(1).unwrap();
        assert_eq!(s.len(), 879);
        assert_eq!((s.onset, s.offset), (Some(204), Some(682)));
        assert_eq!(spec.generate(1).unwrap(), s);
    }

    #[test]
    fn alarm_log_export_marks_false_alarms() {
        let log = AlarmLog {
            alarm_times: vec![50, 120, 230],
            cycle_lengths: vec![50, 70, 110],
            statistic_trajectory: None,
        };
        let mut buf = Vec::new();
        write_alarm_log_csv(&mut buf, &log, Some(204)).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "alarm_index,cycle_length,is_false\n50,50,true\n120,70,true\n230,110,false\n"
        );
    }

    #[test]
    fn detection_is_deterministic() {
        let spec = SurrogateSpec::default();
        let model = spec.model().unwrap();
        let trace = spec.generate(5).unwrap();
        let det = DetectorSpec::sr(731.3).unwrap();
        let a = run_detector(&trace, &model, &det, 9).unwrap();
        let b = run_detector(&trace, &model, &det, 9).unwrap();
        assert_eq!(a, b);
        if let (Some(d), Some(nu)) = (a.delay_samples, a.change_point) {
            let first = a.log.alarm_times.iter().find(|t| **t > nu).unwrap();
            assert_eq!(*first - nu, d);
            assert_eq!(a.false_alarms, a.log.alarm_times.iter().filter(|t| **t <= nu).count());
        }
    }
}
