//! Threshold calibration and head-start design for the SR-r procedure.

use crate::asymptotics::{Estimate, MonteCarloConstants};
use crate::detectors::DetectorKind;
use crate::model::{GaussianChangeModel, StatisticMap};
use crate::oc_solver::{OcSolution, SolverConfig, SolverError};
use rayon::prelude::*;
use serde::Serialize;
use std::cell::Cell;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("could not bracket ARL {gamma}: {detail}")]
    Bracket { gamma: f64, detail: String },
    #[error("root finding did not reach tolerance after {0} evaluations")]
    NoConvergence(usize),
    #[error("inconsistent constants: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationOptions {
    pub config: SolverConfig,
    /// Target relative error of the achieved ARL.
    pub rel_tol: f64,
    pub max_evaluations: usize,
    /// Starting guess for the threshold; derived from the ARL approximations when absent.
    pub initial_threshold: Option<f64>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            config: SolverConfig::default(),
            rel_tol: 1e-4,
            max_evaluations: 60,
            initial_threshold: None,
        }
    }
}

impl CalibrationOptions {
    pub fn with_panels(n_panels: usize) -> Self {
        Self {
            config: SolverConfig::with_panels(n_panels),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub kind: DetectorKind,
    pub gamma_target: f64,
    pub threshold: f64,
    /// `r` for SR-r, the quasi-stationary mean for SRP, the starting value otherwise.
    pub head_start: f64,
    pub achieved_arl: f64,
    pub iterations: usize,
    pub n_panels: usize,
}

impl CalibrationResult {
    pub fn relative_error(&self) -> f64 {
        (self.achieved_arl - self.gamma_target).abs() / self.gamma_target
    }
}

/// ARL of `kind` on a solved grid, with the head start it used.
pub fn procedure_arl(
    kind: DetectorKind,
    solution: &OcSolution,
    head_start: f64,
) -> Result<(f64, f64), SolverError> {
    match kind {
        DetectorKind::Cusum => Ok((solution.arl_at(1.0)?, 1.0)),
        DetectorKind::Sr => Ok((solution.arl_at(0.0)?, 0.0)),
        DetectorKind::SrR => Ok((solution.arl_at(head_start)?, head_start)),
        DetectorKind::Srp => {
            let c = solution.srp_characteristics()?;
            Ok((c.arl, c.mean_head_start))
        }
    }
}

fn xi_of(kind: DetectorKind) -> StatisticMap {
    match kind {
        DetectorKind::Cusum => StatisticMap::Cusum,
        _ => StatisticMap::ShiryaevRoberts,
    }
}

fn default_seed(kind: DetectorKind, model: &GaussianChangeModel, gamma: f64, head_start: f64) -> f64 {
    match kind {
        DetectorKind::Cusum => {
            // A - (I_g / I_f) ln A - 1 = I_g gamma with the overshoot factor set to one.
            let kl = model.kl_numbers();
            let ratio = kl.i_g / kl.i_f;
            let target = kl.i_g * gamma;
            let f = |a: f64| a - ratio * a.ln() - 1.0 - target;
            let (mut lo, mut hi) = (1.0f64, 2.0f64);
            while f(hi) < 0.0 && hi < 1e300 {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi.max(1.0 + 1e-6)
        }
        DetectorKind::Sr | DetectorKind::Srp => 0.9 * gamma,
        DetectorKind::SrR => 0.9 * (gamma + head_start),
    }
}

/// Illinois false position on a bracketed sign change of `f`.
fn illinois<F: FnMut(f64) -> Result<f64, DesignError>>(
    mut f: F,
    (mut a, mut fa): (f64, f64),
    (mut b, mut fb): (f64, f64),
    f_tol: f64,
    x_tol: f64,
    max_evals: usize,
) -> Result<(f64, f64, usize), DesignError> {
    let mut side = 0i8;
    for it in 1..=max_evals {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !c.is_finite() || c <= a.min(b) || c >= a.max(b) {
            c = 0.5 * (a + b);
        }
        let fc = f(c)?;
        if fc.abs() <= f_tol || (b - a).abs() <= x_tol {
            return Ok((c, fc, it));
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Err(DesignError::NoConvergence(max_evals))
}

/// Solves `ARL(A) = gamma` for the threshold of `kind`; `head_start` is the SR-r starting point.
pub fn calibrate_threshold(
    kind: DetectorKind,
    model: &GaussianChangeModel,
    gamma: f64,
    head_start: f64,
    options: &CalibrationOptions,
) -> Result<CalibrationResult, DesignError> {
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(DesignError::InvalidArgument(format!("ARL target {gamma} must exceed 1")));
    }
    if kind == DetectorKind::SrR && !(head_start >= 0.0 && head_start.is_finite()) {
        return Err(DesignError::InvalidArgument(format!("head start {head_start} must be nonnegative")));
    }
    let xi = xi_of(kind);
    let floor = match kind {
        DetectorKind::Cusum => 1.0,
        DetectorKind::SrR => head_start,
        _ => 0.0,
    };
    let log_floor = if floor > 0.0 { (floor * (1.0 + 1e-9)).ln() } else { f64::NEG_INFINITY };
    let log_gamma = gamma.ln();
    let evals = Cell::new(0usize);
    let last: Cell<Option<(f64, f64, f64)>> = Cell::new(None);
    let eval = |u: f64| -> Result<f64, DesignError> {
        evals.set(evals.get() + 1);
        let a = u.exp();
        let sol = OcSolution::solve(model, xi, a, &options.config)?;
        let (arl, hs) = procedure_arl(kind, &sol, head_start)?;
        last.set(Some((a, arl, hs)));
        Ok(arl.ln() - log_gamma)
    };

    let seed = options
        .initial_threshold
        .unwrap_or_else(|| default_seed(kind, model, gamma, head_start));
    let mut u0 = seed.ln().max(log_floor + 1e-6);
    let mut g0 = eval(u0)?;
    let f_tol = (1.0 + options.rel_tol).ln();
    if g0.abs() <= f_tol {
        let (a, arl, hs) = last.get().expect("evaluated");
        return Ok(CalibrationResult {
            kind,
            gamma_target: gamma,
            threshold: a,
            head_start: hs,
            achieved_arl: arl,
            iterations: evals.get(),
            n_panels: options.config.n_panels,
        });
    }
    // Expand geometrically away from the seed until the sign changes.
    let mut step = 0.25f64;
    let (lo, hi) = loop {
        if evals.get() >= options.max_evaluations {
            return Err(DesignError::Bracket {
                gamma,
                detail: format!("no sign change within {} evaluations", evals.get()),
            });
        }
        let u1 = if g0 > 0.0 {
            let down = u0 - step;
            if down > log_floor {
                down
            } else {
                0.5 * (u0 + log_floor)
            }
        } else {
            u0 + step
        };
        if g0 > 0.0 && u0 - log_floor < 1e-9 {
            return Err(DesignError::Bracket {
                gamma,
                detail: format!("ARL still above target at the smallest admissible threshold {}", u0.exp()),
            });
        }
        let g1 = eval(u1)?;
        if g1.signum() != g0.signum() {
            break if u0 < u1 { ((u0, g0), (u1, g1)) } else { ((u1, g1), (u0, g0)) };
        }
        if g1.abs() <= f_tol {
            break ((u1, g1), (u1, g1));
        }
        u0 = u1;
        g0 = g1;
        step *= 2.0;
    };
    if lo.0 != hi.0 {
        let remaining = options.max_evaluations.saturating_sub(evals.get()).max(1);
        illinois(eval, lo, hi, f_tol, 1e-13, remaining)?;
    }
    let (a, arl, hs) = last.get().expect("evaluated");
    Ok(CalibrationResult {
        kind,
        gamma_target: gamma,
        threshold: a,
        head_start: hs,
        achieved_arl: arl,
        iterations: evals.get(),
        n_panels: options.config.n_panels,
    })
}

/// The head start `r` at which SR-r on `solution` has ARL `gamma`, or `None` when even `r = 0` falls short.
pub fn head_start_for_arl(solution: &OcSolution, gamma: f64) -> Result<Option<f64>, DesignError> {
    let a = solution.grid().threshold();
    let f0 = solution.arl_at(0.0)? - gamma;
    if f0 < 0.0 {
        return Ok(None);
    }
    if f0 == 0.0 {
        return Ok(Some(0.0));
    }
    let hi = a * (1.0 - 1e-12);
    let f_hi = solution.arl_at(hi)? - gamma;
    if f_hi > 0.0 {
        return Err(DesignError::Bracket {
            gamma,
            detail: format!("ARL exceeds the target for every head start below {a}"),
        });
    }
    let (r, _, _) = illinois(
        |r| Ok(solution.arl_at(r)? - gamma),
        (0.0, f0),
        (hi, f_hi),
        1e-9 * gamma,
        1e-12 * a,
        500,
    )?;
    Ok(Some(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub head_start: f64,
    pub arl: f64,
    pub add0: f64,
    pub add_limit: f64,
    /// Supremum of the conditional average delay over change points.
    pub sup_add: f64,
    pub lower_bound: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepOptions {
    pub config: SolverConfig,
    pub points: usize,
    pub golden_iterations: usize,
    pub profile_nu_max: usize,
    pub profile_tolerance: f64,
    /// Objective values closer than this (relative) count as ties; the smaller head start wins.
    pub tie_tolerance: f64,
    /// A sweep whose objective varies by less than this (relative) is reported as flat.
    pub flat_tolerance: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            config: SolverConfig::default(),
            points: 20,
            golden_iterations: 12,
            profile_nu_max: 5000,
            profile_tolerance: 1e-4,
            tie_tolerance: 1e-9,
            flat_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RStarResult {
    pub best: SweepPoint,
    /// The r = 0 calibration the sweep starts from.
    pub base: CalibrationResult,
    pub sweep: Vec<SweepPoint>,
    pub refinement: Vec<SweepPoint>,
    pub warnings: Vec<String>,
}

impl RStarResult {
    pub fn threshold(&self) -> f64 {
        self.best.threshold
    }

    pub fn head_start(&self) -> f64 {
        self.best.head_start
    }
}

/// Evaluates the supremum-delay gap of SR-r at threshold `a`, with `r` chosen to hold the ARL at `gamma`.
pub fn sweep_point(
    model: &GaussianChangeModel,
    a: f64,
    gamma: f64,
    options: &SweepOptions,
) -> Result<Option<SweepPoint>, DesignError> {
    let sol = OcSolution::solve(model, StatisticMap::ShiryaevRoberts, a, &options.config)?;
    let Some(r) = head_start_for_arl(&sol, gamma)? else {
        return Ok(None);
    };
    let p = sol.at(r)?;
    let profile = sol.delay_profile(r, options.profile_nu_max, options.profile_tolerance)?;
    let sup_add = profile.supremum().max(profile.limit);
    let lower_bound = sol.lower_bound(r)?;
    Ok(Some(SweepPoint {
        threshold: a,
        head_start: r,
        arl: p.arl,
        add0: p.add0,
        add_limit: profile.limit,
        sup_add,
        lower_bound,
        gap: sup_add - lower_bound,
    }))
}

fn better(candidate: &SweepPoint, incumbent: &SweepPoint, tie: f64) -> bool {
    let scale = incumbent.sup_add.abs().max(1.0);
    if candidate.gap < incumbent.gap - tie * scale {
        true
    } else if candidate.gap <= incumbent.gap + tie * scale {
        candidate.head_start < incumbent.head_start
    } else {
        false
    }
}

/// Sweeps thresholds above the r = 0 calibration and returns the head start minimizing the
/// gap between the supremum delay and its lower bound at ARL `gamma`.
pub fn find_r_star(
    model: &GaussianChangeModel,
    gamma: f64,
    options: &SweepOptions,
) -> Result<RStarResult, DesignError> {
    let cal = CalibrationOptions {
        config: options.config,
        rel_tol: 1e-7,
        ..CalibrationOptions::default()
    };
    let base = calibrate_threshold(DetectorKind::Sr, model, gamma, 0.0, &cal)?;
    let a0 = base.threshold;
    // Stop where r would pass A / 2, using ARL ~ A / zeta - r with zeta ~ A0 / gamma.
    let inv_zeta = gamma / a0;
    let a_max = if inv_zeta > 0.5 { gamma / (inv_zeta - 0.5) } else { 4.0 * a0 };
    let n = options.points.max(3);
    let ratio = (a_max / a0).powf(1.0 / (n - 1) as f64);
    let thresholds: Vec<f64> = (0..n).map(|k| a0 * ratio.powi(k as i32)).collect();

    let evaluated: Vec<Result<Option<SweepPoint>, DesignError>> = thresholds
        .par_iter()
        .map(|&a| sweep_point(model, a, gamma, options))
        .collect();
    let mut sweep = Vec::with_capacity(n);
    for e in evaluated {
        if let Some(p) = e? {
            if p.head_start <= 0.5 * p.threshold {
                sweep.push(p);
            }
        }
    }
    if sweep.is_empty() {
        return Err(DesignError::Bracket {
            gamma,
            detail: "no sweep point admits a head start".into(),
        });
    }
    let mut k_best = 0;
    for k in 1..sweep.len() {
        if better(&sweep[k], &sweep[k_best], options.tie_tolerance) {
            k_best = k;
        }
    }
    let mut warnings = Vec::new();
    let (g_min, g_max) = sweep
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.gap), hi.max(p.gap)));
    if g_max - g_min < options.flat_tolerance * sweep[k_best].sup_add {
        warnings.push(format!(
            "gap objective is flat across the sweep (range {:.3e}); the smallest head start is reported",
            g_max - g_min
        ));
    }
    if let Some(p) = sweep.iter().find(|p| p.gap < -options.flat_tolerance * p.sup_add) {
        warnings.push(format!(
            "negative gap {:.4} at threshold {:.4}; the solver grid is too coarse",
            p.gap, p.threshold
        ));
    }

    // Golden-section refinement between the neighbours of the best grid point.
    let mut best = sweep[k_best];
    let mut refinement = Vec::new();
    let lo_a = if k_best > 0 { sweep[k_best - 1].threshold } else { a0 };
    let hi_a = sweep.get(k_best + 1).map_or(best.threshold, |p| p.threshold);
    if hi_a > lo_a && options.golden_iterations > 0 {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (lo_a, hi_a);
        let eval = |a: f64, refinement: &mut Vec<SweepPoint>| -> Result<f64, DesignError> {
            match sweep_point(model, a, gamma, options)? {
                Some(p) => {
                    refinement.push(p);
                    Ok(p.gap)
                }
                None => Ok(f64::INFINITY),
            }
        };
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut f1 = eval(x1, &mut refinement)?;
        let mut f2 = eval(x2, &mut refinement)?;
        for _ in 2..options.golden_iterations {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = eval(x1, &mut refinement)?;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = eval(x2, &mut refinement)?;
            }
        }
        for p in &refinement {
            if p.head_start <= 0.5 * p.threshold && better(p, &best, options.tie_tolerance) {
                best = *p;
            }
        }
    }
    if best.gap < 0.0 {
        warnings.push(format!("best gap {:.4} is negative", best.gap));
    }
    Ok(RStarResult {
        best,
        base,
        sweep,
        refinement,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PracticalHeadStart {
    pub head_start: f64,
    pub c_r: Estimate,
    pub target: f64,
    pub warnings: Vec<String>,
}

/// Solves `E log(1 + r + V) = target` in `r` by bisection over fixed draws of `V`.
pub fn solve_c_r_equation(
    v_draws: &[f64],
    batches: usize,
    target: f64,
    target_se: f64,
) -> Result<PracticalHeadStart, DesignError> {
    if v_draws.is_empty() || batches == 0 || v_draws.len() < batches {
        return Err(DesignError::InvalidArgument("no draws".into()));
    }
    if !target.is_finite() {
        return Err(DesignError::InvalidArgument(format!("target {target} is not finite")));
    }
    let c_r = |r: f64| crate::asymptotics::mean_log_shifted(v_draws, batches, r);
    let at_zero = c_r(0.0);
    let mut warnings = Vec::new();
    if target <= at_zero.value {
        let noise = 3.0 * (at_zero.std_error.powi(2) + target_se.powi(2)).sqrt();
        if target < at_zero.value - noise {
            return Err(DesignError::Inconsistent(format!(
                "C_inf = {target} is below C0 = {} beyond Monte-Carlo noise",
                at_zero.value
            )));
        }
        if target < at_zero.value {
            warnings.push(format!(
                "C_inf = {target} is below C0 = {} within noise; head start set to 0",
                at_zero.value
            ));
        }
        return Ok(PracticalHeadStart {
            head_start: 0.0,
            c_r: at_zero,
            target,
            warnings,
        });
    }
    let mut hi = 1.0;
    while c_r(hi).value < target {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(DesignError::Bracket {
                gamma: target,
                detail: "C_r does not reach the target".into(),
            });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if c_r(mid).value < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    Ok(PracticalHeadStart {
        head_start: r,
        c_r: c_r(r),
        target,
        warnings,
    })
}

/// Threshold-free head start equating `C_r` and `C_inf`.
pub fn find_r_star_practical(mc: &MonteCarloConstants) -> Result<PracticalHeadStart, DesignError> {
    let c = &mc.constants;
    solve_c_r_equation(mc.v_tilde(), mc.batches(), c.c_inf.value, c.c_inf.std_error)
}
