use crate::error::CliError;
use crate::report::{Cell, Report, Section};
use crate::{
    CalibrateArgs, Cli, Command, ConstantsArgs, DetectArgs, ModelArgs, OcArgs, SimulateArgs, SolverArgs, TablesArgs,
    TargetArgs,
};
use quickdetect::anomaly::{
    build_detector, gof_report, load_trace, run_detector_with, window_stats, write_alarm_log_csv, write_gof_csv,
    diminish_attack, SurrogateSpec, TraceSeries,
};
use quickdetect::asymptotics::{simulate_constants, McBudget};
use quickdetect::benchmarks::{evaluate_case, BenchmarkCase, CaseReport};
use quickdetect::design::{
    calibrate_threshold, find_r_star_practical, procedure_arl, CalibrationOptions, CalibrationResult,
};
use quickdetect::detectors::{estimate_oc, xi_map, DetectorKind, MulticyclicOptions, SimulationOptions};
use quickdetect::model::GaussianChangeModel;
use quickdetect::oc_solver::{OcSolution, SolverConfig, SolverError};
use std::io::Write;
use std::path::Path;

pub fn run(cli: &Cli) -> Result<Report, CliError> {
    let config = serde_json::to_value(cli).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut report = Report::new(config);
    match &cli.command {
        Command::Calibrate(a) => calibrate(a, &mut report)?,
        Command::Oc(a) => oc(a, &mut report)?,
        Command::Constants(a) => constants(a, cli.seed, &mut report)?,
        Command::Detect(a) => detect(a, cli.seed, &mut report)?,
        Command::Simulate(a) => simulate(a, cli.seed, &mut report)?,
        Command::Tables(a) => tables(a, &mut report)?,
    }
    Ok(report)
}

fn model_of(m: &ModelArgs) -> Result<GaussianChangeModel, CliError> {
    Ok(GaussianChangeModel::new(m.mu, m.theta, m.a)?)
}

struct Resolved {
    threshold: f64,
    calibration: Option<CalibrationResult>,
    panels: usize,
    /// Solution at `panels`, when the grid check produced one.
    solution: Option<OcSolution>,
}

impl Resolved {
    fn solution(self, kind: DetectorKind, model: &GaussianChangeModel) -> Result<OcSolution, CliError> {
        match self.solution {
            Some(s) => Ok(s),
            None => Ok(OcSolution::solve(model, xi_map(kind), self.threshold, &SolverConfig::with_panels(self.panels))?),
        }
    }
}

/// As [`resolve_threshold`], but an explicit threshold is taken as is; for running detectors,
/// which need the solver only to calibrate or to build SRP.
fn detector_threshold(
    kind: DetectorKind,
    model: &GaussianChangeModel,
    target: &TargetArgs,
    head_start: f64,
    solver: &SolverArgs,
    warnings: &mut Vec<String>,
) -> Result<Resolved, CliError> {
    match target.threshold {
        Some(threshold) if kind != DetectorKind::Srp => Ok(Resolved {
            threshold,
            calibration: None,
            panels: solver.panels,
            solution: None,
        }),
        _ => resolve_threshold(kind, model, target, head_start, solver, warnings),
    }
}

/// The threshold from `--threshold`, or calibrated to `--gamma`, on a grid that is doubled
/// until the ARL agrees with the next finer grid or `--max-panels` is reached.
fn resolve_threshold(
    kind: DetectorKind,
    model: &GaussianChangeModel,
    target: &TargetArgs,
    head_start: f64,
    solver: &SolverArgs,
    warnings: &mut Vec<String>,
) -> Result<Resolved, CliError> {
    let mut n = solver.panels;
    loop {
        let (threshold, calibration, coarse) = match (target.threshold, target.gamma) {
            (Some(a), _) => (a, None, None),
            (None, Some(gamma)) => {
                let opts = CalibrationOptions {
                    rel_tol: solver.rel_tol,
                    ..CalibrationOptions::with_panels(n)
                };
                let cal = calibrate_threshold(kind, model, gamma, head_start, &opts)?;
                (cal.threshold, Some(cal), Some(cal.achieved_arl))
            }
            (None, None) => return Err(CliError::Usage("one of --gamma or --threshold is required".into())),
        };
        if 2 * n > solver.max_panels {
            return Ok(Resolved {
                threshold,
                calibration,
                panels: n,
                solution: None,
            });
        }
        let coarse = match coarse {
            Some(arl) => arl,
            None => {
                let sol = OcSolution::solve(model, xi_map(kind), threshold, &SolverConfig::with_panels(n))?;
                procedure_arl(kind, &sol, head_start)?.0
            }
        };
        let fine_sol = OcSolution::solve(model, xi_map(kind), threshold, &SolverConfig::with_panels(2 * n))?;
        let fine = procedure_arl(kind, &fine_sol, head_start)?.0;
        let change = (fine - coarse).abs() / fine;
        if change <= solver.grid_tol {
            return Ok(Resolved {
                threshold,
                calibration,
                panels: 2 * n,
                solution: Some(fine_sol),
            });
        }
        warnings.push(format!(
            "ARL at A={threshold} moved by {change:.2e} between {n} and {} panels; refining the grid",
            2 * n
        ));
        n *= 2;
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let file = std::fs::File::create(path).map_err(err)?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(err)
}

fn calibrate(a: &CalibrateArgs, report: &mut Report) -> Result<(), CliError> {
    let model = model_of(&a.model)?;
    let r = resolve_threshold(a.procedure, &model, &a.target, a.head_start, &a.solver, &mut report.warnings)?;
    let mut s = Section::new(
        "calibration",
        &["procedure", "gamma_target", "threshold", "head_start", "achieved_arl", "relative_error", "iterations", "n_panels"],
    );
    match r.calibration {
        Some(c) => s.push(vec![
            c.kind.label().into(),
            c.gamma_target.into(),
            c.threshold.into(),
            c.head_start.into(),
            c.achieved_arl.into(),
            c.relative_error().into(),
            c.iterations.into(),
            c.n_panels.into(),
        ]),
        None => {
            let (threshold, panels) = (r.threshold, r.panels);
            let sol = r.solution(a.procedure, &model)?;
            let (arl, h) = procedure_arl(a.procedure, &sol, a.head_start)?;
            s.push(vec![
                a.procedure.label().into(),
                Cell::Empty,
                threshold.into(),
                h.into(),
                arl.into(),
                Cell::Empty,
                0usize.into(),
                panels.into(),
            ]);
        }
    }
    report.sections.push(s);
    Ok(())
}

fn oc(a: &OcArgs, report: &mut Report) -> Result<(), CliError> {
    let model = model_of(&a.model)?;
    let r = resolve_threshold(a.procedure, &model, &a.target, a.head_start, &a.solver, &mut report.warnings)?;
    let (threshold, panels) = (r.threshold, r.panels);
    let sol = r.solution(a.procedure, &model)?;
    let mut s = Section::new("characteristics", &["quantity", "nu", "value"]);
    let label = a.procedure.label();
    let max_nu = a.nu.iter().copied().max().unwrap_or(0);
    let mut plot_profile: Vec<f64>;
    let limit;
    s.push(vec!["threshold".into(), Cell::Empty, threshold.into()]);
    s.push(vec!["panels".into(), Cell::Empty, panels.into()]);
    if a.procedure == DetectorKind::Srp {
        let c = sol.srp_characteristics()?;
        s.push(vec!["head_start_mean".into(), Cell::Empty, c.mean_head_start.into()]);
        s.push(vec!["arl".into(), Cell::Empty, c.arl.into()]);
        for nu in &a.nu {
            s.push(vec!["add".into(), (*nu).into(), c.add.into()]);
        }
        s.push(vec!["add_limit".into(), Cell::Empty, c.add.into()]);
        s.push(vec!["sadd".into(), Cell::Empty, c.add.into()]);
        s.push(vec!["stadd".into(), Cell::Empty, c.add.into()]);
        plot_profile = Vec::new();
        limit = c.add;
    } else {
        let x0 = match a.procedure {
            DetectorKind::Cusum => 1.0,
            DetectorKind::SrR => a.head_start,
            _ => 0.0,
        };
        let p = sol.at(x0)?;
        let profile = match sol.delay_profile(x0, a.nu_max, a.profile_tol) {
            Ok(p) => p,
            Err(SolverError::NonConvergence { .. }) => {
                report.warnings.push(format!(
                    "delay profile did not settle within {} change points; SADD is the largest value seen",
                    a.nu_max
                ));
                sol.delay_prefix(x0, a.nu_max.max(max_nu))?
            }
            Err(e) => return Err(e.into()),
        };
        let settled = profile.converged_at.is_some();
        s.push(vec!["head_start".into(), Cell::Empty, x0.into()]);
        s.push(vec!["arl".into(), Cell::Empty, p.arl.into()]);
        for nu in &a.nu {
            let v = match profile.add.get(*nu) {
                Some(v) => *v,
                None if settled => profile.limit,
                None => f64::NAN,
            };
            s.push(vec!["add".into(), (*nu).into(), v.into()]);
        }
        s.push(vec!["add_limit".into(), Cell::Empty, profile.limit.into()]);
        s.push(vec!["sadd".into(), Cell::Empty, profile.supremum().into()]);
        s.push(vec!["stadd".into(), Cell::Empty, p.stadd().into()]);
        if a.procedure != DetectorKind::Cusum {
            s.push(vec!["lower_bound".into(), Cell::Empty, sol.lower_bound(x0)?.into()]);
        }
        limit = profile.limit;
        plot_profile = profile.add;
    }
    report.sections.push(s);
    if let Some(path) = &a.plot {
        let last = max_nu.max(plot_profile.len().saturating_sub(1));
        plot_profile.resize(last + 1, limit);
        write_file(path, |w| {
            writeln!(w, "nu,{label}")?;
            for (nu, v) in plot_profile.iter().enumerate() {
                writeln!(w, "{nu},{v}")?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn constants(a: &ConstantsArgs, seed: u64, report: &mut Report) -> Result<(), CliError> {
    let model = model_of(&a.model)?;
    let budget = McBudget {
        n_paths: a.paths,
        horizon: a.horizon,
        seed,
        batches: a.batches,
        tail_correction: a.tail_correction,
    };
    let mc = simulate_constants(&model, &budget)?;
    let c = &mc.constants;
    let mut s = Section::new("constants", &["constant", "value", "std_error"]);
    s.push(vec!["i_pre".into(), c.kl.i_f.into(), Cell::Empty]);
    s.push(vec!["i_post".into(), c.kl.i_g.into(), Cell::Empty]);
    for (name, e) in [
        ("zeta", c.zeta),
        ("varkappa", c.varkappa),
        ("beta0", c.beta0),
        ("beta_inf", c.beta_inf),
        ("c0", c.c0),
        ("c_inf", c.c_inf),
    ] {
        s.push(vec![name.into(), e.value.into(), e.std_error.into()]);
    }
    for r in &a.r {
        let e = mc.c_r(*r);
        s.push(vec![format!("c_r[{r}]").into(), e.value.into(), e.std_error.into()]);
    }
    report.warnings.extend(c.warnings.iter().cloned());
    match find_r_star_practical(&mc) {
        Ok(p) => {
            s.push(vec!["r_star_practical".into(), p.head_start.into(), Cell::Empty]);
            s.push(vec!["c_r_star".into(), p.c_r.value.into(), p.c_r.std_error.into()]);
            report.warnings.extend(p.warnings);
        }
        Err(e) => report.warnings.push(format!("practical head start unavailable: {e}")),
    }
    report.sections.push(s);
    Ok(())
}

fn load_series(a: &DetectArgs, seed: u64) -> Result<(TraceSeries, Option<SurrogateSpec>), CliError> {
    if a.surrogate {
        let spec = SurrogateSpec::default();
        return Ok((spec.generate(seed)?, Some(spec)));
    }
    let path = a
        .trace
        .as_ref()
        .ok_or_else(|| CliError::Usage("either --trace or --surrogate is required".into()))?;
    let series = load_trace(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok((series, None))
}

fn detect(a: &DetectArgs, seed: u64, report: &mut Report) -> Result<(), CliError> {
    let (mut series, surrogate) = load_series(a, seed)?;
    if let Some(onset) = a.onset {
        let offset = series.offset;
        series = series.with_labels(Some(onset), offset);
    }
    let fit_window = a.fit_window.as_ref().map(|w| w.range()).or(series.onset.map(|o| 0..o));
    let fitted = match &fit_window {
        Some(w) if a.mu.is_none() || a.a.is_none() || a.diminish.is_some() => Some(window_stats(&series, w.clone())?),
        _ => None,
    };
    let default_model = surrogate.as_ref().map(|s| s.model()).transpose()?;
    let mu = a
        .mu
        .or(default_model.map(|m| m.mu()))
        .or(fitted.map(|f| f.mean))
        .ok_or_else(|| CliError::Usage("--mu, --fit-window or --onset is needed to fix the pre-change mean".into()))?;
    let ratio = a
        .a
        .or(default_model.map(|m| m.a()))
        .or(fitted.map(|f| f.a_hat))
        .ok_or_else(|| CliError::Usage("--a, --fit-window or --onset is needed to fix the variance ratio".into()))?;
    if let Some(target) = a.diminish {
        let pre = fitted.ok_or_else(|| CliError::Usage("--diminish needs --fit-window or --onset".into()))?;
        let window = a
            .attack_window
            .as_ref()
            .map(|w| w.range())
            .or(series.onset.map(|o| o..series.offset.unwrap_or(series.len())))
            .ok_or_else(|| CliError::Usage("--diminish needs --attack-window or --onset".into()))?;
        series = diminish_attack(&series, window, &pre, target)?;
    }
    let theta = a
        .theta
        .or(a.diminish)
        .or(default_model.map(|m| m.theta()))
        .ok_or_else(|| CliError::Usage("--theta is required".into()))?;
    let model = GaussianChangeModel::new(mu, theta, ratio)?;
    if let Some(path) = &a.gof {
        let w = fit_window
            .clone()
            .ok_or_else(|| CliError::Usage("--gof needs --fit-window or --onset".into()))?;
        let g = gof_report(&series, w)?;
        write_file(path, |out| write_gof_csv(out, &g))?;
    }
    let r = detector_threshold(a.procedure, &model, &a.target, a.head_start, &a.solver, &mut report.warnings)?;
    let (threshold, cal) = (r.threshold, r.calibration);
    let spec = build_detector(a.procedure, &model, threshold, a.head_start, &CalibrationOptions::with_panels(r.panels))?;
    let options = MulticyclicOptions {
        redraw_head_start: !a.keep_head_start,
        record_trajectory: true,
        seed,
    };
    let det = run_detector_with(&series, &model, &spec, &options)?;
    if let (Some(path), Some(traj)) = (&a.trajectory, &det.log.statistic_trajectory) {
        write_file(path, |out| {
            writeln!(out, "index,statistic")?;
            for (i, v) in traj.iter().enumerate() {
                writeln!(out, "{},{v}", i + 1)?;
            }
            Ok(())
        })?;
    }
    let mut s = Section::new("summary", &["quantity", "value"]);
    s.push(vec!["procedure".into(), a.procedure.label().into()]);
    s.push(vec!["mu".into(), mu.into()]);
    s.push(vec!["theta".into(), theta.into()]);
    s.push(vec!["a".into(), ratio.into()]);
    s.push(vec!["threshold".into(), threshold.into()]);
    s.push(vec!["head_start".into(), det.head_start.into()]);
    s.push(vec!["achieved_arl".into(), Cell::opt_num(cal.map(|c| c.achieved_arl))]);
    s.push(vec!["samples".into(), series.len().into()]);
    s.push(vec!["change_point".into(), Cell::opt_int(det.change_point)]);
    s.push(vec!["alarms".into(), det.log.alarm_times.len().into()]);
    s.push(vec!["false_alarms".into(), det.false_alarms.into()]);
    s.push(vec!["delay_samples".into(), Cell::opt_int(det.delay_samples)]);
    s.push(vec!["delay_seconds".into(), Cell::opt_num(det.delay_seconds)]);
    report.sections.push(s);
    let mut alarms = Section::new("alarms", &["alarm_index", "cycle_length", "is_false"]);
    for (t, c) in det.log.alarm_times.iter().zip(&det.log.cycle_lengths) {
        let is_false = det.change_point.is_none_or(|nu| *t <= nu);
        alarms.push(vec![(*t).into(), (*c).into(), is_false.into()]);
    }
    report.sections.push(alarms);
    if det.change_point.is_some() && det.delay_samples.is_none() {
        report.warnings.push("no alarm after the change point".into());
    }
    // Kept for symmetry with the library writer; the section above has the same rows.
    debug_assert!(write_alarm_log_csv(std::io::sink(), &det.log, det.change_point).is_ok());
    Ok(())
}

fn simulate(a: &SimulateArgs, seed: u64, report: &mut Report) -> Result<(), CliError> {
    let model = model_of(&a.model)?;
    let r = detector_threshold(a.procedure, &model, &a.target, a.head_start, &a.solver, &mut report.warnings)?;
    let threshold = r.threshold;
    let spec = build_detector(a.procedure, &model, threshold, a.head_start, &CalibrationOptions::with_panels(r.panels))?;
    let options = SimulationOptions {
        replications: a.replications as usize,
        cap: a.cap,
        seed,
        stadd_change_point: a.stadd_nu,
    };
    let sim = estimate_oc(&spec, &model, &a.nu, &options)?;
    let mut s = Section::new("simulation", &["quantity", "nu", "mean", "std_error", "samples"]);
    s.push(vec!["threshold".into(), Cell::Empty, threshold.into(), Cell::Empty, Cell::Empty]);
    let mut row = |name: &str, nu: Option<u64>, v: quickdetect::detectors::McValue| {
        s.push(vec![name.into(), Cell::opt_int(nu), v.mean.into(), v.std_error.into(), v.samples.into()]);
    };
    row("arl", None, sim.arl);
    for (nu, v) in &sim.add {
        row("add", Some(*nu), *v);
    }
    if let Some(v) = sim.stadd {
        row("stadd", a.stadd_nu, v);
    }
    report.sections.push(s);
    if sim.censored > 0 {
        report
            .warnings
            .push(format!("{} runs reached the cap of {} observations and were dropped", sim.censored, a.cap));
    }
    Ok(())
}

fn write_profiles(dir: &Path, case: &BenchmarkCase, computed: &CaseReport) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(format!("add_profile_a{}.csv", case.a));
    let last = 2 * case.change_points.iter().copied().max().unwrap_or(0);
    write_file(&path, |w| {
        let labels: Vec<&str> = computed.rows.iter().map(|r| r.kind.label()).collect();
        writeln!(w, "nu,{}", labels.join(","))?;
        for nu in 0..=last {
            let vals: Vec<String> = computed.rows.iter().map(|r| r.add_at(nu).to_string()).collect();
            writeln!(w, "{nu},{}", vals.join(","))?;
        }
        Ok(())
    })
}

fn tables(a: &TablesArgs, report: &mut Report) -> Result<(), CliError> {
    let mut cases = Vec::new();
    if !a.unit_only {
        cases.push((BenchmarkCase::small_ratio(), a.panels_small));
    }
    cases.push((BenchmarkCase::unit_ratio(), a.panels_unit));
    let mut s = Section::new(
        "checks",
        &["case", "check", "computed", "reference", "rel_error", "rel_tol", "passed"],
    );
    let (mut passed, mut total) = (0usize, 0usize);
    for (case, panels) in cases {
        let computed = evaluate_case(&case, &SolverConfig::with_panels(panels))?;
        for c in computed.arl_checks(&case).into_iter().chain(computed.delay_checks(&case)) {
            total += 1;
            passed += usize::from(c.passed());
            let name = c.label.trim_start_matches(&format!("[{}] ", case.label)).to_string();
            s.push(vec![
                case.label.into(),
                name.into(),
                c.computed.into(),
                c.reference.into(),
                c.rel_error().into(),
                c.rel_tol.into(),
                c.passed().into(),
            ]);
        }
        if let Some(dir) = &a.plot_dir {
            write_profiles(dir, &case, &computed)?;
        }
    }
    report.sections.push(s);
    report.notes.push(format!("passed {passed} of {total} checks"));
    Ok(())
}
