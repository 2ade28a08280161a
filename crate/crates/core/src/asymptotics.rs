//! Monte-Carlo estimates of the renewal-theoretic constants of the log-LR random
//! walk and the closed-form ARL and delay approximations built from them.

use crate::detectors::DetectorKind;
use crate::model::{std_normal_cdf, GaussianChangeModel, Hypothesis, KlNumbers, LogLrSampler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("invalid Monte-Carlo budget: {0}")]
    InvalidBudget(String),
    #[error("inconsistent constants: {0}")]
    Inconsistent(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Once a walk is this far past zero against its drift, further terms change nothing in double precision.
const ESCAPE: f64 = 50.0;
const MAX_SWEEPS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McBudget {
    pub n_paths: usize,
    pub horizon: usize,
    pub seed: u64,
    pub batches: usize,
    /// Extend every series and path functional beyond the horizon.
    pub tail_correction: bool,
}

impl Default for McBudget {
    fn default() -> Self {
        Self {
            n_paths: 1_000_000,
            horizon: 10_000,
            seed: 20_240_601,
            batches: 100,
            tail_correction: false,
        }
    }
}

impl McBudget {
    pub fn new(n_paths: usize, horizon: usize, seed: u64) -> Self {
        Self {
            n_paths,
            horizon,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), AsymptoticsError> {
        if self.batches < 2 {
            return Err(AsymptoticsError::InvalidBudget("at least two batches are needed".into()));
        }
        if self.n_paths < self.batches {
            return Err(AsymptoticsError::InvalidBudget(format!(
                "{} paths cannot fill {} batches",
                self.n_paths, self.batches
            )));
        }
        if self.horizon < 2 {
            return Err(AsymptoticsError::InvalidBudget("horizon must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Whether `target` lies within `k` standard errors plus a relative slack.
    pub fn agrees_with(&self, target: f64, k: f64, rel: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + rel * target.abs()
    }
}

/// Plain constant values, for plugging published or estimated numbers into the approximations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantValues {
    pub zeta: f64,
    pub varkappa: f64,
    pub beta0: f64,
    pub beta_inf: f64,
    pub c0: f64,
    pub c_inf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticConstants {
    pub zeta: Estimate,
    pub varkappa: Estimate,
    pub beta0: Estimate,
    pub beta_inf: Estimate,
    pub c0: Estimate,
    pub c_inf: Estimate,
    pub kl: KlNumbers,
    pub mc_paths: usize,
    pub mc_horizon: usize,
    pub tail_correction: bool,
    pub warnings: Vec<String>,
}

impl AsymptoticConstants {
    pub fn values(&self) -> ConstantValues {
        ConstantValues {
            zeta: self.zeta.value,
            varkappa: self.varkappa.value,
            beta0: self.beta0.value,
            beta_inf: self.beta_inf.value,
            c0: self.c0.value,
            c_inf: self.c_inf.value,
        }
    }
}

/// Simulation output that keeps the per-path draws behind `C_0` and `C_inf`,
/// so `C_r` can be evaluated on common random numbers for any `r`.
#[derive(Debug, Clone)]
pub struct MonteCarloConstants {
    pub constants: AsymptoticConstants,
    v_tilde: Vec<f64>,
    r_inf: Vec<f64>,
    batches: usize,
}

impl MonteCarloConstants {
    /// `E log(1 + r + V)` over the stored post-change draws of `V`.
    pub fn c_r(&self, r: f64) -> Estimate {
        mean_log_shifted(&self.v_tilde, self.batches, r)
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn v_tilde(&self) -> &[f64] {
        &self.v_tilde
    }

    pub fn r_inf(&self) -> &[f64] {
        &self.r_inf
    }
}

/// Batch-means estimate of `E log(1 + r + V)` over batch-major draws of `V`.
pub fn mean_log_shifted(v_draws: &[f64], batches: usize, r: f64) -> Estimate {
    batch_estimate(v_draws, batches, |v| (1.0 + r + v).ln())
}

#[derive(Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.c
    }
}

fn mean_of<I: IntoIterator<Item = f64>>(xs: I) -> (f64, usize) {
    let mut acc = Neumaier::default();
    let mut n = 0;
    for x in xs {
        acc.add(x);
        n += 1;
    }
    (acc.total() / n as f64, n)
}

fn batch_se(batch_values: &[f64]) -> f64 {
    let b = batch_values.len() as f64;
    let (m, _) = mean_of(batch_values.iter().copied());
    let var = batch_values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (b - 1.0);
    (var / b).sqrt()
}

/// Pooled mean of `f` with a batch-means standard error; `xs` is batch-major.
fn batch_estimate(xs: &[f64], batches: usize, f: impl Fn(f64) -> f64 + Sync) -> Estimate {
    let per = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean_of(xs[b * per..(b + 1) * per].iter().map(|x| f(*x))).0)
        .collect();
    Estimate {
        value: mean_of(means.iter().copied()).0,
        std_error: batch_se(&means),
    }
}

struct BatchOutput {
    pre_positive: Vec<u32>,
    post_nonpositive: Vec<u32>,
    post_negative_part: Vec<f64>,
    min_post: Extended,
    max_pre: Extended,
    max_pre_half: Vec<f64>,
    v_tilde: Extended,
    r_inf: Extended,
}

/// A path functional at the horizon and its extension to infinite time.
#[derive(Default)]
struct Extended {
    truncated: Vec<f64>,
    extended: Vec<f64>,
}

impl Extended {
    fn pick(&self, extend: bool) -> &[f64] {
        if extend {
            &self.extended
        } else {
            &self.truncated
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fixed point of `x_i = base_i + mult_i * x_J` with `J` uniform over the pool.
fn perpetuity<R: Rng>(base: &[f64], mult: &[f64], rng: &mut R) -> Vec<f64> {
    let n = base.len();
    let mut x = base.to_vec();
    for _ in 0..MAX_SWEEPS {
        let mut change: f64 = 0.0;
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let j = rng.random_range(0..n);
                let v = base[i] + mult[i] * x[j];
                change = change.max(((v - x[i]) / v).abs());
                v
            })
            .collect();
        x = next;
        if change < 1e-14 {
            break;
        }
    }
    x
}

/// Fixed point of `x_i = op(base_i, shift_i + x_J)` for `op` min or max.
fn extremum_recursion<R: Rng>(base: &[f64], shift: &[f64], rng: &mut R, take_min: bool) -> Vec<f64> {
    let n = base.len();
    let mut x = base.to_vec();
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let j = rng.random_range(0..n);
                let cand = shift[i] + x[j];
                let v = if take_min { base[i].min(cand) } else { base[i].max(cand) };
                changed |= v != x[i];
                v
            })
            .collect();
        x = next;
        if !changed {
            break;
        }
    }
    x
}

fn simulate_batch(
    pre: &LogLrSampler,
    post: &LogLrSampler,
    horizon: usize,
    paths: usize,
    seed: u64,
    batch: u64,
) -> BatchOutput {
    let half = horizon / 2;
    let mut pre_positive = vec![0u32; horizon];
    let mut post_nonpositive = vec![0u32; horizon];
    let mut post_negative_part = vec![0.0; horizon];

    let mut rng = rng_for(seed, 2 * batch + 1);
    let mut min_post = Vec::with_capacity(paths);
    let mut v_tilde = Vec::with_capacity(paths);
    let mut end_post = Vec::with_capacity(paths);
    for _ in 0..paths {
        let (mut s, mut mn, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut escaped = false;
        for k in 0..horizon {
            s += post.sample(&mut rng);
            if s <= 0.0 {
                post_nonpositive[k] += 1;
                post_negative_part[k] -= s;
                mn = mn.min(s);
            }
            v += (-s).exp();
            if s > ESCAPE {
                escaped = true;
                break;
            }
        }
        min_post.push(mn);
        v_tilde.push(v);
        end_post.push(if escaped { f64::INFINITY } else { s });
    }

    let mut rng = rng_for(seed, 2 * batch);
    let mut max_pre = Vec::with_capacity(paths);
    let mut max_pre_half = Vec::with_capacity(paths);
    let mut r_inf = Vec::with_capacity(paths);
    let mut end_pre = Vec::with_capacity(paths);
    for _ in 0..paths {
        let (mut s, mut mx, mut r) = (0.0f64, 0.0f64, 0.0f64);
        let mut mx_half = f64::NAN;
        let mut escaped = false;
        for k in 0..horizon {
            s += pre.sample(&mut rng);
            if s > 0.0 {
                pre_positive[k] += 1;
                mx = mx.max(s);
            }
            r += s.exp();
            if k + 1 == half {
                mx_half = mx;
            }
            if s < -ESCAPE {
                escaped = true;
                break;
            }
        }
        max_pre_half.push(if mx_half.is_nan() { mx } else { mx_half });
        max_pre.push(mx);
        r_inf.push(r);
        end_pre.push(if escaped { f64::NEG_INFINITY } else { s });
    }

    let mut rng = rng_for(seed, (1u64 << 40) + batch);
    let mult_post: Vec<f64> = end_post.iter().map(|s| (-s).exp()).collect();
    let mult_pre: Vec<f64> = end_pre.iter().map(|s| s.exp()).collect();
    let v_ext = perpetuity(&v_tilde, &mult_post, &mut rng);
    let r_ext = perpetuity(&r_inf, &mult_pre, &mut rng);
    let min_ext = extremum_recursion(&min_post, &end_post, &mut rng, true);
    let max_ext = extremum_recursion(&max_pre, &end_pre, &mut rng, false);
    BatchOutput {
        pre_positive,
        post_nonpositive,
        post_negative_part,
        min_post: Extended { truncated: min_post, extended: min_ext },
        max_pre: Extended { truncated: max_pre, extended: max_ext },
        max_pre_half,
        v_tilde: Extended { truncated: v_tilde, extended: v_ext },
        r_inf: Extended { truncated: r_inf, extended: r_ext },
    }
}

/// `2 * integral_{w0}^inf Phi(-w) / w dw`, the Gaussian tail of `sum_{k > H} P(S_k wrong side) / k`.
fn gaussian_probability_tail(w0: f64) -> f64 {
    let w0 = w0.max(1e-12);
    let t_max = (40.0 / w0).ln().max(0.0) + 1.0;
    let n = 20_000;
    let h = t_max / n as f64;
    let f = |t: f64| std_normal_cdf(-w0 * t.exp());
    let mut acc = f(0.0) + f(t_max);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    2.0 * acc * h / 3.0
}

/// `sum_{k > H} E[S_k^-] / k` for a Gaussian walk with drift `drift > 0` and step variance `var`.
fn gaussian_negative_part_tail(drift: f64, var: f64, start: f64) -> f64 {
    let sigma = var.sqrt();
    let c = drift / sigma;
    let w0 = c * start.sqrt();
    let phi = (-0.5 * w0 * w0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    2.0 * (var / drift) * (0.5 * (w0 * w0 + 1.0) * std_normal_cdf(-w0) - 0.5 * w0 * phi)
}

/// Runs the full simulation and keeps per-path draws.
pub fn simulate_constants(
    model: &GaussianChangeModel,
    budget: &McBudget,
) -> Result<MonteCarloConstants, AsymptoticsError> {
    budget.validate()?;
    let mut warnings = Vec::new();
    if budget.n_paths < 10_000 || budget.horizon < 1_000 {
        warnings.push(format!(
            "budget below the recommended minimum (10000 paths, horizon 1000): {} paths, horizon {}",
            budget.n_paths, budget.horizon
        ));
    }
    let kl = model.kl_numbers();
    let pre = model.log_lr_sampler(Hypothesis::Pre);
    let post = model.log_lr_sampler(Hypothesis::Post);
    let h = budget.horizon;
    let nb = budget.batches;
    let per = budget.n_paths / nb;
    let used = per * nb;

    let outputs: Vec<BatchOutput> = (0..nb)
        .into_par_iter()
        .map(|b| simulate_batch(&pre, &post, h, per, budget.seed, b as u64))
        .collect();

    // Series in the overshoot constants.
    let series = |pos: &[u32], nonpos: &[u32], negpart: &[f64], n: f64| -> (f64, f64) {
        let mut prob = Neumaier::default();
        let mut neg = Neumaier::default();
        for k in 0..h {
            let w = 1.0 / (k + 1) as f64;
            prob.add(w * (pos[k] as f64 + nonpos[k] as f64) / n);
            neg.add(w * negpart[k] / n);
        }
        (prob.total(), neg.total())
    };
    let var_pre = pre.second_moment() - pre.mean() * pre.mean();
    let var_post = post.second_moment() - post.mean() * post.mean();
    let start = h as f64 + 0.5;
    let prob_tail = gaussian_probability_tail(kl.i_f / var_pre.sqrt() * start.sqrt())
        + gaussian_probability_tail(kl.i_g / var_post.sqrt() * start.sqrt());
    let neg_tail = gaussian_negative_part_tail(kl.i_g, var_post, start);
    let (prob_tail_used, neg_tail_used) = if budget.tail_correction {
        (prob_tail, neg_tail)
    } else {
        (0.0, 0.0)
    };
    let overshoot_mean = post.second_moment() / (2.0 * post.mean());
    let zeta_of = |p: f64| (-(p + prob_tail_used)).exp() / kl.i_g;
    let kappa_of = |n: f64| overshoot_mean - n - neg_tail_used;

    let mut pre_positive = vec![0u32; h];
    let mut post_nonpositive = vec![0u32; h];
    let mut post_negative_part = vec![0.0; h];
    let mut zeta_b = Vec::with_capacity(nb);
    let mut kappa_b = Vec::with_capacity(nb);
    for o in &outputs {
        let (p, n) = series(&o.pre_positive, &o.post_nonpositive, &o.post_negative_part, per as f64);
        zeta_b.push(zeta_of(p));
        kappa_b.push(kappa_of(n));
        for k in 0..h {
            pre_positive[k] += o.pre_positive[k];
            post_nonpositive[k] += o.post_nonpositive[k];
            post_negative_part[k] += o.post_negative_part[k];
        }
    }
    let (p_all, n_all) = series(&pre_positive, &post_nonpositive, &post_negative_part, used as f64);
    let zeta = Estimate {
        value: zeta_of(p_all),
        std_error: batch_se(&zeta_b),
    };
    let varkappa = Estimate {
        value: kappa_of(n_all),
        std_error: batch_se(&kappa_b),
    };
    if zeta.value > 1.0 {
        warnings.push(format!(
            "zeta = {:.5} exceeds 1; the truncated series is biased at this horizon",
            zeta.value
        ));
    }
    let note = if budget.tail_correction {
        "added by a Gaussian tail approximation"
    } else {
        "truncated"
    };
    if prob_tail * zeta.value > zeta.std_error {
        warnings.push(format!(
            "zeta: series terms beyond the horizon contribute {:.3e} (standard error {:.3e}); {note}",
            prob_tail * zeta.value,
            zeta.std_error
        ));
    }
    if neg_tail > varkappa.std_error {
        warnings.push(format!(
            "varkappa: series terms beyond the horizon contribute {neg_tail:.3e} (standard error {:.3e}); {note}",
            varkappa.std_error
        ));
    }

    let ext = budget.tail_correction;
    let gather = |f: &dyn Fn(&BatchOutput) -> &[f64]| -> Vec<f64> {
        outputs.iter().flat_map(|o| f(o).iter().copied()).collect()
    };
    let identity = |x: f64| x;
    let min_post = gather(&|o| o.min_post.pick(ext));
    let max_pre = gather(&|o| o.max_pre.pick(ext));
    let v_tilde = gather(&|o| o.v_tilde.pick(ext));
    let r_inf = gather(&|o| o.r_inf.pick(ext));
    let beta0 = batch_estimate(&min_post, nb, identity);
    let beta_inf = batch_estimate(&max_pre, nb, identity);

    let half = gather(&|o| &o.max_pre_half);
    let full = gather(&|o| &o.max_pre.truncated);
    let diffs: Vec<f64> = full.iter().zip(&half).map(|(f, h)| f - h).collect();
    let drift = batch_estimate(&diffs, nb, identity);
    if drift.value.abs() > 2.0 * drift.std_error {
        warnings.push(format!(
            "beta_inf: reflected walk not stationary at the horizon (checkpoints {} and {} differ by {:.4} +- {:.4})",
            h / 2,
            h,
            drift.value,
            drift.std_error
        ));
    }

    let c0 = batch_estimate(&v_tilde, nb, |v| (1.0 + v).ln());
    let joint: Vec<f64> = r_inf.iter().zip(&v_tilde).map(|(r, v)| (1.0 + r + v).ln()).collect();
    let c_inf = batch_estimate(&joint, nb, identity);
    let v_trunc = gather(&|o| &o.v_tilde.truncated);
    let v_full = gather(&|o| &o.v_tilde.extended);
    let tail_mass: Vec<f64> = v_full
        .iter()
        .zip(&v_trunc)
        .map(|(f, t)| (1.0 + f).ln() - (1.0 + t).ln())
        .collect();
    let tail = batch_estimate(&tail_mass, nb, identity);
    if tail.value > c0.std_error {
        warnings.push(format!(
            "C0: mass beyond the horizon shifts E log(1+V) by {:.3e} (standard error {:.3e}); {}",
            tail.value,
            c0.std_error,
            if ext { "included through the renewal extension" } else { "truncated" }
        ));
    }
    if c0.value >= c_inf.value {
        warnings.push(format!("C0 = {} is not below C_inf = {}", c0.value, c_inf.value));
    }

    Ok(MonteCarloConstants {
        constants: AsymptoticConstants {
            zeta,
            varkappa,
            beta0,
            beta_inf,
            c0,
            c_inf,
            kl,
            mc_paths: used,
            mc_horizon: h,
            tail_correction: ext,
            warnings,
        },
        v_tilde,
        r_inf,
        batches: nb,
    })
}

pub fn estimate_constants(
    model: &GaussianChangeModel,
    budget: &McBudget,
) -> Result<AsymptoticConstants, AsymptoticsError> {
    simulate_constants(model, budget).map(|m| m.constants)
}

/// `(zeta, varkappa)` only.
pub fn estimate_overshoot_constants(
    model: &GaussianChangeModel,
    budget: &McBudget,
) -> Result<(Estimate, Estimate), AsymptoticsError> {
    let c = estimate_constants(model, budget)?;
    Ok((c.zeta, c.varkappa))
}

/// `(beta0, beta_inf)` only.
pub fn estimate_beta_constants(
    model: &GaussianChangeModel,
    budget: &McBudget,
) -> Result<(Estimate, Estimate), AsymptoticsError> {
    let c = estimate_constants(model, budget)?;
    Ok((c.beta0, c.beta_inf))
}

/// `(C0, C_inf)` only.
pub fn estimate_c_constants(
    model: &GaussianChangeModel,
    budget: &McBudget,
) -> Result<(Estimate, Estimate), AsymptoticsError> {
    let c = estimate_constants(model, budget)?;
    Ok((c.c0, c.c_inf))
}

fn check_threshold(kind: DetectorKind, threshold: f64) -> Result<(), AsymptoticsError> {
    let ok = match kind {
        DetectorKind::Cusum => threshold > 1.0,
        _ => threshold > 0.0,
    };
    if ok && threshold.is_finite() {
        Ok(())
    } else {
        Err(AsymptoticsError::InvalidArgument(format!(
            "threshold {threshold} is out of range for {kind}"
        )))
    }
}

/// Approximate ARL to false alarm. `head_start` is the mean of the quasi-stationary
/// head start for SRP and the starting point `r` for SR-r; it is ignored otherwise.
pub fn approx_arl(
    kind: DetectorKind,
    threshold: f64,
    constants: &ConstantValues,
    model: &GaussianChangeModel,
    head_start: f64,
) -> Result<f64, AsymptoticsError> {
    check_threshold(kind, threshold)?;
    let zeta = constants.zeta;
    if !(zeta > 0.0) {
        return Err(AsymptoticsError::Inconsistent(format!("zeta = {zeta} must be positive")));
    }
    let kl = model.kl_numbers();
    Ok(match kind {
        DetectorKind::Cusum => {
            threshold / (kl.i_g * zeta * zeta) - threshold.ln() / kl.i_f - 1.0 / (kl.i_g * zeta)
        }
        DetectorKind::Sr => threshold / zeta,
        DetectorKind::Srp | DetectorKind::SrR => threshold / zeta - head_start,
    })
}

/// Approximate worst-case (for SR, immediate-change) average delay.
pub fn approx_delay(
    kind: DetectorKind,
    threshold: f64,
    constants: &ConstantValues,
    model: &GaussianChangeModel,
) -> Result<f64, AsymptoticsError> {
    check_threshold(kind, threshold)?;
    let i_g = model.kl_numbers().i_g;
    let base = threshold.ln() + constants.varkappa;
    Ok(match kind {
        DetectorKind::Cusum => (base + constants.beta0) / i_g,
        DetectorKind::Sr => (base - constants.c0) / i_g,
        DetectorKind::Srp | DetectorKind::SrR => (base - constants.c_inf) / i_g,
    })
}

/// Approximate CUSUM delay for a change far in the future.
pub fn approx_cusum_limit_delay(
    threshold: f64,
    constants: &ConstantValues,
    model: &GaussianChangeModel,
) -> Result<f64, AsymptoticsError> {
    check_threshold(DetectorKind::Cusum, threshold)?;
    Ok((threshold.ln() + constants.varkappa - constants.beta_inf) / model.kl_numbers().i_g)
}

/// Approximate lower bound on the stationary average delay at ARL `gamma`.
pub fn approx_lower_bound(
    gamma: f64,
    constants: &ConstantValues,
    model: &GaussianChangeModel,
) -> Result<f64, AsymptoticsError> {
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(AsymptoticsError::InvalidArgument(format!("ARL {gamma} must exceed 1")));
    }
    let i_g = model.kl_numbers().i_g;
    Ok(((gamma * constants.zeta).ln() + constants.varkappa - constants.c_inf) / i_g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GaussianChangeModel {
        GaussianChangeModel::new(1000.0, 1000.0 * 1.2, 1.0).unwrap()
    }

    fn small() -> McBudget {
        McBudget {
            batches: 10,
            ..McBudget::new(4000, 600, 7)
        }
    }

    #[test]
    fn same_seed_same_constants() {
        let m = GaussianChangeModel::new(1.0, 2.0, 1.0).unwrap();
        let a = estimate_constants(&m, &small()).unwrap();
        let b = estimate_constants(&m, &small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constants_are_ordered_and_in_range() {
        let m = GaussianChangeModel::new(1.0, 2.0, 1.0).unwrap();
        let mc = simulate_constants(&m, &small()).unwrap();
        let c = &mc.constants;
        assert!(c.zeta.value > 0.0 && c.zeta.value <= 1.0);
        assert!(c.beta0.value <= 0.0);
        assert!(c.beta_inf.value >= 0.0);
        assert!(c.c0.value < c.c_inf.value);
        assert_eq!(mc.c_r(0.0), c.c0);
        let mut last = f64::NEG_INFINITY;
        for r in [0.0, 0.5, 2.0, 10.0, 100.0] {
            let v = mc.c_r(r).value;
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn gaussian_tails_match_direct_sums() {
        // Direct partial sum of the Gaussian series from k = 201 far out.
        let (drift, sd) = (0.05f64, 1.0f64);
        let mut direct = 0.0;
        let mut neg = 0.0;
        for k in 201..2_000_000u64 {
            let kf = k as f64;
            let w = drift * kf.sqrt() / sd;
            direct += std_normal_cdf(-w) / kf;
            let m = drift * kf;
            let s = sd * kf.sqrt();
            let phi = (-0.5 * w * w).exp() / (2.0 * std::f64::consts::PI).sqrt();
            neg += (s * phi - m * std_normal_cdf(-w)) / kf;
        }
        let w0 = drift / sd * 200.5f64.sqrt();
        let p = gaussian_probability_tail(w0);
        assert!((p - direct).abs() < 1e-3 * direct, "{p} vs {direct}");
        let approx = gaussian_negative_part_tail(drift, sd * sd, 200.5);
        assert!((approx - neg).abs() < 1e-3 * neg, "{approx} vs {neg}");
    }

    #[test]
    fn approximations_follow_their_formulas() {
        let m = model();
        let kl = m.kl_numbers();
        let c = ConstantValues {
            zeta: 0.5,
            varkappa: 1.0,
            beta0: -1.0,
            beta_inf: 1.3,
            c0: 8.0,
            c_inf: 9.0,
        };
        let a = 1000.0f64;
        let cusum = approx_arl(DetectorKind::Cusum, a, &c, &m, 0.0).unwrap();
        assert!((cusum - (a / (kl.i_g * 0.25) - a.ln() / kl.i_f - 1.0 / (kl.i_g * 0.5))).abs() < 1e-9);
        assert_eq!(approx_arl(DetectorKind::Sr, a, &c, &m, 0.0).unwrap(), 2000.0);
        assert_eq!(approx_arl(DetectorKind::SrR, a, &c, &m, 100.0).unwrap(), 1900.0);
        let d = approx_delay(DetectorKind::Sr, a, &c, &m).unwrap();
        assert!((d - (a.ln() + 1.0 - 8.0) / kl.i_g).abs() < 1e-12);
        let l = approx_cusum_limit_delay(a, &c, &m).unwrap();
        assert!((l - (a.ln() - 0.3) / kl.i_g).abs() < 1e-12);
        assert!(approx_arl(DetectorKind::Cusum, 0.5, &c, &m, 0.0).is_err());
        assert!(approx_lower_bound(1.0, &c, &m).is_err());
    }

    #[test]
    fn rejects_bad_budgets() {
        let m = model();
        assert!(estimate_constants(&m, &McBudget::new(10, 100, 0)).is_err());
        assert!(estimate_constants(&m, &McBudget { batches: 1, ..small() }).is_err());
    }
}
