//! Gaussian change model `N(mu, a*mu) -> N(theta, a*theta)` and the law of its
//! one-observation likelihood ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error("likelihood-ratio argument must be positive and finite, got {0}")]
    NonPositiveArgument(f64),
    #[error("density is singular at the support endpoint t = {0}")]
    SupportEndpoint(f64),
    #[error("statistic values must be finite and nonnegative, got x = {x}, y = {y}")]
    NegativeStatistic { x: f64, y: f64 },
}

/// Which regime generates the observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Hypothesis {
    /// No change: observations follow `N(mu, a*mu)`.
    Pre,
    /// Changed: observations follow `N(theta, a*theta)`.
    Post,
}

/// The map `xi` in the generic recursion `V_n = xi(V_{n-1}) * LR_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StatisticMap {
    /// `x -> max(1, x)`
    Cusum,
    /// `x -> 1 + x`
    ShiryaevRoberts,
}

impl StatisticMap {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            StatisticMap::Cusum => x.max(1.0),
            StatisticMap::ShiryaevRoberts => 1.0 + x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrSupportBound {
    pub t_min: f64,
    /// True when `theta > mu`; the LR then lives on `[t_min, inf)`, otherwise on `(0, t_min]`.
    pub upward: bool,
}

impl LrSupportBound {
    /// Whether `t` lies in the open support of the LR distribution.
    pub fn contains(&self, t: f64) -> bool {
        if self.upward {
            t > self.t_min
        } else {
            t > 0.0 && t < self.t_min
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlNumbers {
    /// Pre-change divergence, nats per observation.
    pub i_f: f64,
    /// Post-change divergence, nats per observation.
    pub i_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianChangeModel {
    mu: f64,
    theta: f64,
    a: f64,
}

/// Standard normal CDF through `erfc`, accurate in both tails.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

#[inline]
fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - (sd * (2.0 * PI).sqrt()).ln()
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    log_normal_pdf(x, mean, sd).exp()
}

impl GaussianChangeModel {
    pub fn new(mu: f64, theta: f64, a: f64) -> Result<Self, ModelError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(mu) || !ok(theta) || !ok(a) {
            return Err(ModelError::InvalidParameters(format!(
                "mu, theta and a must be positive and finite (mu={mu}, theta={theta}, a={a})"
            )));
        }
        if mu == theta {
            return Err(ModelError::InvalidParameters(format!(
                "pre- and post-change means coincide (mu = theta = {mu})"
            )));
        }
        Ok(Self { mu, theta, a })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn pre_variance(&self) -> f64 {
        self.a * self.mu
    }

    pub fn post_variance(&self) -> f64 {
        self.a * self.theta
    }

    pub fn mean(&self, hyp: Hypothesis) -> f64 {
        match hyp {
            Hypothesis::Pre => self.mu,
            Hypothesis::Post => self.theta,
        }
    }

    pub fn sd(&self, hyp: Hypothesis) -> f64 {
        (self.a * self.mean(hyp)).sqrt()
    }

    /// Log of the LR support endpoint.
    pub fn log_t_min(&self) -> f64 {
        0.5 * (self.mu / self.theta).ln() - (self.theta - self.mu) / (2.0 * self.a)
    }

    /// Coefficient of `x^2` in the log-likelihood ratio.
    pub fn lr_curvature(&self) -> f64 {
        (self.theta - self.mu) / (2.0 * self.a * self.theta * self.mu)
    }

    pub fn support_bound(&self) -> LrSupportBound {
        LrSupportBound {
            t_min: self.log_t_min().exp(),
            upward: self.theta > self.mu,
        }
    }

    pub fn log_likelihood_ratio(&self, x: f64) -> f64 {
        self.log_t_min() + self.lr_curvature() * x * x
    }

    pub fn likelihood_ratio(&self, x: f64) -> f64 {
        self.log_likelihood_ratio(x).exp()
    }

    /// Observation density under the given hypothesis.
    pub fn density(&self, x: f64, hyp: Hypothesis) -> f64 {
        normal_pdf(x, self.mean(hyp), self.sd(hyp))
    }

    pub fn kl_numbers(&self) -> KlNumbers {
        let (mu, th, a) = (self.mu, self.theta, self.a);
        let d2 = (th - mu) * (th - mu);
        KlNumbers {
            i_f: d2 / (2.0 * a * th) + 0.5 * ((mu / th - 1.0) - (mu / th).ln()),
            i_g: d2 / (2.0 * a * mu) + 0.5 * ((th / mu - 1.0) - (th / mu).ln()),
        }
    }

    /// Threshold on `X^2` at which the LR equals `t`; may be negative.
    fn square_threshold(&self, t: f64) -> f64 {
        (t.ln() - self.log_t_min()) / self.lr_curvature()
    }

    /// `(P(|X| <= h), P(|X| > h))` for `X` under `hyp`, both computed without cancellation.
    fn abs_mass(&self, h: f64, hyp: Hypothesis) -> (f64, f64) {
        let m = self.mean(hyp);
        let s = self.sd(hyp);
        let hi = (h - m) / s;
        let lo = (-h - m) / s;
        let inside = std_normal_cdf(hi) - std_normal_cdf(lo);
        let outside = std_normal_cdf(-hi) + std_normal_cdf(lo);
        (inside, outside)
    }

    /// `(P(LR <= t), P(LR > t))`.
    pub fn lr_cdf_sf(&self, t: f64, hyp: Hypothesis) -> Result<(f64, f64), ModelError> {
        if !(t > 0.0) || t.is_nan() {
            return Err(ModelError::NonPositiveArgument(t));
        }
        if t.is_infinite() {
            return Ok((1.0, 0.0));
        }
        let q = self.square_threshold(t);
        if self.theta > self.mu {
            if q <= 0.0 {
                return Ok((0.0, 1.0));
            }
            Ok(self.abs_mass(q.sqrt(), hyp))
        } else {
            if q <= 0.0 {
                return Ok((1.0, 0.0));
            }
            let (inside, outside) = self.abs_mass(q.sqrt(), hyp);
            Ok((outside, inside))
        }
    }

    pub fn lr_cdf(&self, t: f64, hyp: Hypothesis) -> Result<f64, ModelError> {
        Ok(self.lr_cdf_sf(t, hyp)?.0)
    }

    /// `P(lo < LR <= hi)` for `0 <= lo <= hi`, picking the tail that avoids cancellation.
    pub fn lr_mass(&self, lo: f64, hi: f64, hyp: Hypothesis) -> f64 {
        if !(hi > lo) {
            return 0.0;
        }
        let (c_hi, s_hi) = self.lr_cdf_sf(hi, hyp).expect("hi > lo >= 0");
        if lo <= 0.0 {
            return c_hi;
        }
        let (c_lo, s_lo) = self.lr_cdf_sf(lo, hyp).expect("lo > 0");
        let m = if c_lo < 0.5 { c_hi - c_lo } else { s_lo - s_hi };
        m.max(0.0)
    }

    pub fn lr_density(&self, t: f64, hyp: Hypothesis) -> Result<f64, ModelError> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(ModelError::NonPositiveArgument(t));
        }
        let q = self.square_threshold(t);
        if q < 0.0 {
            return Ok(0.0);
        }
        if q == 0.0 {
            return Err(ModelError::SupportEndpoint(t));
        }
        let h = q.sqrt();
        let m = self.mean(hyp);
        let s = self.sd(hyp);
        // log space throughout: the Jacobian can be tiny when t_min is
        let (l1, l2) = (log_normal_pdf(h, m, s), log_normal_pdf(-h, m, s));
        let (hi, lo) = if l1 >= l2 { (l1, l2) } else { (l2, l1) };
        let log_g = hi + (lo - hi).exp().ln_1p();
        let log_jacobian = (2.0 * h).ln() + self.lr_curvature().abs().ln() + t.ln();
        Ok((log_g - log_jacobian).exp())
    }

    /// `K_d(x, y) = p_d(y / xi(x)) / xi(x)`: density of the next statistic value `y` given `x`.
    pub fn transition_kernel(
        &self,
        x: f64,
        y: f64,
        xi: StatisticMap,
        hyp: Hypothesis,
    ) -> Result<f64, ModelError> {
        if !(x >= 0.0) || !(y >= 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(ModelError::NegativeStatistic { x, y });
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let s = xi.apply(x);
        Ok(self.lr_density(y / s, hyp)? / s)
    }

    pub fn log_lr_sampler(&self, hyp: Hypothesis) -> LogLrSampler {
        LogLrSampler::new(self, hyp)
    }

    /// Partial sums `S_1..S_n` of log-likelihood ratios with observations drawn under `hyp`.
    pub fn sample_log_lr_walk(&self, hyp: Hypothesis, n_steps: usize, seed: u64) -> Vec<f64> {
        let sampler = self.log_lr_sampler(hyp);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = 0.0;
        (0..n_steps)
            .map(|_| {
                s += sampler.sample(&mut rng);
                s
            })
            .collect()
    }

    pub fn sample_observation<R: Rng + ?Sized>(&self, rng: &mut R, hyp: Hypothesis) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean(hyp) + self.sd(hyp) * z
    }
}

/// Draws log-LR increments `Z = log LR(X)` directly from a standard normal,
/// with the mean part folded into a constant so nothing cancels.
#[derive(Debug, Clone, Copy)]
pub struct LogLrSampler {
    base: f64,
    lin: f64,
    quad: f64,
}

impl LogLrSampler {
    pub fn new(model: &GaussianChangeModel, hyp: Hypothesis) -> Self {
        let (mu, th, a) = (model.mu, model.theta, model.a);
        let m = model.mean(hyp);
        let s = model.sd(hyp);
        let c = model.lr_curvature();
        // log t_min + c*m^2 simplified
        let base = 0.5 * (mu / th).ln() + (th - mu) * (m * m - th * mu) / (2.0 * a * th * mu);
        Self {
            base,
            lin: 2.0 * c * m * s,
            quad: c * s * s,
        }
    }

    /// Increment as a function of a standard normal draw.
    #[inline]
    pub fn from_normal(&self, n: f64) -> f64 {
        self.base + n * (self.lin + self.quad * n)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.from_normal(rng.sample(StandardNormal))
    }

    /// Exact mean of the increment.
    pub fn mean(&self) -> f64 {
        self.base + self.quad
    }

    /// Exact second moment of the increment.
    pub fn second_moment(&self) -> f64 {
        let (b, l, q) = (self.base, self.lin, self.quad);
        // E[(b + l n + q n^2)^2] with E n^2 = 1, E n^4 = 3
        b * b + l * l + 3.0 * q * q + 2.0 * b * q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(mu: f64, th: f64, a: f64) -> GaussianChangeModel {
        GaussianChangeModel::new(mu, th, a).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(GaussianChangeModel::new(1.0, 1.0, 1.0).is_err());
        assert!(GaussianChangeModel::new(-1.0, 1.0, 1.0).is_err());
        assert!(GaussianChangeModel::new(1.0, 2.0, 0.0).is_err());
        assert!(GaussianChangeModel::new(1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn lr_at_zero_is_support_endpoint() {
        let md = m(1000.0, 1001.0, 0.01);
        let expected = (1000.0f64 / 1001.0).sqrt() * (-50.0f64).exp();
        let got = md.likelihood_ratio(0.0);
        assert!((got / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lr_matches_density_ratio() {
        let md = m(1000.0, 1001.0, 0.01);
        let x = 1000.5;
        let direct = md.density(x, Hypothesis::Post) / md.density(x, Hypothesis::Pre);
        assert!((md.likelihood_ratio(x) / direct - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_vanishes_below_support() {
        for md in [m(1000.0, 1001.0, 0.01), m(1000.0, 1001.0, 1.0), m(5.0, 9.0, 2.0)] {
            let t = md.support_bound().t_min / 2.0;
            assert_eq!(md.lr_cdf(t, Hypothesis::Pre).unwrap(), 0.0);
            assert_eq!(md.lr_cdf(t, Hypothesis::Post).unwrap(), 0.0);
            assert_eq!(md.lr_density(t, Hypothesis::Pre).unwrap(), 0.0);
        }
    }

    #[test]
    fn cdf_tends_to_one() {
        let md = m(1000.0, 1001.0, 1.0);
        assert!((md.lr_cdf(1e6, Hypothesis::Pre).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(md.lr_cdf(f64::INFINITY, Hypothesis::Post).unwrap(), 1.0);
        assert!(md.lr_cdf(0.0, Hypothesis::Pre).is_err());
        assert!(md.lr_cdf(-1.0, Hypothesis::Pre).is_err());
    }

    #[test]
    fn density_matches_finite_difference() {
        let md = m(1000.0, 1001.0, 1.0);
        let t = 1.05;
        let step = 1e-6;
        for hyp in [Hypothesis::Pre, Hypothesis::Post] {
            let fd = (md.lr_cdf(t + step, hyp).unwrap() - md.lr_cdf(t - step, hyp).unwrap())
                / (2.0 * step);
            let d = md.lr_density(t, hyp).unwrap();
            assert!((fd / d - 1.0).abs() < 1e-6, "{hyp:?} {fd} {d}");
        }
        let ratio = md.lr_density(t, Hypothesis::Post).unwrap()
            / md.lr_density(t, Hypothesis::Pre).unwrap();
        assert!((ratio - 1.05).abs() < 1e-10);
    }

    #[test]
    fn density_singular_at_endpoint() {
        let md = m(3.0, 4.0, 1.0);
        let t = md.support_bound().t_min;
        let q = md.square_threshold(t);
        if q == 0.0 {
            assert!(md.lr_density(t, Hypothesis::Pre).is_err());
        }
        assert!(md.lr_density(t * (1.0 + 1e-9), Hypothesis::Pre).unwrap() > 1.0);
    }

    #[test]
    fn kernel_reduces_to_lr_density_at_origin() {
        let md = m(1000.0, 1001.0, 1.0);
        for y in [0.97, 1.0, 1.03] {
            let k = md
                .transition_kernel(0.0, y, StatisticMap::ShiryaevRoberts, Hypothesis::Pre)
                .unwrap();
            assert_eq!(k, md.lr_density(y, Hypothesis::Pre).unwrap());
        }
    }

    #[test]
    fn kernel_integrates_to_cdf() {
        // Gauss-Legendre on (t_min, 2] after the substitution t = t_min + u^2 that removes the edge singularity.
        let md = m(1000.0, 1001.0, 1.0);
        let xi = StatisticMap::Cusum;
        let t_min = md.support_bound().t_min;
        let upper = 2.0f64;
        let umax = (upper - t_min).sqrt();
        let n = 4000;
        let mut total = 0.0;
        for i in 0..n {
            let u = (i as f64 + 0.5) * umax / n as f64;
            let y = t_min + u * u;
            total += md.transition_kernel(0.5, y, xi, Hypothesis::Pre).unwrap() * 2.0 * u;
        }
        total *= umax / n as f64;
        let cdf = md.lr_cdf(upper, Hypothesis::Pre).unwrap();
        assert!((total - cdf).abs() < 1e-6, "{total} {cdf}");
    }

    #[test]
    fn kl_numbers_known_cases() {
        let k = m(1000.0, 1001.0, 0.01).kl_numbers();
        assert!((k.i_f - 0.05).abs() < 1e-4 && (k.i_g - 0.05).abs() < 1e-4);
        let k = m(1000.0, 1001.0, 1.0).kl_numbers();
        assert!((k.i_f - 5e-4).abs() < 1e-6 && (k.i_g - 5e-4).abs() < 1e-6);
        let k = m(13329.764, 13600.0, 20.028).kl_numbers();
        assert!((k.i_g / 0.1369 - 1.0).abs() < 5e-3);
        assert!((k.i_f / 0.1342 - 1.0).abs() < 5e-3);
    }

    #[test]
    fn sampler_moments_are_exact() {
        let md = m(1000.0, 1001.0, 0.01);
        let kl = md.kl_numbers();
        let post = md.log_lr_sampler(Hypothesis::Post);
        let pre = md.log_lr_sampler(Hypothesis::Pre);
        assert!((post.mean() - kl.i_g).abs() < 1e-12);
        assert!((pre.mean() + kl.i_f).abs() < 1e-12);
        // increment equals log LR of the underlying observation
        let n = 0.37;
        let x = md.mu() + md.sd(Hypothesis::Pre) * n;
        assert!((pre.from_normal(n) - md.log_likelihood_ratio(x)).abs() < 1e-10);
    }

    #[test]
    fn walk_is_deterministic() {
        let md = m(1000.0, 1001.0, 1.0);
        let a = md.sample_log_lr_walk(Hypothesis::Pre, 50, 7);
        let b = md.sample_log_lr_walk(Hypothesis::Pre, 50, 7);
        assert_eq!(a, b);
        assert_ne!(a, md.sample_log_lr_walk(Hypothesis::Pre, 50, 8));
    }

    #[test]
    fn downward_shift_support_is_bounded_above() {
        let md = m(1001.0, 1000.0, 1.0);
        let b = md.support_bound();
        assert!(!b.upward);
        assert_eq!(md.lr_cdf(b.t_min * 1.01, Hypothesis::Pre).unwrap(), 1.0);
        let c = md.lr_cdf(1.0, Hypothesis::Pre).unwrap();
        assert!(c > 0.0 && c < 1.0);
    }

    #[test]
    fn mass_is_additive() {
        let md = m(1000.0, 1001.0, 0.01);
        let p = Hypothesis::Pre;
        let total = md.lr_mass(0.0, 0.9, p) + md.lr_mass(0.9, 1.2, p) + md.lr_mass(1.2, 50.0, p);
        assert!((total - md.lr_cdf(50.0, p).unwrap()).abs() < 1e-15);
    }
}
