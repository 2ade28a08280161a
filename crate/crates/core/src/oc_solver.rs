//! Operating characteristics of Markov detection statistics from their renewal
//! integral equations, discretized by piecewise-constant collocation on `[0, A]`.
//!
//! For a statistic `V_n = xi(V_{n-1}) * LR_n` stopped at the first crossing of `A`,
//! the solver produces the ARL to false alarm `l(x)`, the zero-delay ADD `d0(x)`,
//! the integral ADD `psi(x)`, the delay profile `ADD_nu`, and the quasi-stationary
//! eigenpair of the no-change kernel.

use crate::model::{GaussianChangeModel, Hypothesis, ModelError, StatisticMap};
use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{ColRef, Mat};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid collocation grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("linear system is singular to working precision while solving for {0}")]
    Singular(&'static str),
    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollocationGrid {
    threshold: f64,
    n_panels: usize,
}

impl CollocationGrid {
    pub fn new(threshold: f64, n_panels: usize) -> Result<Self, SolverError> {
        if !(threshold > 0.0) || !threshold.is_finite() {
            return Err(SolverError::InvalidGrid(format!(
                "threshold must be positive and finite, got {threshold}"
            )));
        }
        if n_panels == 0 {
            return Err(SolverError::InvalidGrid("at least one panel is required".into()));
        }
        Ok(Self { threshold, n_panels })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn n_panels(&self) -> usize {
        self.n_panels
    }

    pub fn panel_width(&self) -> f64 {
        self.threshold / self.n_panels as f64
    }

    /// Midpoint of panel `i` (zero-based).
    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.panel_width()
    }

    pub fn edge(&self, j: usize) -> f64 {
        if j == self.n_panels {
            self.threshold
        } else {
            j as f64 * self.panel_width()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_panels).map(|i| self.node(i)).collect()
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n_panels).map(|j| self.edge(j)).collect()
    }
}

/// How the kernel is integrated over a target panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum KernelQuadrature {
    /// Exact transition probability of each panel from LR distribution-function increments.
    #[default]
    PanelMass,
    /// `panel_width * K(node_i, node_j)`, with the exact increment on the panel holding the LR support endpoint.
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub n_panels: usize,
    pub quadrature: KernelQuadrature,
    pub eigen_tolerance: f64,
    pub eigen_max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_panels: 2000,
            quadrature: KernelQuadrature::PanelMass,
            eigen_tolerance: 1e-12,
            eigen_max_iterations: 1000,
        }
    }
}

impl SolverConfig {
    pub fn with_panels(n_panels: usize) -> Self {
        Self {
            n_panels,
            ..Self::default()
        }
    }
}

/// Transition probabilities from statistic value `x` into each panel of `grid`.
pub fn kernel_row(
    model: &GaussianChangeModel,
    xi: StatisticMap,
    grid: &CollocationGrid,
    x: f64,
    hyp: Hypothesis,
    quadrature: KernelQuadrature,
) -> Result<Vec<f64>, SolverError> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(SolverError::InvalidArgument(format!(
            "statistic value must be finite and nonnegative, got {x}"
        )));
    }
    let s = xi.apply(x);
    let n = grid.n_panels();
    let mut row = vec![0.0; n];
    match quadrature {
        KernelQuadrature::PanelMass => {
            let mut prev = model.lr_cdf_sf_or_zero(grid.edge(0) / s, hyp);
            for (j, r) in row.iter_mut().enumerate() {
                let next = model.lr_cdf_sf_or_zero(grid.edge(j + 1) / s, hyp);
                *r = mass_between(prev, next);
                prev = next;
            }
        }
        KernelQuadrature::Midpoint => {
            for (j, r) in row.iter_mut().enumerate() {
                *r = midpoint_entry(model, grid, s, j, hyp);
            }
        }
    }
    Ok(row)
}

fn mass_between(lo: (f64, f64), hi: (f64, f64)) -> f64 {
    let m = if lo.0 < 0.5 { hi.0 - lo.0 } else { lo.1 - hi.1 };
    m.max(0.0)
}

fn midpoint_entry(
    model: &GaussianChangeModel,
    grid: &CollocationGrid,
    s: f64,
    j: usize,
    hyp: Hypothesis,
) -> f64 {
    let singular = model.support_bound().t_min * s;
    let (lo, hi) = (grid.edge(j), grid.edge(j + 1));
    if lo <= singular && singular < hi {
        mass_between(
            model.lr_cdf_sf_or_zero(lo / s, hyp),
            model.lr_cdf_sf_or_zero(hi / s, hyp),
        )
    } else {
        grid.panel_width() * model.lr_density(grid.node(j) / s, hyp).unwrap_or(0.0) / s
    }
}

impl GaussianChangeModel {
    /// `(cdf, sf)` of the LR with the convention that `t = 0` has no mass below it.
    fn lr_cdf_sf_or_zero(&self, t: f64, hyp: Hypothesis) -> (f64, f64) {
        if t <= 0.0 {
            (0.0, 1.0)
        } else {
            self.lr_cdf_sf(t, hyp).expect("positive argument")
        }
    }
}

/// Discretized kernel: entry `(i, j)` is the probability of moving from `node_i` into panel `j`.
pub fn build_kernel_matrix(
    model: &GaussianChangeModel,
    xi: StatisticMap,
    grid: &CollocationGrid,
    hyp: Hypothesis,
    quadrature: KernelQuadrature,
) -> Mat<f64> {
    let n = grid.n_panels();
    let scales: Vec<f64> = (0..n).map(|i| xi.apply(grid.node(i))).collect();
    let mut k = Mat::<f64>::zeros(n, n);
    const CHUNK: usize = 64;
    k.par_col_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(c, mut block)| {
            let j0 = c * CHUNK;
            match quadrature {
                KernelQuadrature::PanelMass => {
                    let mut left: Vec<(f64, f64)> = scales
                        .iter()
                        .map(|&s| model.lr_cdf_sf_or_zero(grid.edge(j0) / s, hyp))
                        .collect();
                    for jj in 0..block.ncols() {
                        let e = grid.edge(j0 + jj + 1);
                        for (i, &s) in scales.iter().enumerate() {
                            let right = model.lr_cdf_sf_or_zero(e / s, hyp);
                            block[(i, jj)] = mass_between(left[i], right);
                            left[i] = right;
                        }
                    }
                }
                KernelQuadrature::Midpoint => {
                    for jj in 0..block.ncols() {
                        for (i, &s) in scales.iter().enumerate() {
                            block[(i, jj)] = midpoint_entry(model, grid, s, j0 + jj, hyp);
                        }
                    }
                }
            }
        });
    k
}

/// `(K_pre, K_post)`.
pub fn build_kernel_matrices(
    model: &GaussianChangeModel,
    xi: StatisticMap,
    grid: &CollocationGrid,
    quadrature: KernelQuadrature,
) -> (Mat<f64>, Mat<f64>) {
    (
        build_kernel_matrix(model, xi, grid, Hypothesis::Pre, quadrature),
        build_kernel_matrix(model, xi, grid, Hypothesis::Post, quadrature),
    )
}

fn identity_minus(mut k: Mat<f64>) -> Mat<f64> {
    let n = k.nrows();
    for j in 0..n {
        for i in 0..n {
            k[(i, j)] = -k[(i, j)];
        }
        k[(j, j)] += 1.0;
    }
    k
}

fn solve_vec(lu: &PartialPivLu<f64>, rhs: &[f64], what: &'static str) -> Result<Vec<f64>, SolverError> {
    let x = lu.solve(ColRef::from_slice(rhs));
    let v: Vec<f64> = x.iter().copied().collect();
    if v.iter().all(|x| x.is_finite() && *x > 0.0) {
        Ok(v)
    } else {
        Err(SolverError::Singular(what))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `u^T K` for a row vector `u`.
fn row_times(k: &Mat<f64>, u: &[f64]) -> Vec<f64> {
    let y = k.transpose() * ColRef::from_slice(u);
    y.iter().copied().collect()
}

/// Operating characteristics at one starting value.
/// Largest self-transition probability a panel may have before the grid is deemed too coarse.
const MAX_SELF_TRANSITION: f64 = 0.99;

fn check_resolution(kernel: &Mat<f64>, grid: &CollocationGrid) -> Result<(), SolverError> {
    let worst = (0..kernel.nrows()).map(|i| kernel[(i, i)]).fold(0.0, f64::max);
    if worst > MAX_SELF_TRANSITION {
        return Err(SolverError::InvalidGrid(format!(
            "panel width {} is too coarse for the one-step movement of the statistic \
             (self-transition probability {worst:.6}); use more panels",
            grid.panel_width()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointValues {
    pub start: f64,
    pub arl: f64,
    pub add0: f64,
    pub iadd: f64,
}

impl PointValues {
    /// Stationary (multi-cyclic) average delay `psi / l`.
    pub fn stadd(&self) -> f64 {
        self.iadd / self.arl
    }
}

/// Leading left eigenpair of the no-change kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasiStationary {
    pub lambda: f64,
    /// `1 - lambda`, computed without cancellation.
    pub one_minus_lambda: f64,
    pub threshold: f64,
    /// Density values at the nodes; `panel_width * sum = 1`.
    pub density: Vec<f64>,
    pub mean: f64,
    pub iterations: usize,
}

impl QuasiStationary {
    pub fn panel_width(&self) -> f64 {
        self.threshold / self.density.len() as f64
    }

    /// ARL of the procedure started from this distribution, `1 / (1 - lambda)`.
    pub fn geometric_arl(&self) -> f64 {
        1.0 / self.one_minus_lambda
    }

    /// `integral of f against the density` for values of `f` at the nodes.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.panel_width() * dot(&self.density, values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayProfile {
    pub start: f64,
    /// `ADD_nu` for `nu = 0, 1, ...`.
    pub add: Vec<f64>,
    /// `log rho_nu(start)` for the same indices; `rho_0 = 1`.
    pub log_rho: Vec<f64>,
    /// Limit as `nu -> infinity`, from the quasi-stationary eigenvector.
    pub limit: f64,
    pub converged_at: Option<usize>,
}

impl DelayProfile {
    /// Supremum over `nu` of `ADD_nu`, including the limit.
    pub fn supremum(&self) -> f64 {
        self.add.iter().copied().fold(self.limit, f64::max)
    }

    pub fn rho(&self, nu: usize) -> f64 {
        self.log_rho[nu].exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SrpCharacteristics {
    /// `integral l dQ`.
    pub arl: f64,
    /// `1 / (1 - lambda)`.
    pub arl_geometric: f64,
    /// `integral d0 dQ`; the delay is the same for every change point.
    pub add: f64,
    pub mean_head_start: f64,
}

/// Solved renewal equations for one statistic, threshold and grid.
pub struct OcSolution {
    model: GaussianChangeModel,
    xi: StatisticMap,
    grid: CollocationGrid,
    config: SolverConfig,
    kernel_pre: Mat<f64>,
    lu_pre: PartialPivLu<f64>,
    arl: Vec<f64>,
    add0: Vec<f64>,
    iadd: Vec<f64>,
    quasi: OnceLock<Result<QuasiStationary, SolverError>>,
}

impl std::fmt::Debug for OcSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcSolution")
            .field("model", &self.model)
            .field("xi", &self.xi)
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl OcSolution {
    pub fn solve(
        model: &GaussianChangeModel,
        xi: StatisticMap,
        threshold: f64,
        config: &SolverConfig,
    ) -> Result<Self, SolverError> {
        let grid = CollocationGrid::new(threshold, config.n_panels)?;
        let n = grid.n_panels();
        let ones = vec![1.0; n];

        let add0 = {
            let k_post = build_kernel_matrix(model, xi, &grid, Hypothesis::Post, config.quadrature);
            check_resolution(&k_post, &grid)?;
            let lu = identity_minus(k_post).partial_piv_lu();
            solve_vec(&lu, &ones, "the zero-delay ADD")?
        };
        let kernel_pre = build_kernel_matrix(model, xi, &grid, Hypothesis::Pre, config.quadrature);
        check_resolution(&kernel_pre, &grid)?;
        let lu_pre = identity_minus(kernel_pre.clone()).partial_piv_lu();
        let arl = solve_vec(&lu_pre, &ones, "the ARL")?;
        let iadd = solve_vec(&lu_pre, &add0, "the integral ADD")?;

        Ok(Self {
            model: *model,
            xi,
            grid,
            config: *config,
            kernel_pre,
            lu_pre,
            arl,
            add0,
            iadd,
            quasi: OnceLock::new(),
        })
    }

    pub fn model(&self) -> &GaussianChangeModel {
        &self.model
    }

    pub fn statistic_map(&self) -> StatisticMap {
        self.xi
    }

    pub fn grid(&self) -> &CollocationGrid {
        &self.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn kernel_pre(&self) -> &Mat<f64> {
        &self.kernel_pre
    }

    /// `l` at the nodes.
    pub fn arl_nodes(&self) -> &[f64] {
        &self.arl
    }

    /// `d0` at the nodes.
    pub fn add0_nodes(&self) -> &[f64] {
        &self.add0
    }

    /// `psi` at the nodes.
    pub fn iadd_nodes(&self) -> &[f64] {
        &self.iadd
    }

    pub fn kernel_row(&self, x: f64, hyp: Hypothesis) -> Result<Vec<f64>, SolverError> {
        kernel_row(&self.model, self.xi, &self.grid, x, hyp, self.config.quadrature)
    }

    /// All three characteristics at an arbitrary start, by one application of each equation.
    pub fn at(&self, x0: f64) -> Result<PointValues, SolverError> {
        let pre = self.kernel_row(x0, Hypothesis::Pre)?;
        let post = self.kernel_row(x0, Hypothesis::Post)?;
        let arl = 1.0 + dot(&pre, &self.arl);
        let add0 = 1.0 + dot(&post, &self.add0);
        let iadd = add0 + dot(&pre, &self.iadd);
        Ok(PointValues {
            start: x0,
            arl,
            add0,
            iadd,
        })
    }

    pub fn arl_at(&self, x0: f64) -> Result<f64, SolverError> {
        let pre = self.kernel_row(x0, Hypothesis::Pre)?;
        Ok(1.0 + dot(&pre, &self.arl))
    }

    pub fn add0_at(&self, x0: f64) -> Result<f64, SolverError> {
        let post = self.kernel_row(x0, Hypothesis::Post)?;
        Ok(1.0 + dot(&post, &self.add0))
    }

    pub fn stadd_at(&self, x0: f64) -> Result<f64, SolverError> {
        Ok(self.at(x0)?.stadd())
    }

    /// `[r d0(r) + psi(r)] / [r + l(r)]`, the lower bound on the minimal supremum ADD at head start `r`.
    pub fn lower_bound(&self, r: f64) -> Result<f64, SolverError> {
        if self.xi != StatisticMap::ShiryaevRoberts {
            return Err(SolverError::InvalidArgument(
                "the lower bound is defined for the Shiryaev-Roberts statistic".into(),
            ));
        }
        if !(r >= 0.0 && r < self.grid.threshold()) {
            return Err(SolverError::InvalidArgument(format!(
                "head start {r} outside [0, {})",
                self.grid.threshold()
            )));
        }
        let p = self.at(r)?;
        Ok((r * p.add0 + p.iadd) / (r + p.arl))
    }

    /// Leading left eigenpair of the discretized no-change kernel, by inverse iteration.
    pub fn quasi_stationary(&self) -> Result<&QuasiStationary, SolverError> {
        self.quasi
            .get_or_init(|| self.compute_quasi_stationary())
            .as_ref()
            .map_err(Clone::clone)
    }

    fn compute_quasi_stationary(&self) -> Result<QuasiStationary, SolverError> {
        let n = self.grid.n_panels();
        let tol = self.config.eigen_tolerance;
        let mut q = vec![1.0 / n as f64; n];
        let mut prev = f64::NAN;
        for it in 1..=self.config.eigen_max_iterations {
            // (I - K)^T v = q, so v = q / (1 - lambda) at the fixed point.
            let v = self.lu_pre.solve_transpose(ColRef::from_slice(&q));
            let total: f64 = v.iter().sum();
            if !total.is_finite() || total == 0.0 {
                return Err(SolverError::Singular("the quasi-stationary eigenvector"));
            }
            let q_sum: f64 = q.iter().sum();
            let oml = q_sum / total;
            q = v.iter().map(|x| x / total).collect();
            if (oml - prev).abs() < tol {
                let h = self.grid.panel_width();
                let density: Vec<f64> = q.iter().map(|x| x / h).collect();
                let mean = h * density
                    .iter()
                    .enumerate()
                    .map(|(i, d)| self.grid.node(i) * d)
                    .sum::<f64>();
                return Ok(QuasiStationary {
                    lambda: 1.0 - oml,
                    one_minus_lambda: oml,
                    threshold: self.grid.threshold(),
                    density,
                    mean,
                    iterations: it,
                });
            }
            prev = oml;
        }
        Err(SolverError::NonConvergence {
            what: "quasi-stationary eigenpair",
            iterations: self.config.eigen_max_iterations,
        })
    }

    /// Conditional average delay for a change right after the quasi-stationary regime is reached.
    pub fn add_limit(&self) -> Result<f64, SolverError> {
        let q = self.quasi_stationary()?;
        Ok(q.integrate(&self.add0))
    }

    /// The first `nu_max + 1` delays `ADD_0..ADD_{nu_max}` from `x0`, without a stopping rule.
    pub fn delay_prefix(&self, x0: f64, nu_max: usize) -> Result<DelayProfile, SolverError> {
        self.iterate_profile(x0, nu_max, None)
    }

    /// Delays from `x0` until `ADD_nu` settles at its limit within relative `tail_tolerance`.
    pub fn delay_profile(
        &self,
        x0: f64,
        nu_max: usize,
        tail_tolerance: f64,
    ) -> Result<DelayProfile, SolverError> {
        let p = self.iterate_profile(x0, nu_max, Some(tail_tolerance))?;
        if p.converged_at.is_none() {
            return Err(SolverError::NonConvergence {
                what: "delay profile",
                iterations: nu_max,
            });
        }
        Ok(p)
    }

    fn iterate_profile(
        &self,
        x0: f64,
        nu_max: usize,
        tail_tolerance: Option<f64>,
    ) -> Result<DelayProfile, SolverError> {
        let limit = self.add_limit()?;
        let mut add = vec![self.add0_at(x0)?];
        let mut log_rho = vec![0.0];
        let mut converged_at = None;
        let mut u = self.kernel_row(x0, Hypothesis::Pre)?;
        let mut log_scale = 0.0;
        for nu in 1..=nu_max {
            if nu > 1 {
                u = row_times(&self.kernel_pre, &u);
            }
            let s: f64 = u.iter().sum();
            if !(s > 0.0) {
                break;
            }
            log_scale += s.ln();
            u.iter_mut().for_each(|x| *x /= s);
            let value = dot(&u, &self.add0);
            let previous = *add.last().expect("nonempty");
            add.push(value);
            log_rho.push(log_scale);
            if let Some(tol) = tail_tolerance {
                let near_limit = (value - limit).abs() <= tol * limit;
                let settled = (value - previous).abs() <= tol * limit;
                if near_limit && settled {
                    converged_at = Some(nu);
                    break;
                }
            }
        }
        Ok(DelayProfile {
            start: x0,
            add,
            log_rho,
            limit,
            converged_at,
        })
    }

    /// Characteristics of the procedure whose head start is drawn from the quasi-stationary law.
    pub fn srp_characteristics(&self) -> Result<SrpCharacteristics, SolverError> {
        let q = self.quasi_stationary()?;
        Ok(SrpCharacteristics {
            arl: q.integrate(&self.arl),
            arl_geometric: q.geometric_arl(),
            add: q.integrate(&self.add0),
            mean_head_start: q.mean,
        })
    }
}

/// Doubling policy for the panel count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementPolicy {
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for RefinementPolicy {
    fn default() -> Self {
        Self {
            rel_tol: 5e-3,
            max_panels: 8000,
        }
    }
}

#[derive(Debug)]
pub struct RefinedSolution {
    pub solution: OcSolution,
    /// `(panels, values at the start)` for every grid tried, coarsest first.
    pub history: Vec<(usize, PointValues)>,
    pub converged: bool,
}

impl RefinedSolution {
    /// Largest relative change of ARL and ADD_0 between the last two grids.
    pub fn last_relative_change(&self) -> Option<f64> {
        let k = self.history.len();
        if k < 2 {
            return None;
        }
        let (a, b) = (&self.history[k - 2].1, &self.history[k - 1].1);
        Some(((a.arl - b.arl) / b.arl).abs().max(((a.add0 - b.add0) / b.add0).abs()))
    }
}

/// Solves on `N, 2N, 4N, ...` panels until ARL and ADD_0 at `x0` change by less than `rel_tol`.
pub fn solve_refined(
    model: &GaussianChangeModel,
    xi: StatisticMap,
    threshold: f64,
    x0: f64,
    config: &SolverConfig,
    policy: &RefinementPolicy,
) -> Result<RefinedSolution, SolverError> {
    let mut cfg = *config;
    let mut history = Vec::new();
    let mut current = OcSolution::solve(model, xi, threshold, &cfg)?;
    history.push((cfg.n_panels, current.at(x0)?));
    while cfg.n_panels * 2 <= policy.max_panels {
        cfg.n_panels *= 2;
        let finer = OcSolution::solve(model, xi, threshold, &cfg)?;
        let values = finer.at(x0)?;
        let prev = history.last().expect("nonempty").1;
        history.push((cfg.n_panels, values));
        current = finer;
        let change = ((prev.arl - values.arl) / values.arl)
            .abs()
            .max(((prev.add0 - values.add0) / values.add0).abs());
        if change < policy.rel_tol {
            return Ok(RefinedSolution {
                solution: current,
                history,
                converged: true,
            });
        }
    }
    Ok(RefinedSolution {
        solution: current,
        history,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(a: f64) -> GaussianChangeModel {
        GaussianChangeModel::new(1000.0, 1001.0, a).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = CollocationGrid::new(10.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![1.25, 3.75, 6.25, 8.75]);
        assert_eq!(g.edge(4), 10.0);
        assert!(CollocationGrid::new(0.0, 4).is_err());
        assert!(CollocationGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn rows_sum_to_exit_complement() {
        let md = model(1.0);
        let g = CollocationGrid::new(50.0, 200).unwrap();
        for xi in [StatisticMap::Cusum, StatisticMap::ShiryaevRoberts] {
            let k = build_kernel_matrix(&md, xi, &g, Hypothesis::Pre, KernelQuadrature::PanelMass);
            for i in [0, 17, 199] {
                let sum: f64 = (0..200).map(|j| k[(i, j)]).sum();
                let p = md.lr_cdf(50.0 / xi.apply(g.node(i)), Hypothesis::Pre).unwrap();
                assert!((sum - p).abs() < 1e-13, "{sum} {p}");
            }
        }
    }

    #[test]
    fn matrix_rows_match_off_grid_rows() {
        let md = model(0.01);
        let g = CollocationGrid::new(30.0, 60).unwrap();
        let k = build_kernel_matrix(&md, StatisticMap::ShiryaevRoberts, &g, Hypothesis::Post, KernelQuadrature::PanelMass);
        let row = kernel_row(&md, StatisticMap::ShiryaevRoberts, &g, g.node(7), Hypothesis::Post, KernelQuadrature::PanelMass).unwrap();
        for j in 0..60 {
            assert_eq!(k[(7, j)], row[j]);
        }
    }

    #[test]
    fn tiny_threshold_alarms_immediately() {
        let md = model(1.0);
        let t_min = md.support_bound().t_min;
        let sol = OcSolution::solve(&md, StatisticMap::ShiryaevRoberts, t_min * 0.5, &SolverConfig::with_panels(20)).unwrap();
        assert!(sol.arl_nodes().iter().all(|v| (*v - 1.0).abs() < 1e-12));
        assert!((sol.arl_at(0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delay_profile_starts_at_add0() {
        let md = model(1.0);
        let sol = OcSolution::solve(&md, StatisticMap::ShiryaevRoberts, 100.0, &SolverConfig::with_panels(200)).unwrap();
        let p = sol.delay_prefix(0.0, 5).unwrap();
        assert_eq!(p.add[0], sol.add0_at(0.0).unwrap());
        assert_eq!(p.log_rho[0], 0.0);
        assert!(p.log_rho.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn srp_arl_formulas_agree() {
        let md = model(1.0);
        let sol = OcSolution::solve(&md, StatisticMap::ShiryaevRoberts, 300.0, &SolverConfig::with_panels(400)).unwrap();
        let s = sol.srp_characteristics().unwrap();
        assert!((s.arl / s.arl_geometric - 1.0).abs() < 1e-9);
        let q = sol.quasi_stationary().unwrap();
        assert!((q.panel_width() * q.density.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        assert!(q.lambda > 0.0 && q.lambda < 1.0);
        assert!(q.density.iter().all(|d| *d >= 0.0));
    }

    #[test]
    fn lower_bound_at_zero_is_sr_stadd() {
        let md = model(1.0);
        let sol = OcSolution::solve(&md, StatisticMap::ShiryaevRoberts, 200.0, &SolverConfig::with_panels(300)).unwrap();
        let lb = sol.lower_bound(0.0).unwrap();
        assert!((lb - sol.stadd_at(0.0).unwrap()).abs() < 1e-12);
        assert!(sol.lower_bound(200.0).is_err());
        assert!(sol.lower_bound(-1.0).is_err());
    }

    #[test]
    fn cusum_start_below_one_is_start_at_one() {
        let md = model(1.0);
        let sol = OcSolution::solve(&md, StatisticMap::Cusum, 3.0, &SolverConfig::with_panels(300)).unwrap();
        assert_eq!(sol.at(0.0).unwrap(), PointValues { start: 0.0, ..sol.at(1.0).unwrap() });
    }
}
