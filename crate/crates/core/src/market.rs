//! Locational marginal prices and the market-design checks applied to them.
//!
//! All money amounts in reports are $/h (prices in $/MWh times power in p.u. times the base).

use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::ese::{EseSolution, UnitState};
use crate::grid::Grid;
use crate::opf::OpfSolution;
use crate::{Result, BASE_MVA};

/// Relative tolerance of every market inequality.
pub const MARKET_TOL: f64 = 1e-6;
/// Distance from a limit below which a generator counts as saturated.
pub const MARGINAL_TOL: f64 = 1e-6;
/// Per-bus price error above which a bus is reported as inaccurate, $/MWh.
pub const LMP_ERROR_THRESHOLD: f64 = 0.1;
/// Per-generator dispatch error above which a unit is reported as inaccurate, p.u.
pub const DISPATCH_ERROR_THRESHOLD: f64 = 0.01;

/// `LMP_i = λ + Σ_k Φ_ki (μ̲_k − μ̄_k)`.
pub fn compute_lmps(grid: &Grid, lambda: f64, mu_up: &[f64], mu_lo: &[f64]) -> Result<Vec<f64>> {
    check_len("mu_up", grid.n_lines(), mu_up.len())?;
    check_len("mu_lo", grid.n_lines(), mu_lo.len())?;
    let phi = grid.ptdf();
    Ok((0..grid.n_buses())
        .map(|i| {
            lambda
                + (0..grid.n_lines())
                    .map(|k| phi[(k, i)] * (mu_lo[k] - mu_up[k]))
                    .sum::<f64>()
        })
        .collect())
}

/// Borrowed primal and dual values of either a QP or a reduced-system solution.
#[derive(Debug, Clone, Copy)]
pub struct SolutionView<'a> {
    pub dispatch: &'a [f64],
    pub shed: &'a [f64],
    pub curtail: &'a [f64],
    pub lambda: f64,
    pub mu_up: &'a [f64],
    pub mu_lo: &'a [f64],
    pub alpha_up: &'a [f64],
    pub alpha_lo: &'a [f64],
}

impl<'a> From<&'a OpfSolution> for SolutionView<'a> {
    fn from(s: &'a OpfSolution) -> Self {
        SolutionView {
            dispatch: &s.dispatch,
            shed: &s.shed,
            curtail: &s.curtail,
            lambda: s.lambda,
            mu_up: &s.mu_up,
            mu_lo: &s.mu_lo,
            alpha_up: &s.alpha_up,
            alpha_lo: &s.alpha_lo,
        }
    }
}

impl<'a> From<&'a EseSolution> for SolutionView<'a> {
    fn from(s: &'a EseSolution) -> Self {
        SolutionView {
            dispatch: &s.dispatch,
            shed: &s.shed,
            curtail: &s.curtail,
            lambda: s.lambda,
            mu_up: &s.mu_up,
            mu_lo: &s.mu_lo,
            alpha_up: &s.alpha_up,
            alpha_lo: &s.alpha_lo,
        }
    }
}

impl SolutionView<'_> {
    fn check(&self, grid: &Grid) -> Result<()> {
        check_len("dispatch", grid.n_units(), self.dispatch.len())?;
        check_len("shed", grid.n_buses(), self.shed.len())?;
        check_len("curtailment", grid.n_farms(), self.curtail.len())?;
        check_len("mu_up", grid.n_lines(), self.mu_up.len())?;
        check_len("mu_lo", grid.n_lines(), self.mu_lo.len())?;
        check_len("alpha_up", grid.n_units(), self.alpha_up.len())?;
        check_len("alpha_lo", grid.n_units(), self.alpha_lo.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevenueAdequacy {
    pub holds: bool,
    /// Payments to generators plus shedding and curtailment penalties, $/h.
    pub lhs: f64,
    /// Payments by served load, $/h.
    pub rhs: f64,
}

/// `Σ_g LMP_i(g) p_g + Σ_i c_LNS s_i + Σ_w c_RES c_w ≤ Σ_i LMP_i (ℓ_i − s_i)`.
pub fn check_revenue_adequacy(
    grid: &Grid,
    net_load: &[f64],
    dispatch: &[f64],
    shed: &[f64],
    curtail: &[f64],
    lmps: &[f64],
) -> Result<RevenueAdequacy> {
    check_len("net load", grid.n_buses(), net_load.len())?;
    check_len("dispatch", grid.n_units(), dispatch.len())?;
    check_len("shed", grid.n_buses(), shed.len())?;
    check_len("curtailment", grid.n_farms(), curtail.len())?;
    check_len("LMPs", grid.n_buses(), lmps.len())?;
    let paid: f64 = (0..grid.n_units())
        .map(|u| lmps[grid.unit_bus(u)] * dispatch[u])
        .sum();
    let penalties: f64 = grid
        .buses()
        .iter()
        .zip(shed)
        .map(|(b, s)| b.shed_cost * s)
        .sum::<f64>()
        + grid
            .wind_farms()
            .iter()
            .zip(curtail)
            .map(|(w, c)| w.curtail_cost * c)
            .sum::<f64>();
    let charged: f64 = (0..grid.n_buses())
        .map(|i| lmps[i] * (net_load[i] - shed[i]))
        .sum();
    let lhs = BASE_MVA * (paid + penalties);
    let rhs = BASE_MVA * charged;
    Ok(RevenueAdequacy {
        holds: lhs <= rhs + MARKET_TOL * rhs.abs().max(1.0),
        lhs,
        rhs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRecovery {
    pub unit: usize,
    /// `LMP_i(g) · p_g`, $/h.
    pub revenue: f64,
    /// `2 c2 p² + c1 p`, $/h: the form the recovery condition is stated in.
    pub cost: f64,
    /// `c2 p² + c1 p`, $/h: the objective's cost, logged for comparison.
    pub cost_objective_form: f64,
    pub holds: bool,
    /// Strictly inside its limits.
    pub marginal: bool,
    /// For marginal units, whether revenue equals `cost` within tolerance.
    pub equality_holds: Option<bool>,
}

impl CostRecovery {
    /// Pass/fail as assessed in the market summary: only marginal units are judged, and they
    /// must satisfy the condition with equality.
    pub fn assessed_pass(&self) -> Option<bool> {
        self.marginal
            .then(|| self.holds && self.equality_holds == Some(true))
    }
}

/// `2 c2 p_g² + c1 p_g ≤ LMP_i(g) p_g` per committed generator.
pub fn check_cost_recovery(
    grid: &Grid,
    dispatch: &[f64],
    lmps: &[f64],
) -> Result<Vec<CostRecovery>> {
    check_len("dispatch", grid.n_units(), dispatch.len())?;
    check_len("LMPs", grid.n_buses(), lmps.len())?;
    Ok((0..grid.n_units())
        .map(|u| {
            let g = grid.unit(u);
            let p = dispatch[u];
            let revenue = BASE_MVA * lmps[grid.unit_bus(u)] * p;
            let cost = BASE_MVA * (2.0 * g.c2 * p * p + g.c1 * p);
            let cost_objective_form = BASE_MVA * g.cost(p);
            let tol = MARKET_TOL * revenue.abs().max(1.0);
            let marginal =
                !g.is_fixed() && p > g.p_min + MARGINAL_TOL && p < g.p_max - MARGINAL_TOL;
            let equality_holds = marginal.then(|| (revenue - cost).abs() <= tol);
            if marginal && (revenue - cost_objective_form).abs() > tol {
                log::trace!(
                    "unit {u}: revenue {revenue:.6} vs objective-form cost {cost_objective_form:.6}"
                );
            }
            CostRecovery {
                unit: u,
                revenue,
                cost,
                cost_objective_form,
                holds: cost <= revenue + tol,
                marginal,
                equality_holds,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityGap {
    /// Primal objective, $/h.
    pub primal: f64,
    /// Dual objective, $/h.
    pub dual: f64,
    pub absolute: f64,
    /// `absolute / max(1, |primal|)`.
    pub relative: f64,
    /// Largest stationarity or dual-sign violation, $/MWh. The dual value is a valid bound
    /// only when this is zero.
    pub dual_infeasibility: f64,
}

/// Gap between the primal objective and the QP dual objective at the given multipliers.
///
/// The dual is taken in Wolfe form: the Lagrangian at a point satisfying stationarity reduces
/// to its multiplier-only terms minus `Σ c2 p²`.
pub fn duality_gap<'a>(
    grid: &Grid,
    net_load: &[f64],
    sol: impl Into<SolutionView<'a>>,
) -> Result<DualityGap> {
    let s: SolutionView = sol.into();
    s.check(grid)?;
    check_len("net load", grid.n_buses(), net_load.len())?;
    let lmps = compute_lmps(grid, s.lambda, s.mu_up, s.mu_lo)?;
    let load_flows = grid.flows(net_load);

    let mut dual = s.lambda * net_load.iter().sum::<f64>();
    for (k, l) in grid.lines().iter().enumerate() {
        dual -= s.mu_up[k] * (load_flows[k] + l.f_max);
        dual -= s.mu_lo[k] * (l.f_max - load_flows[k]);
    }
    let mut infeasible = 0.0f64;
    for u in 0..grid.n_units() {
        let g = grid.unit(u);
        let p = s.dispatch[u];
        dual += -s.alpha_up[u] * g.p_max + s.alpha_lo[u] * g.p_min - g.effective_c2() * p * p;
        let r = g.marginal_cost(p) - lmps[grid.unit_bus(u)] + s.alpha_up[u] - s.alpha_lo[u];
        infeasible = infeasible.max(r.abs());
    }
    for m in s
        .mu_up
        .iter()
        .chain(s.mu_lo)
        .chain(s.alpha_up)
        .chain(s.alpha_lo)
    {
        infeasible = infeasible.max(-m);
    }
    // min over s ≥ 0 of (c_LNS − LMP) s is finite only for a nonnegative coefficient; the
    // same holds for curtailment with c_RES + LMP.
    for (i, b) in grid.buses().iter().enumerate() {
        infeasible = infeasible.max(lmps[i] - b.shed_cost);
    }
    for (w, f) in grid.wind_farms().iter().enumerate() {
        infeasible = infeasible.max(-(f.curtail_cost + lmps[grid.farm_bus(w)]));
    }

    let primal = crate::opf::objective(grid, s.dispatch, s.shed, s.curtail)
        + BASE_MVA
            * (0..grid.n_units())
                .map(|u| (grid.unit(u).effective_c2() - grid.unit(u).c2) * s.dispatch[u].powi(2))
                .sum::<f64>();
    let dual = BASE_MVA * dual;
    let absolute = (primal - dual).abs();
    Ok(DualityGap {
        primal,
        dual,
        absolute,
        relative: absolute / primal.abs().max(1.0),
        dual_infeasibility: infeasible.max(0.0),
    })
}

/// All market checks for one solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketReport {
    pub lmp: Vec<f64>,
    pub revenue_adequacy: RevenueAdequacy,
    pub cost_recovery: Vec<CostRecovery>,
    pub duality_gap: DualityGap,
    /// Committed-generator indices strictly inside their limits.
    pub marginal_set: Vec<usize>,
}

impl MarketReport {
    /// `(passed, assessed)` over marginal generators.
    pub fn cost_recovery_counts(&self) -> (usize, usize) {
        self.cost_recovery
            .iter()
            .filter_map(CostRecovery::assessed_pass)
            .fold((0, 0), |(p, n), ok| (p + ok as usize, n + 1))
    }
}

pub fn market_report<'a>(
    grid: &Grid,
    net_load: &[f64],
    sol: impl Into<SolutionView<'a>>,
) -> Result<MarketReport> {
    let s: SolutionView = sol.into();
    s.check(grid)?;
    let lmp = compute_lmps(grid, s.lambda, s.mu_up, s.mu_lo)?;
    let revenue_adequacy =
        check_revenue_adequacy(grid, net_load, s.dispatch, s.shed, s.curtail, &lmp)?;
    let cost_recovery = check_cost_recovery(grid, s.dispatch, &lmp)?;
    let duality_gap = duality_gap(grid, net_load, s)?;
    let marginal_set = cost_recovery
        .iter()
        .filter(|c| c.marginal)
        .map(|c| c.unit)
        .collect();
    Ok(MarketReport {
        lmp,
        revenue_adequacy,
        cost_recovery,
        duality_gap,
        marginal_set,
    })
}

/// Per-sample errors of a recovered solution against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleErrors {
    /// `|ΔLMP_i|` per bus, $/MWh.
    pub lmp: Vec<f64>,
    /// `|Δp_g|` per committed generator that is free in the ground truth, p.u.
    pub dispatch: Vec<Option<f64>>,
}

impl SampleErrors {
    pub fn new(
        grid: &Grid,
        truth: &OpfSolution,
        truth_lmp: &[f64],
        dispatch: &[f64],
        lmp: &[f64],
    ) -> Result<Self> {
        check_len("LMPs", grid.n_buses(), lmp.len())?;
        check_len("LMPs", grid.n_buses(), truth_lmp.len())?;
        check_len("dispatch", grid.n_units(), dispatch.len())?;
        let free = free_units(grid, &truth.dispatch);
        Ok(SampleErrors {
            lmp: truth_lmp
                .iter()
                .zip(lmp)
                .map(|(a, b)| (a - b).abs())
                .collect(),
            dispatch: (0..grid.n_units())
                .map(|u| free[u].then(|| (truth.dispatch[u] - dispatch[u]).abs()))
                .collect(),
        })
    }

    pub fn max_lmp(&self) -> f64 {
        self.lmp.iter().fold(0.0, |m, v| m.max(*v))
    }

    pub fn max_dispatch(&self) -> f64 {
        self.dispatch.iter().flatten().fold(0.0, |m, v| m.max(*v))
    }
}

/// Free-unit mask of a dispatch: strictly inside both limits.
pub fn free_units(grid: &Grid, dispatch: &[f64]) -> Vec<bool> {
    (0..grid.n_units())
        .map(|u| {
            let g = grid.unit(u);
            !g.is_fixed()
                && dispatch[u] > g.p_min + MARGINAL_TOL
                && dispatch[u] < g.p_max - MARGINAL_TOL
        })
        .collect()
}

/// Free-unit mask from the unit states of a reduced-system solution.
pub fn free_units_of(sol: &EseSolution) -> Vec<bool> {
    sol.unit_state
        .iter()
        .map(|s| *s == UnitState::Free)
        .collect()
}

/// Running per-bus and per-generator mean absolute errors over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub lmp_sum: Vec<f64>,
    pub lmp_max: Vec<f64>,
    pub samples: usize,
    pub dispatch_sum: Vec<f64>,
    pub dispatch_max: Vec<f64>,
    /// Samples in which each generator was free.
    pub dispatch_count: Vec<usize>,
}

impl ErrorSummary {
    pub fn new(n_buses: usize, n_units: usize) -> Self {
        ErrorSummary {
            lmp_sum: vec![0.0; n_buses],
            lmp_max: vec![0.0; n_buses],
            samples: 0,
            dispatch_sum: vec![0.0; n_units],
            dispatch_max: vec![0.0; n_units],
            dispatch_count: vec![0; n_units],
        }
    }

    pub fn add(&mut self, e: &SampleErrors) {
        self.samples += 1;
        for (i, v) in e.lmp.iter().enumerate() {
            self.lmp_sum[i] += v;
            self.lmp_max[i] = self.lmp_max[i].max(*v);
        }
        for (u, v) in e.dispatch.iter().enumerate() {
            if let Some(v) = v {
                self.dispatch_sum[u] += v;
                self.dispatch_max[u] = self.dispatch_max[u].max(*v);
                self.dispatch_count[u] += 1;
            }
        }
    }

    pub fn mean_lmp(&self) -> Vec<f64> {
        let n = self.samples.max(1) as f64;
        self.lmp_sum.iter().map(|s| s / n).collect()
    }

    /// Mean error per generator over the samples where it was free; `None` if never free.
    pub fn mean_dispatch(&self) -> Vec<Option<f64>> {
        self.dispatch_sum
            .iter()
            .zip(&self.dispatch_count)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    }

    /// Share of buses whose mean price error is within [`LMP_ERROR_THRESHOLD`].
    pub fn buses_within_threshold(&self) -> f64 {
        let m = self.mean_lmp();
        if m.is_empty() {
            return 1.0;
        }
        m.iter().filter(|v| **v <= LMP_ERROR_THRESHOLD).count() as f64 / m.len() as f64
    }

    /// Share of ever-free generators whose mean dispatch error is within
    /// [`DISPATCH_ERROR_THRESHOLD`].
    pub fn generators_within_threshold(&self) -> f64 {
        let m: Vec<f64> = self.mean_dispatch().into_iter().flatten().collect();
        if m.is_empty() {
            return 1.0;
        }
        m.iter().filter(|v| **v <= DISPATCH_ERROR_THRESHOLD).count() as f64 / m.len() as f64
    }
}
