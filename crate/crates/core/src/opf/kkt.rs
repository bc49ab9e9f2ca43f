use serde::{Deserialize, Serialize};

use super::{line_flows, OpfSolution};
use crate::error::check_len;
use crate::grid::Grid;
use crate::linalg::inf_norm;
use crate::Result;

/// Slack level above which the shed/curtailment stationarity equalities are enforced.
const SLACK_ACTIVE: f64 = 1e-6;

/// Per-condition residuals of the DC-OPF optimality system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `Σ(ℓ − s) − Σp + Σc`, p.u.
    pub balance: f64,
    /// `max(0, |f_k| − f_max)` per line.
    pub flow_violation: Vec<f64>,
    /// Distance outside `[p_min, p_max]` per generator.
    pub bound_violation: Vec<f64>,
    /// Most negative shed or curtailment value, as a positive number.
    pub slack_negativity: f64,
    /// Most negative λ-free multiplier (μ, α), as a positive number.
    pub dual_negativity: f64,
    /// `μ̄_k (f_k − f_max)`
    pub cs_line_upper: Vec<f64>,
    /// `μ̲_k (f_max + f_k)`
    pub cs_line_lower: Vec<f64>,
    /// `ᾱ_g (p_g − p_max)`
    pub cs_gen_upper: Vec<f64>,
    /// `α̲_g (p_min − p_g)`
    pub cs_gen_lower: Vec<f64>,
    /// Generator stationarity `2c2 p + c1 − λ + Σ_k Φ_ki(μ̄ − μ̲) + ᾱ − α̲`.
    pub stationarity_gen: Vec<f64>,
    /// Shed stationarity `c_LNS − LMP_i`, only where `s_i > 0` (zero elsewhere).
    pub stationarity_shed: Vec<f64>,
    /// Curtailment stationarity `c_RES + LMP_i`, only where `c_w > 0` (zero elsewhere).
    pub stationarity_curtail: Vec<f64>,
    /// Sign conditions implied by `s ≥ 0`, `c ≥ 0` where the slack is zero:
    /// `max(0, LMP_i − c_LNS)` and `max(0, −(c_RES + LMP_i))`.
    pub slack_dual_sign: f64,
}

impl KktReport {
    pub fn max_primal(&self) -> f64 {
        self.balance
            .abs()
            .max(inf_norm(&self.flow_violation))
            .max(inf_norm(&self.bound_violation))
            .max(self.slack_negativity)
    }

    pub fn max_complementarity(&self) -> f64 {
        inf_norm(&self.cs_line_upper)
            .max(inf_norm(&self.cs_line_lower))
            .max(inf_norm(&self.cs_gen_upper))
            .max(inf_norm(&self.cs_gen_lower))
    }

    pub fn max_stationarity(&self) -> f64 {
        inf_norm(&self.stationarity_gen)
            .max(inf_norm(&self.stationarity_shed))
            .max(inf_norm(&self.stationarity_curtail))
    }

    pub fn max_violation(&self) -> f64 {
        self.max_primal()
            .max(self.max_complementarity())
            .max(self.max_stationarity())
            .max(self.dual_negativity)
            .max(self.slack_dual_sign)
    }
}

/// `λ + Σ_k Φ_ki (μ̲_k − μ̄_k)` at storage bus `i`.
pub(crate) fn lmp_at(grid: &Grid, sol: &OpfSolution, i: usize) -> f64 {
    let phi = grid.ptdf();
    sol.lambda
        + (0..grid.n_lines())
            .map(|k| phi[(k, i)] * (sol.mu_lo[k] - sol.mu_up[k]))
            .sum::<f64>()
}

/// Evaluate every optimality condition at `sol`. Pure function of its inputs; flows are
/// recomputed from the primal values rather than read from `sol.flows`.
pub fn kkt_residuals(grid: &Grid, net_load: &[f64], sol: &OpfSolution) -> Result<KktReport> {
    check_len("net load", grid.n_buses(), net_load.len())?;
    check_len("dispatch", grid.n_units(), sol.dispatch.len())?;
    check_len("shed", grid.n_buses(), sol.shed.len())?;
    check_len("curtailment", grid.n_farms(), sol.curtail.len())?;
    check_len("mu_up", grid.n_lines(), sol.mu_up.len())?;
    check_len("mu_lo", grid.n_lines(), sol.mu_lo.len())?;
    check_len("alpha_up", grid.n_units(), sol.alpha_up.len())?;
    check_len("alpha_lo", grid.n_units(), sol.alpha_lo.len())?;

    let flows = line_flows(grid, net_load, &sol.dispatch, &sol.shed, &sol.curtail);
    let lmp: Vec<f64> = (0..grid.n_buses()).map(|i| lmp_at(grid, sol, i)).collect();

    let balance = net_load.iter().sum::<f64>()
        - sol.shed.iter().sum::<f64>()
        - sol.dispatch.iter().sum::<f64>()
        + sol.curtail.iter().sum::<f64>();
    let flow_violation = grid
        .lines()
        .iter()
        .zip(&flows)
        .map(|(l, f)| (f.abs() - l.f_max).max(0.0))
        .collect();
    let bound_violation = grid
        .units()
        .zip(&sol.dispatch)
        .map(|(g, &p)| (g.p_min - p).max(p - g.p_max).max(0.0))
        .collect();
    let slack_negativity = sol
        .shed
        .iter()
        .chain(&sol.curtail)
        .fold(0.0f64, |m, &v| m.max(-v));
    let dual_negativity = sol
        .mu_up
        .iter()
        .chain(&sol.mu_lo)
        .chain(&sol.alpha_up)
        .chain(&sol.alpha_lo)
        .fold(0.0f64, |m, &v| m.max(-v));

    let cs_line_upper = (0..grid.n_lines())
        .map(|k| sol.mu_up[k] * (flows[k] - grid.lines()[k].f_max))
        .collect();
    let cs_line_lower = (0..grid.n_lines())
        .map(|k| sol.mu_lo[k] * (grid.lines()[k].f_max + flows[k]))
        .collect();
    let cs_gen_upper = (0..grid.n_units())
        .map(|u| sol.alpha_up[u] * (sol.dispatch[u] - grid.unit(u).p_max))
        .collect();
    let cs_gen_lower = (0..grid.n_units())
        .map(|u| sol.alpha_lo[u] * (grid.unit(u).p_min - sol.dispatch[u]))
        .collect();

    let stationarity_gen = (0..grid.n_units())
        .map(|u| {
            let g = grid.unit(u);
            g.marginal_cost(sol.dispatch[u]) - lmp[grid.unit_bus(u)] + sol.alpha_up[u]
                - sol.alpha_lo[u]
        })
        .collect();
    let mut slack_dual_sign = 0.0f64;
    let stationarity_shed = (0..grid.n_buses())
        .map(|i| {
            let r = grid.buses()[i].shed_cost - lmp[i];
            if sol.shed[i] > SLACK_ACTIVE {
                r
            } else {
                slack_dual_sign = slack_dual_sign.max(-r);
                0.0
            }
        })
        .collect();
    let stationarity_curtail = (0..grid.n_farms())
        .map(|w| {
            let r = grid.wind_farms()[w].curtail_cost + lmp[grid.farm_bus(w)];
            if sol.curtail[w] > SLACK_ACTIVE {
                r
            } else {
                slack_dual_sign = slack_dual_sign.max(-r);
                0.0
            }
        })
        .collect();

    Ok(KktReport {
        balance,
        flow_violation,
        bound_violation,
        slack_negativity,
        dual_negativity,
        cs_line_upper,
        cs_line_lower,
        cs_gen_upper,
        cs_gen_lower,
        stationarity_gen,
        stationarity_shed,
        stationarity_curtail,
        slack_dual_sign,
    })
}
