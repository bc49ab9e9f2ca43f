//! Ground-truth DC-OPF.
//!
//! ```text
//! minimize    Σ_g c2_g p_g² + c1_g p_g + Σ_i c_LNS_i s_i + Σ_w c_RES_w c_w
//! subject to  Σ_i (ℓ_i − s_i) = Σ_g p_g − Σ_w c_w                     (λ)
//!             −f_max ≤ Φ (C_g p − C_w c − ℓ + s) ≤ f_max             (μ̲, μ̄)
//!             p_min ≤ p ≤ p_max                                       (α̲, ᾱ)
//!             s ≥ 0, c ≥ 0
//! ```
//!
//! The QP is solved by the dense interior-point method in [`ipm`]. The interior iterate is then
//! snapped to a vertex-exact point by labeling its active set and solving the reduced linear
//! system ([`crate::ese`]); the snapped point is kept only if it satisfies every KKT condition.

mod ipm;
mod kkt;

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::ese::{self, EseSolution};
use crate::grid::Grid;
use crate::labels::{extract_labels, ActiveSetLabels, LabelLayout, Tolerances};
use crate::{Error, Result, BASE_MVA};

pub use kkt::{kkt_residuals, KktReport};

use ipm::{DenseQp, IpmSettings, IpmStatus, RowFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpfStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Primal solution and every Lagrange multiplier of the DC-OPF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    /// p_g per committed generator, p.u.
    pub dispatch: Vec<f64>,
    /// s_i per bus, p.u.
    pub shed: Vec<f64>,
    /// c_w per wind farm, p.u.
    pub curtail: Vec<f64>,
    /// System balance multiplier, $/MWh.
    pub lambda: f64,
    pub mu_up: Vec<f64>,
    pub mu_lo: Vec<f64>,
    pub alpha_up: Vec<f64>,
    pub alpha_lo: Vec<f64>,
    /// Line flows at the solution, p.u.
    pub flows: Vec<f64>,
    /// Total cost, $/h.
    pub objective: f64,
    pub status: OpfStatus,
    pub iterations: usize,
    pub solve_micros: f64,
    /// Whether the crossover to the reduced system succeeded.
    pub polished: bool,
    /// Final interior-point residuals (scaled), kept for diagnostics.
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl OpfSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == OpfStatus::Optimal
    }
}

/// Tolerance on the full KKT report for accepting a crossover point.
const POLISH_ACCEPT: f64 = 1e-8;

/// Solve the DC-OPF at net load `net_load`.
///
/// Returns `Err` only for malformed input. Solver breakdowns are reported through
/// [`OpfSolution::status`].
pub fn solve_dcopf(grid: &Grid, net_load: &[f64]) -> Result<OpfSolution> {
    check_len("net load", grid.n_buses(), net_load.len())?;
    if net_load.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "net load contains non-finite values".into(),
        ));
    }
    let start = Instant::now();
    let problem = Formulation::new(grid, net_load);
    let raw = ipm::solve_qp(&problem.qp, IpmSettings::default());
    let mut sol = problem.unpack(grid, net_load, &raw);

    let converged = raw.status == IpmStatus::Converged;
    let accepted = polish(grid, net_load, &mut sol);
    sol.status = if accepted || converged {
        OpfStatus::Optimal
    } else if ipm::min_violation(&problem.qp).is_some_and(|v| v > 1e-6) {
        OpfStatus::Infeasible
    } else {
        OpfStatus::NumericalFailure
    };
    if !converged {
        log::debug!(
            "interior point stopped with {:?} after {} iterations (primal {:.2e}, dual {:.2e}, gap {:.2e})",
            raw.status,
            raw.iterations,
            raw.primal_residual,
            raw.dual_residual,
            raw.gap
        );
    }
    sol.solve_micros = (start.elapsed().as_secs_f64() * 1e6).max(1e-3);
    Ok(sol)
}

/// Replace the interior iterate by the reduced-system solution of its active set when that
/// point satisfies the full KKT system. Starts from the dominant active set, then from the
/// thresholded labels, and iterates each until the labels are a fixed point.
fn polish(grid: &Grid, net_load: &[f64], sol: &mut OpfSolution) -> bool {
    let tol = Tolerances::default();
    let mut starts = vec![dominant_active_set(grid, net_load, sol)];
    if let Ok(l) = extract_labels(grid, sol, tol) {
        if l != starts[0] {
            starts.push(l);
        }
    }
    for start in starts {
        if let Some(candidate) = crossover(grid, net_load, sol, start, tol) {
            *sol = candidate;
            sol.polished = true;
            return true;
        }
    }
    sol.polished = false;
    false
}

fn crossover(
    grid: &Grid,
    net_load: &[f64],
    base: &OpfSolution,
    mut labels: ActiveSetLabels,
    tol: Tolerances,
) -> Option<OpfSolution> {
    let mut accepted = None;
    for _ in 0..6 {
        let Ok(ese) = ese::solve_with_labels(grid, net_load, &labels) else {
            break;
        };
        if ese.status != ese::EseStatus::Solved {
            break;
        }
        let candidate = from_ese(grid, net_load, &ese, base);
        let relabeled = extract_labels(grid, &candidate, tol);
        let ok = kkt_residuals(grid, net_load, &candidate)
            .is_ok_and(|r| r.max_violation() <= POLISH_ACCEPT);
        if ok {
            accepted = Some(candidate);
        }
        match relabeled {
            Ok(l) if l != labels => labels = l,
            _ => break,
        }
        if ok && ese.repaired_units.is_empty() {
            break;
        }
    }
    accepted
}

/// Active set of an interior iterate: a constraint is taken as binding when its multiplier
/// dominates its slack. Scale-free, unlike the fixed thresholds used for labeling exact points.
fn dominant_active_set(grid: &Grid, net_load: &[f64], sol: &OpfSolution) -> ActiveSetLabels {
    let flows = line_flows(grid, net_load, &sol.dispatch, &sol.shed, &sol.curtail);
    let lmp: Vec<f64> = (0..grid.n_buses())
        .map(|i| kkt::lmp_at(grid, sol, i))
        .collect();
    let mut labels = ActiveSetLabels::zeros(LabelLayout::of(grid));
    for u in 0..grid.n_units() {
        let g = grid.unit(u);
        labels.gen_upper[u] = sol.alpha_up[u] > g.p_max - sol.dispatch[u];
        labels.gen_lower[u] = !labels.gen_upper[u] && sol.alpha_lo[u] > sol.dispatch[u] - g.p_min;
    }
    for (k, l) in grid.lines().iter().enumerate() {
        labels.line_upper[k] = sol.mu_up[k] > l.f_max - flows[k];
        labels.line_lower[k] = !labels.line_upper[k] && sol.mu_lo[k] > l.f_max + flows[k];
    }
    for (i, b) in grid.buses().iter().enumerate() {
        labels.shed[i] = sol.shed[i] > b.shed_cost - lmp[i];
    }
    for (w, f) in grid.wind_farms().iter().enumerate() {
        labels.curtail[w] = sol.curtail[w] > f.curtail_cost + lmp[grid.farm_bus(w)];
    }
    labels
}

fn from_ese(grid: &Grid, net_load: &[f64], ese: &EseSolution, base: &OpfSolution) -> OpfSolution {
    let flows = ese::recovered_flows(grid, net_load, ese);
    let mut out = OpfSolution {
        dispatch: ese.dispatch.clone(),
        shed: ese.shed.clone(),
        curtail: ese.curtail.clone(),
        lambda: ese.lambda,
        mu_up: ese.mu_up.clone(),
        mu_lo: ese.mu_lo.clone(),
        alpha_up: ese.alpha_up.clone(),
        alpha_lo: ese.alpha_lo.clone(),
        flows,
        objective: 0.0,
        status: OpfStatus::Optimal,
        iterations: base.iterations,
        solve_micros: base.solve_micros,
        polished: true,
        primal_residual: base.primal_residual,
        dual_residual: base.dual_residual,
    };
    out.objective = objective(grid, &out.dispatch, &out.shed, &out.curtail);
    out
}

/// Total cost in $/h of a dispatch with slacks.
pub fn objective(grid: &Grid, dispatch: &[f64], shed: &[f64], curtail: &[f64]) -> f64 {
    let gen: f64 = grid.units().zip(dispatch).map(|(g, &p)| g.cost(p)).sum();
    let lns: f64 = grid
        .buses()
        .iter()
        .zip(shed)
        .map(|(b, s)| b.shed_cost * s)
        .sum();
    let res: f64 = grid
        .wind_farms()
        .iter()
        .zip(curtail)
        .map(|(w, c)| w.curtail_cost * c)
        .sum();
    BASE_MVA * (gen + lns + res)
}

/// Line flows for a dispatch with slacks at the given net load.
pub fn line_flows(
    grid: &Grid,
    net_load: &[f64],
    dispatch: &[f64],
    shed: &[f64],
    curtail: &[f64],
) -> Vec<f64> {
    let mut injection: Vec<f64> = (0..grid.n_buses()).map(|i| shed[i] - net_load[i]).collect();
    for (u, p) in dispatch.iter().enumerate() {
        injection[grid.unit_bus(u)] += p;
    }
    for (w, c) in curtail.iter().enumerate() {
        injection[grid.farm_bus(w)] -= c;
    }
    grid.flows(&injection)
}

/// Maps the DC-OPF onto the generic dense QP. Fixed-output generators become constants.
struct Formulation {
    qp: DenseQp,
    /// Committed-generator index for each dispatch variable.
    vars: Vec<usize>,
}

impl Formulation {
    fn new(grid: &Grid, net_load: &[f64]) -> Self {
        let phi = grid.ptdf();
        let (nb, nl, nw) = (grid.n_buses(), grid.n_lines(), grid.n_farms());
        let vars: Vec<usize> = (0..grid.n_units())
            .filter(|&u| !grid.unit(u).is_fixed())
            .collect();
        let ng = vars.len();
        let n = ng + nb + nw;

        let mut withdrawal = net_load.to_vec();
        for u in 0..grid.n_units() {
            if grid.unit(u).is_fixed() {
                withdrawal[grid.unit_bus(u)] -= grid.unit(u).p_min;
            }
        }

        let mut hess = vec![0.0; n];
        let mut cost = vec![0.0; n];
        let mut x_lo = vec![0.0; n];
        let mut x_hi = vec![f64::INFINITY; n];
        for (j, &u) in vars.iter().enumerate() {
            let g = grid.unit(u);
            hess[j] = 2.0 * g.effective_c2();
            cost[j] = g.c1;
            x_lo[j] = g.p_min;
            x_hi[j] = g.p_max;
        }
        for (i, b) in grid.buses().iter().enumerate() {
            cost[ng + i] = b.shed_cost;
        }
        for (w, f) in grid.wind_farms().iter().enumerate() {
            cost[ng + nb + w] = f.curtail_cost;
        }

        let mut eq = DMatrix::zeros(1, n);
        for j in 0..ng + nb {
            eq[(0, j)] = 1.0;
        }
        for w in 0..nw {
            eq[(0, ng + nb + w)] = -1.0;
        }
        let eq_rhs = vec![withdrawal.iter().sum()];

        let mut rows = DMatrix::zeros(nl, n);
        let mut row_lo = vec![0.0; nl];
        let mut row_hi = vec![0.0; nl];
        for k in 0..nl {
            for (j, &u) in vars.iter().enumerate() {
                rows[(k, j)] = phi[(k, grid.unit_bus(u))];
            }
            for i in 0..nb {
                rows[(k, ng + i)] = phi[(k, i)];
            }
            for w in 0..nw {
                rows[(k, ng + nb + w)] = -phi[(k, grid.farm_bus(w))];
            }
            let base: f64 = (0..nb).map(|i| phi[(k, i)] * withdrawal[i]).sum();
            let f_max = grid.lines()[k].f_max;
            row_lo[k] = base - f_max;
            row_hi[k] = base + f_max;
        }
        let cols = vars
            .iter()
            .map(|&u| (grid.unit_bus(u), 1.0))
            .chain((0..nb).map(|i| (i, 1.0)))
            .chain((0..nw).map(|w| (grid.farm_bus(w), -1.0)))
            .collect();
        Formulation {
            qp: DenseQp {
                hess,
                cost,
                eq,
                eq_rhs,
                rows,
                row_lo,
                row_hi,
                x_lo,
                x_hi,
                row_factor: Some(RowFactor {
                    base: phi.clone(),
                    cols,
                }),
            },
            vars,
        }
    }

    fn unpack(&self, grid: &Grid, net_load: &[f64], r: &ipm::IpmResult) -> OpfSolution {
        let ng = self.vars.len();
        let (nb, nw, nu) = (grid.n_buses(), grid.n_farms(), grid.n_units());
        let mut dispatch = vec![0.0; nu];
        let mut alpha_up = vec![0.0; nu];
        let mut alpha_lo = vec![0.0; nu];
        for u in 0..nu {
            if grid.unit(u).is_fixed() {
                dispatch[u] = grid.unit(u).p_min;
            }
        }
        for (j, &u) in self.vars.iter().enumerate() {
            dispatch[u] = r.x[j];
            alpha_up[u] = r.z_hi[j];
            alpha_lo[u] = r.z_lo[j];
        }
        let shed = r.x[ng..ng + nb].to_vec();
        let curtail = r.x[ng + nb..ng + nb + nw].to_vec();
        let mut sol = OpfSolution {
            flows: line_flows(grid, net_load, &dispatch, &shed, &curtail),
            objective: objective(grid, &dispatch, &shed, &curtail),
            dispatch,
            shed,
            curtail,
            lambda: r.y[0],
            mu_up: r.v_hi.clone(),
            mu_lo: r.v_lo.clone(),
            alpha_up,
            alpha_lo,
            status: OpfStatus::NumericalFailure,
            iterations: r.iterations,
            solve_micros: 0.0,
            polished: false,
            primal_residual: r.primal_residual,
            dual_residual: r.dual_residual,
        };
        // Fixed units take whichever limit multiplier closes their stationarity.
        for u in 0..nu {
            let g = grid.unit(u);
            if g.is_fixed() {
                let lmp = kkt::lmp_at(grid, &sol, grid.unit_bus(u));
                let gap = lmp - g.marginal_cost(sol.dispatch[u]);
                if gap >= 0.0 {
                    sol.alpha_up[u] = gap;
                } else {
                    sol.alpha_lo[u] = -gap;
                }
            }
        }
        sol
    }
}

#[cfg(test)]
mod tests;
