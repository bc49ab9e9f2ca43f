//! Equivalent system of equations.
//!
//! Once the active set is known, the DC-OPF optimum is the solution of a square linear system:
//! flow equalities for congested lines, stationarity of free generators, shed and curtailment
//! stationarity for non-zero slacks, and the power balance. Saturated generators are fixed at
//! their limit and folded into the net load of their bus; their multipliers are recovered
//! afterwards from stationarity and do not enter the system.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::grid::Grid;
use crate::labels::ActiveSetLabels;
use crate::linalg::{inf_norm, solve_square};
use crate::{Error, Result};

/// Residual and KKT-violation level above which a recovered solution is reported as untrusted.
pub const TRUST_THRESHOLD: f64 = 1e-4;

/// Free-generator bound violation that triggers the clamp-and-resolve repair.
pub const BOUND_REPAIR_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EseUnknown {
    Dispatch(usize),
    Shed(usize),
    Curtail(usize),
    Lambda,
    MuUpper(usize),
    MuLower(usize),
}

/// Which condition each row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EseRow {
    /// Line at its upper thermal limit.
    LineUpper(usize),
    /// Line at its lower thermal limit.
    LineLower(usize),
    /// Stationarity of a free generator.
    UnitStationarity(usize),
    /// Stationarity of a non-zero load shed.
    ShedStationarity(usize),
    /// Stationarity of a non-zero wind curtailment.
    CurtailStationarity(usize),
    Balance,
}

impl fmt::Display for EseRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EseRow::LineUpper(k) => write!(f, "line_upper:{k}"),
            EseRow::LineLower(k) => write!(f, "line_lower:{k}"),
            EseRow::UnitStationarity(u) => write!(f, "gen_free:{u}"),
            EseRow::ShedStationarity(i) => write!(f, "shed:{i}"),
            EseRow::CurtailStationarity(w) => write!(f, "curtail:{w}"),
            EseRow::Balance => write!(f, "balance"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitState {
    Free,
    Upper,
    Lower,
}

#[derive(Debug, Clone)]
pub struct EseSystem {
    pub unknowns: Vec<EseUnknown>,
    pub rows: Vec<EseRow>,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Per committed generator: free or fixed at a limit.
    pub unit_state: Vec<UnitState>,
    /// Fixed output per committed generator (only meaningful for saturated ones).
    pub unit_fixed: Vec<f64>,
    /// Net load after subtracting saturated generator output at its bus.
    pub adjusted_net_load: Vec<f64>,
    pub n_lines: usize,
    pub n_buses: usize,
    pub n_farms: usize,
}

impl EseSystem {
    pub fn dim(&self) -> usize {
        self.unknowns.len()
    }

    pub fn n_saturated(&self) -> usize {
        self.unit_state
            .iter()
            .filter(|s| **s != UnitState::Free)
            .count()
    }

    /// ‖A x − b‖∞ with each unknown valued by `value`, e.g. taken from an OPF solution.
    pub fn residual_at(&self, value: impl Fn(&EseUnknown) -> f64) -> f64 {
        let x = DVector::from_iterator(self.dim(), self.unknowns.iter().map(value));
        let r = &self.matrix * x - &self.rhs;
        inf_norm(r.as_slice())
    }

    /// Dimension counted with every committed generator as an unknown. Equals
    /// `dim() + n_saturated()` because saturated outputs enter as constants.
    pub fn nominal_dimension(&self) -> usize {
        let count = |f: fn(&EseUnknown) -> bool| self.unknowns.iter().filter(|u| f(u)).count();
        count(|u| matches!(u, EseUnknown::MuUpper(_)))
            + count(|u| matches!(u, EseUnknown::MuLower(_)))
            + self.unit_state.len()
            + count(|u| matches!(u, EseUnknown::Shed(_)))
            + count(|u| matches!(u, EseUnknown::Curtail(_)))
            + 1
    }
}

/// Assemble the reduced system for `labels` at net load `net_load`.
pub fn build_ese(grid: &Grid, net_load: &[f64], labels: &ActiveSetLabels) -> Result<EseSystem> {
    let states = unit_states(grid, labels)?;
    assemble(grid, net_load, labels, &states)
}

fn unit_states(grid: &Grid, labels: &ActiveSetLabels) -> Result<Vec<UnitState>> {
    check_len("generator labels", grid.n_units(), labels.gen_upper.len())?;
    check_len("generator labels", grid.n_units(), labels.gen_lower.len())?;
    labels.check_consistent()?;
    Ok((0..grid.n_units())
        .map(|u| {
            if grid.unit(u).is_fixed() || labels.gen_upper[u] {
                UnitState::Upper
            } else if labels.gen_lower[u] {
                UnitState::Lower
            } else {
                UnitState::Free
            }
        })
        .collect())
}

fn assemble(
    grid: &Grid,
    net_load: &[f64],
    labels: &ActiveSetLabels,
    states: &[UnitState],
) -> Result<EseSystem> {
    check_len("net load", grid.n_buses(), net_load.len())?;
    check_len("line labels", grid.n_lines(), labels.line_upper.len())?;
    check_len("line labels", grid.n_lines(), labels.line_lower.len())?;
    check_len("shed labels", grid.n_buses(), labels.shed.len())?;
    check_len("curtailment labels", grid.n_farms(), labels.curtail.len())?;
    labels.check_consistent()?;

    let phi = grid.ptdf();
    let mut unit_fixed = vec![0.0; grid.n_units()];
    let mut adjusted = net_load.to_vec();
    for (u, s) in states.iter().enumerate() {
        let gen = grid.unit(u);
        let p = match s {
            UnitState::Free => continue,
            UnitState::Upper => gen.p_max,
            UnitState::Lower => gen.p_min,
        };
        unit_fixed[u] = p;
        adjusted[grid.unit_bus(u)] -= p;
    }

    let free: Vec<usize> = (0..grid.n_units())
        .filter(|&u| states[u] == UnitState::Free)
        .collect();
    let shed: Vec<usize> = (0..grid.n_buses()).filter(|&i| labels.shed[i]).collect();
    let curt: Vec<usize> = (0..grid.n_farms()).filter(|&w| labels.curtail[w]).collect();
    let up: Vec<usize> = (0..grid.n_lines())
        .filter(|&k| labels.line_upper[k])
        .collect();
    let lo: Vec<usize> = (0..grid.n_lines())
        .filter(|&k| labels.line_lower[k])
        .collect();
    if free.is_empty() && shed.is_empty() && curt.is_empty() {
        return Err(Error::Structural(
            "no free generator and no non-zero slack: balance has no unknowns".into(),
        ));
    }

    let mut unknowns = Vec::new();
    unknowns.extend(free.iter().map(|&u| EseUnknown::Dispatch(u)));
    unknowns.extend(shed.iter().map(|&i| EseUnknown::Shed(i)));
    unknowns.extend(curt.iter().map(|&w| EseUnknown::Curtail(w)));
    let col_lambda = unknowns.len();
    unknowns.push(EseUnknown::Lambda);
    let col_up = unknowns.len();
    unknowns.extend(up.iter().map(|&k| EseUnknown::MuUpper(k)));
    let col_lo = unknowns.len();
    unknowns.extend(lo.iter().map(|&k| EseUnknown::MuLower(k)));
    let col_shed = free.len();
    let col_curt = col_shed + shed.len();

    let n = unknowns.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut rows = Vec::with_capacity(n);

    // Flow equalities for congested lines.
    for (dir, lines) in [(1.0, &up), (-1.0, &lo)] {
        for &k in lines.iter() {
            let r = rows.len();
            rows.push(if dir > 0.0 {
                EseRow::LineUpper(k)
            } else {
                EseRow::LineLower(k)
            });
            for (c, &u) in free.iter().enumerate() {
                a[(r, c)] = phi[(k, grid.unit_bus(u))];
            }
            for (c, &i) in shed.iter().enumerate() {
                a[(r, col_shed + c)] = phi[(k, i)];
            }
            for (c, &w) in curt.iter().enumerate() {
                a[(r, col_curt + c)] = -phi[(k, grid.farm_bus(w))];
            }
            let load_flow: f64 = (0..grid.n_buses()).map(|i| phi[(k, i)] * adjusted[i]).sum();
            b[r] = dir * grid.lines()[k].f_max + load_flow;
        }
    }
    // Stationarity rows share the multiplier pattern Φ_ki (μ̄_k − μ̲_k) at the entity's bus.
    let add_line_terms = |a: &mut DMatrix<f64>, r: usize, bus: usize, sign: f64| {
        for (c, &k) in up.iter().enumerate() {
            a[(r, col_up + c)] = sign * phi[(k, bus)];
        }
        for (c, &k) in lo.iter().enumerate() {
            a[(r, col_lo + c)] = -sign * phi[(k, bus)];
        }
    };
    for (c, &u) in free.iter().enumerate() {
        let r = rows.len();
        rows.push(EseRow::UnitStationarity(u));
        let gen = grid.unit(u);
        a[(r, c)] = 2.0 * gen.effective_c2();
        a[(r, col_lambda)] = -1.0;
        add_line_terms(&mut a, r, grid.unit_bus(u), 1.0);
        b[r] = -gen.c1;
    }
    for &i in &shed {
        let r = rows.len();
        rows.push(EseRow::ShedStationarity(i));
        a[(r, col_lambda)] = -1.0;
        add_line_terms(&mut a, r, i, 1.0);
        b[r] = -grid.buses()[i].shed_cost;
    }
    for &w in &curt {
        let r = rows.len();
        rows.push(EseRow::CurtailStationarity(w));
        a[(r, col_lambda)] = 1.0;
        add_line_terms(&mut a, r, grid.farm_bus(w), -1.0);
        b[r] = -grid.wind_farms()[w].curtail_cost;
    }
    {
        let r = rows.len();
        rows.push(EseRow::Balance);
        for c in 0..free.len() + shed.len() {
            a[(r, c)] = 1.0;
        }
        for c in 0..curt.len() {
            a[(r, col_curt + c)] = -1.0;
        }
        b[r] = adjusted.iter().sum();
    }
    debug_assert_eq!(rows.len(), n);

    Ok(EseSystem {
        unknowns,
        rows,
        matrix: a,
        rhs: b,
        unit_state: states.to_vec(),
        unit_fixed,
        adjusted_net_load: adjusted,
        n_lines: grid.n_lines(),
        n_buses: grid.n_buses(),
        n_farms: grid.n_farms(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EseStatus {
    Solved,
    LeastSquaresFallback,
    Singular,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EseSolution {
    /// Per committed generator, p.u.
    pub dispatch: Vec<f64>,
    pub shed: Vec<f64>,
    pub curtail: Vec<f64>,
    pub lambda: f64,
    pub mu_up: Vec<f64>,
    pub mu_lo: Vec<f64>,
    /// Recovered from stationarity of saturated generators by [`verify_solution`].
    pub alpha_up: Vec<f64>,
    pub alpha_lo: Vec<f64>,
    pub unit_state: Vec<UnitState>,
    /// ‖A x − b‖∞ of the reduced system.
    pub residual_norm: f64,
    /// Largest violation of primal feasibility or multiplier signs at the recovered point.
    pub kkt_violation: f64,
    pub condition: f64,
    pub solve_micros: f64,
    pub status: EseStatus,
    pub trusted: bool,
    /// Generators moved to a limit by the bound repair.
    pub repaired_units: Vec<usize>,
    /// Rows whose residual exceeds the trust threshold.
    pub offending_rows: Vec<String>,
}

/// Solve the reduced system by LU, falling back to minimum-norm least squares when it is
/// rank deficient.
pub fn solve_ese(system: &EseSystem) -> EseSolution {
    let start = Instant::now();
    let solved = solve_square(&system.matrix, &system.rhs);
    let solve_micros = (start.elapsed().as_secs_f64() * 1e6).max(1e-3);

    let n_units = system.unit_state.len();
    let mut sol = EseSolution {
        dispatch: system.unit_fixed.clone(),
        shed: vec![0.0; system.n_buses],
        curtail: vec![0.0; system.n_farms],
        lambda: 0.0,
        mu_up: vec![0.0; system.n_lines],
        mu_lo: vec![0.0; system.n_lines],
        alpha_up: vec![0.0; n_units],
        alpha_lo: vec![0.0; n_units],
        unit_state: system.unit_state.clone(),
        residual_norm: f64::INFINITY,
        kkt_violation: f64::INFINITY,
        condition: f64::INFINITY,
        solve_micros,
        status: EseStatus::Singular,
        trusted: false,
        repaired_units: vec![],
        offending_rows: system.rows.iter().map(|r| r.to_string()).collect(),
    };
    let Some(solved) = solved else {
        return sol;
    };
    let residual = &system.matrix * &solved.x - &system.rhs;
    sol.residual_norm = residual.amax();
    sol.condition = solved.condition;
    sol.status = if solved.fallback {
        EseStatus::LeastSquaresFallback
    } else {
        EseStatus::Solved
    };
    sol.offending_rows = system
        .rows
        .iter()
        .zip(residual.iter())
        .filter(|(_, r)| r.abs() > TRUST_THRESHOLD)
        .map(|(row, _)| row.to_string())
        .collect();
    for (unknown, &v) in system.unknowns.iter().zip(solved.x.iter()) {
        match *unknown {
            EseUnknown::Dispatch(u) => sol.dispatch[u] = v,
            EseUnknown::Shed(i) => sol.shed[i] = v,
            EseUnknown::Curtail(w) => sol.curtail[w] = v,
            EseUnknown::Lambda => sol.lambda = v,
            EseUnknown::MuUpper(k) => sol.mu_up[k] = v,
            EseUnknown::MuLower(k) => sol.mu_lo[k] = v,
        }
    }
    sol.trusted = sol.residual_norm <= TRUST_THRESHOLD;
    sol
}

/// Recover saturated-generator multipliers and measure KKT violations at a recovered point;
/// updates `kkt_violation` and `trusted`.
pub fn verify_solution(grid: &Grid, net_load: &[f64], sol: &mut EseSolution) {
    let phi = grid.ptdf();
    let congested: Vec<usize> = (0..grid.n_lines())
        .filter(|&k| sol.mu_up[k] != 0.0 || sol.mu_lo[k] != 0.0)
        .collect();
    let lmp = |i: usize| -> f64 {
        sol.lambda
            + congested
                .iter()
                .map(|&k| phi[(k, i)] * (sol.mu_lo[k] - sol.mu_up[k]))
                .sum::<f64>()
    };
    let mut viol = 0.0f64;
    for u in 0..grid.n_units() {
        let gen = grid.unit(u);
        let p = sol.dispatch[u];
        let gap = lmp(grid.unit_bus(u)) - gen.marginal_cost(p);
        sol.alpha_up[u] = 0.0;
        sol.alpha_lo[u] = 0.0;
        match sol.unit_state[u] {
            UnitState::Free => {
                viol = viol.max(gen.p_min - p).max(p - gen.p_max);
            }
            UnitState::Upper if gen.is_fixed() => {
                // Fixed units absorb either sign of the price gap.
                if gap >= 0.0 {
                    sol.alpha_up[u] = gap;
                } else {
                    sol.alpha_lo[u] = -gap;
                }
            }
            UnitState::Upper => {
                sol.alpha_up[u] = gap;
                viol = viol.max(-gap);
            }
            UnitState::Lower => {
                sol.alpha_lo[u] = -gap;
                viol = viol.max(gap);
            }
        }
    }
    for k in 0..grid.n_lines() {
        viol = viol.max(-sol.mu_up[k]).max(-sol.mu_lo[k]);
    }
    let mut injection: Vec<f64> = (0..grid.n_buses())
        .map(|i| sol.shed[i] - net_load[i])
        .collect();
    for u in 0..grid.n_units() {
        injection[grid.unit_bus(u)] += sol.dispatch[u];
    }
    for w in 0..grid.n_farms() {
        injection[grid.farm_bus(w)] -= sol.curtail[w];
    }
    let flows = grid.flows(&injection);
    for (k, f) in flows.iter().enumerate() {
        viol = viol.max(f.abs() - grid.lines()[k].f_max);
    }
    for (i, bus) in grid.buses().iter().enumerate() {
        if sol.shed[i] != 0.0 {
            viol = viol.max(-sol.shed[i]);
        } else {
            viol = viol.max(lmp(i) - bus.shed_cost);
        }
    }
    for (w, farm) in grid.wind_farms().iter().enumerate() {
        if sol.curtail[w] != 0.0 {
            viol = viol.max(-sol.curtail[w]);
        } else {
            viol = viol.max(-(farm.curtail_cost + lmp(grid.farm_bus(w))));
        }
    }
    sol.kkt_violation = viol.max(0.0);
    sol.trusted = sol.status != EseStatus::Singular
        && sol.residual_norm <= TRUST_THRESHOLD
        && sol.kkt_violation <= TRUST_THRESHOLD;
}

/// Build, solve and verify the reduced system for `labels`.
///
/// If free generators are recovered outside their limits by more than [`BOUND_REPAIR_TOL`], the
/// one furthest out is clamped to the violated limit and the system is solved once more with it
/// saturated.
pub fn solve_with_labels(
    grid: &Grid,
    net_load: &[f64],
    labels: &ActiveSetLabels,
) -> Result<EseSolution> {
    let start = Instant::now();
    let mut states = unit_states(grid, labels)?;
    let system = assemble(grid, net_load, labels, &states)?;
    let mut sol = solve_ese(&system);

    // Only the worst offender is moved: the others typically return inside their limits once
    // the overshooting unit is pinned.
    let mut worst: Option<(usize, UnitState, f64)> = None;
    if sol.status != EseStatus::Singular {
        for u in 0..grid.n_units() {
            if states[u] != UnitState::Free {
                continue;
            }
            let gen = grid.unit(u);
            let (state, excess) = if sol.dispatch[u] > gen.p_max {
                (UnitState::Upper, sol.dispatch[u] - gen.p_max)
            } else {
                (UnitState::Lower, gen.p_min - sol.dispatch[u])
            };
            if excess > BOUND_REPAIR_TOL && worst.is_none_or(|(_, _, e)| excess > e) {
                worst = Some((u, state, excess));
            }
        }
    }
    let mut repaired = Vec::new();
    if let Some((u, state, _)) = worst {
        states[u] = state;
        repaired.push(u);
    }
    if !repaired.is_empty() {
        match assemble(grid, net_load, labels, &states) {
            Ok(system) => {
                sol = solve_ese(&system);
                sol.repaired_units = repaired;
            }
            // Repair removed every unknown of the balance row; keep the first answer.
            Err(e) => log::debug!("bound repair skipped: {e}"),
        }
    }
    sol.solve_micros = (start.elapsed().as_secs_f64() * 1e6).max(1e-3);
    verify_solution(grid, net_load, &mut sol);
    Ok(sol)
}

/// Line flows implied by a recovered dispatch.
pub fn recovered_flows(grid: &Grid, net_load: &[f64], sol: &EseSolution) -> Vec<f64> {
    let mut injection: Vec<f64> = (0..grid.n_buses())
        .map(|i| sol.shed[i] - net_load[i])
        .collect();
    for u in 0..grid.n_units() {
        injection[grid.unit_bus(u)] += sol.dispatch[u];
    }
    for w in 0..grid.n_farms() {
        injection[grid.farm_bus(w)] -= sol.curtail[w];
    }
    grid.flows(&injection)
}
