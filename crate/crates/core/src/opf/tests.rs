use super::*;
use crate::grid::{Bus, Generator, Line, WindFarm};

fn bus(id: usize, load: f64) -> Bus {
    Bus {
        id,
        load,
        shed_cost: 1000.0 + id as f64,
    }
}

fn gen(bus: usize, p_min: f64, p_max: f64, c2: f64, c1: f64) -> Generator {
    Generator {
        bus,
        p_min,
        p_max,
        c2,
        c1,
        committed: true,
    }
}

fn line(from: usize, to: usize, f_max: f64) -> Line {
    Line {
        from,
        to,
        susceptance: 10.0,
        f_max,
    }
}

fn single_bus() -> Grid {
    Grid::new(
        vec![bus(1, 2.0)],
        vec![],
        vec![gen(1, 0.0, 5.0, 0.01, 10.0)],
        vec![],
        None,
    )
    .unwrap()
}

/// Two buses joined by a line of limit 1, cheap generation at bus 1, load at bus 2.
fn congested_pair() -> Grid {
    Grid::new(
        vec![bus(1, 0.0), bus(2, 3.0)],
        vec![line(1, 2, 1.0)],
        vec![gen(1, 0.0, 5.0, 0.01, 10.0), gen(2, 0.0, 5.0, 0.01, 30.0)],
        vec![],
        None,
    )
    .unwrap()
}

fn assert_invariants(grid: &Grid, load: &[f64], sol: &OpfSolution) {
    assert!(sol.is_optimal(), "status {:?}", sol.status);
    let r = kkt_residuals(grid, load, sol).unwrap();
    assert!(r.max_primal() <= 1e-7, "primal {:?}", r);
    assert!(r.dual_negativity <= 1e-8, "dual sign {:?}", r);
    assert!(r.max_complementarity() <= 1e-6, "cs {:?}", r);
    assert!(r.max_stationarity() <= 1e-6, "stationarity {:?}", r);
}

#[test]
fn single_bus_marginal_price() {
    let g = single_bus();
    let sol = solve_dcopf(&g, &[2.0]).unwrap();
    assert_invariants(&g, &[2.0], &sol);
    assert!((sol.dispatch[0] - 2.0).abs() < 1e-9);
    assert!((sol.lambda - 10.04).abs() < 1e-9);
    assert!(sol.alpha_up[0].abs() < 1e-9 && sol.alpha_lo[0].abs() < 1e-9);
    assert!(sol.shed[0].abs() < 1e-9);
    // Objective in $/h: base·(c2 p² + c1 p).
    assert!((sol.objective - 100.0 * (0.01 * 4.0 + 20.0)).abs() < 1e-6);
    assert!(sol.polished);
}

#[test]
fn merit_order_saturates_cheap_unit() {
    let g = Grid::new(
        vec![bus(1, 3.0)],
        vec![],
        vec![gen(1, 0.0, 1.0, 0.001, 5.0), gen(1, 0.0, 5.0, 0.001, 10.0)],
        vec![],
        None,
    )
    .unwrap();
    let sol = solve_dcopf(&g, &[3.0]).unwrap();
    assert_invariants(&g, &[3.0], &sol);
    assert!((sol.dispatch[0] - 1.0).abs() < 1e-9);
    assert!((sol.dispatch[1] - 2.0).abs() < 1e-9);
    assert!(sol.alpha_up[0] > 1.0);
    assert!((sol.lambda - (2.0 * 0.001 * 2.0 + 10.0)).abs() < 1e-9);

    // Independent check: exhaustive search over p1 with p2 closing the balance.
    let cost = |p1: f64| {
        let p2 = 3.0 - p1;
        0.001 * p1 * p1 + 5.0 * p1 + 0.001 * p2 * p2 + 10.0 * p2
    };
    let best = (0..=1000)
        .map(|k| k as f64 * 1e-3)
        .min_by(|a, b| cost(*a).partial_cmp(&cost(*b)).unwrap())
        .unwrap();
    assert!((best - sol.dispatch[0]).abs() <= 1e-3);
}

#[test]
fn shortage_sheds_at_penalty_price() {
    let g = single_bus();
    let sol = solve_dcopf(&g, &[7.0]).unwrap();
    assert_invariants(&g, &[7.0], &sol);
    assert!((sol.shed[0] - 2.0).abs() < 1e-9);
    assert!((sol.lambda - 1001.0).abs() < 1e-7);
    assert!(sol.alpha_up[0] > 0.0);
}

#[test]
fn congestion_separates_prices() {
    let g = congested_pair();
    let load = g.base_net_load();
    let sol = solve_dcopf(&g, &load).unwrap();
    assert_invariants(&g, &load, &sol);
    assert!((sol.dispatch[0] - 1.0).abs() < 1e-8);
    assert!((sol.dispatch[1] - 2.0).abs() < 1e-8);
    assert!((sol.flows[0] - 1.0).abs() < 1e-8);
    assert!(sol.mu_up[0] > 0.0);
    let lmp: Vec<f64> = (0..2).map(|i| kkt::lmp_at(&g, &sol, i)).collect();
    assert!((lmp[0] - (0.02 + 10.0)).abs() < 1e-7, "{lmp:?}");
    assert!((lmp[1] - (0.04 + 30.0)).abs() < 1e-7, "{lmp:?}");
}

#[test]
fn surplus_wind_is_curtailed() {
    let g = Grid::new(
        vec![bus(1, 1.0)],
        vec![],
        vec![gen(1, 0.5, 2.0, 0.01, 10.0)],
        vec![WindFarm {
            bus: 1,
            forecast: 1.0,
            curtail_cost: 50.0,
        }],
        None,
    )
    .unwrap();
    let load = g.base_net_load();
    assert!(load[0].abs() < 1e-12);
    let sol = solve_dcopf(&g, &load).unwrap();
    assert_invariants(&g, &load, &sol);
    assert!((sol.dispatch[0] - 0.5).abs() < 1e-9);
    assert!((sol.curtail[0] - 0.5).abs() < 1e-9);
    assert!((sol.lambda + 50.0).abs() < 1e-7);
    assert!(sol.alpha_lo[0] > 0.0);
}

#[test]
fn fixed_unit_is_a_constant() {
    let g = Grid::new(
        vec![bus(1, 3.0)],
        vec![],
        vec![gen(1, 1.0, 1.0, 0.01, 50.0), gen(1, 0.0, 5.0, 0.01, 10.0)],
        vec![],
        None,
    )
    .unwrap();
    let sol = solve_dcopf(&g, &[3.0]).unwrap();
    assert_invariants(&g, &[3.0], &sol);
    assert_eq!(sol.dispatch[0], 1.0);
    assert!((sol.dispatch[1] - 2.0).abs() < 1e-9);
    assert!(sol.alpha_lo[0] > 0.0);
}

#[test]
fn arbitrary_loads_stay_feasible() {
    // With a farm at every bus, p = 0, s = ℓ⁺, c = ℓ⁻ is feasible for any ℓ.
    let farm = |bus| WindFarm {
        bus,
        forecast: 0.0,
        curtail_cost: 20.0 + bus as f64,
    };
    let g = Grid::new(
        vec![bus(1, 0.0), bus(2, 3.0)],
        vec![line(1, 2, 1.0)],
        vec![gen(1, 0.0, 5.0, 0.01, 10.0), gen(2, 0.0, 5.0, 0.01, 30.0)],
        vec![farm(1), farm(2)],
        None,
    )
    .unwrap();
    for load in [
        [0.0, 0.0],
        [-5.0, 2.0],
        [40.0, -3.0],
        [1e3, 1e3],
        [0.3, -0.2],
    ] {
        let sol = solve_dcopf(&g, &load).unwrap();
        assert_invariants(&g, &load, &sol);
    }
}

#[test]
fn surplus_without_curtailment_is_infeasible() {
    let g = congested_pair();
    let sol = solve_dcopf(&g, &[-5.0, 2.0]).unwrap();
    assert_eq!(sol.status, OpfStatus::Infeasible);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let g = single_bus();
    assert!(solve_dcopf(&g, &[1.0, 2.0]).unwrap_err().is_validation());
    assert!(solve_dcopf(&g, &[f64::NAN]).unwrap_err().is_validation());
}

#[test]
fn exact_point_has_zero_residuals() {
    let g = single_bus();
    let sol = OpfSolution {
        dispatch: vec![2.0],
        shed: vec![0.0],
        curtail: vec![],
        lambda: 10.04,
        mu_up: vec![],
        mu_lo: vec![],
        alpha_up: vec![0.0],
        alpha_lo: vec![0.0],
        flows: vec![],
        objective: 0.0,
        status: OpfStatus::Optimal,
        iterations: 0,
        solve_micros: 0.0,
        polished: false,
        primal_residual: 0.0,
        dual_residual: 0.0,
    };
    let r = kkt_residuals(&g, &[2.0], &sol).unwrap();
    assert!(r.max_violation() <= 1e-10);

    let mut shifted = sol.clone();
    shifted.lambda += 1.0;
    let r = kkt_residuals(&g, &[2.0], &shifted).unwrap();
    assert!(r.stationarity_gen.iter().all(|v| v.abs() >= 1.0 - 1e-9));

    let mut idle = sol.clone();
    idle.dispatch = vec![0.0];
    idle.lambda = 0.0;
    let r = kkt_residuals(&g, &[2.0], &idle).unwrap();
    assert!((r.balance - 2.0).abs() < 1e-12);
}

#[test]
fn residual_dimensions_are_checked() {
    let g = single_bus();
    let mut sol = solve_dcopf(&g, &[2.0]).unwrap();
    sol.alpha_up.push(0.0);
    assert!(kkt_residuals(&g, &[2.0], &sol).unwrap_err().is_validation());
}
