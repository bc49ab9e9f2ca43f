//! Synthetic test networks with component ratios of a large ISO system.
//!
//! Buses are scattered on the unit square and connected by a minimum spanning tree plus
//! short extra edges. Generation is sized against the load, and line limits are set from the
//! unconstrained dispatch so that only a handful of lines bind at the optimum.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bus, Generator, Grid, Line, WindFarm};
use crate::labels::{extract_labels, Tolerances};
use crate::opf::solve_dcopf;
use crate::rng::{stream, stream_rng};
use crate::{Error, Result};

const LINES_PER_BUS: f64 = 2203.0 / 1814.0;
const GENS_PER_BUS: f64 = 362.0 / 1814.0;
const FARMS_PER_BUS: f64 = 33.0 / 1814.0;

const SHED_COST: f64 = 1000.0;
const SHED_STEP: f64 = 0.05;
const RESERVE_MARGIN: f64 = 1.35;
/// Lowest thermal limit, p.u.
const LIMIT_FLOOR: f64 = 0.5;
const TUNING_ROUNDS: usize = 8;

/// Installed wind relative to total demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindProfile {
    Base,
    High,
}

impl WindProfile {
    pub fn penetration(self) -> f64 {
        match self {
            WindProfile::Base => 0.05,
            WindProfile::High => 0.20,
        }
    }
}

/// Build a reproducible synthetic grid with `n_buses` buses.
pub fn generate_synthetic_grid(n_buses: usize, seed: u64, profile: WindProfile) -> Result<Grid> {
    if n_buses < 2 {
        return Err(Error::Validation(format!(
            "a synthetic grid needs at least 2 buses, got {n_buses}"
        )));
    }
    let mut rng = stream_rng(seed, stream::GRID, n_buses as u64);
    let n = n_buses;
    let n_gens = ((GENS_PER_BUS * n as f64).round() as usize).clamp(1, n);
    let n_farms = ((FARMS_PER_BUS * n as f64).round() as usize).clamp(1, n);

    let points: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let edges = topology(&points, &mut rng);

    let buses: Vec<Bus> = (0..n)
        .map(|i| Bus {
            id: i + 1,
            load: if rng.random::<f64>() < 0.8 {
                rng.random_range(0.2..1.5)
            } else {
                0.0
            },
            shed_cost: SHED_COST + SHED_STEP * i as f64,
        })
        .collect();
    let total_load: f64 = buses.iter().map(|b| b.load).sum::<f64>().max(0.5);

    let mut sites: Vec<usize> = (0..n).collect();
    sites.shuffle(&mut rng);
    let raw_caps: Vec<f64> = (0..n_gens).map(|_| rng.random_range(1.0..4.0)).collect();
    let cap_scale = RESERVE_MARGIN * total_load / raw_caps.iter().sum::<f64>();
    let generators: Vec<Generator> = raw_caps
        .iter()
        .enumerate()
        .map(|(g, &cap)| {
            let p_max = cap * cap_scale;
            Generator {
                bus: sites[g] + 1,
                p_min: if rng.random::<f64>() < 0.5 {
                    0.0
                } else {
                    p_max * rng.random_range(0.1..0.3)
                },
                p_max,
                // $/MWh per p.u.: 0.002–0.02 $/MW²h on a 100 MVA base.
                c2: rng.random_range(0.2..2.0),
                c1: rng.random_range(10.0..60.0),
                committed: true,
            }
        })
        .collect();

    sites.shuffle(&mut rng);
    let wind_total = profile.penetration() * total_load;
    let shares: Vec<f64> = (0..n_farms).map(|_| rng.random_range(0.5..1.5)).collect();
    let share_sum: f64 = shares.iter().sum();
    let wind_farms: Vec<WindFarm> = shares
        .iter()
        .enumerate()
        .map(|(w, s)| WindFarm {
            bus: sites[w] + 1,
            forecast: wind_total * s / share_sum,
            curtail_cost: rng.random_range(1.0..10.0),
        })
        .collect();

    let lines: Vec<Line> = edges
        .iter()
        .map(|&(a, b)| {
            let d = distance(points[a], points[b]);
            Line {
                from: a + 1,
                to: b + 1,
                susceptance: 1.0 / (0.01 + 0.2 * d),
                f_max: 1e4,
            }
        })
        .collect();

    let grid = Grid::new(buses, lines, generators, wind_farms, None)?;
    tune_line_limits(grid, &mut rng)
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Minimum spanning tree (Prim) plus the shortest missing edges up to the target count.
fn topology(points: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, 0usize); n];
    let mut edges = Vec::with_capacity(n);
    in_tree[0] = true;
    for j in 1..n {
        best[j] = (distance(points[0], points[j]), 0);
    }
    for _ in 1..n {
        let j = (0..n)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0))
            .expect("tree not complete");
        in_tree[j] = true;
        edges.push((best[j].1, j));
        for m in 0..n {
            let d = distance(points[j], points[m]);
            if !in_tree[m] && d < best[m].0 {
                best[m] = (d, j);
            }
        }
    }

    let target = ((LINES_PER_BUS * n as f64).round() as usize).min(n * (n - 1) / 2);
    let mut present: std::collections::HashSet<(usize, usize)> =
        edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..n {
        // Only nearby pairs are worth considering.
        let mut near: Vec<(f64, usize)> = (0..n)
            .filter(|&b| b != a)
            .map(|b| (distance(points[a], points[b]), b))
            .collect();
        near.sort_by(|x, y| x.0.total_cmp(&y.0));
        for &(d, b) in near.iter().take(4) {
            if !present.contains(&(a.min(b), a.max(b))) {
                candidates.push((d, a.min(b), a.max(b)));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    candidates.dedup_by(|x, y| x.1 == y.1 && x.2 == y.2);
    // Skip a random share of the shortest candidates so extra edges are not all local.
    for (_, a, b) in candidates {
        if edges.len() >= target {
            break;
        }
        if rng.random::<f64>() < 0.3 {
            continue;
        }
        if present.insert((a, b)) {
            edges.push((a, b));
        }
    }
    edges
}

/// Set limits from the uncongested optimum, then deliberately tighten a few heavily loaded
/// lines below their flow. Rounds relax any extra binding line until at most `1%` bind.
fn tune_line_limits(grid: Grid, rng: &mut ChaCha8Rng) -> Result<Grid> {
    let n_lines = grid.n_lines();
    let load = grid.base_net_load();
    let free = solve_dcopf(&grid, &load)?;
    if !free.is_optimal() {
        return Err(Error::Numerical(format!(
            "uncongested dispatch failed with status {:?}",
            free.status
        )));
    }
    let mut limits: Vec<f64> = free
        .flows
        .iter()
        .map(|f| (f.abs() * rng.random_range(1.2..2.0)).max(LIMIT_FLOOR))
        .collect();

    let allowed = n_lines / 100;
    let mut order: Vec<usize> = (0..n_lines).collect();
    order.sort_by(|&a, &b| free.flows[b].abs().total_cmp(&free.flows[a].abs()));
    let chosen: Vec<usize> = order
        .into_iter()
        .filter(|&k| free.flows[k].abs() > LIMIT_FLOOR)
        .take(allowed)
        .collect();
    for &k in &chosen {
        limits[k] = 0.9 * free.flows[k].abs();
    }

    let mut grid = grid.with_line_limits(&limits);
    for round in 0..TUNING_ROUNDS {
        let sol = solve_dcopf(&grid, &load)?;
        if !sol.is_optimal() {
            return Err(Error::Numerical(format!(
                "line-limit tuning failed with status {:?}",
                sol.status
            )));
        }
        let labels = extract_labels(&grid, &sol, Tolerances::default())?;
        let binding: Vec<usize> = (0..n_lines)
            .filter(|&k| labels.line_upper[k] || labels.line_lower[k])
            .collect();
        if binding.len() <= allowed {
            log::debug!(
                "line limits settled after {round} rounds, {} binding",
                binding.len()
            );
            return Ok(grid);
        }
        for &k in binding.iter().filter(|k| !chosen.contains(k)) {
            limits[k] *= 1.5;
        }
        // Everything still binding was chosen: drop the least loaded choice.
        if binding.iter().all(|k| chosen.contains(k)) {
            let k = *binding.last().expect("non-empty");
            limits[k] = free.flows[k].abs() * 1.5;
        }
        grid = grid.with_line_limits(&limits);
    }
    Err(Error::Numerical(
        "line limits did not settle to the congestion target".into(),
    ))
}
