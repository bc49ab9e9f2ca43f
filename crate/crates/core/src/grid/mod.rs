//! Network data model.
//!
//! A [`Grid`] is immutable once built: [`Grid::new`] validates every invariant and computes the
//! PTDF matrix, so any `Grid` value in circulation is consistent.

mod io;
mod ptdf;
mod synthetic;

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{GridFile, GRID_FORMAT, GRID_VERSION};
pub use ptdf::compute_ptdf;
pub use synthetic::{generate_synthetic_grid, WindProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    /// Forecast demand, p.u.
    pub load: f64,
    /// Load-shedding penalty c_LNS, $/MWh.
    pub shed_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series susceptance, p.u.
    pub susceptance: f64,
    /// Thermal limit, p.u.
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// Quadratic cost coefficient, $/MWh per p.u. (see crate docs).
    pub c2: f64,
    /// Linear cost coefficient, $/MWh.
    pub c1: f64,
    pub committed: bool,
}

impl Generator {
    /// Marginal cost `2·c2·p + c1` at dispatch `p`, using the regularized quadratic term.
    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.effective_c2() * p + self.c1
    }

    /// Quadratic coefficient with a tie-breaking floor for purely linear units.
    pub fn effective_c2(&self) -> f64 {
        if self.c2 > 0.0 {
            self.c2
        } else {
            TIE_BREAK_C2
        }
    }

    pub fn cost(&self, p: f64) -> f64 {
        self.c2 * p * p + self.c1 * p
    }

    pub fn is_fixed(&self) -> bool {
        self.p_max - self.p_min <= FIXED_RANGE
    }
}

/// Regularizer on p² for generators with `c2 = 0`; reported dispatch is then the minimum-norm
/// representative.
pub const TIE_BREAK_C2: f64 = 1e-8;

/// Generators whose output range is narrower than this are treated as fixed injections.
pub const FIXED_RANGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindFarm {
    pub bus: usize,
    /// Forecast injection w0, p.u.
    pub forecast: f64,
    /// Curtailment penalty c_RES, $/MWh.
    pub curtail_cost: f64,
}

/// A validated network with its PTDF matrix.
#[derive(Debug, Clone)]
pub struct Grid {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    wind_farms: Vec<WindFarm>,
    slack_bus: usize,
    index: HashMap<usize, usize>,
    committed: Vec<usize>,
    ptdf: DMatrix<f64>,
}

impl Grid {
    /// Validate the components and build the PTDF. `slack_bus` defaults to the lowest bus id.
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        wind_farms: Vec<WindFarm>,
        slack_bus: Option<usize>,
    ) -> Result<Self> {
        if buses.is_empty() {
            return Err(Error::Validation("grid has no buses".into()));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
            if !b.load.is_finite() || !b.shed_cost.is_finite() {
                return Err(Error::Validation(format!(
                    "bus {} has non-finite data",
                    b.id
                )));
            }
        }
        let slack_bus = match slack_bus {
            Some(id) => id,
            None => buses.iter().map(|b| b.id).min().expect("non-empty"),
        };
        if !index.contains_key(&slack_bus) {
            return Err(Error::Validation(format!(
                "slack bus {slack_bus} does not exist"
            )));
        }

        for (k, l) in lines.iter().enumerate() {
            for end in [l.from, l.to] {
                if !index.contains_key(&end) {
                    return Err(Error::Validation(format!(
                        "line {k} references unknown bus {end}"
                    )));
                }
            }
            if l.from == l.to {
                return Err(Error::Validation(format!("line {k} is a self-loop")));
            }
            if !(l.f_max > 0.0) || !l.f_max.is_finite() {
                return Err(Error::Validation(format!(
                    "line {k} has non-positive limit"
                )));
            }
        }
        for (g, gen) in generators.iter().enumerate() {
            if !index.contains_key(&gen.bus) {
                return Err(Error::Validation(format!(
                    "generator {g} references unknown bus {}",
                    gen.bus
                )));
            }
            if !(gen.p_min <= gen.p_max) || !gen.p_min.is_finite() || !gen.p_max.is_finite() {
                return Err(Error::Validation(format!(
                    "generator {g} has p_min > p_max"
                )));
            }
            if !(gen.c2 >= 0.0) || !gen.c1.is_finite() || !gen.c2.is_finite() {
                return Err(Error::Validation(format!(
                    "generator {g} has invalid costs"
                )));
            }
        }
        for (w, farm) in wind_farms.iter().enumerate() {
            if !index.contains_key(&farm.bus) {
                return Err(Error::Validation(format!(
                    "wind farm {w} references unknown bus {}",
                    farm.bus
                )));
            }
            if !(farm.forecast >= 0.0) || !farm.curtail_cost.is_finite() {
                return Err(Error::Validation(format!("wind farm {w} has invalid data")));
            }
        }
        let mut penalties: Vec<f64> = buses.iter().map(|b| b.shed_cost).collect();
        penalties.sort_by(f64::total_cmp);
        if penalties.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation(
                "load-shedding penalties must be pairwise distinct".into(),
            ));
        }

        let slack_index = index[&slack_bus];
        let endpoints: Vec<(usize, usize, f64)> = lines
            .iter()
            .map(|l| (index[&l.from], index[&l.to], l.susceptance))
            .collect();
        let ptdf = compute_ptdf(buses.len(), &endpoints, slack_index)?;

        let committed = generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.committed)
            .map(|(i, _)| i)
            .collect();

        Ok(Grid {
            buses,
            lines,
            generators,
            wind_farms,
            slack_bus,
            index,
            committed,
            ptdf,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// All generators, committed or not.
    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn wind_farms(&self) -> &[WindFarm] {
        &self.wind_farms
    }

    pub fn slack_bus(&self) -> usize {
        self.slack_bus
    }

    pub fn slack_index(&self) -> usize {
        self.index[&self.slack_bus]
    }

    /// Rows are lines, columns are buses in storage order.
    pub fn ptdf(&self) -> &DMatrix<f64> {
        &self.ptdf
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_farms(&self) -> usize {
        self.wind_farms.len()
    }

    /// Number of committed generators; every per-generator vector in the pipeline has this
    /// length and follows [`Grid::committed_indices`] order.
    pub fn n_units(&self) -> usize {
        self.committed.len()
    }

    pub fn committed_indices(&self) -> &[usize] {
        &self.committed
    }

    /// The `u`-th committed generator.
    pub fn unit(&self, u: usize) -> &Generator {
        &self.generators[self.committed[u]]
    }

    pub fn units(&self) -> impl Iterator<Item = &Generator> + '_ {
        self.committed.iter().map(move |&g| &self.generators[g])
    }

    /// Storage index of a bus id.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Storage index of the bus hosting the `u`-th committed generator.
    pub fn unit_bus(&self, u: usize) -> usize {
        self.index[&self.unit(u).bus]
    }

    pub fn farm_bus(&self, w: usize) -> usize {
        self.index[&self.wind_farms[w].bus]
    }

    pub fn line_ends(&self, k: usize) -> (usize, usize) {
        let l = &self.lines[k];
        (self.index[&l.from], self.index[&l.to])
    }

    pub fn demand(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.load).collect()
    }

    pub fn wind_forecast(&self) -> Vec<f64> {
        self.wind_farms.iter().map(|w| w.forecast).collect()
    }

    /// Net load `demand − wind` per bus for the given per-farm injections.
    pub fn net_load(&self, demand: &[f64], wind: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("demand", self.n_buses(), demand.len())?;
        crate::error::check_len("wind injections", self.n_farms(), wind.len())?;
        let mut ell = demand.to_vec();
        for (w, &inj) in wind.iter().enumerate() {
            ell[self.farm_bus(w)] -= inj;
        }
        Ok(ell)
    }

    /// Net load at the forecast demand and forecast wind.
    pub fn base_net_load(&self) -> Vec<f64> {
        self.net_load(&self.demand(), &self.wind_forecast())
            .expect("dimensions come from the grid itself")
    }

    /// Line flows for a nodal injection vector.
    pub fn flows(&self, injection: &[f64]) -> Vec<f64> {
        let phi = &self.ptdf;
        (0..phi.nrows())
            .map(|k| (0..phi.ncols()).map(|i| phi[(k, i)] * injection[i]).sum())
            .collect()
    }

    /// Replace line limits, keeping everything else. Used by the synthetic generator.
    pub(crate) fn with_line_limits(mut self, limits: &[f64]) -> Self {
        for (l, &f) in self.lines.iter_mut().zip(limits) {
            l.f_max = f;
        }
        self
    }

    /// A copy with every cost coefficient multiplied by `gamma`.
    pub fn scale_costs(&self, gamma: f64) -> Grid {
        let mut g = self.clone();
        for gen in &mut g.generators {
            gen.c1 *= gamma;
            gen.c2 *= gamma;
        }
        for b in &mut g.buses {
            b.shed_cost *= gamma;
        }
        for w in &mut g.wind_farms {
            w.curtail_cost *= gamma;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn bus(id: usize, load: f64) -> Bus {
        Bus {
            id,
            load,
            shed_cost: 1000.0 + id as f64,
        }
    }

    #[test]
    fn rejects_unknown_endpoint() {
        let err = Grid::new(
            vec![bus(1, 0.0), bus(2, 1.0)],
            vec![Line {
                from: 1,
                to: 3,
                susceptance: 1.0,
                f_max: 1.0,
            }],
            vec![],
            vec![],
            None,
        )
        .unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn rejects_duplicate_shed_costs() {
        let mut b2 = bus(2, 1.0);
        b2.shed_cost = 1001.0;
        let err = Grid::new(
            vec![bus(1, 0.0), b2],
            vec![Line {
                from: 1,
                to: 2,
                susceptance: 1.0,
                f_max: 1.0,
            }],
            vec![],
            vec![],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_inverted_generator_limits() {
        let err = Grid::new(
            vec![bus(1, 0.0)],
            vec![],
            vec![Generator {
                bus: 1,
                p_min: 2.0,
                p_max: 1.0,
                c2: 0.0,
                c1: 1.0,
                committed: true,
            }],
            vec![],
            None,
        )
        .unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn slack_defaults_to_lowest_id() {
        let g = Grid::new(
            vec![bus(5, 0.0), bus(3, 1.0)],
            vec![Line {
                from: 5,
                to: 3,
                susceptance: 2.0,
                f_max: 1.0,
            }],
            vec![],
            vec![],
            None,
        )
        .unwrap();
        assert_eq!(g.slack_bus(), 3);
        assert_eq!(g.slack_index(), 1);
        assert!(g.ptdf().column(1).iter().all(|&v| v == 0.0));
    }
}
