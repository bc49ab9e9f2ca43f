//! Human-readable grid file. Values are in MW, p.u. susceptance and $/MWh (quadratic costs in
//! $/MW²h); conversion to per-unit happens here and nowhere else. The PTDF is recomputed on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bus, Generator, Grid, Line, WindFarm};
use crate::{Error, Result, BASE_MVA};

pub const GRID_FORMAT: &str = "asopf-grid";
pub const GRID_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub format: String,
    pub version: u32,
    pub base_mva: f64,
    pub slack_bus: usize,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    pub generators: Vec<GeneratorRecord>,
    pub wind_farms: Vec<WindRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: usize,
    pub load_mw: f64,
    pub shed_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
    pub f_max_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub bus: usize,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    /// $/MW²h
    pub c2: f64,
    /// $/MWh
    pub c1: f64,
    pub committed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindRecord {
    pub bus: usize,
    pub forecast_mw: f64,
    pub curtail_cost: f64,
}

impl GridFile {
    pub fn into_grid(self) -> Result<Grid> {
        if self.format != GRID_FORMAT {
            return Err(Error::Format(format!(
                "expected {GRID_FORMAT}, found {}",
                self.format
            )));
        }
        if self.version != GRID_VERSION {
            return Err(Error::Format(format!(
                "unsupported grid version {}",
                self.version
            )));
        }
        let base = self.base_mva;
        if !(base > 0.0) {
            return Err(Error::Validation("base_mva must be positive".into()));
        }
        let buses = self
            .buses
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                load: b.load_mw / base,
                shed_cost: b.shed_cost,
            })
            .collect();
        let lines = self
            .lines
            .into_iter()
            .map(|l| Line {
                from: l.from,
                to: l.to,
                susceptance: l.susceptance,
                f_max: l.f_max_mw / base,
            })
            .collect();
        let generators = self
            .generators
            .into_iter()
            .map(|g| Generator {
                bus: g.bus,
                p_min: g.p_min_mw / base,
                p_max: g.p_max_mw / base,
                c2: g.c2 * base,
                c1: g.c1,
                committed: g.committed,
            })
            .collect();
        let wind_farms = self
            .wind_farms
            .into_iter()
            .map(|w| WindFarm {
                bus: w.bus,
                forecast: w.forecast_mw / base,
                curtail_cost: w.curtail_cost,
            })
            .collect();
        Grid::new(buses, lines, generators, wind_farms, Some(self.slack_bus))
    }
}

impl Grid {
    pub fn to_file(&self) -> GridFile {
        let base = BASE_MVA;
        GridFile {
            format: GRID_FORMAT.into(),
            version: GRID_VERSION,
            base_mva: base,
            slack_bus: self.slack_bus(),
            buses: self
                .buses()
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    load_mw: b.load * base,
                    shed_cost: b.shed_cost,
                })
                .collect(),
            lines: self
                .lines()
                .iter()
                .map(|l| LineRecord {
                    from: l.from,
                    to: l.to,
                    susceptance: l.susceptance,
                    f_max_mw: l.f_max * base,
                })
                .collect(),
            generators: self
                .generators()
                .iter()
                .map(|g| GeneratorRecord {
                    bus: g.bus,
                    p_min_mw: g.p_min * base,
                    p_max_mw: g.p_max * base,
                    c2: g.c2 / base,
                    c1: g.c1,
                    committed: g.committed,
                })
                .collect(),
            wind_farms: self
                .wind_farms()
                .iter()
                .map(|w| WindRecord {
                    bus: w.bus,
                    forecast_mw: w.forecast * base,
                    curtail_cost: w.curtail_cost,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Grid> {
        let file: GridFile = serde_json::from_str(text)?;
        file.into_grid()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Grid> {
        Grid::from_json(&fs::read_to_string(path)?)
    }
}
