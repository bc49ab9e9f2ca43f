//! Binary active-set targets.
//!
//! Every label vector uses the block layout
//! `[gen_upper | gen_lower | line_upper | line_lower | shed | curtail]`, sized by committed
//! generators, lines, buses and wind farms. [`LabelLayout::manifest`] names each position.

use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::grid::Grid;
use crate::opf::{OpfSolution, OpfStatus};
use crate::{Error, Result};

/// Sizes of the label blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelLayout {
    pub n_units: usize,
    pub n_lines: usize,
    pub n_buses: usize,
    pub n_farms: usize,
}

/// The four reporting categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Generators,
    Lines,
    Load,
    Wind,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Generators,
        Category::Lines,
        Category::Load,
        Category::Wind,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Generators => "generators",
            Category::Lines => "lines",
            Category::Load => "load",
            Category::Wind => "wind",
        }
    }
}

impl LabelLayout {
    pub fn of(grid: &Grid) -> Self {
        LabelLayout {
            n_units: grid.n_units(),
            n_lines: grid.n_lines(),
            n_buses: grid.n_buses(),
            n_farms: grid.n_farms(),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.n_units + 2 * self.n_lines + self.n_buses + self.n_farms
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Start offsets of the six blocks plus the total length.
    fn offsets(&self) -> [usize; 7] {
        let mut o = [0; 7];
        let sizes = [
            self.n_units,
            self.n_units,
            self.n_lines,
            self.n_lines,
            self.n_buses,
            self.n_farms,
        ];
        for (i, s) in sizes.iter().enumerate() {
            o[i + 1] = o[i] + s;
        }
        o
    }

    pub fn category_of(&self, position: usize) -> Category {
        let o = self.offsets();
        if position < o[2] {
            Category::Generators
        } else if position < o[4] {
            Category::Lines
        } else if position < o[5] {
            Category::Load
        } else {
            Category::Wind
        }
    }

    pub fn category_range(&self, c: Category) -> std::ops::Range<usize> {
        let o = self.offsets();
        match c {
            Category::Generators => o[0]..o[2],
            Category::Lines => o[2]..o[4],
            Category::Load => o[4]..o[5],
            Category::Wind => o[5]..o[6],
        }
    }

    /// One entry per label position, e.g. `gen_upper:3` or `line_lower:17`.
    pub fn manifest(&self) -> Vec<String> {
        let blocks = [
            ("gen_upper", self.n_units),
            ("gen_lower", self.n_units),
            ("line_upper", self.n_lines),
            ("line_lower", self.n_lines),
            ("shed", self.n_buses),
            ("curtail", self.n_farms),
        ];
        blocks
            .iter()
            .flat_map(|(name, n)| (0..*n).map(move |i| format!("{name}:{i}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSetLabels {
    pub gen_upper: Vec<bool>,
    pub gen_lower: Vec<bool>,
    pub line_upper: Vec<bool>,
    pub line_lower: Vec<bool>,
    pub shed: Vec<bool>,
    pub curtail: Vec<bool>,
}

impl ActiveSetLabels {
    pub fn zeros(layout: LabelLayout) -> Self {
        ActiveSetLabels {
            gen_upper: vec![false; layout.n_units],
            gen_lower: vec![false; layout.n_units],
            line_upper: vec![false; layout.n_lines],
            line_lower: vec![false; layout.n_lines],
            shed: vec![false; layout.n_buses],
            curtail: vec![false; layout.n_farms],
        }
    }

    pub fn layout(&self) -> LabelLayout {
        LabelLayout {
            n_units: self.gen_upper.len(),
            n_lines: self.line_upper.len(),
            n_buses: self.shed.len(),
            n_farms: self.curtail.len(),
        }
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.gen_upper
            .iter()
            .chain(&self.gen_lower)
            .chain(&self.line_upper)
            .chain(&self.line_lower)
            .chain(&self.shed)
            .chain(&self.curtail)
            .copied()
    }

    pub fn from_bits(layout: LabelLayout, bits: &[u8]) -> Result<Self> {
        check_len("label bits", layout.len(), bits.len())?;
        Self::from_fn(layout, |i| bits[i] != 0)
    }

    pub fn from_fn(layout: LabelLayout, mut f: impl FnMut(usize) -> bool) -> Result<Self> {
        let o = layout.offsets();
        let mut block = |b: usize| (o[b]..o[b + 1]).map(&mut f).collect::<Vec<_>>();
        Ok(ActiveSetLabels {
            gen_upper: block(0),
            gen_lower: block(1),
            line_upper: block(2),
            line_lower: block(3),
            shed: block(4),
            curtail: block(5),
        })
    }

    /// Flip the bit at a flat position.
    pub fn flip(&mut self, position: usize) {
        let o = self.layout().offsets();
        let b = (0..6)
            .find(|&b| position < o[b + 1])
            .expect("position in range");
        let v = match b {
            0 => &mut self.gen_upper,
            1 => &mut self.gen_lower,
            2 => &mut self.line_upper,
            3 => &mut self.line_lower,
            4 => &mut self.shed,
            _ => &mut self.curtail,
        };
        v[position - o[b]] ^= true;
    }

    /// Upper and lower bits of the same generator or line must not both be set.
    pub fn check_consistent(&self) -> Result<()> {
        if let Some(g) = (0..self.gen_upper.len()).find(|&g| self.gen_upper[g] && self.gen_lower[g])
        {
            return Err(Error::Label(format!(
                "generator {g} labeled at both upper and lower limit"
            )));
        }
        if let Some(k) =
            (0..self.line_upper.len()).find(|&k| self.line_upper[k] && self.line_lower[k])
        {
            return Err(Error::Label(format!(
                "line {k} labeled congested in both directions"
            )));
        }
        Ok(())
    }

    pub fn count_active(&self) -> usize {
        self.iter().filter(|&b| b).count()
    }
}

/// Activity thresholds for turning multipliers and slacks into bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// $/MWh
    pub dual: f64,
    /// p.u.
    pub slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            dual: 1e-6,
            slack: 1e-6,
        }
    }
}

/// Label an optimal OPF solution.
///
/// Constraint bits require a multiplier above `tol.dual` *and* a tight constraint (residual
/// below `tol.slack`); a tight constraint with a vanishing multiplier is labeled inactive. Shed
/// and curtailment bits are set when the slack exceeds `tol.slack`.
pub fn extract_labels(grid: &Grid, sol: &OpfSolution, tol: Tolerances) -> Result<ActiveSetLabels> {
    if sol.status != OpfStatus::Optimal {
        return Err(Error::Refused(format!(
            "cannot label a solution with status {:?}",
            sol.status
        )));
    }
    check_len("dispatch", grid.n_units(), sol.dispatch.len())?;
    check_len("line flows", grid.n_lines(), sol.flows.len())?;
    check_len("shed", grid.n_buses(), sol.shed.len())?;
    check_len("curtailment", grid.n_farms(), sol.curtail.len())?;

    let gen_upper = (0..grid.n_units())
        .map(|u| sol.alpha_up[u] > tol.dual && grid.unit(u).p_max - sol.dispatch[u] < tol.slack)
        .collect();
    let gen_lower = (0..grid.n_units())
        .map(|u| {
            sol.alpha_lo[u] > tol.dual
                && sol.dispatch[u] - grid.unit(u).p_min < tol.slack
                && !(sol.alpha_up[u] > tol.dual && grid.unit(u).p_max - sol.dispatch[u] < tol.slack)
        })
        .collect();
    let line_upper = (0..grid.n_lines())
        .map(|k| sol.mu_up[k] > tol.dual && grid.lines()[k].f_max - sol.flows[k] < tol.slack)
        .collect();
    let line_lower = (0..grid.n_lines())
        .map(|k| {
            sol.mu_lo[k] > tol.dual
                && grid.lines()[k].f_max + sol.flows[k] < tol.slack
                && !(sol.mu_up[k] > tol.dual && grid.lines()[k].f_max - sol.flows[k] < tol.slack)
        })
        .collect();
    let shed = sol.shed.iter().map(|&s| s > tol.slack).collect();
    let curtail = sol.curtail.iter().map(|&c| c > tol.slack).collect();
    Ok(ActiveSetLabels {
        gen_upper,
        gen_lower,
        line_upper,
        line_lower,
        shed,
        curtail,
    })
}

/// The quantity `d_v` behind every label position: the generator and line multipliers, then
/// the shed and curtailment slacks.
pub fn label_magnitudes(sol: &OpfSolution) -> Vec<f64> {
    sol.alpha_up
        .iter()
        .chain(&sol.alpha_lo)
        .chain(&sol.mu_up)
        .chain(&sol.mu_lo)
        .chain(&sol.shed)
        .chain(&sol.curtail)
        .copied()
        .collect()
}

/// Per-position activation frequency and loss weight `max_s |d_v^s|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStatistics {
    pub samples: usize,
    pub frequency: Vec<f64>,
    pub weight: Vec<f64>,
}

pub fn label_statistics<'a, I>(batch: I) -> Result<LabelStatistics>
where
    I: IntoIterator<Item = (&'a ActiveSetLabels, &'a [f64])>,
{
    let mut counts: Vec<usize> = Vec::new();
    let mut weight: Vec<f64> = Vec::new();
    let mut samples = 0usize;
    let mut layout = None;
    for (labels, mags) in batch {
        let l = labels.layout();
        match layout {
            None => {
                layout = Some(l);
                counts = vec![0; l.len()];
                weight = vec![0.0; l.len()];
            }
            Some(prev) if prev != l => {
                return Err(Error::Validation("label batch has mixed layouts".into()))
            }
            _ => {}
        }
        check_len("label magnitudes", l.len(), mags.len())?;
        for (v, bit) in labels.iter().enumerate() {
            counts[v] += usize::from(bit);
            weight[v] = weight[v].max(mags[v].abs());
        }
        samples += 1;
    }
    if samples == 0 {
        return Err(Error::Validation("empty label batch".into()));
    }
    let frequency = counts.iter().map(|&c| c as f64 / samples as f64).collect();
    Ok(LabelStatistics {
        samples,
        frequency,
        weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> LabelLayout {
        LabelLayout {
            n_units: 2,
            n_lines: 3,
            n_buses: 2,
            n_farms: 1,
        }
    }

    #[test]
    fn manifest_matches_length_and_categories() {
        let l = layout();
        let m = l.manifest();
        assert_eq!(m.len(), l.len());
        assert_eq!(m[0], "gen_upper:0");
        assert_eq!(m[4], "line_upper:0");
        assert_eq!(m[l.len() - 1], "curtail:0");
        assert_eq!(l.category_of(3), Category::Generators);
        assert_eq!(l.category_of(9), Category::Lines);
        assert_eq!(l.category_of(10), Category::Load);
        assert_eq!(l.category_of(12), Category::Wind);
    }

    #[test]
    fn bits_round_trip_and_flip() {
        let mut a = ActiveSetLabels::zeros(layout());
        a.flip(5);
        assert!(a.line_upper[1]);
        let b = ActiveSetLabels::from_bits(layout(), &a.to_bits()).unwrap();
        assert_eq!(a, b);
        a.flip(5);
        assert_eq!(a.count_active(), 0);
    }

    #[test]
    fn conflicting_generator_bits() {
        let mut a = ActiveSetLabels::zeros(layout());
        a.gen_upper[1] = true;
        a.gen_lower[1] = true;
        assert!(matches!(a.check_consistent(), Err(Error::Label(_))));
    }

    #[test]
    fn statistics_weights_and_frequencies() {
        let l = LabelLayout {
            n_units: 0,
            n_lines: 1,
            n_buses: 0,
            n_farms: 0,
        };
        let mk = |up: bool, mu: f64| {
            let mut a = ActiveSetLabels::zeros(l);
            a.line_upper[0] = up;
            (a, vec![mu, 0.0])
        };
        let batch = [mk(false, 0.0), mk(true, 2.0), mk(true, 5.0)];
        let stats = label_statistics(batch.iter().map(|(a, m)| (a, m.as_slice()))).unwrap();
        assert_eq!(stats.weight, vec![5.0, 0.0]);
        assert!((stats.frequency[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(stats.frequency[1], 0.0);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let empty: Vec<(&ActiveSetLabels, &[f64])> = vec![];
        assert!(label_statistics(empty).is_err());
    }
}
