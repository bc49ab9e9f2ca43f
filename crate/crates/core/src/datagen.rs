//! Training and test data: perturbed wind scenarios, their ground-truth OPF solutions and the
//! active-set labels the classifier learns.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::grid::{Grid, GridFile};
use crate::labels::{extract_labels, label_magnitudes, ActiveSetLabels, LabelLayout, Tolerances};
use crate::opf::{solve_dcopf, OpfSolution, OpfStatus};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "asopf-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Share of failed draws beyond which dataset generation gives up.
const MAX_FAILURE_RATE: f64 = 0.05;
/// Tolerance on the omitted caps `s ≤ ℓ`, `c ≤ w`.
const SLACK_CAP_TOL: f64 = 1e-6;
/// Tolerance of the stored load-flow features against a recomputation.
const FEATURE_TOL: f64 = 1e-9;

/// `w = max(0, w0 (1 + η ξ))` with independent standard normal `ξ`.
pub fn perturb_wind(w0: &[f64], eta: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, stream::WIND, 0);
    let xi: Vec<f64> = (0..w0.len()).map(|_| rng.sample(StandardNormal)).collect();
    perturb_wind_with(w0, eta, &xi)
}

/// [`perturb_wind`] with given noise draws.
pub fn perturb_wind_with(w0: &[f64], eta: f64, xi: &[f64]) -> Result<Vec<f64>> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Validation(format!(
            "noise level must be nonnegative, got {eta}"
        )));
    }
    check_len("noise draws", w0.len(), xi.len())?;
    if let Some(w) = w0.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::Validation(format!(
            "base wind injection {w} is negative"
        )));
    }
    Ok(w0
        .iter()
        .zip(xi)
        .map(|(w, x)| (w * (1.0 + eta * x)).max(0.0))
        .collect())
}

/// `f_load = Φ ℓ`.
pub fn compute_load_flows(grid: &Grid, net_load: &[f64]) -> Result<Vec<f64>> {
    check_len("net load", grid.n_buses(), net_load.len())?;
    Ok(grid.flows(net_load))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub net_load: Vec<f64>,
    pub load_flows: Vec<f64>,
    pub labels: ActiveSetLabels,
    pub truth: OpfSolution,
    /// Seed of the wind draw.
    pub seed: u64,
    pub eta: f64,
}

impl Sample {
    /// Network input: net load followed by load flows.
    pub fn features(&self) -> Vec<f64> {
        self.net_load
            .iter()
            .chain(&self.load_flows)
            .copied()
            .collect()
    }

    /// Per-label magnitudes `d_v` of the ground truth.
    pub fn magnitudes(&self) -> Vec<f64> {
        label_magnitudes(&self.truth)
    }
}

/// What to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Per-bus demand, p.u.
    pub demand: Vec<f64>,
    /// Per-farm base injection `w0`, p.u.
    pub wind: Vec<f64>,
    pub eta: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Optional relative noise on demand, same form as the wind noise. Zero keeps the load
    /// fixed across samples.
    #[serde(default)]
    pub demand_eta: f64,
}

impl DatasetSpec {
    /// Forecast demand and wind of `grid`.
    pub fn for_grid(grid: &Grid, eta: f64, n_samples: usize, seed: u64) -> Self {
        DatasetSpec {
            demand: grid.demand(),
            wind: grid.wind_forecast(),
            eta,
            n_samples,
            seed,
            demand_eta: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub grid: Grid,
    pub eta: f64,
    pub seed: u64,
    /// In draw order.
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Draws rejected because the solver did not return an optimum.
    pub redraws: usize,
    /// Samples whose shed or curtailment exceeded the omitted caps.
    pub slack_cap_warnings: usize,
}

impl Dataset {
    pub fn layout(&self) -> LabelLayout {
        LabelLayout::of(&self.grid)
    }

    pub fn n_features(&self) -> usize {
        self.grid.n_buses() + self.grid.n_lines()
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.train.iter().map(|&i| &self.samples[i])
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.test.iter().map(|&i| &self.samples[i])
    }

    /// Check the stored features against `Φ ℓ` and the stored labels against the stored
    /// ground truth.
    pub fn validate(&self) -> Result<()> {
        let layout = self.layout();
        for (j, s) in self.samples.iter().enumerate() {
            if s.net_load.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "sample {j}: non-finite net load"
                )));
            }
            let flows = compute_load_flows(&self.grid, &s.net_load)?;
            check_len("load flows", flows.len(), s.load_flows.len())?;
            let off = flows
                .iter()
                .zip(&s.load_flows)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if off > FEATURE_TOL {
                return Err(Error::Validation(format!(
                    "sample {j}: stored load flows differ from Φℓ by {off:.3e}"
                )));
            }
            if s.labels.layout() != layout {
                return Err(Error::Validation(format!(
                    "sample {j}: label layout mismatch"
                )));
            }
            if extract_labels(&self.grid, &s.truth, Tolerances::default())? != s.labels {
                return Err(Error::Validation(format!(
                    "sample {j}: labels do not match the stored solution"
                )));
            }
        }
        let mut seen = vec![false; self.samples.len()];
        for &i in self.train.iter().chain(&self.test) {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Validation(
                    "train/test split overlaps or is out of range".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> DatasetFile {
        DatasetFile {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            eta: self.eta,
            seed: self.seed,
            label_manifest: self.layout().manifest(),
            grid: self.grid.to_file(),
            train: self.train.clone(),
            test: self.test.clone(),
            redraws: self.redraws,
            slack_cap_warnings: self.slack_cap_warnings,
            samples: self
                .samples
                .iter()
                .map(|s| SampleRecord {
                    seed: s.seed,
                    eta: s.eta,
                    net_load: s.net_load.clone(),
                    load_flows: s.load_flows.clone(),
                    labels: s.labels.to_bits(),
                    truth: s.truth.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Dataset> {
        let file: DatasetFile = serde_json::from_str(text)?;
        file.into_dataset()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::from_json(&fs::read_to_string(path)?)
    }
}

/// On-disk dataset. Labels are stored as 0/1 rows aligned with `label_manifest`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format: String,
    pub version: u32,
    pub eta: f64,
    pub seed: u64,
    pub label_manifest: Vec<String>,
    pub grid: GridFile,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub redraws: usize,
    pub slack_cap_warnings: usize,
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seed: u64,
    pub eta: f64,
    pub net_load: Vec<f64>,
    pub load_flows: Vec<f64>,
    pub labels: Vec<u8>,
    pub truth: OpfSolution,
}

impl DatasetFile {
    pub fn into_dataset(self) -> Result<Dataset> {
        if self.format != DATASET_FORMAT {
            return Err(Error::Format(format!(
                "expected a {DATASET_FORMAT} file, found {:?}",
                self.format
            )));
        }
        if self.version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {}",
                self.version
            )));
        }
        let grid = self.grid.into_grid()?;
        let layout = LabelLayout::of(&grid);
        if self.label_manifest != layout.manifest() {
            return Err(Error::Format(
                "label manifest does not match the grid".into(),
            ));
        }
        let samples = self
            .samples
            .into_iter()
            .map(|r| {
                Ok(Sample {
                    labels: ActiveSetLabels::from_bits(layout, &r.labels)?,
                    net_load: r.net_load,
                    load_flows: r.load_flows,
                    truth: r.truth,
                    seed: r.seed,
                    eta: r.eta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Dataset {
            grid,
            eta: self.eta,
            seed: self.seed,
            samples,
            train: self.train,
            test: self.test,
            redraws: self.redraws,
            slack_cap_warnings: self.slack_cap_warnings,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Draw, solve and label `spec.n_samples` wind scenarios, then split them 50/50 after a seeded
/// shuffle.
pub fn build_dataset(grid: &Grid, spec: &DatasetSpec) -> Result<Dataset> {
    if !spec.n_samples.is_multiple_of(2) {
        return Err(Error::Validation(format!(
            "sample count must be even for the 50/50 split, got {}",
            spec.n_samples
        )));
    }
    check_len("demand", grid.n_buses(), spec.demand.len())?;
    check_len("wind", grid.n_farms(), spec.wind.len())?;
    if !(spec.demand_eta >= 0.0) {
        return Err(Error::Validation(
            "demand noise level must be nonnegative".into(),
        ));
    }
    let allowed_failures = (MAX_FAILURE_RATE * spec.n_samples as f64).ceil() as usize;
    let mut samples = Vec::with_capacity(spec.n_samples);
    let mut redraws = 0usize;
    let mut slack_cap_warnings = 0usize;
    let mut draw = 0u64;
    while samples.len() < spec.n_samples {
        let seed = derive_seed(spec.seed, stream::WIND, draw);
        draw += 1;
        let wind = perturb_wind(&spec.wind, spec.eta, seed)?;
        let demand = if spec.demand_eta > 0.0 {
            let mut rng = stream_rng(seed, "demand", 0);
            spec.demand
                .iter()
                .map(|d| d * (1.0 + spec.demand_eta * rng.sample::<f64, _>(StandardNormal)))
                .collect()
        } else {
            spec.demand.clone()
        };
        let net_load = grid.net_load(&demand, &wind)?;
        let mut truth = solve_dcopf(grid, &net_load)?;
        if truth.status != OpfStatus::Optimal {
            redraws += 1;
            log::warn!(
                "draw {} returned {:?}; drawing a replacement",
                draw - 1,
                truth.status
            );
            if redraws > allowed_failures {
                return Err(Error::Numerical(format!(
                    "{redraws} of {draw} draws failed to solve, more than {:.0}% of {} samples",
                    100.0 * MAX_FAILURE_RATE,
                    spec.n_samples
                )));
            }
            continue;
        }
        if exceeds_slack_caps(grid, &demand, &wind, &truth) {
            slack_cap_warnings += 1;
            log::warn!(
                "draw {}: shed or curtailment exceeds the available load or wind; the omitted \
                 caps would bind and their multipliers are not modeled",
                draw - 1
            );
        }
        // Wall time is not part of the data and would break byte-identical reruns.
        truth.solve_micros = 0.0;
        let labels = extract_labels(grid, &truth, Tolerances::default())?;
        samples.push(Sample {
            load_flows: compute_load_flows(grid, &net_load)?,
            net_load,
            labels,
            truth,
            seed,
            eta: spec.eta,
        });
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut stream_rng(spec.seed, stream::SHUFFLE, 0));
    let half = samples.len() / 2;
    let mut train = order[..half].to_vec();
    let mut test = order[half..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Dataset {
        grid: grid.clone(),
        eta: spec.eta,
        seed: spec.seed,
        samples,
        train,
        test,
        redraws,
        slack_cap_warnings,
    })
}

fn exceeds_slack_caps(grid: &Grid, demand: &[f64], wind: &[f64], sol: &OpfSolution) -> bool {
    let shed = sol
        .shed
        .iter()
        .zip(demand)
        .any(|(s, d)| *s > d.max(0.0) + SLACK_CAP_TOL);
    let curtail = (0..grid.n_farms()).any(|w| sol.curtail[w] > wind[w] + SLACK_CAP_TOL);
    shed || curtail
}

/// Per-feature affine map to zero mean and unit variance, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Divisor per feature; 1 for constant features.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            if n == 0 {
                sum = vec![0.0; r.len()];
            }
            check_len("feature row", sum.len(), r.len())?;
            for (s, v) in sum.iter_mut().zip(r.iter()) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Validation(
                "cannot fit a standardizer on no rows".into(),
            ));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        sq.resize(mean.len(), 0.0);
        for r in &rows {
            for ((q, v), m) in sq.iter_mut().zip(r.iter()).zip(&mean) {
                *q += (v - m).powi(2);
            }
        }
        let scale = sq
            .iter()
            .map(|q| {
                let sd = (q / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Bus, Generator, Line, WindFarm};

    fn small_grid() -> Grid {
        let bus = |id, load| Bus {
            id,
            load,
            shed_cost: 1000.0 + id as f64,
        };
        Grid::new(
            vec![bus(1, 0.0), bus(2, 2.0), bus(3, 1.0)],
            vec![
                Line {
                    from: 1,
                    to: 2,
                    susceptance: 5.0,
                    f_max: 1.5,
                },
                Line {
                    from: 2,
                    to: 3,
                    susceptance: 5.0,
                    f_max: 2.0,
                },
                Line {
                    from: 1,
                    to: 3,
                    susceptance: 5.0,
                    f_max: 2.0,
                },
            ],
            vec![
                Generator {
                    bus: 1,
                    p_min: 0.0,
                    p_max: 3.0,
                    c2: 0.1,
                    c1: 10.0,
                    committed: true,
                },
                Generator {
                    bus: 3,
                    p_min: 0.2,
                    p_max: 2.0,
                    c2: 0.1,
                    c1: 30.0,
                    committed: true,
                },
            ],
            vec![WindFarm {
                bus: 2,
                forecast: 0.8,
                curtail_cost: 5.0,
            }],
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_keeps_base_wind() {
        assert_eq!(perturb_wind(&[1.0, 0.3], 0.0, 9).unwrap(), vec![1.0, 0.3]);
    }

    #[test]
    fn forced_draws() {
        let w = perturb_wind_with(&[1.0], 0.1, &[1.0]).unwrap();
        assert!((w[0] - 1.1).abs() < 1e-15);
        assert_eq!(perturb_wind_with(&[0.1], 0.15, &[-8.0]).unwrap(), vec![0.0]);
        assert!(perturb_wind_with(&[1.0], -0.1, &[0.0])
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn wind_draws_are_seeded() {
        let a = perturb_wind(&[1.0, 2.0, 3.0], 0.1, 4).unwrap();
        assert_eq!(a, perturb_wind(&[1.0, 2.0, 3.0], 0.1, 4).unwrap());
        assert_ne!(a, perturb_wind(&[1.0, 2.0, 3.0], 0.1, 5).unwrap());
    }

    #[test]
    fn load_flows_are_ptdf_products() {
        let g = Grid::new(
            vec![
                Bus {
                    id: 1,
                    load: 0.0,
                    shed_cost: 1000.0,
                },
                Bus {
                    id: 2,
                    load: 0.0,
                    shed_cost: 1001.0,
                },
            ],
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
        .unwrap();
        assert_eq!(compute_load_flows(&g, &[1.0, 2.0]).unwrap(), vec![-2.0]);
        assert_eq!(compute_load_flows(&g, &[0.0, 0.0]).unwrap(), vec![0.0]);
        assert_eq!(compute_load_flows(&g, &[3.0, 0.0]).unwrap(), vec![0.0]);
        assert!(compute_load_flows(&g, &[1.0]).unwrap_err().is_validation());
    }

    #[test]
    fn noiseless_dataset_repeats_one_sample() {
        let g = small_grid();
        let ds = build_dataset(&g, &DatasetSpec::for_grid(&g, 0.0, 4, 1)).unwrap();
        assert_eq!(ds.samples.len(), 4);
        assert_eq!(ds.train.len(), 2);
        for s in &ds.samples[1..] {
            assert_eq!(s.features(), ds.samples[0].features());
            assert_eq!(s.labels, ds.samples[0].labels);
        }
    }

    #[test]
    fn odd_sample_count_is_rejected() {
        let g = small_grid();
        assert!(build_dataset(&g, &DatasetSpec::for_grid(&g, 0.1, 5, 1))
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn dataset_round_trips_and_validates() {
        let g = small_grid();
        let ds = build_dataset(&g, &DatasetSpec::for_grid(&g, 0.15, 20, 3)).unwrap();
        ds.validate().unwrap();
        let text = ds.to_json().unwrap();
        assert_eq!(
            text,
            build_dataset(&g, &DatasetSpec::for_grid(&g, 0.15, 20, 3))
                .unwrap()
                .to_json()
                .unwrap()
        );
        let back = Dataset::from_json(&text).unwrap();
        assert_eq!(back.samples.len(), 20);
        assert_eq!(back.to_json().unwrap(), text);

        let mut broken = ds.clone();
        broken.samples[0].load_flows[0] += 1e-3;
        assert!(broken.validate().unwrap_err().is_validation());
        let mut broken = ds.clone();
        broken.samples[0].labels.flip(0);
        assert!(broken.validate().is_err());
    }

    #[test]
    fn standardizer_uses_training_moments() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[3.0, 6.0]), vec![1.0, 1.0]);
    }
}
