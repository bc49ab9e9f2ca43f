use std::path::{Path, PathBuf};

use asopf_core::datagen::{build_dataset, Dataset, DatasetSpec, Sample};
use asopf_core::grid::{generate_synthetic_grid, Grid, WindProfile};
use asopf_core::labels::{extract_labels, ActiveSetLabels, Tolerances};
use asopf_core::market::market_report;
use asopf_core::mlp::{predict_labels, train_on_dataset, MlpModel, DEFAULT_THRESHOLD};
use asopf_core::opf::solve_dcopf;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::bench_timing;
use crate::config::{RunConfig, TrainSettings};
use crate::error::{at, CliError, CliResult, Stage};
use crate::pipeline::{evaluate_sample, run_pipeline, status_name};
use crate::report::{read_labels, write_json, write_labels, write_rows};

#[derive(Debug, Parser)]
#[command(name = "asopf", version, about = "DC-OPF with learned active sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic grid.
    GridGen {
        #[arg(long)]
        buses: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Profile::Base)]
        profile: Profile,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw wind scenarios, solve them and store the labelled dataset.
    Generate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        demand_eta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the DC-OPF of a grid at its forecast, or of one dataset sample.
    Solve {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, requires = "sample")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-extract active-set labels from the stored solutions of a dataset.
    Label {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol_dual: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol_slack: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on the training split.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict labels for a split of a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the reduced system per sample from a label file, or from the true labels.
    Ese {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Market checks per sample, on the stored optimum or on reduced-system solutions.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the full QP against the reduced system on test samples.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline from a TOML configuration.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Base,
    High,
}

impl From<Profile> for WindProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Base => WindProfile::Base,
            Profile::High => WindProfile::High,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    at(Stage::Generate, Dataset::load(path))
}

fn split_indices(ds: &Dataset, split: Split) -> Vec<usize> {
    match split {
        Split::Train => ds.train.clone(),
        Split::Test => ds.test.clone(),
        Split::All => (0..ds.samples.len()).collect(),
    }
}

/// Label rows for `ds`: from a file when given, the stored true labels otherwise.
fn labels_for(ds: &Dataset, labels: Option<&Path>) -> CliResult<Vec<(usize, ActiveSetLabels)>> {
    let rows = match labels {
        Some(p) => read_labels(p, ds.layout())?,
        None => ds
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.labels.clone()))
            .collect(),
    };
    if let Some((i, _)) = rows.iter().find(|(i, _)| *i >= ds.samples.len()) {
        return Err(CliError::Config(format!(
            "label row for sample {i}, but the dataset has {}",
            ds.samples.len()
        )));
    }
    Ok(rows)
}

#[derive(Serialize)]
struct EseRow {
    sample: usize,
    status: &'static str,
    trusted: bool,
    residual: f64,
    kkt_violation: f64,
    condition: f64,
    repaired_units: usize,
    offending_rows: String,
    max_lmp_error: f64,
    max_dispatch_error: f64,
    solve_us: f64,
}

#[derive(Serialize)]
struct ValidateRow {
    sample: usize,
    source: &'static str,
    revenue_adequacy: bool,
    lhs: f64,
    rhs: f64,
    cost_recovery_passed: usize,
    cost_recovery_assessed: usize,
    primal: f64,
    dual: f64,
    duality_gap_relative: f64,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GridGen {
            buses,
            seed,
            profile,
            out,
        } => {
            let grid = at(
                Stage::GridGen,
                generate_synthetic_grid(buses, seed, profile.into()),
            )?;
            at(Stage::GridGen, grid.save(&out))?;
            println!(
                "{} buses, {} lines, {} units, {} farms -> {}",
                grid.n_buses(),
                grid.n_lines(),
                grid.n_units(),
                grid.n_farms(),
                out.display()
            );
        }
        Command::Generate {
            grid,
            eta,
            samples,
            seed,
            demand_eta,
            out,
        } => {
            let grid = at(Stage::Generate, Grid::load(&grid))?;
            let mut spec = DatasetSpec::for_grid(&grid, eta, samples, seed);
            spec.demand_eta = demand_eta;
            let ds = at(Stage::Generate, build_dataset(&grid, &spec))?;
            at(Stage::Generate, ds.save(&out))?;
            println!(
                "{} samples ({} redrawn, {} over slack caps) -> {}",
                ds.samples.len(),
                ds.redraws,
                ds.slack_cap_warnings,
                out.display()
            );
        }
        Command::Solve {
            grid,
            dataset,
            sample,
            out,
        } => {
            let grid = at(Stage::Solve, Grid::load(&grid))?;
            let net_load = match (dataset, sample) {
                (Some(d), Some(i)) => {
                    let ds = load_dataset(&d)?;
                    let s: &Sample = ds
                        .samples
                        .get(i)
                        .ok_or_else(|| CliError::Config(format!("sample {i} out of range")))?;
                    s.net_load.clone()
                }
                _ => grid.base_net_load(),
            };
            let sol = at(Stage::Solve, solve_dcopf(&grid, &net_load))?;
            write_json(&out, &sol)?;
            println!(
                "{:?}: objective {:.4} $/h, λ {:.4} $/MWh, {} iterations",
                sol.status, sol.objective, sol.lambda, sol.iterations
            );
            if !sol.is_optimal() {
                return Err(CliError::Stage {
                    stage: Stage::Solve,
                    source: asopf_core::Error::Numerical(format!("solver status {:?}", sol.status)),
                });
            }
        }
        Command::Label {
            dataset,
            tol_dual,
            tol_slack,
            out,
        } => {
            let ds = load_dataset(&dataset)?;
            let tol = Tolerances {
                dual: tol_dual,
                slack: tol_slack,
            };
            let rows = ds
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| Ok((i, extract_labels(&ds.grid, &s.truth, tol)?)))
                .collect::<asopf_core::Result<Vec<_>>>();
            write_labels(&out, ds.layout(), &at(Stage::Label, rows)?)?;
        }
        Command::Train {
            dataset,
            epochs,
            seed,
            learning_rate,
            batch_size,
            out,
        } => {
            let ds = load_dataset(&dataset)?;
            let settings = TrainSettings {
                epochs,
                learning_rate,
                batch_size,
                ..TrainSettings::default()
            };
            let (model, report) = at(
                Stage::Train,
                train_on_dataset(&ds, &settings.to_config(seed)),
            )?;
            at(Stage::Train, model.save(&out))?;
            println!(
                "{} epochs, final loss {:.4e}{}",
                report.loss.len(),
                model.meta.final_loss.unwrap_or(f64::NAN),
                if report.stopped_early {
                    " (early stop)"
                } else {
                    ""
                }
            );
        }
        Command::Predict {
            model,
            dataset,
            threshold,
            split,
            out,
        } => {
            let model = at(Stage::Predict, MlpModel::load(&model))?;
            let ds = load_dataset(&dataset)?;
            let rows = split_indices(&ds, split)
                .into_iter()
                .map(|i| {
                    Ok((
                        i,
                        predict_labels(&model, &ds.samples[i].features(), threshold)?,
                    ))
                })
                .collect::<asopf_core::Result<Vec<_>>>();
            write_labels(&out, ds.layout(), &at(Stage::Predict, rows)?)?;
        }
        Command::Ese {
            dataset,
            labels,
            out,
        } => {
            let ds = load_dataset(&dataset)?;
            let mut rows = Vec::new();
            for (i, l) in labels_for(&ds, labels.as_deref())? {
                let e = at(Stage::Ese, evaluate_sample(&ds.grid, &ds.samples[i], &l))?;
                rows.push(EseRow {
                    sample: i,
                    status: status_name(e.ese.status),
                    trusted: e.ese.trusted,
                    residual: e.ese.residual_norm,
                    kkt_violation: e.ese.kkt_violation,
                    condition: e.ese.condition,
                    repaired_units: e.ese.repaired_units.len(),
                    offending_rows: e.ese.offending_rows.join(" "),
                    max_lmp_error: e.errors.max_lmp(),
                    max_dispatch_error: e.errors.max_dispatch(),
                    solve_us: e.ese.solve_micros,
                });
            }
            let untrusted = rows.iter().filter(|r| !r.trusted).count();
            write_rows(&out, &rows)?;
            println!("{} samples, {untrusted} untrusted", rows.len());
        }
        Command::Validate {
            dataset,
            labels,
            out,
        } => {
            let ds = load_dataset(&dataset)?;
            let mut rows = Vec::new();
            let from_labels = labels.is_some();
            for (i, l) in labels_for(&ds, labels.as_deref())? {
                let s = &ds.samples[i];
                let (source, report) = if from_labels {
                    let e = at(Stage::Validate, evaluate_sample(&ds.grid, s, &l))?;
                    ("predicted", e.market)
                } else {
                    (
                        "oracle",
                        at(
                            Stage::Validate,
                            market_report(&ds.grid, &s.net_load, &s.truth),
                        )?,
                    )
                };
                let (p, n) = report.cost_recovery_counts();
                rows.push(ValidateRow {
                    sample: i,
                    source,
                    revenue_adequacy: report.revenue_adequacy.holds,
                    lhs: report.revenue_adequacy.lhs,
                    rhs: report.revenue_adequacy.rhs,
                    cost_recovery_passed: p,
                    cost_recovery_assessed: n,
                    primal: report.duality_gap.primal,
                    dual: report.duality_gap.dual,
                    duality_gap_relative: report.duality_gap.relative,
                });
            }
            let ra = rows.iter().filter(|r| r.revenue_adequacy).count();
            let (cp, cn) = rows.iter().fold((0, 0), |(p, n), r| {
                (p + r.cost_recovery_passed, n + r.cost_recovery_assessed)
            });
            write_rows(&out, &rows)?;
            println!(
                "revenue adequacy {ra}/{}, cost recovery {cp}/{cn} marginal units",
                rows.len()
            );
        }
        Command::Bench {
            dataset,
            samples,
            out,
        } => {
            let ds = load_dataset(&dataset)?;
            let batch: Vec<&Sample> = ds.test_samples().take(samples).collect();
            let t = bench_timing(&ds.grid, &batch)?;
            write_rows(&out, &[&t])?;
            println!(
                "QP median {:.0} µs, ESE median {:.0} µs, ratio {:.1}",
                t.qp_median_us, t.ese_median_us, t.ratio
            );
        }
        Command::Pipeline { config } => {
            let config = RunConfig::from_file(&config)?;
            let summary = run_pipeline(&config)?;
            for c in &summary.cases {
                let r = c.misclassification.rates();
                println!(
                    "{} η={}: misclassified gen {:.2}% lines {:.2}% load {:.2}% wind {:.2}%; \
                     buses within threshold {:.1}%, QP/ESE {:.1}x",
                    summary.case,
                    c.eta,
                    100.0 * r[0],
                    100.0 * r[1],
                    100.0 * r[2],
                    100.0 * r[3],
                    100.0 * c.errors.buses_within_threshold(),
                    c.timing.ratio
                );
            }
            println!("reports in {}", config.output_dir.display());
        }
    }
    Ok(())
}
