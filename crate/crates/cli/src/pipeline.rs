//! generate → label → train → predict → reduced solve → validate, once per noise level.

use std::fs;
use std::path::{Path, PathBuf};

use asopf_core::datagen::{build_dataset, Dataset, DatasetSpec, Sample};
use asopf_core::ese::{solve_with_labels, EseSolution, EseStatus};
use asopf_core::grid::Grid;
use asopf_core::labels::{ActiveSetLabels, Category};
use asopf_core::market::{compute_lmps, market_report, ErrorSummary, MarketReport, SampleErrors};
use asopf_core::mlp::{predict_labels, train_on_dataset, Misclassification, MlpModel, TrainReport};
use asopf_core::rng::derive_seed;
use serde::Serialize;

use crate::bench::{bench_timing, TimingTable};
use crate::config::RunConfig;
use crate::error::{at, CliError, CliResult, Stage};
use crate::report::{write_json, write_rows};

/// A recovered solution next to the ground truth of its sample.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub ese: EseSolution,
    pub errors: SampleErrors,
    pub market: MarketReport,
}

pub fn evaluate_sample(
    grid: &Grid,
    sample: &Sample,
    labels: &ActiveSetLabels,
) -> asopf_core::Result<Evaluation> {
    let ese = solve_with_labels(grid, &sample.net_load, labels)?;
    let lmp = compute_lmps(grid, ese.lambda, &ese.mu_up, &ese.mu_lo)?;
    let truth = &sample.truth;
    let truth_lmp = compute_lmps(grid, truth.lambda, &truth.mu_up, &truth.mu_lo)?;
    let errors = SampleErrors::new(grid, truth, &truth_lmp, &ese.dispatch, &lmp)?;
    let market = market_report(grid, &sample.net_load, &ese)?;
    Ok(Evaluation {
        ese,
        errors,
        market,
    })
}

/// Pass counts of the market checks over a batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MarketTally {
    pub samples: usize,
    pub revenue_adequacy_pass: usize,
    /// Over marginal generators.
    pub cost_recovery_pass: usize,
    pub cost_recovery_assessed: usize,
    pub max_relative_gap: f64,
}

impl MarketTally {
    pub fn add(&mut self, r: &MarketReport) {
        self.samples += 1;
        self.revenue_adequacy_pass += r.revenue_adequacy.holds as usize;
        let (p, n) = r.cost_recovery_counts();
        self.cost_recovery_pass += p;
        self.cost_recovery_assessed += n;
        self.max_relative_gap = self.max_relative_gap.max(r.duality_gap.relative);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleRow {
    pub eta: f64,
    pub sample: usize,
    pub split: &'static str,
    pub ese_status: &'static str,
    pub trusted: bool,
    pub repaired_units: usize,
    pub residual: f64,
    pub kkt_violation: f64,
    pub condition: f64,
    pub wrong_generators: usize,
    pub wrong_lines: usize,
    pub wrong_load: usize,
    pub wrong_wind: usize,
    pub max_lmp_error: f64,
    pub max_dispatch_error: f64,
    pub revenue_adequacy: bool,
    pub cost_recovery_passed: usize,
    pub cost_recovery_assessed: usize,
    pub duality_gap_relative: f64,
    pub oracle_revenue_adequacy: bool,
    pub oracle_cost_recovery_passed: usize,
    pub oracle_cost_recovery_assessed: usize,
    pub oracle_duality_gap_relative: f64,
    pub ese_us: f64,
}

pub fn status_name(s: EseStatus) -> &'static str {
    match s {
        EseStatus::Solved => "solved",
        EseStatus::LeastSquaresFallback => "least_squares_fallback",
        EseStatus::Singular => "singular",
    }
}

/// Everything one noise level produced.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub eta: f64,
    pub dataset: Dataset,
    pub model: MlpModel,
    pub training: TrainReport,
    /// Test split.
    pub misclassification: Misclassification,
    /// Test split, predicted labels.
    pub errors: ErrorSummary,
    /// All ground-truth solutions.
    pub oracle_market: MarketTally,
    /// Test split, predicted labels.
    pub predicted_market: MarketTally,
    pub rows: Vec<SampleRow>,
    pub timing: TimingTable,
    pub dataset_file: PathBuf,
    pub model_file: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub case: String,
    pub grid: Grid,
    pub cases: Vec<CaseResult>,
    pub reports: Vec<PathBuf>,
}

pub fn run_pipeline(config: &RunConfig) -> CliResult<RunSummary> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| CliError::file(out, e))?;
    let grid = config.load_grid()?;
    at(Stage::GridGen, grid.save(out.join("grid.json")))?;
    let case = config.case_name(&grid);
    log::info!(
        "{case}: {} buses, {} lines, {} units, {} farms",
        grid.n_buses(),
        grid.n_lines(),
        grid.n_units(),
        grid.n_farms()
    );

    let mut cases = Vec::new();
    for (c, &eta) in config.etas.iter().enumerate() {
        match run_case(config, &grid, c as u64, eta) {
            Ok(r) => cases.push(r),
            Err(e) => {
                // Keep whatever the finished cases produced.
                if let Err(w) = write_reports(config, &case, &grid, &cases) {
                    log::warn!("partial reports not written: {w}");
                }
                return Err(e);
            }
        }
    }
    let reports = write_reports(config, &case, &grid, &cases)?;
    Ok(RunSummary {
        case,
        grid,
        cases,
        reports,
    })
}

fn run_case(config: &RunConfig, grid: &Grid, c: u64, eta: f64) -> CliResult<CaseResult> {
    let out = &config.output_dir;
    let spec = DatasetSpec::for_grid(
        grid,
        eta,
        config.n_samples,
        derive_seed(config.seed, "dataset", c),
    );
    log::info!("η = {eta}: generating {} samples", spec.n_samples);
    let dataset = at(Stage::Generate, build_dataset(grid, &spec))?;
    let dataset_file = out.join(format!("dataset_eta{eta}.json"));
    at(Stage::Generate, dataset.save(&dataset_file))?;
    at(Stage::Label, dataset.validate())?;

    let train_config = config.train.to_config(derive_seed(config.seed, "model", c));
    log::info!("η = {eta}: training");
    let (model, training) = at(Stage::Train, train_on_dataset(&dataset, &train_config))?;
    let model_file = out.join(format!("model_eta{eta}.json"));
    at(Stage::Train, model.save(&model_file))?;
    log::info!(
        "η = {eta}: {} epochs, final loss {:.4e}",
        training.loss.len(),
        model.meta.final_loss.unwrap_or(f64::NAN)
    );

    let mut misclassification = Misclassification::default();
    let mut errors = ErrorSummary::new(grid.n_buses(), grid.n_units());
    let mut oracle_market = MarketTally::default();
    let mut predicted_market = MarketTally::default();
    let mut rows = Vec::with_capacity(dataset.samples.len());
    let mut split = vec!["train"; dataset.samples.len()];
    for &i in &dataset.test {
        split[i] = "test";
    }
    for (i, s) in dataset.samples.iter().enumerate() {
        let oracle = at(Stage::Validate, market_report(grid, &s.net_load, &s.truth))?;
        oracle_market.add(&oracle);
        let predicted = at(
            Stage::Predict,
            predict_labels(&model, &s.features(), config.threshold),
        )?;
        let mut wrong = Misclassification::default();
        at(Stage::Predict, wrong.add(&predicted, &s.labels))?;
        let eval = at(Stage::Ese, evaluate_sample(grid, s, &predicted))?;
        if split[i] == "test" {
            at(Stage::Predict, misclassification.add(&predicted, &s.labels))?;
            errors.add(&eval.errors);
            predicted_market.add(&eval.market);
        }
        let (cr_p, cr_n) = eval.market.cost_recovery_counts();
        let (ocr_p, ocr_n) = oracle.cost_recovery_counts();
        rows.push(SampleRow {
            eta,
            sample: i,
            split: split[i],
            ese_status: status_name(eval.ese.status),
            trusted: eval.ese.trusted,
            repaired_units: eval.ese.repaired_units.len(),
            residual: eval.ese.residual_norm,
            kkt_violation: eval.ese.kkt_violation,
            condition: eval.ese.condition,
            wrong_generators: wrong.wrong[0],
            wrong_lines: wrong.wrong[1],
            wrong_load: wrong.wrong[2],
            wrong_wind: wrong.wrong[3],
            max_lmp_error: eval.errors.max_lmp(),
            max_dispatch_error: eval.errors.max_dispatch(),
            revenue_adequacy: eval.market.revenue_adequacy.holds,
            cost_recovery_passed: cr_p,
            cost_recovery_assessed: cr_n,
            duality_gap_relative: eval.market.duality_gap.relative,
            oracle_revenue_adequacy: oracle.revenue_adequacy.holds,
            oracle_cost_recovery_passed: ocr_p,
            oracle_cost_recovery_assessed: ocr_n,
            oracle_duality_gap_relative: oracle.duality_gap.relative,
            ese_us: eval.ese.solve_micros,
        });
    }

    let bench: Vec<&Sample> = dataset.test_samples().take(config.bench_samples).collect();
    let timing = bench_timing(grid, &bench)?;
    log::info!(
        "η = {eta}: misclassified {:?}, QP/ESE time ratio {:.1}",
        misclassification.rates(),
        timing.ratio
    );
    Ok(CaseResult {
        eta,
        dataset,
        model,
        training,
        misclassification,
        errors,
        oracle_market,
        predicted_market,
        rows,
        timing,
        dataset_file,
        model_file,
    })
}

#[derive(Serialize)]
struct MisclassificationRow<'a> {
    case: &'a str,
    eta: f64,
    test_samples: usize,
    generators_pct: f64,
    lines_pct: f64,
    load_pct: f64,
    wind_pct: f64,
}

#[derive(Serialize)]
struct BusErrorRow {
    eta: f64,
    bus: usize,
    mean_abs_lmp_error: f64,
    max_abs_lmp_error: f64,
    within_threshold: bool,
}

#[derive(Serialize)]
struct GeneratorErrorRow {
    eta: f64,
    generator: usize,
    free_samples: usize,
    mean_abs_dispatch_error: Option<f64>,
    max_abs_dispatch_error: Option<f64>,
    within_threshold: Option<bool>,
}

#[derive(Serialize)]
struct ErrorSummaryRow {
    eta: f64,
    buses_within_pct: f64,
    generators_within_pct: f64,
}

#[derive(Serialize)]
struct MarketRow<'a> {
    eta: f64,
    source: &'a str,
    samples: usize,
    revenue_adequacy_pass: usize,
    cost_recovery_pass: usize,
    cost_recovery_assessed: usize,
    max_relative_gap: f64,
}

impl<'a> MarketRow<'a> {
    fn new(eta: f64, source: &'a str, t: &MarketTally) -> Self {
        MarketRow {
            eta,
            source,
            samples: t.samples,
            revenue_adequacy_pass: t.revenue_adequacy_pass,
            cost_recovery_pass: t.cost_recovery_pass,
            cost_recovery_assessed: t.cost_recovery_assessed,
            max_relative_gap: t.max_relative_gap,
        }
    }
}

#[derive(Serialize)]
struct TimingRow {
    eta: f64,
    samples: usize,
    qp_median_us: f64,
    qp_p95_us: f64,
    ese_median_us: f64,
    ese_p95_us: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct TrainingRow {
    eta: f64,
    epoch: usize,
    loss: f64,
    best: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    case: &'a str,
    config: &'a RunConfig,
    grid: GridSummary,
    cases: Vec<CaseManifest>,
    reports: Vec<String>,
}

#[derive(Serialize)]
struct GridSummary {
    buses: usize,
    lines: usize,
    units: usize,
    farms: usize,
    reference_bus: usize,
}

#[derive(Serialize)]
struct CaseManifest {
    eta: f64,
    dataset: String,
    model: String,
    samples: usize,
    redraws: usize,
    slack_cap_warnings: usize,
    epochs: usize,
    final_loss: Option<f64>,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Write every report for `cases` and return the paths written.
pub fn write_reports(
    config: &RunConfig,
    case: &str,
    grid: &Grid,
    cases: &[CaseResult],
) -> CliResult<Vec<PathBuf>> {
    let out = &config.output_dir;
    let mut written = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&Path) -> CliResult<()>| -> CliResult<()> {
        let path = out.join(name);
        f(&path)?;
        written.push(path);
        Ok(())
    };

    emit("misclassification.csv", &|p| {
        let rows: Vec<_> = cases
            .iter()
            .map(|c| {
                let r = &c.misclassification;
                MisclassificationRow {
                    case,
                    eta: c.eta,
                    test_samples: r.samples,
                    generators_pct: 100.0 * r.rate(Category::Generators),
                    lines_pct: 100.0 * r.rate(Category::Lines),
                    load_pct: 100.0 * r.rate(Category::Load),
                    wind_pct: 100.0 * r.rate(Category::Wind),
                }
            })
            .collect();
        write_rows(p, &rows)
    })?;
    emit("samples.csv", &|p| {
        let rows: Vec<&SampleRow> = cases.iter().flat_map(|c| &c.rows).collect();
        write_rows(p, &rows)
    })?;
    emit("error_buses.csv", &|p| {
        let mut rows = Vec::new();
        for c in cases {
            for (i, m) in c.errors.mean_lmp().into_iter().enumerate() {
                rows.push(BusErrorRow {
                    eta: c.eta,
                    bus: grid.buses()[i].id,
                    mean_abs_lmp_error: m,
                    max_abs_lmp_error: c.errors.lmp_max[i],
                    within_threshold: m <= asopf_core::market::LMP_ERROR_THRESHOLD,
                });
            }
        }
        write_rows(p, &rows)
    })?;
    emit("error_generators.csv", &|p| {
        let mut rows = Vec::new();
        for c in cases {
            for (u, m) in c.errors.mean_dispatch().into_iter().enumerate() {
                let n = c.errors.dispatch_count[u];
                rows.push(GeneratorErrorRow {
                    eta: c.eta,
                    generator: u,
                    free_samples: n,
                    mean_abs_dispatch_error: m,
                    max_abs_dispatch_error: (n > 0).then(|| c.errors.dispatch_max[u]),
                    within_threshold: m.map(|m| m <= asopf_core::market::DISPATCH_ERROR_THRESHOLD),
                });
            }
        }
        write_rows(p, &rows)
    })?;
    emit("error_summary.csv", &|p| {
        let rows: Vec<_> = cases
            .iter()
            .map(|c| ErrorSummaryRow {
                eta: c.eta,
                buses_within_pct: 100.0 * c.errors.buses_within_threshold(),
                generators_within_pct: 100.0 * c.errors.generators_within_threshold(),
            })
            .collect();
        write_rows(p, &rows)
    })?;
    emit("market_summary.csv", &|p| {
        let mut rows = Vec::new();
        for c in cases {
            rows.push(MarketRow::new(c.eta, "oracle", &c.oracle_market));
            rows.push(MarketRow::new(c.eta, "predicted", &c.predicted_market));
        }
        write_rows(p, &rows)
    })?;
    emit("timing.csv", &|p| {
        let rows: Vec<_> = cases
            .iter()
            .map(|c| TimingRow {
                eta: c.eta,
                samples: c.timing.samples,
                qp_median_us: c.timing.qp_median_us,
                qp_p95_us: c.timing.qp_p95_us,
                ese_median_us: c.timing.ese_median_us,
                ese_p95_us: c.timing.ese_p95_us,
                ratio: c.timing.ratio,
            })
            .collect();
        write_rows(p, &rows)
    })?;
    emit("training.csv", &|p| {
        let mut rows = Vec::new();
        for c in cases {
            for (e, (loss, best)) in c.training.loss.iter().zip(&c.training.best).enumerate() {
                rows.push(TrainingRow {
                    eta: c.eta,
                    epoch: e + 1,
                    loss: *loss,
                    best: *best,
                });
            }
        }
        write_rows(p, &rows)
    })?;

    let mut reports: Vec<String> = written.iter().map(|p| file_name(p)).collect();
    reports.push("manifest.json".into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        case,
        config,
        grid: GridSummary {
            buses: grid.n_buses(),
            lines: grid.n_lines(),
            units: grid.n_units(),
            farms: grid.n_farms(),
            reference_bus: grid.slack_bus(),
        },
        cases: cases
            .iter()
            .map(|c| CaseManifest {
                eta: c.eta,
                dataset: file_name(&c.dataset_file),
                model: file_name(&c.model_file),
                samples: c.dataset.samples.len(),
                redraws: c.dataset.redraws,
                slack_cap_warnings: c.dataset.slack_cap_warnings,
                epochs: c.training.loss.len(),
                final_loss: c.model.meta.final_loss,
            })
            .collect(),
        reports,
    };
    let path = out.join("manifest.json");
    write_json(&path, &manifest)?;
    written.push(path);
    Ok(written)
}
