use ate_core::cif::{g_formula_ate, CompetingRisksFit, TimeGrid};
use ate_core::numfmt::sig17;
use ate_core::resampling::{
    efron_ensemble, influence_matrix, pointwise_ci, simultaneous_band, wild_ensemble, ConfidenceRegion,
    InfluenceMatrix, InfluenceMode, Method, MultiplierScheme, RedrawPolicy, RegionInputs, ResampleEnsemble,
};
use ate_core::rng::stream;
use ate_core::sim::{generate_dataset, run_coverage_study, true_ate, CoverageReport, ScenarioConfig, StudyConfig};
use ate_core::{parse_dataset, ColumnSchema, Dataset, SolverOptions};

use crate::report::{emit_report, ReportFormat};
use crate::svg::{bar_chart, line_chart, BarPanel, LinePanel, Series};
use crate::{method_seed, CliError, Command, Outputs, RunConfig};

const DEFAULT_ALPHA: f64 = 0.05;

/// Settings from `--config`: study fields at the top level plus an optional `schema`.
struct Loaded {
    study: StudyConfig,
    schema: ColumnSchema,
}

fn load_config(cfg: &RunConfig) -> Result<Loaded, CliError> {
    let Some(path) = &cfg.config else {
        return Ok(Loaded {
            study: StudyConfig::default(),
            schema: ColumnSchema::default(),
        });
    };
    let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| CliError::Usage(format!("config {}: {e}", path.display()));
    let mut value: serde_json::Value = serde_json::from_slice(&bytes).map_err(bad)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("config {}: expected a JSON object", path.display())))?;
    let schema = match obj.remove("schema") {
        Some(s) => serde_json::from_value(s).map_err(bad)?,
        None => ColumnSchema::default(),
    };
    let study = serde_json::from_value(value).map_err(bad)?;
    Ok(Loaded { study, schema })
}

fn scenario(cfg: &RunConfig, base: &ScenarioConfig) -> Result<ScenarioConfig, CliError> {
    let beta = cfg.beta.unwrap_or(base.beta_1a);
    match &cfg.scenario {
        Some(name) => ScenarioConfig::preset(name, beta).map_err(|e| CliError::Usage(e.to_string())),
        None => Ok(ScenarioConfig {
            beta_1a: beta,
            ..base.clone()
        }),
    }
}

fn load_dataset(cfg: &RunConfig, schema: &ColumnSchema) -> Result<Dataset, CliError> {
    let path = cfg.input.as_ref().expect("validated");
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("input {}: {e}", path.display())))?;
    let ds = parse_dataset(&bytes, schema)?;
    Ok(match (cfg.jitter, cfg.seed) {
        (true, Some(seed)) => ds.jitter_ties(&mut stream(seed, "jitter", &[])),
        _ => ds,
    })
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

pub(crate) fn dispatch(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let loaded = load_config(cfg)?;
    let mut out = Outputs::default();
    let output = cfg.output.as_deref();
    match cfg.command {
        Command::Fit => {
            let ds = load_dataset(cfg, &loaded.schema)?;
            out.primary(output, fit_table(&ds)?);
        }
        Command::Ate => {
            let ds = load_dataset(cfg, &loaded.schema)?;
            let fits = CompetingRisksFit::fit_default(&ds, &SolverOptions::default())?;
            let grid = if cfg.times.is_empty() {
                TimeGrid::event_grid(&ds, &[], None)?
            } else {
                TimeGrid::from_unsorted(cfg.times.clone())?
            };
            let ate = g_formula_ate(&fits, &ds, &grid)?;
            let rows = grid
                .points()
                .iter()
                .zip(&ate.values)
                .map(|(&t, &v)| vec![sig17(t), sig17(v)]);
            out.primary(output, csv_bytes(&["time", "estimate"], rows)?);
        }
        Command::Ci | Command::Band => {
            let ds = load_dataset(cfg, &loaded.schema)?;
            let regions = intervals(cfg, &loaded.study, &ds)?;
            let mut rows = Vec::new();
            for r in &regions {
                for (j, &t) in r.grid.points().iter().enumerate() {
                    rows.push(vec![
                        sig17(t),
                        sig17(r.estimate.values[j]),
                        sig17(r.lower[j]),
                        sig17(r.upper[j]),
                        r.method.label().to_string(),
                        sig17(r.level),
                    ]);
                }
            }
            out.primary(
                output,
                csv_bytes(&["time", "estimate", "lower", "upper", "method", "level"], rows)?,
            );
        }
        Command::Simulate => {
            let n = match cfg.n.as_slice() {
                [n] => *n,
                _ => return Err(CliError::Usage("`simulate` needs a single --n".into())),
            };
            let scen = scenario(cfg, &loaded.study.scenario)?;
            let seed = cfg.seed.expect("validated");
            let ds = generate_dataset(&scen, n, &mut stream(seed, "simulate", &[]))?;
            out.primary(output, ds.to_csv_bytes()?);
        }
        Command::TrueAte => {
            let mut study = loaded.study;
            study.scenario = scenario(cfg, &study.scenario)?;
            apply_truth_flags(cfg, &mut study);
            study.truth.seed = cfg.seed.expect("validated");
            let truth = true_ate(&study.scenario, &study.truth, cfg.truth_cache.as_deref())?;
            let rows = truth
                .values
                .iter()
                .enumerate()
                .map(|(i, &v)| vec![sig17(i as f64 * truth.step), sig17(v)]);
            out.primary(output, csv_bytes(&["time", "ate"], rows)?);
        }
        Command::Coverage => {
            let study = coverage_study(cfg, loaded.study)?;
            let truth = true_ate(&study.scenario, &study.truth, cfg.truth_cache.as_deref())?;
            let report = run_coverage_study(&study, &truth)?;
            let dir = output.expect("validated");
            out.file(dir.join("coverage.csv"), emit_report(&report, ReportFormat::Csv));
            out.file(dir.join("coverage.json"), emit_report(&report, ReportFormat::Json));
            if cfg.svg {
                for (name, svg) in charts(&report, 1.0 - study.alpha) {
                    out.file(dir.join(name), svg.into_bytes());
                }
            }
        }
    }
    Ok(out)
}

fn fit_table(ds: &Dataset) -> Result<Vec<u8>, CliError> {
    let fits = CompetingRisksFit::fit_default(ds, &SolverOptions::default())?;
    let mut rows = Vec::new();
    for f in &fits.fits {
        for ((name, b), se) in f.column_names.iter().zip(&f.beta).zip(f.std_errors()) {
            rows.push(vec![f.cause.to_string(), name.clone(), sig17(*b), sig17(se)]);
        }
    }
    csv_bytes(&["cause", "term", "coefficient", "std_error"], rows)
}

fn apply_truth_flags(cfg: &RunConfig, study: &mut StudyConfig) {
    if let Some(n) = cfg.truth_n {
        study.truth.n_large = n;
    }
    if let Some(r) = cfg.truth_reps {
        study.truth.reps = r;
    }
}

fn coverage_study(cfg: &RunConfig, mut study: StudyConfig) -> Result<StudyConfig, CliError> {
    study.scenario = scenario(cfg, &study.scenario)?;
    study.master_seed = cfg.seed.expect("validated");
    if !cfg.n.is_empty() {
        study.sample_sizes = cfg.n.clone();
    }
    if let Some(r) = cfg.replications {
        study.replications = r;
    }
    if !cfg.method.is_empty() {
        study.methods = cfg.methods()?;
    }
    if let Some(a) = cfg.alpha {
        study.alpha = a;
    }
    if !cfg.times.is_empty() {
        study.report_times = cfg.times.clone();
    }
    if let [t1, t2] = cfg.band[..] {
        study.band_interval = [t1, t2];
    }
    study.resamples.ebs = cfg.resamples(Method::Efron, study.resamples.ebs)?;
    study.resamples.influence = cfg.resamples(Method::Influence, study.resamples.influence)?;
    study.resamples.wild = cfg.resamples(Method::Wild(MultiplierScheme::StandardNormal), study.resamples.wild)?;
    if let Some(i) = cfg.influence {
        study.influence_mode = i.into();
    }
    if cfg.no_timing {
        study.record_timing = false;
    }
    apply_truth_flags(cfg, &mut study);
    study.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(study)
}

enum Artifacts {
    Ensemble(ResampleEnsemble),
    Influence { matrix: InfluenceMatrix, draws: usize, seed: u64 },
}

impl Artifacts {
    fn inputs(&self) -> RegionInputs<'_> {
        match self {
            Artifacts::Ensemble(e) if e.method == Method::Efron => RegionInputs::Efron(e),
            Artifacts::Ensemble(e) => RegionInputs::Wild(e),
            Artifacts::Influence { matrix, draws, seed } => RegionInputs::Influence {
                matrix,
                draws: *draws,
                seed: *seed,
            },
        }
    }
}

/// Pointwise intervals (`ci`) or bands (`band`) for every requested method.
fn intervals(cfg: &RunConfig, study: &StudyConfig, ds: &Dataset) -> Result<Vec<ConfidenceRegion>, CliError> {
    let alpha = cfg.alpha.unwrap_or(DEFAULT_ALPHA);
    let times = if cfg.times.is_empty() { study.report_times.clone() } else { cfg.times.clone() };
    let [t1, t2] = match cfg.band[..] {
        [a, b] => [a, b],
        _ => study.band_interval,
    };
    if cfg.command == Command::Band && !(0.0 <= t1 && t1 < t2 && t2.is_finite()) {
        return Err(CliError::Usage(format!("invalid band interval [{t1}, {t2}]")));
    }
    let seed = cfg.seed.expect("validated");
    let mode: InfluenceMode = cfg.influence.map_or(InfluenceMode::GateauxNumeric, Into::into);
    let solver = SolverOptions::default();
    let fits = CompetingRisksFit::fit_default(ds, &solver)?;
    let horizon = times.iter().copied().fold(t2, f64::max);
    let grid = TimeGrid::event_grid(ds, &times, Some(horizon))?;
    let estimate = g_formula_ate(&fits, ds, &grid)?;
    let defaults = &study.resamples;
    let mut regions = Vec::new();
    for method in cfg.methods()? {
        let s = method_seed(seed, method);
        let art = match method {
            Method::Efron => Artifacts::Ensemble(efron_ensemble(
                &fits,
                ds,
                &grid,
                cfg.resamples(method, defaults.ebs)?,
                s,
                &RedrawPolicy::default(),
            )?),
            Method::Influence => Artifacts::Influence {
                matrix: influence_matrix(&fits, ds, &grid, mode, &solver)?,
                draws: cfg.resamples(method, defaults.influence)?,
                seed: s,
            },
            Method::Wild(scheme) => Artifacts::Ensemble(wild_ensemble(
                &fits,
                ds,
                &grid,
                cfg.resamples(method, defaults.wild)?,
                scheme,
                s,
            )?),
        };
        regions.push(match cfg.command {
            Command::Band => simultaneous_band(art.inputs(), &estimate, alpha, t1, t2)?,
            _ => pointwise_ci(art.inputs(), &estimate, alpha, &times)?,
        });
    }
    Ok(regions)
}

fn time_title(t: Option<f64>) -> String {
    t.map_or_else(|| "band".to_string(), |t| format!("t = {t}"))
}

/// Coverage-vs-n lines, mean-width bars and computation-time bars.
pub fn charts(report: &CoverageReport, nominal: f64) -> Vec<(&'static str, String)> {
    let mut methods: Vec<Method> = Vec::new();
    let mut times: Vec<Option<f64>> = Vec::new();
    let mut ns: Vec<usize> = Vec::new();
    for r in &report.rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        if !times.contains(&r.time) {
            times.push(r.time);
        }
        if !ns.contains(&r.n) {
            ns.push(r.n);
        }
    }
    ns.sort_unstable();
    let labels: Vec<String> = methods.iter().map(|m| m.label().to_string()).collect();
    let value = |n: usize, m: Method, t: Option<f64>, f: fn(&ate_core::sim::CoverageRow) -> f64| {
        report.row(n, m, t).map_or(f64::NAN, f)
    };
    let coverage: Vec<LinePanel> = times
        .iter()
        .map(|&t| LinePanel {
            title: time_title(t),
            series: methods
                .iter()
                .map(|&m| Series {
                    label: m.label().to_string(),
                    points: ns
                        .iter()
                        .filter_map(|&n| report.row(n, m, t).map(|r| (n as f64, r.coverage)))
                        .collect(),
                })
                .collect(),
            reference: Some(nominal),
        })
        .collect();
    let groups: Vec<String> = ns.iter().map(|n| n.to_string()).collect();
    let width: Vec<BarPanel> = times
        .iter()
        .map(|&t| BarPanel {
            title: time_title(t),
            groups: groups.clone(),
            values: methods
                .iter()
                .map(|&m| ns.iter().map(|&n| value(n, m, t, |r| r.mean_width)).collect())
                .collect(),
        })
        .collect();
    let elapsed = BarPanel {
        title: "all replications".into(),
        groups,
        values: methods
            .iter()
            .map(|&m| {
                ns.iter()
                    .map(|&n| {
                        report
                            .rows
                            .iter()
                            .find(|r| r.n == n && r.method == m)
                            .map_or(f64::NAN, |r| r.elapsed_ms / 1e3)
                    })
                    .collect()
            })
            .collect(),
    };
    vec![
        ("coverage.svg", line_chart("Coverage", "n", "coverage", &coverage)),
        ("width.svg", bar_chart("Mean width", "mean width", &labels, &width)),
        ("time.svg", bar_chart("Computation time", "seconds", &labels, &[elapsed])),
    ]
}
