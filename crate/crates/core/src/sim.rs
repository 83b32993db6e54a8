//! Synthetic competing-risks data, true-effect oracle and coverage studies.
//!
//! Twelve covariates (`Z1..Z6` normal, `Z7..Z12` Bernoulli(1/2)) drive a
//! logistic treatment model and three Weibull latent times (cause 1, cause 2,
//! censoring) with hazard `0.02·t·exp(lp)`.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal, Open01};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cif::{g_formula_ate, AteCurve, CompetingRisksFit, TimeGrid};
use crate::cox::SolverOptions;
use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::resampling::{
    efron_ensemble, influence_matrix, pointwise_ci, simultaneous_band, wild_ensemble_from,
    ConfidenceRegion, InfluenceMode, Method, RedrawPolicy, RegionInputs, WildContributions,
};
use crate::rng::{child_seed, stream};

/// Effect pattern on `(Z1..Z6)` and, identically, on `(Z7..Z12)`, in units of `ln 2`.
const TREATMENT_EFFECTS: [f64; 6] = [1.0, -1.0, 0.0, 0.0, 0.0, 1.0];
const CAUSE1_EFFECTS: [f64; 6] = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
const CAUSE2_EFFECTS: [f64; 6] = [-1.0, 0.0, 0.0, 0.0, 1.0, 1.0];
const CENSORING_EFFECTS: [f64; 6] = [-1.0, 0.0, 0.0, 1.0, 0.0, -1.0];

pub const NUM_COVARIATES: usize = 12;

/// Censoring scale giving about 14% censoring by `t = 9` without treatment effect.
pub const DEFAULT_CENSORING_SCALE: f64 = 0.4975;
/// About 15% censoring by `t = 9` at `β_1A = 0`.
pub const LIGHT_CENSORING_SCALE: f64 = 0.5549;
/// About 30% censoring by `t = 9` at `β_1A = 0`.
pub const HEAVY_CENSORING_SCALE: f64 = 2.0425;
/// Treatment-model intercept of the default design (about 56% treated).
pub const DEFAULT_ALPHA_0: f64 = 0.0;
/// Intercept giving 50% treated.
pub const BALANCED_ALPHA_0: f64 = -0.3453;
/// About 20% treated.
pub const LOW_TREATMENT_ALPHA_0: f64 = -2.1723;
/// About 85% treated.
pub const HIGH_TREATMENT_ALPHA_0: f64 = 1.9165;

/// Type-II censoring with staggered entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Type2Settings {
    /// Number of events after which the study stops; `⌈0.7·n⌉` when absent.
    pub target_event_count: Option<usize>,
    pub entry_horizon: f64,
}

impl Default for Type2Settings {
    fn default() -> Self {
        Type2Settings {
            target_event_count: None,
            entry_horizon: 1.0,
        }
    }
}

impl Type2Settings {
    pub fn target_for(&self, n: usize) -> usize {
        self.target_event_count
            .unwrap_or_else(|| (0.7 * n as f64).ceil() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub beta_1a: f64,
    pub alpha_0: f64,
    pub normal_covariate_sd: f64,
    /// Multiplier on the censoring hazard; 0 disables random censoring.
    pub censoring_scale: f64,
    /// When present the data have a single cause and only type-II censoring.
    pub type2: Option<Type2Settings>,
    pub min_events_per_cause: usize,
    pub max_regenerations: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            beta_1a: 2.0,
            alpha_0: DEFAULT_ALPHA_0,
            normal_covariate_sd: 1.0,
            censoring_scale: DEFAULT_CENSORING_SCALE,
            type2: None,
            min_events_per_cause: 10,
            max_regenerations: 1000,
        }
    }
}

impl ScenarioConfig {
    pub const PRESETS: [&'static str; 10] = [
        "default",
        "balanced-treatment",
        "no-censoring",
        "light-censoring",
        "heavy-censoring",
        "low-treatment",
        "high-treatment",
        "low-variance",
        "high-variance",
        "type2",
    ];

    /// Named scenario with the given treatment effect.
    pub fn preset(name: &str, beta_1a: f64) -> Result<Self> {
        let base = ScenarioConfig {
            name: name.to_string(),
            beta_1a,
            ..ScenarioConfig::default()
        };
        Ok(match name {
            "default" => base,
            "no-censoring" => ScenarioConfig {
                censoring_scale: 0.0,
                ..base
            },
            "light-censoring" => ScenarioConfig {
                censoring_scale: LIGHT_CENSORING_SCALE,
                ..base
            },
            "heavy-censoring" => ScenarioConfig {
                censoring_scale: HEAVY_CENSORING_SCALE,
                ..base
            },
            "balanced-treatment" => ScenarioConfig {
                alpha_0: BALANCED_ALPHA_0,
                ..base
            },
            "low-treatment" => ScenarioConfig {
                alpha_0: LOW_TREATMENT_ALPHA_0,
                ..base
            },
            "high-treatment" => ScenarioConfig {
                alpha_0: HIGH_TREATMENT_ALPHA_0,
                ..base
            },
            "low-variance" => ScenarioConfig {
                normal_covariate_sd: 0.5,
                ..base
            },
            "high-variance" => ScenarioConfig {
                normal_covariate_sd: 2.0,
                ..base
            },
            "type2" => ScenarioConfig {
                type2: Some(Type2Settings::default()),
                ..base
            },
            other => {
                return Err(Error::Domain(format!(
                    "unknown scenario `{other}`; expected one of {}",
                    Self::PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.normal_covariate_sd.is_finite() && self.normal_covariate_sd > 0.0) {
            return Err(Error::Domain("normal_covariate_sd must be positive".into()));
        }
        if !(self.censoring_scale.is_finite() && self.censoring_scale >= 0.0) {
            return Err(Error::Domain("censoring_scale must be nonnegative".into()));
        }
        if !self.beta_1a.is_finite() || !self.alpha_0.is_finite() {
            return Err(Error::Domain("scenario coefficients must be finite".into()));
        }
        if let Some(t2) = &self.type2 {
            if !(t2.entry_horizon.is_finite() && t2.entry_horizon >= 0.0) {
                return Err(Error::Domain("entry_horizon must be nonnegative".into()));
            }
        }
        Ok(())
    }

    pub fn num_causes(&self) -> u32 {
        if self.type2.is_some() {
            1
        } else {
            2
        }
    }
}

pub fn covariate_names() -> Vec<String> {
    (1..=NUM_COVARIATES).map(|j| format!("Z{j}")).collect()
}

fn effect(pattern: &[f64; 6], z: &[f64]) -> f64 {
    LN_2 * (0..6).map(|j| pattern[j] * (z[j] + z[j + 6])).sum::<f64>()
}

/// Inverse-transform draw from the hazard `0.02·t·rate`.
pub fn weibull_time(u: f64, rate: f64) -> f64 {
    (-100.0 * u.ln() / rate).sqrt()
}

struct Subject {
    covariates: Vec<f64>,
    treated: bool,
    /// Latent cause-1, cause-2 and censoring times.
    latent: [f64; 3],
}

#[derive(Clone, Copy, PartialEq)]
enum Assignment {
    Logistic,
    /// `A ~ Bernoulli(1/2)` independent of the covariates.
    Randomized,
}

fn draw_subject<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    normal: &Normal<f64>,
    assignment: Assignment,
    rng: &mut R,
) -> Subject {
    let mut z = Vec::with_capacity(NUM_COVARIATES);
    for _ in 0..6 {
        z.push(normal.sample(rng));
    }
    for _ in 0..6 {
        z.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    }
    let treated = match assignment {
        Assignment::Logistic => {
            let lp = cfg.alpha_0 + effect(&TREATMENT_EFFECTS, &z);
            rng.random::<f64>() < 1.0 / (1.0 + (-lp).exp())
        }
        Assignment::Randomized => rng.random_bool(0.5),
    };
    let a = if treated { 1.0 } else { 0.0 };
    let u: [f64; 3] = [Open01.sample(rng), Open01.sample(rng), Open01.sample(rng)];
    let t1 = weibull_time(u[0], (cfg.beta_1a * a + effect(&CAUSE1_EFFECTS, &z)).exp());
    let t2 = if cfg.type2.is_some() {
        f64::INFINITY
    } else {
        weibull_time(u[1], effect(&CAUSE2_EFFECTS, &z).exp())
    };
    let t0 = if cfg.type2.is_some() || cfg.censoring_scale == 0.0 || assignment == Assignment::Randomized {
        f64::INFINITY
    } else {
        weibull_time(u[2], cfg.censoring_scale * effect(&CENSORING_EFFECTS, &z).exp())
    };
    Subject {
        covariates: z,
        treated,
        latent: [t1, t2, t0],
    }
}

fn observe(latent: &[f64; 3]) -> (f64, u32) {
    let [t1, t2, t0] = *latent;
    if t0 < t1 && t0 < t2 {
        (t0, 0)
    } else if t1 <= t2 {
        (t1, 1)
    } else {
        (t2, 2)
    }
}

/// One simulated dataset of size `n`, regenerated until every cause has at
/// least `min_events_per_cause` events.
pub fn generate_dataset<R: Rng + ?Sized>(cfg: &ScenarioConfig, n: usize, rng: &mut R) -> Result<Dataset> {
    cfg.validate()?;
    if n < 2 {
        return Err(Error::Domain(format!("sample size must be at least 2, got {n}")));
    }
    let normal = Normal::new(0.0, cfg.normal_covariate_sd).map_err(|e| Error::Domain(e.to_string()))?;
    let k = cfg.num_causes();
    for _ in 0..cfg.max_regenerations.max(1) {
        let subjects: Vec<Subject> = (0..n)
            .map(|_| draw_subject(cfg, &normal, Assignment::Logistic, rng))
            .collect();
        let observed: Vec<(f64, u32)> = match &cfg.type2 {
            Some(t2) => {
                let latent: Vec<f64> = subjects.iter().map(|s| s.latent[0]).collect();
                let (times, causes) = apply_type2_censoring(&latent, t2, rng)?;
                times.into_iter().zip(causes).collect()
            }
            None => subjects.iter().map(|s| observe(&s.latent)).collect(),
        };
        let enough = (1..=k).all(|c| {
            observed.iter().filter(|(_, d)| *d == c).count() >= cfg.min_events_per_cause
        });
        if !enough {
            continue;
        }
        let records = subjects
            .into_iter()
            .zip(observed)
            .map(|(s, (time, cause))| SubjectRecord::new(time, cause, s.treated, s.covariates))
            .collect();
        return Dataset::new(records, k, covariate_names());
    }
    Err(Error::Domain(format!(
        "no dataset with at least {} events per cause after {} attempts",
        cfg.min_events_per_cause, cfg.max_regenerations
    )))
}

/// Staggered entry on `[0, entry_horizon]` and a stop at the calendar time of
/// the `r`-th event. Returns observed `(times, causes)` with causes in `{0, 1}`.
pub fn apply_type2_censoring<R: Rng + ?Sized>(
    latent_event_times: &[f64],
    settings: &Type2Settings,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<u32>)> {
    let n = latent_event_times.len();
    let r = settings.target_for(n);
    if r == 0 || r > n {
        return Err(Error::Domain(format!("target event count {r} outside 1..={n}")));
    }
    let entry: Vec<f64> = (0..n)
        .map(|_| settings.entry_horizon * rng.random::<f64>())
        .collect();
    let mut calendar: Vec<f64> = entry.iter().zip(latent_event_times).map(|(e, t)| e + t).collect();
    let stop = {
        let (_, s, _) = calendar.select_nth_unstable_by(r - 1, f64::total_cmp);
        *s
    };
    calendar = entry.iter().zip(latent_event_times).map(|(e, t)| e + t).collect();
    let mut times = Vec::with_capacity(n);
    let mut causes = Vec::with_capacity(n);
    for i in 0..n {
        if calendar[i] <= stop {
            times.push(latent_event_times[i]);
            causes.push(1);
        } else {
            times.push((stop - entry[i]).max(0.0));
            causes.push(0);
        }
    }
    Ok((times, causes))
}

/// True ATE on a fine uniform grid, linearly interpolated in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueAte {
    pub step: f64,
    pub values: Vec<f64>,
}

impl TrueAte {
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 || self.values.is_empty() {
            return self.values.first().copied().unwrap_or(0.0);
        }
        let x = t / self.step;
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return *self.values.last().expect("nonempty");
        }
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    pub fn horizon(&self) -> f64 {
        self.step * (self.values.len().saturating_sub(1)) as f64
    }
}

/// Settings of the large-sample truth computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthSettings {
    pub n_large: usize,
    pub reps: usize,
    pub step: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for TruthSettings {
    fn default() -> Self {
        TruthSettings {
            n_large: 100_000,
            reps: 10,
            step: 0.01,
            horizon: 10.0,
            seed: 20_240_917,
        }
    }
}

/// Empirical arm difference of the cause-1 incidence in large randomized,
/// uncensored samples, averaged over `reps` samples.
pub fn true_ate_oracle(
    cfg: &ScenarioConfig,
    grid: &TimeGrid,
    n_large: usize,
    reps: usize,
    seed: u64,
) -> Result<AteCurve> {
    cfg.validate()?;
    if n_large < 1000 {
        return Err(Error::Domain(format!("n_large must be at least 1000, got {n_large}")));
    }
    if reps == 0 {
        return Err(Error::Domain("reps must be positive".into()));
    }
    let normal = Normal::new(0.0, cfg.normal_covariate_sd).map_err(|e| Error::Domain(e.to_string()))?;
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, "truth", &[r as u64]);
            let mut arms: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            let mut sizes = [0usize; 2];
            for _ in 0..n_large {
                let s = draw_subject(cfg, &normal, Assignment::Randomized, &mut rng);
                let a = s.treated as usize;
                sizes[a] += 1;
                let (t, c) = observe(&s.latent);
                if c == 1 {
                    arms[a].push(t);
                }
            }
            arms.iter_mut().for_each(|v| v.sort_by(f64::total_cmp));
            grid.points()
                .iter()
                .map(|&t| {
                    let f = |a: usize| {
                        arms[a].partition_point(|&s| s <= t) as f64 / sizes[a].max(1) as f64
                    };
                    f(1) - f(0)
                })
                .collect()
        })
        .collect();
    let values = (0..grid.len())
        .map(|g| per_rep.iter().map(|v| v[g]).sum::<f64>() / reps as f64)
        .collect();
    Ok(AteCurve {
        grid: grid.clone(),
        values,
        n_subjects: n_large,
        clamped: false,
    })
}

/// The truth for `cfg`, from `cache_dir` when a matching entry exists.
pub fn true_ate(cfg: &ScenarioConfig, settings: &TruthSettings, cache_dir: Option<&Path>) -> Result<TrueAte> {
    if !(settings.step > 0.0 && settings.horizon > 0.0) {
        return Err(Error::Domain("truth grid step and horizon must be positive".into()));
    }
    let path = cache_dir.map(|d| cache_path(d, cfg, settings)).transpose()?;
    if let Some(p) = &path {
        if let Ok(bytes) = std::fs::read(p) {
            if let Ok(t) = serde_json::from_slice::<TrueAte>(&bytes) {
                return Ok(t);
            }
        }
    }
    let m = (settings.horizon / settings.step).round() as usize;
    let grid = TimeGrid::new((0..=m).map(|i| i as f64 * settings.step).collect())?;
    let curve = true_ate_oracle(cfg, &grid, settings.n_large, settings.reps, settings.seed)?;
    let truth = TrueAte {
        step: settings.step,
        values: curve.values,
    };
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, serde_json::to_vec(&truth)?)?;
    }
    Ok(truth)
}

fn cache_path(dir: &Path, cfg: &ScenarioConfig, settings: &TruthSettings) -> Result<PathBuf> {
    let mut keyed = cfg.clone();
    keyed.name.clear();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(keyed, settings))?);
    let digest = h.finalize();
    let hex: String = digest.iter().take(16).map(|b| format!("{b:02x}")).collect();
    Ok(dir.join(format!("true_ate_{hex}.json")))
}

/// Resample sizes per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleSizes {
    pub ebs: usize,
    pub influence: usize,
    pub wild: usize,
}

impl Default for ResampleSizes {
    fn default() -> Self {
        ResampleSizes {
            ebs: 1000,
            influence: 10_000,
            wild: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub scenario: ScenarioConfig,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub report_times: Vec<f64>,
    pub band_interval: [f64; 2],
    pub alpha: f64,
    pub resamples: ResampleSizes,
    pub master_seed: u64,
    pub influence_mode: InfluenceMode,
    pub truth: TruthSettings,
    /// Largest tolerated fraction of failed replications.
    pub max_failure_fraction: f64,
    /// When false all timings are reported as zero, making reports byte-reproducible.
    pub record_timing: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            scenario: ScenarioConfig::default(),
            sample_sizes: vec![50, 75, 100, 200, 300],
            replications: 100,
            methods: Method::ALL.to_vec(),
            report_times: vec![1.0, 3.0, 5.0, 7.0, 9.0],
            band_interval: [0.0, 9.0],
            alpha: 0.05,
            resamples: ResampleSizes::default(),
            master_seed: 1,
            influence_mode: InfluenceMode::ClosedForm,
            truth: TruthSettings::default(),
            max_failure_fraction: 0.05,
            record_timing: true,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replications == 0 {
            return Err(Error::Domain("replications must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n < 2) {
            return Err(Error::Domain("sample sizes must be at least 2".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Domain("no methods requested".into()));
        }
        let [t1, t2] = self.band_interval;
        if !(0.0 <= t1 && t1 < t2 && t2.is_finite()) {
            return Err(Error::Domain(format!("invalid band interval [{t1}, {t2}]")));
        }
        if self.report_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Domain("report times must be finite and nonnegative".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One aggregated line of a coverage report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub scenario: String,
    pub n: usize,
    pub method: Method,
    /// Report time, or `None` for the simultaneous band.
    pub time: Option<f64>,
    pub coverage: f64,
    pub mc_se: f64,
    pub mean_width: f64,
    /// Wall-clock time spent on this method for this sample size.
    pub elapsed_ms: f64,
    /// Replications entering the proportions.
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplication {
    pub n: usize,
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub failures: Vec<FailedReplication>,
    /// Total wall-clock milliseconds per method label, plus `fit` for the shared point estimates.
    pub elapsed_ms: BTreeMap<String, f64>,
}

impl CoverageReport {
    pub fn row(&self, n: usize, method: Method, time: Option<f64>) -> Option<&CoverageRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.method == method && r.time == time)
    }
}

#[derive(Debug, Clone)]
struct MethodOutcome {
    covered: Vec<bool>,
    widths: Vec<f64>,
    band_covered: bool,
    band_width: f64,
    elapsed_ms: f64,
}

struct ReplicationOutcome {
    fit_ms: f64,
    methods: Vec<MethodOutcome>,
}

/// Whether a band (a right-continuous step function on its grid, extended to
/// `t2`) contains the truth at every grid point and just before each next one.
pub fn band_covers(band: &ConfidenceRegion, truth: &TrueAte, t2: f64) -> bool {
    let pts = band.grid.points();
    (0..pts.len()).all(|j| {
        let (l, u) = (band.lower[j], band.upper[j]);
        let next = if j + 1 < pts.len() { pts[j + 1] } else { t2 };
        let inside = |v: f64| l <= v && v <= u;
        inside(truth.eval(pts[j])) && inside(truth.eval(next))
    })
}

fn run_replication(
    study: &StudyConfig,
    truth: &TrueAte,
    n: usize,
    rep: usize,
) -> Result<ReplicationOutcome> {
    let idx = [n as u64, rep as u64];
    let seed = study.master_seed;
    let ds = generate_dataset(&study.scenario, n, &mut stream(seed, "data", &idx))?;
    let [t1, t2] = study.band_interval;
    let started = Instant::now();
    let solver = SolverOptions::default();
    let fits = CompetingRisksFit::fit_default(&ds, &solver)?;
    let grid = TimeGrid::event_grid(&ds, &study.report_times, Some(t2.max(
        study.report_times.iter().copied().fold(0.0, f64::max),
    )))?;
    let estimate = g_formula_ate(&fits, &ds, &grid)?;
    let fit_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut wild: Option<WildContributions> = None;
    let mut outcomes = Vec::with_capacity(study.methods.len());
    for &method in &study.methods {
        let started = Instant::now();
        let (pw, band) = match method {
            Method::Efron => {
                let ens = efron_ensemble(
                    &fits,
                    &ds,
                    &grid,
                    study.resamples.ebs,
                    child_seed(seed, "ebs", &idx),
                    &RedrawPolicy::default(),
                )?;
                let inputs = RegionInputs::Efron(&ens);
                (
                    pointwise_ci(inputs, &estimate, study.alpha, &study.report_times)?,
                    simultaneous_band(inputs, &estimate, study.alpha, t1, t2)?,
                )
            }
            Method::Influence => {
                let m = influence_matrix(&fits, &ds, &grid, study.influence_mode, &solver)?;
                let inputs = RegionInputs::Influence {
                    matrix: &m,
                    draws: study.resamples.influence,
                    seed: child_seed(seed, "if", &idx),
                };
                (
                    pointwise_ci(inputs, &estimate, study.alpha, &study.report_times)?,
                    simultaneous_band(inputs, &estimate, study.alpha, t1, t2)?,
                )
            }
            Method::Wild(scheme) => {
                if wild.is_none() {
                    wild = Some(WildContributions::new(&fits, &ds, &grid)?);
                }
                let contrib = wild.as_ref().expect("just set");
                let ens = wild_ensemble_from(
                    contrib,
                    &ds,
                    study.resamples.wild,
                    scheme,
                    child_seed(seed, scheme.tag(), &idx),
                )?;
                let inputs = RegionInputs::Wild(&ens);
                (
                    pointwise_ci(inputs, &estimate, study.alpha, &study.report_times)?,
                    simultaneous_band(inputs, &estimate, study.alpha, t1, t2)?,
                )
            }
        };
        let covered = pw
            .grid
            .points()
            .iter()
            .zip(pw.lower.iter().zip(&pw.upper))
            .map(|(&t, (l, u))| {
                let v = truth.eval(t);
                *l <= v && v <= *u
            })
            .collect();
        let widths = pw.lower.iter().zip(&pw.upper).map(|(l, u)| u - l).collect();
        let band_width = band.lower.iter().zip(&band.upper).map(|(l, u)| u - l).sum::<f64>()
            / band.lower.len() as f64;
        outcomes.push(MethodOutcome {
            covered,
            widths,
            band_covered: band_covers(&band, truth, t2),
            band_width,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(ReplicationOutcome {
        fit_ms,
        methods: outcomes,
    })
}

/// Coverage study over all sample sizes and methods of `study`.
pub fn run_coverage_study(study: &StudyConfig, truth: &TrueAte) -> Result<CoverageReport> {
    study.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut elapsed: BTreeMap<String, f64> = BTreeMap::new();
    let timing = |ms: f64| if study.record_timing { ms } else { 0.0 };
    for &n in &study.sample_sizes {
        let results: Vec<Result<ReplicationOutcome>> = (0..study.replications)
            .into_par_iter()
            .map(|rep| run_replication(study, truth, n, rep))
            .collect();
        let mut ok = Vec::new();
        for (rep, r) in results.into_iter().enumerate() {
            match r {
                Ok(o) => ok.push(o),
                Err(e) => failures.push(FailedReplication {
                    n,
                    replication: rep,
                    message: e.to_string(),
                }),
            }
        }
        let failed = study.replications - ok.len();
        if failed as f64 > study.max_failure_fraction * study.replications as f64 {
            return Err(Error::TooManyFailures {
                failed,
                total: study.replications,
                first: failures
                    .iter()
                    .find(|f| f.n == n)
                    .map(|f| f.message.clone())
                    .unwrap_or_default(),
            });
        }
        let r = ok.len();
        *elapsed.entry("fit".into()).or_default() += timing(ok.iter().map(|o| o.fit_ms).sum());
        for (m, &method) in study.methods.iter().enumerate() {
            let ms = timing(ok.iter().map(|o| o.methods[m].elapsed_ms).sum());
            *elapsed.entry(method.label().into()).or_default() += ms;
            let row = |time, hits: usize, width: f64| {
                let p = if r == 0 { 0.0 } else { hits as f64 / r as f64 };
                CoverageRow {
                    scenario: study.scenario.name.clone(),
                    n,
                    method,
                    time,
                    coverage: p,
                    mc_se: if r == 0 { 0.0 } else { (p * (1.0 - p) / r as f64).sqrt() },
                    mean_width: if r == 0 { 0.0 } else { width / r as f64 },
                    elapsed_ms: ms,
                    replications: r,
                }
            };
            for (j, &t) in study.report_times.iter().enumerate() {
                let hits = ok.iter().filter(|o| o.methods[m].covered[j]).count();
                let width = ok.iter().map(|o| o.methods[m].widths[j]).sum();
                rows.push(row(Some(t), hits, width));
            }
            let hits = ok.iter().filter(|o| o.methods[m].band_covered).count();
            let width = ok.iter().map(|o| o.methods[m].band_width).sum();
            rows.push(row(None, hits, width));
        }
    }
    sort_rows(&mut rows);
    Ok(CoverageReport {
        rows,
        failures,
        elapsed_ms: elapsed,
    })
}

/// Stable sort by `(scenario, n, method, time)`, band rows after the report times.
pub fn sort_rows(rows: &mut [CoverageRow]) {
    rows.sort_by(|a, b| {
        a.scenario
            .cmp(&b.scenario)
            .then(a.n.cmp(&b.n))
            .then(a.method.label().cmp(b.method.label()))
            .then(match (a.time, b.time) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            })
    });
}
