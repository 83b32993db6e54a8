//! Right-censored competing-risks data: records, CSV ingestion, validation and
//! the counting-process views (risk sets, event index) used by the estimators.
//!
//! Cause code 0 marks a censored observation; causes `1..=K` are failure types.
//! A record is at risk at time `t` when its observed time is `>= t`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::sig17;

/// One subject: observed time `T ∧ C`, cause code, treatment and baseline covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub time: f64,
    pub cause: u32,
    pub treated: bool,
    pub covariates: Vec<f64>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl SubjectRecord {
    pub fn new(time: f64, cause: u32, treated: bool, covariates: Vec<f64>) -> Self {
        SubjectRecord {
            time,
            cause,
            treated,
            covariates,
            weight: 1.0,
        }
    }

    pub fn is_event(&self) -> bool {
        self.cause >= 1
    }

    pub fn treatment(&self) -> f64 {
        if self.treated {
            1.0
        } else {
            0.0
        }
    }
}

/// Immutable competing-risks sample with a time-sorted index built at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SubjectRecord>,
    num_causes: u32,
    covariate_names: Vec<String>,
    /// Record indices sorted by ascending time (ties by index).
    order: Vec<usize>,
    sorted_times: Vec<f64>,
}

impl Dataset {
    pub fn new(
        records: Vec<SubjectRecord>,
        num_causes: u32,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::Domain(format!(
                "a dataset needs at least 2 records, got {}",
                records.len()
            )));
        }
        if num_causes == 0 {
            return Err(Error::Domain("number of causes must be positive".into()));
        }
        let p = covariate_names.len();
        for (i, r) in records.iter().enumerate() {
            if !(r.time.is_finite() && r.time >= 0.0) {
                return Err(Error::Domain(format!(
                    "record {i}: time must be finite and nonnegative, got {}",
                    r.time
                )));
            }
            if r.cause > num_causes {
                return Err(Error::Domain(format!(
                    "record {i}: cause code {} outside 0..={num_causes}",
                    r.cause
                )));
            }
            if r.covariates.len() != p {
                return Err(Error::Domain(format!(
                    "record {i}: expected {p} covariates, got {}",
                    r.covariates.len()
                )));
            }
            if let Some(j) = r.covariates.iter().position(|z| !z.is_finite()) {
                return Err(Error::Domain(format!(
                    "record {i}: covariate `{}` is not finite",
                    covariate_names[j]
                )));
            }
            if !(r.weight.is_finite() && r.weight > 0.0) {
                return Err(Error::Domain(format!(
                    "record {i}: weight must be positive, got {}",
                    r.weight
                )));
            }
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| records[a].time.total_cmp(&records[b].time).then(a.cmp(&b)));
        let sorted_times = order.iter().map(|&i| records[i].time).collect();
        Ok(Dataset {
            records,
            num_causes,
            covariate_names,
            order,
            sorted_times,
        })
    }

    /// Builds a dataset with `K` inferred as the largest cause code present.
    pub fn with_inferred_causes(
        records: Vec<SubjectRecord>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let k = records.iter().map(|r| r.cause).max().unwrap_or(0);
        if k == 0 {
            return Err(Error::Domain(
                "cannot infer the number of causes: no events present".into(),
            ));
        }
        Dataset::new(records, k, covariate_names)
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn num_causes(&self) -> u32 {
        self.num_causes
    }

    pub fn num_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &SubjectRecord {
        &self.records[i]
    }

    /// Record indices in ascending time order.
    pub fn time_order(&self) -> &[usize] {
        &self.order
    }

    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight).collect()
    }

    pub fn has_unit_weights(&self) -> bool {
        self.records.iter().all(|r| r.weight == 1.0)
    }

    pub fn max_time(&self) -> f64 {
        *self.sorted_times.last().expect("n >= 2")
    }

    /// `Y(t) = #{i : time_i >= t}`.
    pub fn risk_set_size(&self, t: f64) -> Result<usize> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::Domain(format!("risk set requested at t = {t}")));
        }
        let before = self.sorted_times.partition_point(|&s| s < t);
        Ok(self.sorted_times.len() - before)
    }

    /// Risk-set size at each subject's own observed time.
    pub fn own_risk_set_sizes(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| {
                let before = self.sorted_times.partition_point(|&s| s < r.time);
                self.sorted_times.len() - before
            })
            .collect()
    }

    pub fn events_per_cause(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_causes as usize];
        for r in &self.records {
            if r.cause >= 1 {
                counts[(r.cause - 1) as usize] += 1;
            }
        }
        counts
    }

    /// Sorted, deduplicated event times (any cause) that occur more than once.
    pub fn tied_event_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.is_event())
            .map(|r| r.time)
            .collect();
        times.sort_by(f64::total_cmp);
        let mut ties = Vec::new();
        for w in times.windows(2) {
            if w[0] == w[1] && ties.last() != Some(&w[0]) {
                ties.push(w[0]);
            }
        }
        ties
    }

    /// Errors when any two event records share a time.
    pub fn ensure_no_event_ties(&self) -> Result<()> {
        let ties = self.tied_event_times();
        if ties.is_empty() {
            Ok(())
        } else {
            Err(Error::TiedEvents { count: ties.len() })
        }
    }

    /// Breaks event-time ties by adding uniform noise in `(0, ε)` to every event
    /// involved in a tie, with `ε` half the smallest positive gap between the
    /// sorted distinct observed times.
    pub fn jitter_ties<R: Rng + ?Sized>(&self, rng: &mut R) -> Dataset {
        let ties = self.tied_event_times();
        if ties.is_empty() {
            return self.clone();
        }
        let mut distinct = self.sorted_times.clone();
        distinct.dedup();
        let min_gap = distinct
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|g| *g > 0.0)
            .fold(f64::INFINITY, f64::min);
        let eps = if min_gap.is_finite() { 0.5 * min_gap } else { 1e-8 };
        let mut records = self.records.clone();
        for r in records.iter_mut() {
            if r.is_event() && ties.binary_search_by(|t| t.total_cmp(&r.time)).is_ok() {
                let mut u: f64 = rng.random();
                while u == 0.0 {
                    u = rng.random();
                }
                r.time += eps * u;
            }
        }
        Dataset::new(records, self.num_causes, self.covariate_names.clone())
            .expect("jitter preserves validity")
    }

    /// Copy of the dataset with a different record order.
    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        let records = perm.iter().map(|&i| self.records[i].clone()).collect();
        Dataset::new(records, self.num_causes, self.covariate_names.clone())
            .expect("permutation preserves validity")
    }

    /// Writes the dataset as CSV (`time,cause,treated,<covariates>[,weight]`),
    /// numbers at 17 significant digits.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let with_weight = !self.has_unit_weights();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string(), "cause".into(), "treated".into()];
        header.extend(self.covariate_names.iter().cloned());
        if with_weight {
            header.push("weight".into());
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                sig17(r.time),
                r.cause.to_string(),
                if r.treated { "1".into() } else { "0".into() },
            ];
            row.extend(r.covariates.iter().map(|&z| sig17(z)));
            if with_weight {
                row.push(sig17(r.weight));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }
}

/// Dummy coding for a categorical covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalCoding {
    /// Level absorbed into the intercept (no indicator column).
    pub reference: String,
    /// Non-reference levels in output order; inferred (sorted) when absent.
    #[serde(default)]
    pub levels: Option<Vec<String>>,
}

/// Mapping from CSV columns onto the record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub time: String,
    pub cause: String,
    pub treated: String,
    /// Covariate columns in order; `None` takes every remaining column in header order.
    pub covariates: Option<Vec<String>>,
    /// Optional case-weight column; `weight` is picked up automatically when present.
    pub weight: Option<String>,
    /// When set, the treatment column is text and this level means treated.
    pub treated_level: Option<String>,
    /// Relabels raw cause codes (e.g. `{"2": 1, "1": 2}`) before range checks.
    pub cause_recode: BTreeMap<String, u32>,
    pub categorical: BTreeMap<String, CategoricalCoding>,
    /// Declared `K`; inferred from the data when absent.
    pub num_causes: Option<u32>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            time: "time".into(),
            cause: "cause".into(),
            treated: "treated".into(),
            covariates: None,
            weight: None,
            treated_level: None,
            cause_recode: BTreeMap::new(),
            categorical: BTreeMap::new(),
            num_causes: None,
        }
    }
}

/// Parses UTF-8 CSV text (header row mandatory) into a [`Dataset`], one record
/// per data row in file order.
pub fn parse_dataset(csv_bytes: &[u8], schema: &ColumnSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_bytes);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let time_col = col(&schema.time)?;
    let cause_col = col(&schema.cause)?;
    let treated_col = col(&schema.treated)?;
    let weight_col = match &schema.weight {
        Some(w) => Some(col(w)?),
        None => header.iter().position(|h| h == "weight"),
    };
    let covariate_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| col(n)).collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&j| j != time_col && j != cause_col && j != treated_col && Some(j) != weight_col)
            .collect(),
    };
    for name in schema.categorical.keys() {
        let j = col(name)?;
        if !covariate_cols.contains(&j) {
            return Err(Error::Domain(format!(
                "categorical column `{name}` is not among the covariates"
            )));
        }
    }

    let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;

    // Resolve categorical levels before building names.
    let mut levels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (name, coding) in &schema.categorical {
        let j = col(name)?;
        let lv = match &coding.levels {
            Some(l) => l.clone(),
            None => {
                let mut seen: Vec<String> = rows.iter().map(|r| r[j].to_string()).collect();
                seen.sort();
                seen.dedup();
                seen.retain(|l| *l != coding.reference);
                seen
            }
        };
        levels.insert(j, lv);
    }

    let mut covariate_names = Vec::new();
    for &j in &covariate_cols {
        match levels.get(&j) {
            Some(lv) => {
                for l in lv {
                    covariate_names.push(format!("{}[{}]", header[j], l));
                }
            }
            None => covariate_names.push(header[j].clone()),
        }
    }

    let number = |row: usize, j: usize, cell: &str| -> Result<f64> {
        cell.parse::<f64>().map_err(|_| Error::Parse {
            row,
            column: header[j].clone(),
            message: format!("`{cell}` is not a number"),
        })
    };

    let mut records = Vec::with_capacity(rows.len());
    for (row, rec) in rows.iter().enumerate() {
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, got {}", header.len(), rec.len()),
            });
        }
        let time = number(row, time_col, &rec[time_col])?;
        let raw_cause = &rec[cause_col];
        let cause = match schema.cause_recode.get(raw_cause) {
            Some(&c) => c,
            None => {
                let c = number(row, cause_col, raw_cause)?;
                if c < 0.0 || c.fract() != 0.0 {
                    return Err(Error::Domain(format!(
                        "row {row}: cause code `{raw_cause}` is not a nonnegative integer"
                    )));
                }
                c as u32
            }
        };
        let treated = match &schema.treated_level {
            Some(level) => rec[treated_col] == *level,
            None => match number(row, treated_col, &rec[treated_col])? {
                v if v == 0.0 => false,
                v if v == 1.0 => true,
                v => {
                    return Err(Error::Domain(format!(
                        "row {row}: treatment indicator must be 0 or 1, got {v}"
                    )))
                }
            },
        };
        let mut covariates = Vec::with_capacity(covariate_names.len());
        for &j in &covariate_cols {
            match levels.get(&j) {
                Some(lv) => {
                    let cell = &rec[j];
                    let reference = &schema.categorical[&header[j]].reference;
                    if cell != reference && !lv.iter().any(|l| l == cell) {
                        return Err(Error::Parse {
                            row,
                            column: header[j].clone(),
                            message: format!("unknown level `{cell}`"),
                        });
                    }
                    covariates.extend(lv.iter().map(|l| if l == cell { 1.0 } else { 0.0 }));
                }
                None => covariates.push(number(row, j, &rec[j])?),
            }
        }
        let weight = match weight_col {
            Some(j) => number(row, j, &rec[j])?,
            None => 1.0,
        };
        records.push(SubjectRecord {
            time,
            cause,
            treated,
            covariates,
            weight,
        });
    }

    match schema.num_causes {
        Some(k) => Dataset::new(records, k, covariate_names),
        None => Dataset::with_inferred_causes(records, covariate_names),
    }
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tie_violations: Vec<f64>,
    pub events_per_cause: Vec<usize>,
    pub min_event_threshold_met: bool,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.tie_violations.is_empty() && self.min_event_threshold_met
    }
}

/// Reports tied event times and whether every cause reaches `min_events_per_cause`.
pub fn validate(ds: &Dataset, min_events_per_cause: usize) -> ValidationReport {
    let tie_violations = ds.tied_event_times();
    let events_per_cause = ds.events_per_cause();
    let min_event_threshold_met = events_per_cause.iter().all(|&c| c >= min_events_per_cause);
    let mut warnings = Vec::new();
    if !tie_violations.is_empty() {
        warnings.push(format!(
            "{} tied event time(s); estimation requires distinct event times",
            tie_violations.len()
        ));
    }
    for (k, &c) in events_per_cause.iter().enumerate() {
        if c < min_events_per_cause {
            warnings.push(format!(
                "cause {} has {c} events (< {min_events_per_cause})",
                k + 1
            ));
        }
    }
    ValidationReport {
        tie_violations,
        events_per_cause,
        min_event_threshold_met,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(time: f64, cause: u32) -> SubjectRecord {
        SubjectRecord::new(time, cause, false, vec![])
    }

    #[test]
    fn parses_two_row_file() {
        let csv = b"time,cause,treated,z\n1,1,0,0.5\n2,0,1,-1\n";
        let ds = parse_dataset(csv, &ColumnSchema::default()).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.num_causes(), 1);
        assert_eq!(ds.covariate_names(), &["z".to_string()]);
        assert_eq!(ds.record(0), &SubjectRecord::new(1.0, 1, false, vec![0.5]));
        assert_eq!(ds.record(1), &SubjectRecord::new(2.0, 0, true, vec![-1.0]));
    }

    #[test]
    fn declared_causes_reject_out_of_range_code() {
        let csv = b"time,cause,treated\n1,3,0\n2,0,1\n";
        let schema = ColumnSchema {
            num_causes: Some(2),
            ..Default::default()
        };
        assert!(matches!(parse_dataset(csv, &schema), Err(Error::Domain(_))));
    }

    #[test]
    fn missing_column_is_named() {
        let csv = b"time,status,treated\n1,1,0\n2,0,1\n";
        match parse_dataset(csv, &ColumnSchema::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "cause"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let csv = b"time,cause,treated,z\n1,1,0,0.5\n2,0,1,abc\n";
        match parse_dataset(csv, &ColumnSchema::default()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn categorical_columns_are_dummy_coded() {
        let csv = b"time,status,trt,med,age\n1,1,RT,N,30\n2,2,CMT,L,40\n3,0,RT,S,50\n";
        let mut schema = ColumnSchema {
            cause: "status".into(),
            treated: "trt".into(),
            treated_level: Some("CMT".into()),
            ..Default::default()
        };
        schema.categorical.insert(
            "med".into(),
            CategoricalCoding {
                reference: "N".into(),
                levels: Some(vec!["S".into(), "L".into()]),
            },
        );
        schema.cause_recode.insert("1".into(), 2);
        schema.cause_recode.insert("2".into(), 1);
        let ds = parse_dataset(csv, &schema).unwrap();
        assert_eq!(ds.covariate_names(), &["med[S]", "med[L]", "age"]);
        assert_eq!(ds.record(0).covariates, vec![0.0, 0.0, 30.0]);
        assert_eq!(ds.record(1).covariates, vec![0.0, 1.0, 40.0]);
        assert_eq!(ds.record(0).cause, 2);
        assert_eq!(ds.record(1).cause, 1);
        assert!(ds.record(1).treated && !ds.record(0).treated);
    }

    #[test]
    fn validate_flags_ties_and_thresholds() {
        let ds = Dataset::new(vec![rec(3.0, 1), rec(3.0, 1), rec(4.0, 0)], 1, vec![]).unwrap();
        let rep = validate(&ds, 1);
        assert_eq!(rep.tie_violations, vec![3.0]);
        assert!(ds.ensure_no_event_ties().is_err());

        let mut records = Vec::new();
        for i in 0..12 {
            records.push(rec(1.0 + i as f64, 1));
        }
        for i in 0..9 {
            records.push(rec(100.0 + i as f64, 2));
        }
        let ds = Dataset::new(records, 2, vec![]).unwrap();
        let rep = validate(&ds, 10);
        assert_eq!(rep.events_per_cause, vec![12, 9]);
        assert!(!rep.min_event_threshold_met);
        assert!(rep.tie_violations.is_empty());
        assert!(validate(&ds, 9).is_clean());
    }

    #[test]
    fn risk_set_sizes() {
        let ds = Dataset::new(vec![rec(1.0, 1), rec(2.0, 0), rec(3.0, 1)], 1, vec![]).unwrap();
        assert_eq!(ds.risk_set_size(0.0).unwrap(), 3);
        assert_eq!(ds.risk_set_size(2.0).unwrap(), 2);
        assert_eq!(ds.risk_set_size(3.5).unwrap(), 0);
        assert!(ds.risk_set_size(-1.0).is_err());
        assert_eq!(ds.own_risk_set_sizes(), vec![3, 2, 1]);
    }

    #[test]
    fn jitter_breaks_ties_deterministically() {
        let ds = Dataset::new(
            vec![rec(1.0, 1), rec(1.0, 2), rec(1.5, 0), rec(2.0, 1)],
            2,
            vec![],
        )
        .unwrap();
        let a = ds.jitter_ties(&mut ChaCha8Rng::seed_from_u64(3));
        let b = ds.jitter_ties(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.tied_event_times().is_empty());
        for r in a.records().iter().take(2) {
            assert!(r.time > 1.0 && r.time < 1.25);
        }
        assert_eq!(a.record(3).time, 2.0);
    }

    #[test]
    fn constructor_rejects_bad_records() {
        assert!(Dataset::new(vec![rec(1.0, 1)], 1, vec![]).is_err());
        assert!(Dataset::new(vec![rec(-1.0, 1), rec(1.0, 0)], 1, vec![]).is_err());
        let mut bad = rec(1.0, 1);
        bad.weight = 0.0;
        assert!(Dataset::new(vec![bad, rec(2.0, 0)], 1, vec![]).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        proptest::collection::vec(
            (0.0f64..10.0, 0u32..3, any::<bool>(), -5.0f64..5.0, 0.1f64..3.0),
            2..40,
        )
        .prop_map(|rows| {
            let records = rows
                .into_iter()
                .map(|(t, c, a, z, w)| SubjectRecord {
                    time: t,
                    cause: c,
                    treated: a,
                    covariates: vec![z],
                    weight: w,
                })
                .collect();
            Dataset::new(records, 2, vec!["z".into()]).unwrap()
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_identity(ds in arb_dataset()) {
            let bytes = ds.to_csv_bytes().unwrap();
            let schema = ColumnSchema { num_causes: Some(2), ..Default::default() };
            let back = parse_dataset(&bytes, &schema).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn risk_set_is_monotone_and_partitions(ds in arb_dataset()) {
            prop_assert_eq!(ds.risk_set_size(0.0).unwrap(), ds.n());
            let mut grid: Vec<f64> = ds.records().iter().map(|r| r.time).collect();
            grid.sort_by(f64::total_cmp);
            let mut prev = usize::MAX;
            for &t in &grid {
                let y = ds.risk_set_size(t).unwrap();
                prop_assert!(y <= prev);
                prev = y;
                // events and censorings up to t plus those still at risk after t
                let done = ds.records().iter().filter(|r| r.time <= t).count();
                let after = ds.records().iter().filter(|r| r.time > t).count();
                prop_assert_eq!(done + after, ds.n());
                let next_up = ds.sorted_times.partition_point(|&s| s <= t);
                prop_assert_eq!(ds.n() - next_up, after);
            }
        }
    }
}
