//! Scenario × method × replicate benchmark matrix: per-record sampling,
//! timing, diagnostics, append-only result files and per-cell summaries.
//!
//! A record's chains run one after another on the worker that owns the
//! record; parallelism applies across records only. Chain `c` of a record
//! draws from `Rng::new(chain_seed, c)`, where `chain_seed` is a pure function
//! of `(seed, scenario, method, replicate)`, so any logged row can be re-run.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::ChainDraws;
use crate::dawid_skene::{DSHyper, DSModel};
use crate::diagnostics::report_for_chains;
use crate::error::{Error, Result};
use crate::gibbs::{gibbs_run, GibbsConfig, GibbsMode};
use crate::mixture::MixtureModel;
use crate::nuts::{nuts_run, NutsConfig};
use crate::simulate::{derive_seed, find_scenario, generate, scenario_catalog, Dataset, DatasetBody, Scenario};
use crate::stats::Rng;

pub const SCHEMA_VERSION: u32 = 1;

/// Result columns in file order. New metrics are appended, never inserted.
pub const RESULT_COLUMNS: [&str; 14] = [
    "schema_version",
    "scenario_id",
    "method",
    "replicate",
    "chains",
    "iterations",
    "warmup",
    "seed",
    "comp_time_s",
    "min_ess",
    "time_per_min_ess",
    "max_rhat",
    "divergences",
    "status",
];

/// R-hat above this flags a summary cell.
pub const RHAT_THRESHOLD: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NutsMarginal,
    GibbsFull,
    GibbsFullRestricted,
    GibbsMarginal,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::NutsMarginal, Method::GibbsFull, Method::GibbsFullRestricted, Method::GibbsMarginal];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::NutsMarginal => "nuts-marginal",
            Method::GibbsFull => "gibbs-full",
            Method::GibbsFullRestricted => "gibbs-full-restricted",
            Method::GibbsMarginal => "gibbs-marginal",
        }
    }

    /// Methods in the default matrix for a scenario. The restricted full
    /// sampler is a mixture-only arm there; it still runs on the rating model
    /// when asked for explicitly.
    pub fn defaults_for(scenario: &Scenario) -> Vec<Method> {
        match scenario {
            Scenario::Mixture(_) => Method::ALL.to_vec(),
            Scenario::DawidSkene(_) => vec![Method::NutsMarginal, Method::GibbsFull, Method::GibbsMarginal],
        }
    }

    fn gibbs_mode(self) -> Option<GibbsMode> {
        match self {
            Method::NutsMarginal => None,
            Method::GibbsFull => Some(GibbsMode::FullConjugate),
            Method::GibbsFullRestricted => Some(GibbsMode::FullRestricted),
            Method::GibbsMarginal => Some(GibbsMode::MarginalSlice),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunSpec {
    pub scenario_id: String,
    pub method: Method,
    pub chains: usize,
    /// Total iterations per chain, warmup included.
    pub iterations: usize,
    pub warmup: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl RunSpec {
    /// 3 chains × 3000 iterations with 1500 warmup, over 5 replicates.
    pub fn new(scenario_id: impl Into<String>, method: Method, seed: u64) -> Self {
        Self { scenario_id: scenario_id.into(), method, chains: 3, iterations: 3000, warmup: 1500, replicates: 5, seed }
    }

    pub fn validate(&self) -> Result<()> {
        find_scenario(&self.scenario_id)?;
        if self.chains < 2 {
            return Err(Error::InvalidArgument(format!("{} chains; R-hat needs at least 2", self.chains)));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("zero replicates".into()));
        }
        if self.warmup >= self.iterations || self.iterations - self.warmup < 4 {
            return Err(Error::InvalidArgument(format!(
                "{} iterations with {} warmup leaves too few draws",
                self.iterations, self.warmup
            )));
        }
        Ok(())
    }
}

/// Every default (scenario, method) pair: 4·4 + 8·4 + 1·3 = 51 specs.
pub fn default_matrix(seed: u64) -> Vec<RunSpec> {
    scenario_catalog()
        .iter()
        .flat_map(|s| Method::defaults_for(s).into_iter().map(move |m| RunSpec::new(s.id(), m, seed)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub schema_version: u32,
    pub scenario_id: String,
    pub method: Method,
    pub replicate: usize,
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
    /// Master seed. Data and chain streams are both derived from it.
    pub seed: u64,
    pub comp_time_s: Option<f64>,
    pub min_ess: Option<f64>,
    pub time_per_min_ess: Option<f64>,
    pub max_rhat: Option<f64>,
    pub divergences: Option<usize>,
    /// `ok`, or `error: <message>` with all metrics empty.
    pub status: String,
}

impl BenchRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn chain_seed(&self) -> u64 {
        chain_seed(self.seed, &self.scenario_id, self.method, self.replicate)
    }

    /// `(seed, stream)` of every chain.
    pub fn chain_seeds(&self) -> Vec<(u64, u64)> {
        let s = self.chain_seed();
        (0..self.chains as u64).map(|c| (s, c)).collect()
    }
}

pub fn chain_seed(seed: u64, scenario_id: &str, method: Method, replicate: usize) -> u64 {
    derive_seed(seed, &["chains", scenario_id, method.as_str(), &replicate.to_string()])
}

/// Runs `chains` chains of `method` on a dataset, one after another.
pub fn run_chains(
    dataset: &Dataset,
    method: Method,
    chains: usize,
    iterations: usize,
    warmup: usize,
    chain_seed: u64,
) -> Result<Vec<ChainDraws>> {
    let mut out = Vec::with_capacity(chains);
    match &dataset.body {
        DatasetBody::Mixture { data, .. } => {
            let Scenario::Mixture(s) = &dataset.scenario else {
                return Err(Error::InvalidArgument("mixture data under a rating scenario".into()));
            };
            let model = MixtureModel::new(data.clone(), s.k());
            for c in 0..chains {
                out.push(run_one(&model, method, iterations, warmup, &mut Rng::new(chain_seed, c as u64))?);
            }
        }
        DatasetBody::DawidSkene { data, .. } => {
            let model = DSModel::new(data.clone(), DSHyper::defaults(data.categories()))?;
            for c in 0..chains {
                out.push(run_one(&model, method, iterations, warmup, &mut Rng::new(chain_seed, c as u64))?);
            }
        }
    }
    Ok(out)
}

fn run_one<M>(model: &M, method: Method, iterations: usize, warmup: usize, rng: &mut Rng) -> Result<ChainDraws>
where
    M: crate::model::MarginalPosterior + crate::gibbs::GibbsModel,
{
    match method.gibbs_mode() {
        None => nuts_run(model, &NutsConfig::new(iterations, warmup)?, rng, None),
        Some(mode) => gibbs_run(model, &GibbsConfig::new(mode, iterations, warmup)?, rng, None),
    }
}

/// One (spec, replicate) cell of the matrix.
#[derive(Clone, Debug)]
pub struct RecordJob {
    pub spec: RunSpec,
    pub replicate: usize,
}

impl RecordJob {
    fn template(&self) -> BenchRecord {
        BenchRecord {
            schema_version: SCHEMA_VERSION,
            scenario_id: self.spec.scenario_id.clone(),
            method: self.spec.method,
            replicate: self.replicate,
            chains: self.spec.chains,
            iterations: self.spec.iterations,
            warmup: self.spec.warmup,
            seed: self.spec.seed,
            comp_time_s: None,
            min_ess: None,
            time_per_min_ess: None,
            max_rhat: None,
            divergences: None,
            status: "ok".into(),
        }
    }
}

pub fn expand_jobs(specs: &[RunSpec]) -> Vec<RecordJob> {
    specs
        .iter()
        .flat_map(|s| (1..=s.replicates).map(move |r| RecordJob { spec: s.clone(), replicate: r }))
        .collect()
}

/// Runs one record. Failures are captured in `status`, never propagated.
pub fn run_record(job: &RecordJob) -> BenchRecord {
    let mut rec = job.template();
    let outcome = (|| -> Result<(f64, f64, f64, f64, usize)> {
        job.spec.validate()?;
        let scenario = find_scenario(&job.spec.scenario_id)?;
        let data = generate(&scenario, job.replicate, job.spec.seed)?;
        let chains = run_chains(&data, job.spec.method, job.spec.chains, job.spec.iterations, job.spec.warmup, rec.chain_seed())?;
        let report = report_for_chains(&chains)?;
        let divergences = chains.iter().map(|c| c.divergences).sum();
        Ok((report.computation_time_seconds, report.min_ess, report.time_per_min_ess, report.max_rhat, divergences))
    })();
    match outcome {
        Ok((time, min_ess, tpm, rhat, div)) => {
            rec.comp_time_s = Some(time);
            rec.min_ess = Some(min_ess);
            rec.time_per_min_ess = Some(tpm);
            rec.max_rhat = Some(rhat);
            rec.divergences = Some(div);
        }
        Err(e) => rec.status = format!("error: {e}"),
    }
    rec
}

/// Receives each record as soon as it completes.
pub trait RecordSink: Send {
    fn accept(&mut self, record: &BenchRecord) -> Result<()>;
}

impl RecordSink for Vec<BenchRecord> {
    fn accept(&mut self, record: &BenchRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Runs every job on a pool of `parallelism` workers. Records reach `sink`
/// in completion order; the returned list is in job order.
/// Invalid specs are not rejected up front: each of their records fails on
/// its own and the rest of the matrix still runs.
pub fn run_matrix(specs: &[RunSpec], parallelism: usize, sink: &mut dyn RecordSink) -> Result<Vec<BenchRecord>> {
    let jobs = expand_jobs(specs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let sink = Mutex::new(sink);
    let sink_error: Mutex<Option<Error>> = Mutex::new(None);
    let records = pool.install(|| {
        jobs.par_iter()
            .with_max_len(1)
            .map(|job| {
                let rec = run_record(job);
                if let Err(e) = sink.lock().expect("sink lock").accept(&rec) {
                    sink_error.lock().expect("error lock").get_or_insert(e);
                }
                rec
            })
            .collect::<Vec<_>>()
    });
    match sink_error.into_inner().expect("error lock") {
        Some(e) => Err(e),
        None => Ok(records),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidArgument(format!("unknown format '{other}'"))),
        }
    }
}

fn schema_comment() -> String {
    format!("# margbench results schema_version={SCHEMA_VERSION}\n")
}

fn csv_row(record: &BenchRecord) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(record)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Serialises records, header included, into a string.
pub fn records_to_string(records: &[BenchRecord], format: Format) -> Result<String> {
    let mut out = schema_comment();
    if format == Format::Csv {
        out.push_str(&RESULT_COLUMNS.join(","));
        out.push('\n');
    }
    for r in records {
        match format {
            Format::Csv => out.push_str(&csv_row(r)?),
            Format::Json => {
                out.push_str(&serde_json::to_string(r)?);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Append-only result file. The schema comment (and the CSV column row) are
/// written only when the file is new or empty; each record is flushed as it
/// arrives.
pub struct ResultWriter<W: Write + Send> {
    out: W,
    format: Format,
}

impl ResultWriter<File> {
    pub fn append(path: &Path, format: Format) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() == 0 {
            let mut header = schema_comment();
            if format == Format::Csv {
                header.push_str(&RESULT_COLUMNS.join(","));
                header.push('\n');
            }
            file.write_all(header.as_bytes())?;
            file.flush()?;
        }
        Ok(Self { out: file, format })
    }
}

impl<W: Write + Send> ResultWriter<W> {
    /// Writes to an arbitrary stream, header first.
    pub fn new(mut out: W, format: Format) -> Result<Self> {
        out.write_all(records_to_string(&[], format)?.as_bytes())?;
        Ok(Self { out, format })
    }
}

impl<W: Write + Send> RecordSink for ResultWriter<W> {
    fn accept(&mut self, record: &BenchRecord) -> Result<()> {
        let line = match self.format {
            Format::Csv => csv_row(record)?,
            Format::Json => serde_json::to_string(record)? + "\n",
        };
        self.out.write_all(line.as_bytes())?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parses CSV or JSON-lines records; the format is detected from the first
/// non-comment line.
pub fn parse_records(text: &str) -> Result<Vec<BenchRecord>> {
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).collect();
    let Some(first) = body.first() else { return Ok(Vec::new()) };
    let records: Vec<BenchRecord> = if first.trim_start().starts_with('{') {
        body.iter().map(|l| serde_json::from_str(l).map_err(Error::from)).collect::<Result<_>>()?
    } else {
        let joined = body.join("\n");
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(joined.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.len() < RESULT_COLUMNS.len() || headers.iter().zip(RESULT_COLUMNS).any(|(h, c)| h != c) {
            return Err(Error::Parse(format!("unexpected result columns {:?}", headers)));
        }
        rdr.deserialize().collect::<std::result::Result<_, _>>()?
    };
    if let Some(r) = records.iter().find(|r| r.schema_version > SCHEMA_VERSION) {
        return Err(Error::Parse(format!("schema version {} is newer than {SCHEMA_VERSION}", r.schema_version)));
    }
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<BenchRecord>> {
    let mut text = String::new();
    for line in BufReader::new(File::open(path)?).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_records(&text)
}

/// Minimum, lower quartile, median, upper quartile, maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self { min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] })
    }
}

pub const SUMMARY_METRICS: [&str; 4] = ["comp_time_s", "min_ess", "time_per_min_ess", "max_rhat"];

/// Box-plot statistics of one (scenario, method) cell. `stats` is `None`
/// for a gap: a cell with no successful record.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub scenario_id: String,
    pub method: Method,
    pub records: usize,
    pub ok: usize,
    pub rhat_flag: bool,
    pub stats: Option<[FiveNumber; 4]>,
}

impl CellSummary {
    pub fn is_gap(&self) -> bool {
        self.stats.is_none()
    }

    pub fn metric(&self, name: &str) -> Option<FiveNumber> {
        let i = SUMMARY_METRICS.iter().position(|m| *m == name)?;
        self.stats.map(|s| s[i])
    }
}

fn scenario_rank(id: &str) -> usize {
    scenario_catalog().iter().position(|s| s.id() == id).unwrap_or(usize::MAX)
}

/// One summary per cell present in `records`, in catalogue then method order.
pub fn summarise(records: &[BenchRecord]) -> Vec<CellSummary> {
    let cells: Vec<(String, Method)> = records.iter().map(|r| (r.scenario_id.clone(), r.method)).collect();
    summarise_cells(records, &cells)
}

/// Summaries for the listed cells. Cells without a successful record become
/// gaps.
pub fn summarise_cells(records: &[BenchRecord], cells: &[(String, Method)]) -> Vec<CellSummary> {
    let mut grouped: BTreeMap<(usize, String, Method), Vec<&BenchRecord>> = BTreeMap::new();
    for (s, m) in cells {
        grouped.entry((scenario_rank(s), s.clone(), *m)).or_default();
    }
    for r in records {
        if let Some(v) = grouped.get_mut(&(scenario_rank(&r.scenario_id), r.scenario_id.clone(), r.method)) {
            v.push(r);
        }
    }
    grouped
        .into_iter()
        .map(|((_, scenario_id, method), recs)| {
            let ok: Vec<&&BenchRecord> = recs.iter().filter(|r| r.is_ok()).collect();
            let column = |f: fn(&BenchRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let metrics = [
                column(|r| r.comp_time_s),
                column(|r| r.min_ess),
                column(|r| r.time_per_min_ess),
                column(|r| r.max_rhat),
            ];
            let stats = metrics
                .iter()
                .map(|m| FiveNumber::of(m))
                .collect::<Option<Vec<_>>>()
                .map(|v| [v[0], v[1], v[2], v[3]]);
            CellSummary {
                scenario_id,
                method,
                records: recs.len(),
                ok: ok.len(),
                rhat_flag: metrics[3].iter().any(|&r| r > RHAT_THRESHOLD),
                stats,
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryRow {
    scenario_id: String,
    method: Method,
    records: usize,
    ok: usize,
    rhat_flag: bool,
    gap: bool,
    comp_time_s_min: Option<f64>,
    comp_time_s_q1: Option<f64>,
    comp_time_s_median: Option<f64>,
    comp_time_s_q3: Option<f64>,
    comp_time_s_max: Option<f64>,
    min_ess_min: Option<f64>,
    min_ess_q1: Option<f64>,
    min_ess_median: Option<f64>,
    min_ess_q3: Option<f64>,
    min_ess_max: Option<f64>,
    time_per_min_ess_min: Option<f64>,
    time_per_min_ess_q1: Option<f64>,
    time_per_min_ess_median: Option<f64>,
    time_per_min_ess_q3: Option<f64>,
    time_per_min_ess_max: Option<f64>,
    max_rhat_min: Option<f64>,
    max_rhat_q1: Option<f64>,
    max_rhat_median: Option<f64>,
    max_rhat_q3: Option<f64>,
    max_rhat_max: Option<f64>,
}

fn unpack(f: Option<FiveNumber>) -> [Option<f64>; 5] {
    match f {
        Some(f) => [Some(f.min), Some(f.q1), Some(f.median), Some(f.q3), Some(f.max)],
        None => [None; 5],
    }
}

fn pack(v: [Option<f64>; 5]) -> Option<FiveNumber> {
    Some(FiveNumber { min: v[0]?, q1: v[1]?, median: v[2]?, q3: v[3]?, max: v[4]? })
}

impl From<&CellSummary> for SummaryRow {
    fn from(c: &CellSummary) -> Self {
        let [a, b, d, e] = [0, 1, 2, 3].map(|i| unpack(c.stats.map(|s| s[i])));
        SummaryRow {
            scenario_id: c.scenario_id.clone(),
            method: c.method,
            records: c.records,
            ok: c.ok,
            rhat_flag: c.rhat_flag,
            gap: c.is_gap(),
            comp_time_s_min: a[0],
            comp_time_s_q1: a[1],
            comp_time_s_median: a[2],
            comp_time_s_q3: a[3],
            comp_time_s_max: a[4],
            min_ess_min: b[0],
            min_ess_q1: b[1],
            min_ess_median: b[2],
            min_ess_q3: b[3],
            min_ess_max: b[4],
            time_per_min_ess_min: d[0],
            time_per_min_ess_q1: d[1],
            time_per_min_ess_median: d[2],
            time_per_min_ess_q3: d[3],
            time_per_min_ess_max: d[4],
            max_rhat_min: e[0],
            max_rhat_q1: e[1],
            max_rhat_median: e[2],
            max_rhat_q3: e[3],
            max_rhat_max: e[4],
        }
    }
}

impl From<SummaryRow> for CellSummary {
    fn from(r: SummaryRow) -> Self {
        let parts = [
            pack([r.comp_time_s_min, r.comp_time_s_q1, r.comp_time_s_median, r.comp_time_s_q3, r.comp_time_s_max]),
            pack([r.min_ess_min, r.min_ess_q1, r.min_ess_median, r.min_ess_q3, r.min_ess_max]),
            pack([r.time_per_min_ess_min, r.time_per_min_ess_q1, r.time_per_min_ess_median, r.time_per_min_ess_q3, r.time_per_min_ess_max]),
            pack([r.max_rhat_min, r.max_rhat_q1, r.max_rhat_median, r.max_rhat_q3, r.max_rhat_max]),
        ];
        let stats = match parts {
            [Some(a), Some(b), Some(c), Some(d)] if !r.gap => Some([a, b, c, d]),
            _ => None,
        };
        CellSummary { scenario_id: r.scenario_id, method: r.method, records: r.records, ok: r.ok, rhat_flag: r.rhat_flag, stats }
    }
}

/// Summary CSV: a schema comment, a header row, then one row per cell with
/// `records ok rhat_flag gap` followed by min/q1/median/q3/max of each of
/// `comp_time_s min_ess time_per_min_ess max_rhat`. Gap rows leave the
/// statistics empty.
pub fn summary_to_csv(cells: &[CellSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in cells {
        w.serialize(SummaryRow::from(c))?;
    }
    if cells.is_empty() {
        w.write_record(summary_header())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(format!("# margbench summary schema_version={SCHEMA_VERSION}\n{}", String::from_utf8(bytes).expect("utf-8")))
}

/// One JSON object per cell with the same fields as the summary CSV.
pub fn summary_to_json_lines(cells: &[CellSummary]) -> Result<String> {
    let mut out = String::new();
    for c in cells {
        out.push_str(&serde_json::to_string(&SummaryRow::from(c))?);
        out.push('\n');
    }
    Ok(out)
}

fn summary_header() -> Vec<String> {
    let mut h: Vec<String> = ["scenario_id", "method", "records", "ok", "rhat_flag", "gap"].map(String::from).to_vec();
    for m in SUMMARY_METRICS {
        for s in ["min", "q1", "median", "q3", "max"] {
            h.push(format!("{m}_{s}"));
        }
    }
    h
}

pub fn summary_from_csv(text: &str) -> Result<Vec<CellSummary>> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    if rdr.headers()?.iter().collect::<Vec<_>>() != summary_header() {
        return Err(Error::Parse("unexpected summary columns".into()));
    }
    rdr.deserialize::<SummaryRow>()
        .map(|r| r.map(CellSummary::from).map_err(Error::from))
        .collect()
}

/// Median time per minimum effective sample, scenarios down and methods
/// across. `R` marks an R-hat flag, `--` a gap.
pub fn comparison_table(cells: &[CellSummary]) -> String {
    let methods: Vec<Method> = Method::ALL.into_iter().filter(|m| cells.iter().any(|c| c.method == *m)).collect();
    let mut scenarios: Vec<&str> = Vec::new();
    for c in cells {
        if !scenarios.contains(&c.scenario_id.as_str()) {
            scenarios.push(&c.scenario_id);
        }
    }
    let mut out = format!("{:<14}", "scenario");
    for m in &methods {
        write!(out, " {:>22}", m.as_str()).unwrap();
    }
    out.push('\n');
    for s in scenarios {
        write!(out, "{s:<14}").unwrap();
        for m in &methods {
            let cell = cells.iter().find(|c| c.scenario_id == s && c.method == *m);
            let text = match cell {
                None => String::new(),
                Some(c) => match c.metric("time_per_min_ess") {
                    None => "--".into(),
                    Some(f) => format!("{:.3e}{}", f.median, if c.rhat_flag { " R" } else { "" }),
                },
            };
            write!(out, " {text:>22}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Two-component scenarios on which the restricted full sampler's median
/// time per minimum effective sample exceeds the unrestricted one's, out of
/// those where both cells have data.
pub fn restricted_trend(cells: &[CellSummary]) -> (usize, usize) {
    let median = |s: &str, m: Method| {
        cells
            .iter()
            .find(|c| c.scenario_id == s && c.method == m)
            .and_then(|c| c.metric("time_per_min_ess"))
            .map(|f| f.median)
    };
    let mut worse = 0;
    let mut compared = 0;
    for s in scenario_catalog().iter().filter(|s| s.id().starts_with("two-comp-")) {
        if let (Some(r), Some(f)) = (median(s.id(), Method::GibbsFullRestricted), median(s.id(), Method::GibbsFull)) {
            compared += 1;
            if r > f {
                worse += 1;
            }
        }
    }
    (worse, compared)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scenario: &str, method: Method, rep: usize, tpm: f64, rhat: f64) -> BenchRecord {
        BenchRecord {
            schema_version: SCHEMA_VERSION,
            scenario_id: scenario.into(),
            method,
            replicate: rep,
            chains: 3,
            iterations: 3000,
            warmup: 1500,
            seed: 1,
            comp_time_s: Some(tpm * 100.0),
            min_ess: Some(100.0),
            time_per_min_ess: Some(tpm),
            max_rhat: Some(rhat),
            divergences: Some(0),
            status: "ok".into(),
        }
    }

    #[test]
    fn defaults_follow_protocol() {
        let s = RunSpec::new("two-comp-1", Method::GibbsFull, 0);
        assert_eq!((s.chains, s.iterations, s.warmup, s.replicates), (3, 3000, 1500, 5));
        let m = default_matrix(0);
        assert_eq!(m.len(), 51);
        assert_eq!(expand_jobs(&m).len(), 4 * 4 * 5 + 8 * 4 * 5 + 3 * 5);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!("stan".parse::<Method>().is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = RunSpec::new("two-comp-1", Method::GibbsFull, 0);
        s.chains = 1;
        assert!(s.validate().is_err());
        let mut s = RunSpec::new("nope", Method::GibbsFull, 0);
        assert!(s.validate().is_err());
        s.scenario_id = "ds".into();
        s.warmup = 3000;
        assert!(s.validate().is_err());
        s.replicates = 2;
        let mut buf: Vec<BenchRecord> = Vec::new();
        let recs = run_matrix(&[s], 1, &mut buf).unwrap();
        assert_eq!(buf.len(), 2);
        assert!(recs.iter().all(|r| !r.is_ok() && r.min_ess.is_none()));
    }

    #[test]
    fn identical_records_collapse_quartiles() {
        let recs: Vec<_> = (1..=5).map(|r| record("two-comp-1", Method::GibbsFull, r, 0.5, 1.0)).collect();
        let cells = summarise(&recs);
        assert_eq!(cells.len(), 1);
        let f = cells[0].metric("time_per_min_ess").unwrap();
        assert_eq!([f.min, f.q1, f.median, f.q3, f.max], [0.5; 5]);
        assert!(!cells[0].rhat_flag);
    }

    #[test]
    fn five_number_interpolates() {
        let f = FiveNumber::of(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!([f.min, f.q1, f.median, f.q3, f.max], [1.0, 2.0, 3.0, 4.0, 5.0]);
        let g = FiveNumber::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!([g.q1, g.median, g.q3], [1.75, 2.5, 3.25]);
        assert!(FiveNumber::of(&[]).is_none());
    }

    #[test]
    fn high_rhat_flags_its_cell_only() {
        let mut recs: Vec<_> = (1..=5).map(|r| record("two-comp-1", Method::GibbsFull, r, 0.5, 1.0)).collect();
        recs.push(record("two-comp-2", Method::GibbsFull, 1, 0.5, 1.2));
        let cells = summarise(&recs);
        assert!(!cells[0].rhat_flag);
        assert!(cells[1].rhat_flag);
        assert!(comparison_table(&cells).contains(" R"));
    }

    #[test]
    fn empty_cell_is_a_gap() {
        let mut bad = record("ds", Method::GibbsMarginal, 1, 0.0, 0.0);
        bad.status = "error: boom".into();
        bad.comp_time_s = None;
        bad.min_ess = None;
        bad.time_per_min_ess = None;
        bad.max_rhat = None;
        let cells = summarise_cells(&[bad], &[("ds".into(), Method::GibbsMarginal), ("ds".into(), Method::GibbsFull)]);
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(CellSummary::is_gap));
        assert_eq!(cells.iter().map(|c| c.records).sum::<usize>(), 1);
        assert!(comparison_table(&cells).contains("--"));
    }

    #[test]
    fn cells_follow_catalogue_order() {
        let recs = vec![
            record("ds", Method::GibbsFull, 1, 1.0, 1.0),
            record("three-comp-2", Method::GibbsFull, 1, 1.0, 1.0),
            record("two-comp-4", Method::GibbsMarginal, 1, 1.0, 1.0),
            record("two-comp-4", Method::NutsMarginal, 1, 1.0, 1.0),
        ];
        let ids: Vec<(String, Method)> = summarise(&recs).into_iter().map(|c| (c.scenario_id, c.method)).collect();
        assert_eq!(
            ids,
            vec![
                ("two-comp-4".into(), Method::NutsMarginal),
                ("two-comp-4".into(), Method::GibbsMarginal),
                ("three-comp-2".into(), Method::GibbsFull),
                ("ds".into(), Method::GibbsFull),
            ]
        );
    }

    #[test]
    fn summary_csv_round_trips() {
        let mut recs: Vec<_> = (1..=5).map(|r| record("two-comp-1", Method::GibbsFull, r, 0.1 * r as f64, 1.0 + 0.03 * r as f64)).collect();
        recs.push(record("ds", Method::NutsMarginal, 1, 1.0 / 3.0, 1.0));
        let mut cells = summarise(&recs);
        cells.extend(summarise_cells(&[], &[("ds".into(), Method::GibbsFull)]));
        let text = summary_to_csv(&cells).unwrap();
        assert!(text.starts_with("# margbench summary schema_version=1\nscenario_id,method,records,ok,rhat_flag,gap,comp_time_s_min"));
        assert_eq!(summary_from_csv(&text).unwrap(), cells);
        assert!(summary_from_csv(&summary_to_csv(&[]).unwrap()).unwrap().is_empty());
        assert!(summary_from_csv("a,b\n1,2\n").is_err());
        let json = summary_to_json_lines(&cells).unwrap();
        assert_eq!(json.lines().count(), cells.len());
        assert!(json.contains("\"gap\":true"));
    }

    #[test]
    fn record_files_round_trip_in_both_formats() {
        let mut recs = vec![record("two-comp-1", Method::NutsMarginal, 1, 0.123456789, 1.0012), record("ds", Method::GibbsFull, 2, 7.5, 1.3)];
        recs[1].status = "error: slice, failed".into();
        recs[1].min_ess = None;
        for fmt in [Format::Csv, Format::Json] {
            let text = records_to_string(&recs, fmt).unwrap();
            assert!(text.starts_with("# margbench results schema_version=1\n"));
            assert_eq!(parse_records(&text).unwrap(), recs);
        }
        let csv = records_to_string(&recs, Format::Csv).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), RESULT_COLUMNS.join(","));
    }

    #[test]
    fn newer_schema_is_refused() {
        let mut r = record("ds", Method::GibbsFull, 1, 1.0, 1.0);
        r.schema_version = SCHEMA_VERSION + 1;
        assert!(parse_records(&records_to_string(&[r], Format::Json).unwrap()).is_err());
        assert!(parse_records("# x\nfoo,bar\n1,2\n").is_err());
    }

    #[test]
    fn appending_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        for rep in 1..=2 {
            let mut w = ResultWriter::append(&path, Format::Csv).unwrap();
            w.accept(&record("two-comp-1", Method::GibbsFull, rep, 1.0, 1.0)).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("schema_version=").count(), 1);
        assert_eq!(read_records(&path).unwrap().len(), 2);
    }

    #[test]
    fn trend_counts_two_component_cells() {
        let mut recs = Vec::new();
        for (i, s) in ["two-comp-1", "two-comp-2", "two-comp-3", "two-comp-4"].iter().enumerate() {
            recs.push(record(s, Method::GibbsFull, 1, 1.0, 1.0));
            recs.push(record(s, Method::GibbsFullRestricted, 1, if i < 3 { 2.0 } else { 0.5 }, 1.0));
        }
        recs.push(record("three-comp-1", Method::GibbsFullRestricted, 1, 9.0, 1.0));
        assert_eq!(restricted_trend(&summarise(&recs)), (3, 4));
    }

    #[test]
    fn short_record_runs_and_is_reproducible() {
        let mut spec = RunSpec::new("two-comp-1", Method::GibbsFull, 5);
        spec.iterations = 200;
        spec.warmup = 100;
        spec.replicates = 2;
        let mut sink: Vec<BenchRecord> = Vec::new();
        let recs = run_matrix(&[spec.clone()], 2, &mut sink).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(sink.len(), 2);
        for r in &recs {
            assert!(r.is_ok(), "{}", r.status);
            assert_eq!(r.time_per_min_ess.unwrap(), r.comp_time_s.unwrap() / r.min_ess.unwrap());
            assert_eq!(r.divergences, Some(0));
            assert_eq!(r.chain_seeds().len(), 3);
        }
        let again = run_record(&RecordJob { spec, replicate: 1 });
        assert_eq!(again.min_ess, recs[0].min_ess);
        assert_eq!(again.max_rhat, recs[0].max_rhat);
        assert_ne!(recs[0].chain_seed(), recs[1].chain_seed());
    }

    #[test]
    fn failures_become_error_rows() {
        let mut spec = RunSpec::new("two-comp-1", Method::GibbsFull, 5);
        spec.replicates = 1;
        let job = RecordJob { spec: RunSpec { chains: 1, ..spec }, replicate: 1 };
        let rec = run_record(&job);
        assert!(rec.status.starts_with("error: "));
        assert!(rec.min_ess.is_none() && rec.comp_time_s.is_none());
    }
}
