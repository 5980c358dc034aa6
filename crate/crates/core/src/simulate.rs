//! Scenario catalogue and seeded data generators.
//!
//! Each dataset is a pure function of `(scenario id, replicate, master seed)`:
//! the generator seed is a SHA-256 digest of those three, so adding a scenario
//! never perturbs the replicates of another.
//!
//! # File format
//!
//! One UTF-8 text file per dataset. The first line is a header of
//! space-separated `key=value` pairs after a leading `# `:
//!
//! ```text
//! # format=margbench-dataset/1 kind=mixture scenario=two-comp-1 replicate=1 master_seed=42 n=200 mu=-5,5 pi=0.5,0.5 sigma=2 truth=1,2,...
//! ```
//!
//! Mixture files then hold one observation per line. Dawid–Skene files
//! (`kind=ds`, with keys `items raters categories pi accuracy truth`) hold one
//! item per line as `raters` space-separated categories. Categories and
//! `truth` labels are one-based in the file. Reals are written in shortest
//! round-trip form, so reading a file back reproduces every value exactly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dawid_skene::DSData;
use crate::error::{Error, Result};
use crate::mixture::MixtureData;
use crate::stats::{categorical_from_weights, Rng, Simplex};

/// Component standard deviation used by every mixture scenario.
pub const MIXTURE_SIGMA: f64 = 2.0;
/// Observations per mixture dataset.
pub const MIXTURE_N: usize = 200;

const FORMAT_TAG: &str = "margbench-dataset/1";

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureScenario {
    pub id: String,
    pub mu: Vec<f64>,
    /// Mixing weights as tabulated. Rows such as `(0.33, 0.33, 0.33)` do not
    /// sum to one; generation normalises them.
    pub pi: Vec<f64>,
    pub sigma: f64,
    pub n: usize,
}

impl MixtureScenario {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    /// `|mu_K - mu_1|`.
    pub fn max_distance(&self) -> f64 {
        (self.mu[self.mu.len() - 1] - self.mu[0]).abs()
    }

    pub fn is_equidistant(&self) -> bool {
        let gaps: Vec<f64> = self.mu.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.windows(2).all(|g| (g[1] - g[0]).abs() <= 1e-12 * g[0].abs().max(1.0))
    }

    pub fn normalised_pi(&self) -> Result<Simplex> {
        let total: f64 = self.pi.iter().sum();
        Simplex::new(self.pi.iter().map(|p| p / total).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DSScenario {
    pub id: String,
    pub items: usize,
    pub raters: usize,
    pub categories: usize,
    pub pi: Vec<f64>,
    /// Probability that a rater reports the true category. The remaining mass
    /// is spread evenly over the other categories.
    pub accuracy: f64,
}

impl DSScenario {
    pub fn off_diagonal(&self) -> f64 {
        if self.categories < 2 {
            0.0
        } else {
            (1.0 - self.accuracy) / (self.categories - 1) as f64
        }
    }

    fn confusion_row(&self, truth: usize) -> Vec<f64> {
        let off = self.off_diagonal();
        (0..self.categories).map(|l| if l == truth { self.accuracy } else { off }).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    Mixture(MixtureScenario),
    DawidSkene(DSScenario),
}

impl Scenario {
    pub fn id(&self) -> &str {
        match self {
            Scenario::Mixture(s) => &s.id,
            Scenario::DawidSkene(s) => &s.id,
        }
    }

    pub fn is_mixture(&self) -> bool {
        matches!(self, Scenario::Mixture(_))
    }
}

fn mixture(id: String, mu: &[f64], pi: &[f64]) -> Scenario {
    Scenario::Mixture(MixtureScenario {
        id,
        mu: mu.to_vec(),
        pi: pi.to_vec(),
        sigma: MIXTURE_SIGMA,
        n: MIXTURE_N,
    })
}

/// All thirteen scenarios: `two-comp-1..4`, `three-comp-1..8`, `ds`.
pub fn scenario_catalog() -> Vec<Scenario> {
    const EVEN2: [f64; 2] = [0.5, 0.5];
    const SKEW2: [f64; 2] = [0.7, 0.3];
    const EVEN3: [f64; 3] = [0.33, 0.33, 0.33];
    const SKEW3: [f64; 3] = [0.5, 0.3, 0.2];
    let two: [(&[f64], &[f64]); 4] = [
        (&[-5.0, 5.0], &EVEN2),
        (&[-5.0, 5.0], &SKEW2),
        (&[-2.5, 2.5], &EVEN2),
        (&[-2.5, 2.5], &SKEW2),
    ];
    let three: [(&[f64], &[f64]); 8] = [
        (&[-10.5, 0.0, 10.5], &EVEN3),
        (&[-10.5, 0.0, 10.5], &SKEW3),
        (&[-7.0, 0.0, 7.0], &EVEN3),
        (&[-7.0, 0.0, 7.0], &SKEW3),
        (&[-6.0, 0.0, 15.0], &SKEW3),
        (&[-6.0, 0.0, 15.0], &EVEN3),
        (&[-4.0, 0.0, 10.0], &EVEN3),
        (&[-4.0, 0.0, 10.0], &SKEW3),
    ];
    let mut out: Vec<Scenario> = Vec::with_capacity(13);
    for (i, (mu, pi)) in two.iter().enumerate() {
        out.push(mixture(format!("two-comp-{}", i + 1), mu, pi));
    }
    for (i, (mu, pi)) in three.iter().enumerate() {
        out.push(mixture(format!("three-comp-{}", i + 1), mu, pi));
    }
    out.push(Scenario::DawidSkene(DSScenario {
        id: "ds".into(),
        items: 100,
        raters: 5,
        categories: 5,
        pi: vec![0.2; 5],
        accuracy: 0.7,
    }));
    out
}

pub fn find_scenario(id: &str) -> Result<Scenario> {
    scenario_catalog()
        .into_iter()
        .find(|s| s.id() == id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario '{id}'")))
}

/// First eight bytes of SHA-256 over the master seed and a list of labels.
/// Labels are length-prefixed so `("ab", "c")` and `("a", "bc")` differ.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for label in labels {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn replicate_seed(master: u64, scenario_id: &str, replicate: usize) -> u64 {
    derive_seed(master, &["data", scenario_id, &replicate.to_string()])
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetBody {
    Mixture { data: MixtureData, truth: Vec<usize> },
    DawidSkene { data: DSData, truth: Vec<usize> },
}

/// A generated dataset together with its scenario and zero-based ground-truth
/// labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scenario: Scenario,
    pub replicate: usize,
    pub master_seed: u64,
    pub body: DatasetBody,
}

impl Dataset {
    pub fn truth(&self) -> &[usize] {
        match &self.body {
            DatasetBody::Mixture { truth, .. } | DatasetBody::DawidSkene { truth, .. } => truth,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}_r{}.txt", self.scenario.id(), self.replicate)
    }
}

fn check_replicate(replicate: usize) -> Result<()> {
    if replicate == 0 {
        return Err(Error::InvalidArgument("replicate indices start at 1".into()));
    }
    Ok(())
}

pub fn gen_mixture(scenario: &MixtureScenario, replicate: usize, master_seed: u64) -> Result<Dataset> {
    check_replicate(replicate)?;
    if scenario.mu.is_empty() || scenario.mu.len() != scenario.pi.len() {
        return Err(Error::InvalidParameter(format!("mu {:?} vs pi {:?}", scenario.mu, scenario.pi)));
    }
    if !(scenario.sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma {}", scenario.sigma)));
    }
    let pi = scenario.normalised_pi()?;
    let mut rng = Rng::new(replicate_seed(master_seed, &scenario.id, replicate), 0);
    let mut x = Vec::with_capacity(scenario.n);
    let mut truth = Vec::with_capacity(scenario.n);
    for _ in 0..scenario.n {
        let k = categorical_from_weights(&mut rng, pi.as_slice());
        x.push(scenario.mu[k] + scenario.sigma * rng.std_normal());
        truth.push(k);
    }
    Ok(Dataset {
        scenario: Scenario::Mixture(scenario.clone()),
        replicate,
        master_seed,
        body: DatasetBody::Mixture { data: MixtureData::new(x)?, truth },
    })
}

pub fn gen_ds(scenario: &DSScenario, replicate: usize, master_seed: u64) -> Result<Dataset> {
    check_replicate(replicate)?;
    let k = scenario.categories;
    if k == 0 || scenario.pi.len() != k || !(0.0..=1.0).contains(&scenario.accuracy) {
        return Err(Error::InvalidParameter(format!(
            "K = {k}, pi {:?}, accuracy {}",
            scenario.pi, scenario.accuracy
        )));
    }
    let rows: Vec<Vec<f64>> = (0..k).map(|t| scenario.confusion_row(t)).collect();
    let mut rng = Rng::new(replicate_seed(master_seed, &scenario.id, replicate), 0);
    let mut ratings = Vec::with_capacity(scenario.items * scenario.raters);
    let mut truth = Vec::with_capacity(scenario.items);
    for _ in 0..scenario.items {
        let z = categorical_from_weights(&mut rng, &scenario.pi);
        truth.push(z);
        for _ in 0..scenario.raters {
            ratings.push(categorical_from_weights(&mut rng, &rows[z]));
        }
    }
    Ok(Dataset {
        scenario: Scenario::DawidSkene(scenario.clone()),
        replicate,
        master_seed,
        body: DatasetBody::DawidSkene {
            data: DSData::new(ratings, scenario.items, scenario.raters, k)?,
            truth,
        },
    })
}

pub fn generate(scenario: &Scenario, replicate: usize, master_seed: u64) -> Result<Dataset> {
    match scenario {
        Scenario::Mixture(s) => gen_mixture(s, replicate, master_seed),
        Scenario::DawidSkene(s) => gen_ds(s, replicate, master_seed),
    }
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn join_one_based(v: &[usize]) -> String {
    v.iter().map(|x| (x + 1).to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    let mut header = format!(
        "# format={FORMAT_TAG} kind={} scenario={} replicate={} master_seed={}",
        if ds.scenario.is_mixture() { "mixture" } else { "ds" },
        ds.scenario.id(),
        ds.replicate,
        ds.master_seed
    );
    let mut body = String::new();
    match (&ds.scenario, &ds.body) {
        (Scenario::Mixture(s), DatasetBody::Mixture { data, truth }) => {
            write!(header, " n={} mu={} pi={} sigma={}", data.len(), join(&s.mu), join(&s.pi), s.sigma).unwrap();
            write!(header, " truth={}", join_one_based(truth)).unwrap();
            for x in data.x() {
                writeln!(body, "{x}").unwrap();
            }
        }
        (Scenario::DawidSkene(s), DatasetBody::DawidSkene { data, truth }) => {
            write!(
                header,
                " items={} raters={} categories={} pi={} accuracy={} truth={}",
                data.items(),
                data.raters(),
                data.categories(),
                join(&s.pi),
                s.accuracy,
                join_one_based(truth)
            )
            .unwrap();
            for i in 0..data.items() {
                let row: Vec<String> = data.item_ratings(i).iter().map(|y| (y + 1).to_string()).collect();
                writeln!(body, "{}", row.join(" ")).unwrap();
            }
        }
        _ => return Err(Error::InvalidArgument("scenario kind does not match dataset body".into())),
    }
    writeln!(out, "{header}")?;
    out.write_all(body.as_bytes())?;
    Ok(())
}

pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

struct Header(Vec<(String, String)>);

impl Header {
    fn parse(line: &str) -> Result<Self> {
        let rest = line
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("dataset header must start with '# '".into()))?;
        let mut pairs = Vec::new();
        for tok in rest.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("header token '{tok}' is not key=value")))?;
            pairs.push((k.to_string(), v.to_string()));
        }
        Ok(Self(pairs))
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse(format!("header is missing '{key}'")))
    }

    fn value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| Error::Parse(format!("bad value for '{key}': '{raw}'")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.get(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad entry '{s}' in '{key}'"))))
            .collect()
    }

    fn labels(&self, key: &str) -> Result<Vec<usize>> {
        self.list::<usize>(key)?
            .into_iter()
            .map(|v| v.checked_sub(1).ok_or_else(|| Error::Parse(format!("label 0 in '{key}' (labels are 1-based)"))))
            .collect()
    }
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let header = Header::parse(&first)?;
    if header.get("format")? != FORMAT_TAG {
        return Err(Error::Parse(format!("unsupported format '{}'", header.get("format")?)));
    }
    let id = header.get("scenario")?.to_string();
    let replicate = header.value("replicate")?;
    let master_seed = header.value("master_seed")?;
    let body_lines: Vec<String> = lines
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect();
    let (scenario, body) = match header.get("kind")? {
        "mixture" => {
            let n: usize = header.value("n")?;
            let x = body_lines
                .iter()
                .map(|l| l.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad observation '{l}'"))))
                .collect::<Result<Vec<_>>>()?;
            let truth = header.labels("truth")?;
            if x.len() != n || truth.len() != n {
                return Err(Error::Parse(format!("expected {n} observations and labels, found {} and {}", x.len(), truth.len())));
            }
            let s = MixtureScenario { id, mu: header.list("mu")?, pi: header.list("pi")?, sigma: header.value("sigma")?, n };
            if truth.iter().any(|&z| z >= s.k()) {
                return Err(Error::Parse("truth label exceeds component count".into()));
            }
            (Scenario::Mixture(s), DatasetBody::Mixture { data: MixtureData::new(x)?, truth })
        }
        "ds" => {
            let items: usize = header.value("items")?;
            let raters: usize = header.value("raters")?;
            let categories: usize = header.value("categories")?;
            if body_lines.len() != items {
                return Err(Error::Parse(format!("expected {items} item rows, found {}", body_lines.len())));
            }
            let mut ratings = Vec::with_capacity(items * raters);
            for line in &body_lines {
                let row: Vec<usize> = line
                    .split_whitespace()
                    .map(|t| match t.parse::<usize>() {
                        Ok(v) if v >= 1 => Ok(v - 1),
                        _ => Err(Error::Parse(format!("bad rating '{t}'"))),
                    })
                    .collect::<Result<_>>()?;
                if row.len() != raters {
                    return Err(Error::Parse(format!("row '{line}' has {} ratings, expected {raters}", row.len())));
                }
                ratings.extend(row);
            }
            let truth = header.labels("truth")?;
            if truth.len() != items || truth.iter().any(|&z| z >= categories) {
                return Err(Error::Parse("truth labels do not match the design".into()));
            }
            let s = DSScenario { id, items, raters, categories, pi: header.list("pi")?, accuracy: header.value("accuracy")? };
            let data = DSData::new(ratings, items, raters, categories).map_err(|e| Error::Parse(e.to_string()))?;
            (Scenario::DawidSkene(s), DatasetBody::DawidSkene { data, truth })
        }
        other => return Err(Error::Parse(format!("unknown dataset kind '{other}'"))),
    };
    Ok(Dataset { scenario, replicate, master_seed, body })
}

pub fn dataset_from_str(s: &str) -> Result<Dataset> {
    read_dataset(s.as_bytes())
}
