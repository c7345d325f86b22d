//! Batch experiments: JSON config and input files in, one JSON report out.
//!
//! A config names a command, an optional master seed, input files (relative
//! to the config's directory) and a command-specific `params` object. Every
//! object rejects unknown keys. The report body depends only on the config,
//! the input files and the seed; timing and version data live in `meta`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::class::{DiscreteClass, Domain, Hypothesis, Label, RealClass};
use crate::dimensions::{extract_sfat_certificate, fat2, fat_alpha, sfat_alpha};
use crate::dp::{candidate_id, dp_audit, laplace_sample, sparse_select, stream_rng, PrivacyParams, SelectionInstance};
use crate::error::{Error, Result};
use crate::filter::{LadderSchedule, SoaFilter};
use crate::members::Members;
use crate::oracle::agreement_grid;
use crate::reduce_tree::{member_errors, ReduceTreeParams};
use crate::reglearn::{DataSource, RegLearnConfig, RegLearner};
use crate::universe::{Level, Universe};
use crate::EmpiricalDistribution;

/// Version of the config, input and report formats.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Dims,
    Irred,
    Soa,
    ReduceTreeCert,
    ReduceTree,
    Filter,
    Soafilter,
    Reglearn,
    Audit,
    OracleCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Dims => "dims",
            Command::Irred => "irred",
            Command::Soa => "soa",
            Command::ReduceTreeCert => "reduce-tree-cert",
            Command::ReduceTree => "reduce-tree",
            Command::Filter => "filter",
            Command::Soafilter => "soafilter",
            Command::Reglearn => "reglearn",
            Command::Audit => "audit",
            Command::OracleCheck => "oracle-check",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub class: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub params: Value,
    /// Directory that relative input paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses a config, applying `KEY=VAL` overrides (dotted keys, JSON or
    /// bare-string values) to the raw document first.
    pub fn from_json(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut raw: Value = serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut raw, o)?;
        }
        let mut cfg: ExperimentConfig =
            serde_json::from_value(raw).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, overrides, base)
    }

    /// Like [`ExperimentConfig::load`], for a command chosen on the command
    /// line: the file may omit `command` but must not name a different one.
    pub fn load_for(path: &Path, command: Command, overrides: &[String]) -> Result<Self> {
        let mut all = Vec::with_capacity(overrides.len() + 1);
        let text = read_text(path)?;
        let raw: Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("config: {e}")))?;
        match raw.get("command") {
            None => all.push(format!("command=\"{}\"", command.name())),
            Some(Value::String(c)) if c == command.name() => {}
            Some(other) => {
                return Err(Error::Config(format!("config is for command {other}, not {:?}", command.name())));
            }
        }
        all.extend_from_slice(overrides);
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, &all, base)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn class_path(&self) -> Result<PathBuf> {
        self.class
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("`{}` needs a class file", self.command.name())))
    }

    fn dataset_path(&self) -> Result<PathBuf> {
        self.dataset
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("`{}` needs a dataset file", self.command.name())))
    }

    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(format!("`{}` is randomized and needs a seed", self.command.name())))
    }

    fn params<T: DeserializeOwned>(&self) -> Result<T> {
        let v = if self.params.is_null() { Value::Object(Map::new()) } else { self.params.clone() };
        serde_json::from_value(v).map_err(|e| Error::Config(format!("params: {e}")))
    }
}

/// Sets `key` (dot-separated path) in `doc` to `val`, parsed as JSON when
/// possible and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, val) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not KEY=VAL")))?;
    let value = serde_json::from_str(val).unwrap_or_else(|_| Value::String(val.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("override key {key:?} has an empty segment")));
        }
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Map::new());
            } else {
                return Err(Error::Config(format!("override key {key:?} descends into a non-object")));
            }
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one segment")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// A loaded class file.
#[derive(Clone, Debug, PartialEq)]
pub enum ClassFile {
    Real(RealClass),
    Discrete(DiscreteClass),
}

impl ClassFile {
    pub fn domain(&self) -> &Domain {
        match self {
            ClassFile::Real(h) => h.domain(),
            ClassFile::Discrete(f) => f.domain(),
        }
    }

    fn discrete(self) -> Result<DiscreteClass> {
        match self {
            ClassFile::Discrete(f) => Ok(f),
            ClassFile::Real(_) => Err(Error::Format("this command needs a discrete class (\"K\")".into())),
        }
    }

    fn real(self) -> Result<RealClass> {
        match self {
            ClassFile::Real(h) => Ok(h),
            ClassFile::Discrete(_) => Err(Error::Format("this command needs a real class (\"real\": true)".into())),
        }
    }

    /// Canonical JSON in the input format.
    pub fn to_json(&self) -> Value {
        match self {
            ClassFile::Real(h) => json!({"domain": h.domain().points(), "real": true, "hypotheses": h.hypotheses()}),
            ClassFile::Discrete(f) => json!({"domain": f.domain().points(), "K": f.k(), "hypotheses": f.hypotheses()}),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClass {
    domain: Vec<String>,
    #[serde(rename = "K")]
    k: Option<Label>,
    real: Option<bool>,
    hypotheses: Vec<Vec<f64>>,
}

/// Parses a class file. Duplicate hypotheses are dropped with a warning.
pub fn parse_class(text: &str) -> Result<ClassFile> {
    let raw: RawClass = serde_json::from_str(text).map_err(|e| Error::Format(format!("class file: {e}")))?;
    let domain = Domain::new(raw.domain).map_err(|e| Error::Format(format!("class file: domain: {e}")))?;
    let n = raw.hypotheses.len();
    for (i, h) in raw.hypotheses.iter().enumerate() {
        if h.len() != domain.len() {
            return Err(Error::Format(format!(
                "class file: hypotheses[{i}] has {} values for {} points",
                h.len(),
                domain.len()
            )));
        }
    }
    let class = match (raw.k, raw.real) {
        (Some(k), None | Some(false)) => {
            let mut hyps = Vec::with_capacity(n);
            for (i, h) in raw.hypotheses.iter().enumerate() {
                let mut row = Vec::with_capacity(h.len());
                for (j, &v) in h.iter().enumerate() {
                    if v.fract() != 0.0 || v < 1.0 || v > f64::from(k) {
                        return Err(Error::Format(format!("class file: hypotheses[{i}][{j}] = {v} is not in 1..={k}")));
                    }
                    row.push(v as Label);
                }
                hyps.push(row);
            }
            let f = DiscreteClass::new(domain, k, hyps).map_err(|e| Error::Format(format!("class file: {e}")))?;
            ClassFile::Discrete(f)
        }
        (None, Some(true)) => {
            for (i, h) in raw.hypotheses.iter().enumerate() {
                if let Some(j) = h.iter().position(|v| !(-1.0..=1.0).contains(v)) {
                    return Err(Error::Format(format!(
                        "class file: hypotheses[{i}][{j}] = {} is outside [-1, 1]",
                        h[j]
                    )));
                }
            }
            let h = RealClass::new(domain, raw.hypotheses).map_err(|e| Error::Format(format!("class file: {e}")))?;
            ClassFile::Real(h)
        }
        _ => return Err(Error::Format("class file: give exactly one of \"K\" or \"real\": true".into())),
    };
    let kept = match &class {
        ClassFile::Real(h) => h.len(),
        ClassFile::Discrete(f) => f.len(),
    };
    if kept < n {
        log::warn!("class file: dropped {} duplicate hypotheses", n - kept);
    }
    Ok(class)
}

pub fn load_class_file(path: &Path) -> Result<ClassFile> {
    parse_class(&read_text(path)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    samples: Vec<(String, f64)>,
}

/// Parses a dataset file into `(point index, y)` pairs over `domain`.
pub fn parse_dataset(text: &str, domain: &Domain) -> Result<Vec<(usize, f64)>> {
    let raw: RawDataset = serde_json::from_str(text).map_err(|e| Error::Format(format!("dataset: {e}")))?;
    raw.samples
        .into_iter()
        .enumerate()
        .map(|(i, (id, y))| {
            let x = domain
                .index_of(&id)
                .ok_or_else(|| Error::Format(format!("dataset: samples[{i}] names unknown point {id:?}")))?;
            if !y.is_finite() {
                return Err(Error::Format(format!("dataset: samples[{i}] has a non-finite value")));
            }
            Ok((x, y))
        })
        .collect()
}

pub fn load_dataset(path: &Path, domain: &Domain) -> Result<Vec<(usize, f64)>> {
    parse_dataset(&read_text(path)?, domain)
}

/// Labels of a dataset over a discrete class; values must be in `1..=K`.
fn label_samples(data: &[(usize, f64)], k: Label) -> Result<Vec<(usize, Label)>> {
    data.iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            if y.fract() != 0.0 || y < 1.0 || y > f64::from(k) {
                return Err(Error::Format(format!("dataset: samples[{i}] label {y} is not in 1..={k}")));
            }
            Ok((x, y as Label))
        })
        .collect()
}

/// Typed failure recorded in a report whose command otherwise completed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportBody {
    pub command: String,
    pub schema: u32,
    pub inputs_digest: String,
    pub seed: Option<u64>,
    pub params: Value,
    pub outputs: Value,
    pub transcript: Value,
    pub failure: Option<Failure>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportMeta {
    pub wall_time_ms: u128,
    pub versions: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub body: ReportBody,
    pub meta: ReportMeta,
}

impl RunReport {
    /// Canonical serialization of the body; identical across reruns.
    pub fn body_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.body).expect("report bodies serialize")
    }

    pub fn exit_code(&self) -> i32 {
        match self.body.failure.as_ref().map(|f| f.kind.as_str()) {
            None => 0,
            Some("tree-learner") => exit_code(&Error::TreeLearner { alpha: 0.0 }),
            Some("no-selection") => exit_code(&Error::NoSelection { threshold: 0.0 }),
            Some(_) => exit_code(&Error::Precondition(String::new())),
        }
    }
}

/// Process exit status for each error kind.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 1,
        Error::Config(_) => 2,
        Error::Format(_) | Error::Domain(_) => 3,
        Error::Precondition(_) | Error::TooLarge(_) | Error::NoCertificate(_) => 4,
        Error::TreeLearner { .. } => 5,
        Error::NoSelection { .. } => 6,
        Error::TheoreticalScale(..) => 7,
    }
}

/// Human-readable table of [`exit_code`].
pub const EXIT_CODES: &str = "\
Exit status:
  0  success
  1  input or output file could not be read or written
  2  invalid command line or config (unknown keys, missing seed, bad values)
  3  malformed class, dataset or config file, or values out of range
  4  precondition violated (e.g. empty class, instance too large)
  5  tree learner halted with every leaf empty
  6  private selection returned no candidate
  7  parameters at theoretical scale; supply overrides";

fn failure_of(e: &Error) -> Option<Failure> {
    let kind = match e {
        Error::TreeLearner { .. } => "tree-learner",
        Error::NoSelection { .. } => "no-selection",
        _ => return None,
    };
    Some(Failure { kind: kind.into(), message: e.to_string() })
}

struct Outcome {
    params: Value,
    outputs: Value,
    transcript: Value,
    failure: Option<Failure>,
}

impl Outcome {
    fn ok(params: Value, outputs: Value) -> Self {
        Outcome { params, outputs, transcript: Value::Null, failure: None }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

/// Runs the configured command. Typed algorithmic failures (tree learner
/// halting, empty selection) still produce a report, with `failure` set;
/// everything else is returned as an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let mut digest = Sha256::new();
    let mut canonical = serde_json::to_value(cfg).expect("configs serialize");
    if let Value::Object(m) = &mut canonical {
        m.remove("class");
        m.remove("dataset");
    }
    digest.update(serde_json::to_vec(&canonical).expect("configs serialize"));
    let mut read_input = |path: PathBuf| -> Result<String> {
        let text = read_text(&path)?;
        digest.update((text.len() as u64).to_le_bytes());
        digest.update(text.as_bytes());
        Ok(text)
    };
    let outcome = dispatch(cfg, &mut read_input)?;
    let inputs_digest = digest.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(RunReport {
        body: ReportBody {
            command: cfg.command.name().into(),
            schema: SCHEMA_VERSION,
            inputs_digest,
            seed: cfg.seed,
            params: outcome.params,
            outputs: outcome.outputs,
            transcript: outcome.transcript,
            failure: outcome.failure,
        },
        meta: ReportMeta {
            wall_time_ms: start.elapsed().as_millis(),
            versions: json!({ "privreg": env!("CARGO_PKG_VERSION"), "schema": SCHEMA_VERSION }),
        },
    })
}

type Reader<'a> = dyn FnMut(PathBuf) -> Result<String> + 'a;

fn dispatch(cfg: &ExperimentConfig, read: &mut Reader<'_>) -> Result<Outcome> {
    let class = |read: &mut Reader<'_>| -> Result<ClassFile> { parse_class(&read(cfg.class_path()?)?) };
    match cfg.command {
        Command::Dims => dims(cfg, class(read)?),
        Command::Irred => irred(cfg, class(read)?.discrete()?),
        Command::Soa => soa_cmd(class(read)?.discrete()?),
        Command::ReduceTreeCert => reduce_tree_cert(cfg, class(read)?.discrete()?),
        Command::ReduceTree => {
            let f = class(read)?.discrete()?;
            let data = parse_dataset(&read(cfg.dataset_path()?)?, f.domain())?;
            reduce_tree(cfg, f, &data)
        }
        Command::Filter => filter_cmd(cfg, class(read)?.discrete()?),
        Command::Soafilter => soafilter_cmd(cfg, class(read)?.discrete()?),
        Command::Reglearn => {
            let h = class(read)?.real()?;
            let data = parse_dataset(&read(cfg.dataset_path()?)?, h.domain())?;
            reglearn_cmd(cfg, &h, &data)
        }
        Command::Audit => audit_cmd(cfg, read),
        Command::OracleCheck => oracle_check(cfg),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsParams {
    /// Scale for real classes.
    #[serde(default)]
    alpha: Option<f64>,
}

fn dims(cfg: &ExperimentConfig, class: ClassFile) -> Result<Outcome> {
    let p: DimsParams = cfg.params()?;
    let outputs = match class {
        ClassFile::Discrete(f) => {
            if p.alpha.is_some() {
                return Err(Error::Config("params.alpha applies to real classes only".into()));
            }
            let certificate = match extract_sfat_certificate(&f) {
                Ok(c) => to_value(&c),
                Err(Error::NoCertificate(_)) => Value::Null,
                Err(e) => return Err(e),
            };
            json!({ "sfat2": crate::dimensions::sfat2(&f), "fat2": fat2(&f), "certificate": certificate })
        }
        ClassFile::Real(h) => {
            let alpha = p.alpha.ok_or_else(|| Error::Config("real classes need params.alpha".into()))?;
            if !(alpha > 0.0) {
                return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
            }
            json!({ "sfat_alpha": sfat_alpha(&h, alpha), "fat_alpha": fat_alpha(&h, alpha) })
        }
    };
    Ok(Outcome::ok(to_value(&p), outputs))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IrredParams {
    l: u64,
    /// Largest level reported exactly.
    #[serde(default = "default_level_cap")]
    level_cap: u64,
}

fn default_level_cap() -> u64 {
    64
}

fn level_json(l: Level) -> Value {
    to_value(&l)
}

fn irred(cfg: &ExperimentConfig, f: DiscreteClass) -> Result<Outcome> {
    let p: IrredParams = cfg.params()?;
    let u = Universe::new(f);
    let all = u.full();
    let level = match u.level(&all) {
        Level::Finite(l) => Level::Finite(l.min(p.level_cap)),
        inf => inf,
    };
    let witness = u.witness_tree(&all, p.l).map(|t| t.to_json(u.base().domain()));
    let outputs = json!({
        "sfat2": u.sfat(&all),
        "irreducible": u.is_irreducible(&all, p.l),
        "level": level_json(level),
        "witness_tree": witness,
    });
    Ok(Outcome::ok(to_value(&p), outputs))
}

fn soa_cmd(f: DiscreteClass) -> Result<Outcome> {
    let u = Universe::new(f);
    let all = u.full();
    let soa = u.soa(&all)?;
    Ok(Outcome::ok(json!({}), json!({ "soa": soa, "sfat2": u.sfat(&all) })))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertParams {
    /// `(point id, label)` of the reducing pair at the root.
    pair: (String, Label),
    ell_seq: Vec<u64>,
}

fn reduce_tree_cert(cfg: &ExperimentConfig, f: DiscreteClass) -> Result<Outcome> {
    let p: CertParams = cfg.params()?;
    let x = f
        .domain()
        .index_of(&p.pair.0)
        .ok_or_else(|| Error::Config(format!("unknown point {:?}", p.pair.0)))?;
    let u = Universe::new(f);
    let all = u.full();
    let tree = u.reducing_tree(&all, (x, p.pair.1), &p.ell_seq)?;
    let validation = u.validate_reducing_tree(&all, &tree, &p.ell_seq);
    let outputs = json!({
        "tree": tree.to_json(u.base().domain()),
        "depth": tree.depth(),
        "leaf_counts": u.reducing_tree_leaf_counts(&all, &tree),
        "valid": validation.is_ok(),
        "violation": validation.err(),
    });
    Ok(Outcome::ok(to_value(&p), outputs))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReduceTreeCmdParams {
    alpha1: f64,
    alpha_delta: f64,
    ell_prime: u64,
}

fn reduce_tree(cfg: &ExperimentConfig, f: DiscreteClass, data: &[(usize, f64)]) -> Result<Outcome> {
    let p: ReduceTreeCmdParams = cfg.params()?;
    let params = ReduceTreeParams::new(p.alpha1, p.alpha_delta, p.ell_prime)?;
    let samples = label_samples(data, f.k())?;
    let p_hat = EmpiricalDistribution::from_samples(&samples)?;
    let u = Universe::new(f);
    let errors = member_errors(&u, &p_hat)?;
    match u.reduce_tree_reg(&errors, &params) {
        Ok(out) => Ok(Outcome::ok(
            to_value(&params),
            json!({
                "candidates": out.candidates,
                "tree": out.tree.to_json(u.base().domain()),
                "depth": out.depth(),
                "t_final": out.t_final,
                "sfat2": out.sfat,
            }),
        )),
        Err(e) => match failure_of(&e) {
            Some(failure) => Ok(Outcome {
                params: to_value(&params),
                outputs: Value::Null,
                transcript: Value::Null,
                failure: Some(failure),
            }),
            None => Err(e),
        },
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleParams {
    ell_bar: u64,
    #[serde(default)]
    r_max: Option<usize>,
    #[serde(default)]
    tau_max: Option<u64>,
    #[serde(default)]
    chi: Option<u64>,
}

impl ScheduleParams {
    fn schedule(&self, d: usize) -> LadderSchedule {
        let base = LadderSchedule::standard(self.ell_bar, d);
        LadderSchedule {
            ell_bar: self.ell_bar,
            r_max: self.r_max.unwrap_or(base.r_max),
            tau_max: self.tau_max.unwrap_or(base.tau_max),
            chi: self.chi.unwrap_or(base.chi),
        }
    }
}

fn class_json(u: &Universe, m: &Members) -> Value {
    to_value(&u.hypotheses_of(m))
}

fn sfat_dim(u: &Universe) -> Result<usize> {
    usize::try_from(u.sfat(&u.full())).map_err(|_| Error::Precondition("the class is empty".into()))
}

fn filter_cmd(cfg: &ExperimentConfig, f: DiscreteClass) -> Result<Outcome> {
    let p: ScheduleParams = cfg.params()?;
    let u = Universe::new(f);
    let schedule = p.schedule(sfat_dim(&u)?);
    let filtered = u.filter_step(&schedule)?;
    let levels: Vec<Value> = filtered
        .levels
        .iter()
        .enumerate()
        .map(|(b, level)| {
            let classes = level
                .iter()
                .map(|l| Ok(json!({ "hypotheses": class_json(&u, l), "soa": u.soa(l)? })))
                .collect::<Result<Vec<_>>>()?;
            Ok(json!({ "sfat2": b, "classes": classes }))
        })
        .collect::<Result<_>>()?;
    let reps: Vec<Value> = filtered
        .rep
        .iter()
        .map(|(h, l)| json!({ "class": class_json(&u, h), "representative": class_json(&u, l), "row": filtered.row[h] }))
        .collect();
    Ok(Outcome {
        params: to_value(&schedule),
        outputs: json!({ "levels": levels }),
        transcript: json!({ "representatives": reps }),
        failure: None,
    })
}

fn soafilter_cmd(cfg: &ExperimentConfig, f: DiscreteClass) -> Result<Outcome> {
    // `flatten` and `deny_unknown_fields` do not combine, so split by hand.
    let mut raw = match &cfg.params {
        Value::Object(m) => m.clone(),
        _ => return Err(Error::Config("params must be an object".into())),
    };
    let g_hat: Hypothesis = serde_json::from_value(raw.remove("g_hat").unwrap_or(Value::Null))
        .map_err(|e| Error::Config(format!("params.g_hat: {e}")))?;
    let sp: ScheduleParams =
        serde_json::from_value(Value::Object(raw)).map_err(|e| Error::Config(format!("params: {e}")))?;
    let u = std::rc::Rc::new(Universe::new(f));
    let schedule = sp.schedule(sfat_dim(&u)?);
    let filter = SoaFilter::new(u.clone(), schedule)?;
    let (reps, trace) = filter.run_traced(&g_hat)?;
    let members: Vec<Value> = reps
        .sorted()
        .iter()
        .map(|l| json!({ "hypotheses": class_json(&u, l), "soa": filter.soa_of(l) }))
        .collect();
    let queues: Vec<Value> =
        trace.queues.iter().map(|(j, s, q)| json!({ "j": j, "s": s, "restrictions": q })).collect();
    Ok(Outcome {
        params: json!({ "g_hat": g_hat, "schedule": schedule }),
        outputs: json!({ "representatives": members }),
        transcript: json!({ "queues": queues }),
        failure: None,
    })
}

fn reglearn_cmd(cfg: &ExperimentConfig, h: &RealClass, data: &[(usize, f64)]) -> Result<Outcome> {
    let seed = cfg.seed()?;
    let rc: RegLearnConfig = cfg.params()?;
    let learner = RegLearner::new(h, rc)?;
    let out = learner.run(&DataSource::Dataset(data), seed)?;
    let failure = out.hypothesis().err().and_then(|e| failure_of(&e));
    Ok(Outcome {
        params: json!({ "config": rc, "resolved": learner.params() }),
        outputs: json!({ "h_hat": out.h_hat, "soa": out.soa, "L_hat": out.l_hat }),
        transcript: to_value(&out.transcript),
        failure,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case", deny_unknown_fields)]
enum AuditParams {
    /// Count of records equal to 1 plus `Lap(1/epsilon)`, reported by
    /// bucket of width `bucket`.
    LaplaceCount {
        epsilon: f64,
        delta: f64,
        trials: usize,
        d: Vec<u8>,
        d_prime: Vec<u8>,
        #[serde(default = "default_bucket")]
        bucket: f64,
    },
    SparseSelect {
        epsilon: f64,
        delta: f64,
        trials: usize,
        sparsity: usize,
        d: Vec<Vec<String>>,
        d_prime: Vec<Vec<String>>,
    },
    /// The full learner on the dataset file and on a copy with one sample
    /// replaced; outcomes are selected hypothesis ids or `BOTTOM`.
    Reglearn {
        trials: usize,
        replace_index: usize,
        replacement: (String, f64),
        config: RegLearnConfig,
    },
}

fn default_bucket() -> f64 {
    1.0
}

fn audit_cmd(cfg: &ExperimentConfig, read: &mut Reader<'_>) -> Result<Outcome> {
    let seed = cfg.seed()?;
    let p: AuditParams = cfg.params()?;
    let report = match &p {
        AuditParams::LaplaceCount { epsilon, delta, trials, d, d_prime, bucket } => {
            let privacy = PrivacyParams::new(*epsilon, *delta)?;
            if !(*bucket > 0.0) {
                return Err(Error::Config("bucket width must be positive".into()));
            }
            let mech = |data: &[u8], rng: &mut rand_chacha::ChaCha20Rng| {
                let count = data.iter().filter(|&&v| v == 1).count() as f64;
                let v = count + laplace_sample(1.0 / epsilon, rng)?;
                Ok(format!("{}", (v / bucket).floor() as i64))
            };
            dp_audit(mech, d, d_prime, &privacy, *trials, seed)?
        }
        AuditParams::SparseSelect { epsilon, delta, trials, sparsity, d, d_prime } => {
            let privacy = PrivacyParams::new(*epsilon, *delta)?;
            let mech = |users: &[Vec<String>], rng: &mut rand_chacha::ChaCha20Rng| {
                let inst = SelectionInstance { user_sets: users.to_vec(), sparsity: *sparsity };
                Ok(sparse_select(&inst, &privacy, rng)?.choice.unwrap_or_else(|| "BOTTOM".into()))
            };
            dp_audit(mech, d, d_prime, &privacy, *trials, seed)?
        }
        AuditParams::Reglearn { trials, replace_index, replacement, config } => {
            let h = parse_class(&read(cfg.class_path()?)?)?.real()?;
            let d = parse_dataset(&read(cfg.dataset_path()?)?, h.domain())?;
            let x = h
                .domain()
                .index_of(&replacement.0)
                .ok_or_else(|| Error::Config(format!("unknown point {:?}", replacement.0)))?;
            let mut d_prime = d.clone();
            *d_prime
                .get_mut(*replace_index)
                .ok_or_else(|| Error::Config(format!("replace_index {replace_index} out of range")))? = (x, replacement.1);
            let privacy = PrivacyParams::new(config.epsilon, config.delta)?;
            let learner = RegLearner::new(&h, *config)?;
            let mech = |data: &[(usize, f64)], rng: &mut rand_chacha::ChaCha20Rng| {
                let out = learner.run(&DataSource::Dataset(data), rand::RngCore::next_u64(rng))?;
                Ok(out.soa.map_or_else(|| "BOTTOM".into(), |g| candidate_id(&g)))
            };
            dp_audit(mech, &d, &d_prime, &privacy, *trials, seed)?
        }
    };
    Ok(Outcome::ok(to_value(&p), json!({ "violations": report.violations, "trials": report.trials, "events": report.events })))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleParams {
    #[serde(default = "default_random_classes")]
    random_classes: usize,
}

fn default_random_classes() -> usize {
    200
}

fn oracle_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: OracleParams = cfg.params()?;
    let seed = if p.random_classes > 0 { cfg.seed()? } else { cfg.seed.unwrap_or(0) };
    let report = agreement_grid(p.random_classes, &mut stream_rng(seed, 0))?;
    Ok(Outcome::ok(to_value(&p), to_value(&report)))
}
