//! Experiment configuration, checkpoints and CSV result tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    capacity_label, CorrelationStudy, FewShotConfig, HeadAblation, SweepResult, ToyConfig, ToyResult,
};
use crate::metaopt::{Algorithm, HistoryRow};
use crate::model::{init_params, Activation, LayeredParams, ModelConfig};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Toy,
    Train,
    Eval,
    AblateHead,
    SweepK,
    JointAcc,
    Correlate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Toy => "toy",
            ExperimentKind::Train => "train",
            ExperimentKind::Eval => "eval",
            ExperimentKind::AblateHead => "ablate-head",
            ExperimentKind::SweepK => "sweep-k",
            ExperimentKind::JointAcc => "joint-acc",
            ExperimentKind::Correlate => "correlate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub steps: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Fomaml,
            episodes: 300,
            steps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub algorithms: Vec<Algorithm>,
    pub k_values: Vec<usize>,
    pub num_seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::ALL.to_vec(),
            k_values: vec![1, 5, 10, 25],
            num_seeds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateConfig {
    pub methods: Vec<Algorithm>,
    pub capacities: Vec<Vec<usize>>,
    pub num_seeds: usize,
}

impl Default for CorrelateConfig {
    fn default() -> Self {
        Self {
            methods: Algorithm::ALL.to_vec(),
            capacities: vec![vec![16], vec![32], vec![64]],
            num_seeds: 5,
        }
    }
}

/// One experiment run. Every section has defaults; `kind` is the only
/// mandatory key, plus `algorithm` for `train`, `eval` and `joint-acc` and
/// `checkpoint` for `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    /// Trained parameters to start from; without one, the command trains first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub toy: ToyConfig,
    #[serde(default)]
    pub fewshot: FewShotConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub correlate: CorrelateConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            out_dir: default_out(),
            algorithm: None,
            checkpoint: None,
            toy: ToyConfig::default(),
            fewshot: FewShotConfig::default(),
            ablation: AblationConfig::default(),
            sweep: SweepConfig::default(),
            correlate: CorrelateConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, m: String| Error::ConfigValidation {
            field: f.into(),
            message: m,
        };
        let kind = self.kind.name();
        match self.kind {
            ExperimentKind::Train | ExperimentKind::JointAcc if self.algorithm.is_none() => {
                return Err(field("algorithm", format!("required for kind = \"{kind}\"")));
            }
            ExperimentKind::Eval => {
                if self.algorithm.is_none() {
                    return Err(field("algorithm", format!("required for kind = \"{kind}\"")));
                }
                if self.checkpoint.is_none() {
                    return Err(field("checkpoint", format!("required for kind = \"{kind}\"")));
                }
            }
            _ => {}
        }
        if self.toy.num_inits == 0 || self.toy.bins == 0 {
            return Err(field("toy", "num_inits and bins must be >= 1".into()));
        }
        for a in Algorithm::ALL {
            self.toy
                .spec(a)
                .validate()
                .map_err(|e| field(&format!("toy.{a}"), e.to_string()))?;
        }
        self.fewshot
            .validate()
            .map_err(|e| field("fewshot", e.to_string()))?;
        if self.ablation.episodes < 2 {
            return Err(field("ablation.episodes", "must be >= 2".into()));
        }
        if self.sweep.num_seeds == 0 || self.sweep.k_values.is_empty() || self.sweep.algorithms.is_empty() {
            return Err(field("sweep", "needs algorithms, k_values and num_seeds >= 1".into()));
        }
        if self.correlate.num_seeds == 0 || self.correlate.capacities.is_empty() || self.correlate.methods.is_empty() {
            return Err(field("correlate", "needs methods, capacities and num_seeds >= 1".into()));
        }
        Ok(())
    }

    pub fn seeds(&self, count: usize) -> Vec<u64> {
        (0..count as u64).map(|i| self.seed + i).collect()
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

pub fn serialize_config(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::invalid(format!("config serialization: {e}")))
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "gbml-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub algorithm: Algorithm,
    pub params: LayeredParams,
    pub iteration: u64,
    pub val_metric: f64,
}

fn header(c: &Checkpoint, version: u32) -> String {
    let m = &c.model;
    let hidden: Vec<String> = m.hidden.iter().map(|h| h.to_string()).collect();
    let mut h = format!("{MAGIC}\nversion {version}\n");
    let _ = writeln!(h, "algorithm {}", c.algorithm);
    let _ = writeln!(h, "input_dim {}", m.input_dim);
    let _ = writeln!(h, "hidden {}", hidden.join(","));
    let _ = writeln!(h, "output_dim {}", m.output_dim);
    let _ = writeln!(h, "activation {}", m.activation.name());
    let _ = writeln!(h, "seed {}", m.seed);
    let _ = writeln!(h, "iteration {}", c.iteration);
    let _ = writeln!(h, "val_metric {:016x}", c.val_metric.to_bits());
    for (i, l) in c.params.layers().iter().enumerate() {
        let _ = writeln!(h, "layer {i} {}x{} {}", l.fan_in(), l.fan_out(), l.bias.len());
    }
    h.push_str("end\n");
    h
}

fn encode(c: &Checkpoint, version: u32) -> Vec<u8> {
    let mut out = header(c, version).into_bytes();
    for v in c.params.flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode(c, CHECKPOINT_VERSION))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::CorruptCheckpoint { message, .. } => Error::CorruptCheckpoint {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::CorruptCheckpoint {
        path: PathBuf::new(),
        message: m.to_string(),
    };
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| corrupt("header terminator not found"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| corrupt("header is not text"))?;
    let body = &bytes[end + 5..];
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("not a checkpoint file"));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| corrupt(&format!("missing `{key}`")))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| corrupt(&format!("expected `{key}`, found `{line}`")))
    };
    let num = |s: String, key: &str| s.parse::<u64>().map_err(|_| corrupt(&format!("bad `{key}` value `{s}`")));
    let version = num(field("version")?, "version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let algorithm = match field("algorithm")?.as_str() {
        "finetune" => Algorithm::Finetune,
        "reptile" => Algorithm::Reptile,
        "fomaml" => Algorithm::Fomaml,
        other => return Err(corrupt(&format!("unknown algorithm `{other}`"))),
    };
    let input_dim = num(field("input_dim")?, "input_dim")? as usize;
    let hidden_s = field("hidden")?;
    let hidden = if hidden_s.is_empty() {
        Vec::new()
    } else {
        hidden_s
            .split(',')
            .map(|h| h.parse::<usize>().map_err(|_| corrupt("bad hidden widths")))
            .collect::<Result<Vec<_>>>()?
    };
    let output_dim = num(field("output_dim")?, "output_dim")? as usize;
    let act = field("activation")?;
    let activation = Activation::from_name(&act).ok_or_else(|| corrupt(&format!("unknown activation `{act}`")))?;
    let seed = num(field("seed")?, "seed")?;
    let iteration = num(field("iteration")?, "iteration")?;
    let bits = field("val_metric")?;
    let val_metric = f64::from_bits(u64::from_str_radix(&bits, 16).map_err(|_| corrupt("bad val_metric"))?);

    let model = ModelConfig::new(input_dim, &hidden, output_dim)
        .with_activation(activation)
        .with_seed(seed);
    let template = init_params(&model).map_err(|e| corrupt(&e.to_string()))?;
    let expected = template.num_params() * 8;
    if body.len() != expected {
        return Err(corrupt(&format!(
            "data section has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Checkpoint {
        model,
        algorithm,
        params: template.with_flat(&flat)?,
        iteration,
        val_metric,
    })
}

// ---------------------------------------------------------------------------
// Result tables

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Float(f64),
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => format_float(*f),
            Cell::Missing => String::new(),
        }
    }

    fn cmp_key(&self, other: &Cell) -> std::cmp::Ordering {
        use Cell::*;
        match (self, other) {
            (Text(a), Text(b)) => a.cmp(b),
            (Int(a), Int(b)) => a.cmp(b),
            (Float(a), Float(b)) => a.total_cmp(b),
            _ => self.render().cmp(&other.render()),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(f: f64) -> Self {
        Cell::Float(f)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<u64> for Cell {
    fn from(i: u64) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(f: Option<f64>) -> Self {
        f.map_or(Cell::Missing, Cell::Float)
    }
}

/// Rounds to 9 significant digits and prints the shortest representation.
pub fn format_float(f: f64) -> String {
    if !f.is_finite() {
        return f.to_string();
    }
    let rounded: f64 = format!("{f:.8e}").parse().expect("formatted float parses");
    rounded.to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: String,
    pub header: Vec<&'static str>,
    /// Leading columns that identify a row; rows are sorted by them.
    pub key_columns: usize,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(kind: &str, header: Vec<&'static str>, key_columns: usize) -> Self {
        Self {
            kind: kind.into(),
            header,
            key_columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        if self.rows.is_empty() {
            return Err(Error::EmptyRecords(self.kind.clone()));
        }
        if let Some(bad) = self.rows.iter().find(|r| r.len() != self.header.len()) {
            return Err(Error::invalid(format!(
                "{} row has {} cells, header has {}",
                self.kind,
                bad.len(),
                self.header.len()
            )));
        }
        let mut rows: Vec<&Vec<Cell>> = self.rows.iter().collect();
        let k = self.key_columns;
        rows.sort_by(|a, b| {
            a[..k]
                .iter()
                .zip(&b[..k])
                .map(|(x, y)| x.cmp_key(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner()
            .map_err(|e| Error::invalid(format!("csv buffer: {}", e.error())))
    }
}

pub fn write_results(path: &Path, table: &Table) -> Result<()> {
    write_bytes(path, &table.to_csv()?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn sweep_table(results: &[SweepResult]) -> Table {
    let mut t = Table::new(
        "sweep",
        vec!["algorithm", "k_train", "seed", "accuracy_mean", "accuracy_min", "accuracy_max"],
        3,
    );
    for r in results {
        t.push(vec![
            r.algorithm.name().into(),
            r.k_train.into(),
            r.seed.into(),
            r.accuracy_mean.into(),
            r.accuracy_min.into(),
            r.accuracy_max.into(),
        ]);
    }
    t
}

pub fn correlate_table(study: &CorrelationStudy) -> Table {
    let mut t = Table::new("correlate", vec!["method", "capacity", "universe", "r", "p", "n"], 3);
    for r in &study.results {
        t.push(vec![
            r.method.clone().into(),
            r.capacity.clone().into(),
            r.universe.name().into(),
            r.r.into(),
            r.p.into(),
            r.pairs.len().into(),
        ]);
    }
    t
}

/// Per-run scatter points behind the correlation table.
pub fn runs_table(study: &CorrelationStudy) -> Table {
    let mut t = Table::new(
        "runs",
        vec!["method", "capacity", "universe", "seed", "joint_accuracy", "few_shot_accuracy"],
        4,
    );
    for r in &study.runs {
        t.push(vec![
            r.method.name().into(),
            r.capacity.clone().into(),
            r.universe.name().into(),
            r.seed.into(),
            r.joint_accuracy.into(),
            r.few_shot_accuracy.into(),
        ]);
    }
    t
}

pub fn toy_finals_table(results: &[ToyResult]) -> Table {
    let mut t = Table::new("toy", vec!["algorithm", "scenario", "inner_steps", "init", "final"], 4);
    for r in results {
        for (x0, x) in r.inits.iter().zip(&r.finals) {
            t.push(vec![
                r.algorithm.name().into(),
                r.scenario.name().into(),
                r.inner_steps.into(),
                (*x0).into(),
                (*x).into(),
            ]);
        }
    }
    t
}

pub fn toy_density_table(results: &[ToyResult]) -> Table {
    let mut t = Table::new("toy-density", vec!["series", "x", "y"], 2);
    for r in results {
        let series = format!("{}_{}_T{}", r.algorithm, r.scenario.name(), r.inner_steps);
        for (i, m) in r.density.masses.iter().enumerate() {
            let mid = 0.5 * (r.density.edges[i] + r.density.edges[i + 1]);
            t.push(vec![series.clone().into(), mid.into(), (*m).into()]);
        }
    }
    t
}

pub fn toy_summary_table(results: &[ToyResult]) -> Table {
    let mut t = Table::new(
        "toy-summary",
        vec!["algorithm", "scenario", "inner_steps", "mean_final", "std_final", "diverged"],
        3,
    );
    for r in results {
        t.push(vec![
            r.algorithm.name().into(),
            r.scenario.name().into(),
            r.inner_steps.into(),
            r.mean_final.into(),
            r.std_final.into(),
            r.diverged.into(),
        ]);
    }
    t
}

pub fn ablation_table(algorithm: Algorithm, ab: &HeadAblation) -> Table {
    let mut t = Table::new(
        "ablate-head",
        vec!["algorithm", "variant", "step", "accuracy_mean", "accuracy_ci95", "grad_norm_mean", "grad_norm_ci95"],
        3,
    );
    for (variant, s) in [("learned", &ab.learned), ("random_head", &ab.random_head)] {
        for (step, acc) in s.accuracy.iter().enumerate() {
            // gradient norm at step i is measured before update i+1
            let g = s.grad_norm.get(step);
            t.push(vec![
                algorithm.name().into(),
                variant.into(),
                step.into(),
                acc.0.into(),
                acc.1.into(),
                g.map(|g| g.0).into(),
                g.map(|g| g.1).into(),
            ]);
        }
    }
    t
}

pub fn history_table(algorithm: Algorithm, capacity: &[usize], seed: u64, history: &[HistoryRow]) -> Table {
    let mut t = Table::new(
        "history",
        vec!["algorithm", "capacity", "seed", "iteration", "train_loss", "val_accuracy"],
        4,
    );
    for h in history {
        t.push(vec![
            algorithm.name().into(),
            capacity_label(capacity).into(),
            seed.into(),
            h.iteration.into(),
            h.train_loss.into(),
            h.val_metric.into(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(0.7361), "0.7361");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333");
        assert_eq!(format_float(123456789012.0), "123456789000");
        assert_eq!(format_float(-2.5e-12), "-0.0000000000025");
    }

    #[test]
    fn empty_table_errors() {
        let t = Table::new("sweep", vec!["a"], 1);
        assert!(matches!(t.to_csv(), Err(Error::EmptyRecords(_))));
    }

    #[test]
    fn rows_sorted_by_keys() {
        let mut t = Table::new("x", vec!["k", "n", "v"], 2);
        t.push(vec!["b".into(), 1usize.into(), 0.5.into()]);
        t.push(vec!["a".into(), 10usize.into(), 0.25.into()]);
        t.push(vec!["a".into(), 2usize.into(), Cell::Missing]);
        let s = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(s, "k,n,v\na,2,\na,10,0.25\nb,1,0.5\n");
    }

    #[test]
    fn missing_algorithm_names_field() {
        let err = parse_config_str("kind = \"train\"\n").unwrap_err();
        match err {
            Error::ConfigValidation { field, .. } => assert_eq!(field, "algorithm"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse_config_str("kind = \"toy\"\n\n[toy]\nbogus = 1\n").unwrap_err();
        match err {
            Error::ConfigParse { line, .. } => assert_eq!(line, 4),
            other => panic!("{other}"),
        }
    }
}
