//! Dataset files, run configuration, checkpoints and per-sample score dumps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::{RawSample, TextInput};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numeric::Matrix;
use crate::par::Execution;
use crate::params::ParamGroup;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "himfuse-checkpoint";
pub const CHECKPOINT_VERSION: u64 = 1;
pub const SCORES_HEADER: [&str; 9] = [
    "id", "cos_zt", "cos_zv", "cos_za", "score_zt", "score_zv", "score_za", "pred", "truth",
];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    id: String,
    label: f64,
    text: TextLine,
    visual: Vec<Vec<f64>>,
    acoustic: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TextLine {
    Tokens(Vec<usize>),
    Vectors(Vec<Vec<f64>>),
}

#[derive(Serialize)]
struct SampleOut<'a> {
    id: &'a str,
    label: f64,
    text: TextOut<'a>,
    visual: Vec<&'a [f64]>,
    acoustic: Vec<&'a [f64]>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum TextOut<'a> {
    Tokens(&'a [usize]),
    Vectors(Vec<&'a [f64]>),
}

/// Row widths seen on the first record, checked against every later one.
#[derive(Default)]
struct Widths {
    text: Option<usize>,
    visual: Option<usize>,
    acoustic: Option<usize>,
}

fn to_matrix(rows: Vec<Vec<f64>>, field: &'static str, line: usize, expected: &mut Option<usize>) -> Result<Matrix> {
    if rows.is_empty() {
        return Err(Error::Parse {
            line,
            msg: format!("`{field}` must contain at least one step"),
        });
    }
    let want = *expected.get_or_insert(rows[0].len());
    if let Some(r) = rows.iter().find(|r| r.len() != want) {
        return Err(Error::WidthMismatch {
            line,
            field,
            expected: want,
            found: r.len(),
        });
    }
    if want == 0 {
        return Err(Error::Parse {
            line,
            msg: format!("`{field}` rows must not be empty"),
        });
    }
    Matrix::from_rows(&rows)
}

/// Parses JSON-lines text; blank lines are skipped and line numbers are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Vec<RawSample>> {
    let mut widths = Widths::default();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: SampleLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let text = match rec.text {
            TextLine::Tokens(t) if t.is_empty() => {
                return Err(Error::Parse {
                    line,
                    msg: "`text` must contain at least one step".into(),
                })
            }
            TextLine::Tokens(t) => TextInput::Tokens(t),
            TextLine::Vectors(v) => TextInput::Vectors(to_matrix(v, "text", line, &mut widths.text)?),
        };
        let sample = RawSample {
            id: rec.id,
            label: rec.label,
            text,
            visual: to_matrix(rec.visual, "visual", line, &mut widths.visual)?,
            acoustic: to_matrix(rec.acoustic, "acoustic", line, &mut widths.acoustic)?,
        };
        sample.validate().map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<RawSample>> {
    parse_jsonl(&fs::read_to_string(path)?)
}

fn rows_of(m: &Matrix) -> Vec<&[f64]> {
    (0..m.rows()).map(|r| m.row(r)).collect()
}

pub fn to_jsonl(samples: &[RawSample]) -> String {
    let mut s = String::new();
    for x in samples {
        let rec = SampleOut {
            id: &x.id,
            label: x.label,
            text: match &x.text {
                TextInput::Tokens(t) => TextOut::Tokens(t),
                TextInput::Vectors(m) => TextOut::Vectors(rows_of(m)),
            },
            visual: rows_of(&x.visual),
            acoustic: rows_of(&x.acoustic),
        };
        s.push_str(&serde_json::to_string(&rec).expect("plain data serializes"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl(path: &Path, samples: &[RawSample]) -> Result<()> {
    fs::write(path, to_jsonl(samples))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

/// A training run: model layout, optimization settings, data and output location.
/// Relative paths are resolved against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataPaths,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.train);
        resolve(&mut cfg.data.val);
        if let Some(t) = cfg.data.test.as_mut() {
            resolve(t);
        }
        resolve(&mut cfg.out_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamDoc {
    name: String,
    group: ParamGroup,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format: String,
    version: u64,
    model_config: ModelConfig,
    train_config: Option<TrainConfig>,
    params: Vec<ParamDoc>,
}

pub fn checkpoint_to_string(model: &Model, train_config: Option<&TrainConfig>) -> String {
    let doc = CheckpointDoc {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model_config: model.config.clone(),
        train_config: train_config.cloned(),
        params: model
            .store
            .iter()
            .map(|(_, p)| ParamDoc {
                name: p.name.clone(),
                group: p.group,
                rows: p.value.rows(),
                cols: p.value.cols(),
                data: p.value.as_slice().to_vec(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn checkpoint_from_str(text: &str) -> Result<(Model, Option<TrainConfig>)> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::CorruptFile(format!("not JSON: {e}")))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::CorruptFile("missing integer `version`".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let doc: CheckpointDoc = serde_json::from_value(value).map_err(|e| Error::CorruptFile(e.to_string()))?;
    if doc.format != CHECKPOINT_FORMAT {
        return Err(Error::CorruptFile(format!("unknown format `{}`", doc.format)));
    }
    let params = doc
        .params
        .into_iter()
        .map(|p| {
            let m = Matrix::from_vec(p.rows, p.cols, p.data)
                .map_err(|_| Error::CorruptFile(format!("parameter `{}` has the wrong element count", p.name)))?;
            Ok((p.name, p.group, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let model = Model::with_params(doc.model_config, params)?;
    Ok((model, doc.train_config))
}

pub fn save_checkpoint(path: &Path, model: &Model, train_config: Option<&TrainConfig>) -> Result<()> {
    fs::write(path, checkpoint_to_string(model, train_config))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<TrainConfig>)> {
    checkpoint_from_str(&fs::read_to_string(path)?)
}

/// CSV of per-sample cosines, exp-cosine scores, prediction and label.
pub fn scores_csv(model: &Model, data: &[RawSample], exec: Execution) -> Result<String> {
    let rows = model.sample_scores(data, exec)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record(SCORES_HEADER).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.id];
        rec.extend(r.cosine.iter().chain(&r.score).map(f64::to_string));
        rec.push(r.prediction.to_string());
        rec.push(r.truth.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8 input"))
}

pub fn dump_scores(model: &Model, data: &[RawSample], path: &Path, exec: Execution) -> Result<()> {
    fs::write(path, scores_csv(model, data, exec)?)?;
    Ok(())
}
