//! Dataset CSV files and persisted models.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{Dataset1D, SeHyperParams};
use crate::model::{FittedModel, Mode};
use crate::train::TrainConfig;

#[derive(Debug, Deserialize)]
struct CsvPoint {
    x: f64,
    y: f64,
}

/// Reads a `x,y` CSV. Rows may come in any order; repeated `x` is an error.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset1D> {
    read_dataset(File::open(path)?)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset1D> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
        return Err(Error::Data(format!(
            "expected header `x,y`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut pairs = Vec::new();
    for row in rdr.deserialize() {
        let p: CsvPoint = row?;
        pairs.push((p.x, p.y));
    }
    Dataset1D::from_unsorted(pairs)
}

pub fn write_dataset<W: Write>(writer: W, data: &Dataset1D) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y"])?;
    for (x, y) in data.x().iter().zip(data.y()) {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads test inputs from a CSV whose first column is `x` (any further
/// columns are ignored).
pub fn read_inputs_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("x") {
        return Err(Error::Data("expected first column `x`".into()));
    }
    let mut xs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = rec.get(0).unwrap_or("");
        xs.push(
            field
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("bad x value `{field}`: {e}")))?,
        );
    }
    Ok(xs)
}

/// SHA-256 over the little-endian bytes of `x` followed by `y`.
pub fn fingerprint(data: &Dataset1D) -> String {
    let mut h = Sha256::new();
    for v in data.x().iter().chain(data.y()) {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// On-disk model: hyperparameters, bandwidth and the full training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub params: SeHyperParams,
    pub mode: Mode,
    pub k: usize,
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub fingerprint: String,
    pub loss_trace: Vec<(usize, f64)>,
    /// Training configuration that produced the model, when known.
    #[serde(default)]
    pub config: Option<TrainConfig>,
}

impl ModelFile {
    pub fn new(model: &FittedModel, loss_trace: Vec<(usize, f64)>) -> Self {
        Self {
            params: *model.params(),
            mode: model.mode(),
            k: model.bandwidth(),
            train_x: model.train().x().to_vec(),
            train_y: model.train().y().to_vec(),
            fingerprint: fingerprint(model.train()),
            loss_trace,
            config: None,
        }
    }

    /// Rebuilds the model, refusing data that does not match the fingerprint.
    pub fn into_model(self) -> Result<FittedModel> {
        let data = Dataset1D::new(self.train_x, self.train_y)?;
        let fp = fingerprint(&data);
        if fp != self.fingerprint {
            return Err(Error::Data(format!(
                "training data fingerprint mismatch (stored {}, computed {fp})",
                self.fingerprint
            )));
        }
        FittedModel::fit(self.params, data, self.mode, self.k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path)?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}
