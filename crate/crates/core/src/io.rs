//! Count tables in, JSON results out.
//!
//! Count files are CSV or TSV (tab if the extension is `.tsv` or the header
//! contains a tab) with a header row of taxon names after a leading id
//! column, and one row per sample. The last taxon column is the ALR
//! reference unless the caller reorders with
//! [`CountMatrix::with_reference`].
//!
//! Cluster numbers written to files start at 1.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::compositional::CountMatrix;
use crate::error::{Error, Result};
use crate::mixture::{ComponentParams, FitConfig, FitResult, InitSpec, ModelConstraint};
use crate::selection::{CellRecord, GridSpec, SelectionReport};
use crate::simulate::SimSpec;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn delimiter(path: &Path, text: &str) -> u8 {
    let tsv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"));
    if tsv || text.lines().next().is_some_and(|l| l.contains('\t')) {
        b'\t'
    } else {
        b','
    }
}

/// Read a count table. Parse errors carry the 1-based line and column.
pub fn read_counts(path: impl AsRef<Path>) -> Result<CountMatrix> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let parse_err =
        |row: usize, column: usize, message: String| Error::Parse { path: shown.clone(), row, column, message };
    if text.trim().is_empty() {
        return Err(parse_err(1, 1, "file is empty".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(path, &text))
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.len() < 3 {
        return Err(parse_err(1, header.len().max(1), "need an id column and at least two taxa".into()));
    }
    let taxa: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let line = r + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                rec.len().min(header.len()) + 1,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        ids.push(rec[0].trim().to_string());
        let row = rec
            .iter()
            .enumerate()
            .skip(1)
            .map(|(c, cell)| {
                cell.trim()
                    .parse::<u64>()
                    .map_err(|_| parse_err(line, c + 1, format!("{cell:?} is not a nonnegative integer count")))
            })
            .collect::<Result<Vec<u64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(2, 1, "no data rows".into()));
    }
    CountMatrix::new(rows, taxa, ids)
}

/// Write a count table with an `id` header cell; tab-separated for a
/// `.tsv` path, comma-separated otherwise.
pub fn write_counts(w: &CountMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::WriterBuilder::new().delimiter(delimiter(path, "")).from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(w.taxa_names().iter().cloned());
    out.write_record(&header)?;
    for (id, row) in w.sample_ids().iter().zip(w.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|c| c.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Write `sample,label` rows; `labels` are 0-based and written from 1.
pub fn write_labels(ids: &[String], labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(Error::Dimension(format!("{} ids for {} labels", ids.len(), labels.len())));
    }
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["sample", "label"])?;
    for (id, l) in ids.iter().zip(labels) {
        out.write_record([id.as_str(), &(l + 1).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Read a label file: either `sample,label` rows (the header is detected by
/// a non-numeric first line) or one label per line. Labels are kept as text.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(path, &text))
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut labels = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(rec.len().saturating_sub(1)).unwrap_or("").trim().to_string();
        if r == 0 && cell.eq_ignore_ascii_case("label") {
            continue;
        }
        if cell.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: r + 1,
                column: rec.len().max(1),
                message: "empty label".into(),
            });
        }
        labels.push(cell);
    }
    Ok(labels)
}

/// Everything a CLI run was configured with; echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub grid: Option<GridSpec>,
    pub input: Option<String>,
    pub output: Option<String>,
    pub reference: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fit: FitConfig::default(),
            seeds: vec![1, 2, 3],
            workers: 1,
            grid: None,
            input: None,
            output: None,
            reference: None,
        }
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Serialized component parameters, matrices as lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub mu: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl ComponentDoc {
    pub fn new(c: &ComponentParams) -> Self {
        ComponentDoc {
            mu: c.mu.iter().copied().collect(),
            lambda: rows_of(&c.lambda),
            d: c.d.iter().copied().collect(),
            sigma: rows_of(&c.sigma()),
        }
    }
}

/// Serialized simulation specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpecDoc {
    pub name: String,
    pub n: usize,
    pub total_range: (u64, u64),
    pub seed: u64,
    pub pi: Vec<f64>,
    pub components: Vec<ComponentDoc>,
}

impl SimSpecDoc {
    pub fn new(name: &str, spec: &SimSpec) -> Self {
        SimSpecDoc {
            name: name.to_string(),
            n: spec.n,
            total_range: spec.total_range,
            seed: spec.seed,
            pi: spec.pi.clone(),
            components: spec.components.iter().map(ComponentDoc::new).collect(),
        }
    }
}

/// Serialized single fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDoc {
    pub version: String,
    pub model: ModelConstraint,
    #[serde(rename = "G")]
    pub g: usize,
    pub q: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub init: InitSpec,
    pub seed: Option<u64>,
    pub converged: bool,
    pub sweeps: usize,
    pub attempts: usize,
    pub objective: f64,
    pub n_params: usize,
    pub bic: f64,
    pub trace: Vec<f64>,
    pub pi: Vec<f64>,
    pub components: Vec<ComponentDoc>,
    /// 1-based cluster of each sample.
    pub labels: Vec<usize>,
    pub responsibilities: Vec<Vec<f64>>,
    pub sample_ids: Vec<String>,
    pub config: RunConfig,
}

impl FitDoc {
    pub fn new(fit: &FitResult, sample_ids: &[String], config: &RunConfig) -> Self {
        FitDoc {
            version: VERSION.to_string(),
            model: fit.model,
            g: fit.g,
            q: fit.q,
            k: fit.k,
            n: fit.n,
            init: fit.init.clone(),
            seed: fit.init.seed(),
            converged: fit.converged,
            sweeps: fit.sweeps,
            attempts: fit.attempts,
            objective: fit.objective,
            n_params: fit.n_params,
            bic: fit.bic,
            trace: fit.trace.clone(),
            pi: fit.pi.clone(),
            components: fit.components.iter().map(ComponentDoc::new).collect(),
            labels: fit.labels.iter().map(|l| l + 1).collect(),
            responsibilities: rows_of(&fit.resp),
            sample_ids: sample_ids.to_vec(),
            config: config.clone(),
        }
    }
}

/// Serialized grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDoc {
    pub version: String,
    pub cells: usize,
    pub runs: Vec<CellRecord>,
    pub best: Vec<CellRecord>,
    pub winner: CellRecord,
    pub fit: FitDoc,
    pub config: RunConfig,
}

impl SelectionDoc {
    pub fn new(report: &SelectionReport, sample_ids: &[String], config: &RunConfig) -> Self {
        SelectionDoc {
            version: VERSION.to_string(),
            cells: report.spec.n_cells(),
            runs: report.runs.clone(),
            best: report.best.clone(),
            winner: report.winner.clone(),
            fit: FitDoc::new(&report.fit, sample_ids, config),
            config: config.clone(),
        }
    }
}

/// What [`write_result`] can persist.
#[derive(Debug, Clone, Copy)]
pub enum ResultRef<'a> {
    Fit(&'a FitResult),
    Selection(&'a SelectionReport),
}

/// Write a fit or selection report as pretty-printed JSON.
pub fn write_result(
    result: ResultRef<'_>,
    sample_ids: &[String],
    config: &RunConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match result {
        ResultRef::Fit(f) => serde_json::to_writer_pretty(&mut out, &FitDoc::new(f, sample_ids, config))?,
        ResultRef::Selection(s) => serde_json::to_writer_pretty(&mut out, &SelectionDoc::new(s, sample_ids, config))?,
    }
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_fit(path: impl AsRef<Path>) -> Result<FitDoc> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

pub fn read_selection(path: impl AsRef<Path>) -> Result<SelectionDoc> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_small_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "id,a,b,c\ns1,1,2,3\ns2,0,5,1\ns3,4,4,4\n").unwrap();
        let w = read_counts(&p).unwrap();
        assert_eq!((w.n(), w.n_taxa()), (3, 3));
        assert_eq!(w.row(1), &[0, 5, 1]);
    }

    #[test]
    fn negative_cell_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tsv");
        std::fs::write(&p, "id\ta\tb\tc\ns1\t1\t2\t3\ns2\t0\t-5\t1\n").unwrap();
        match read_counts(&p) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(read_counts(&p), Err(Error::Parse { .. })));
    }
}
