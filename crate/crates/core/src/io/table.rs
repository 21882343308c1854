use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn tsv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().delimiter(b'\t').has_headers(true).flexible(false).from_reader(r)
}

fn tsv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(b'\t').from_writer(w)
}

fn csv_err(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
        _ => Error::Parse(e.to_string()),
    }
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a String>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("duplicate {what} id '{id}'")));
        }
    }
    Ok(())
}

/// Genes by samples matrix of counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsTable {
    pub gene_ids: Vec<String>,
    pub sample_ids: Vec<String>,
    /// One row per gene.
    pub counts: Vec<Vec<u64>>,
}

impl CountsTable {
    pub fn new(gene_ids: Vec<String>, sample_ids: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        check_unique(&gene_ids, "gene")?;
        check_unique(&sample_ids, "sample")?;
        if counts.len() != gene_ids.len() {
            return Err(Error::Data(format!("{} count rows for {} genes", counts.len(), gene_ids.len())));
        }
        if let Some((g, row)) = counts.iter().enumerate().find(|(_, r)| r.len() != sample_ids.len()) {
            return Err(Error::Data(format!("gene '{}' has {} counts for {} samples", gene_ids[g], row.len(), sample_ids.len())));
        }
        Ok(Self { gene_ids, sample_ids, counts })
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn library_sizes(&self) -> Vec<f64> {
        let mut lib = vec![0.0; self.n_samples()];
        for row in &self.counts {
            for (l, &c) in lib.iter_mut().zip(row) {
                *l += c as f64;
            }
        }
        lib
    }

    pub fn gene_index(&self, id: &str) -> Option<usize> {
        self.gene_ids.iter().position(|g| g == id)
    }

    pub fn subset_genes(&self, keep: &[usize]) -> Self {
        Self {
            gene_ids: keep.iter().map(|&g| self.gene_ids[g].clone()).collect(),
            sample_ids: self.sample_ids.clone(),
            counts: keep.iter().map(|&g| self.counts[g].clone()).collect(),
        }
    }

    pub fn read_tsv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = tsv_reader(r);
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.len() < 2 {
            return Err(Error::Parse("counts header needs a gene column and at least one sample".into()));
        }
        let sample_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut gene_ids = Vec::new();
        let mut counts = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let gene = rec.get(0).unwrap_or_default().to_string();
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim().parse::<u64>().map_err(|_| {
                        Error::Parse(format!("gene '{gene}' (line {}): '{v}' is not a non-negative integer", line + 2))
                    })
                })
                .collect::<Result<Vec<u64>>>()?;
            gene_ids.push(gene);
            counts.push(row);
        }
        Self::new(gene_ids, sample_ids, counts)
    }

    pub fn write_tsv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = tsv_writer(w);
        let mut header = vec!["gene".to_string()];
        header.extend(self.sample_ids.iter().cloned());
        wtr.write_record(&header).map_err(csv_err)?;
        for (g, row) in self.gene_ids.iter().zip(&self.counts) {
            let mut rec = vec![g.clone()];
            rec.extend(row.iter().map(u64::to_string));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read_tsv(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnValues {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl ColumnValues {
    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Numeric(v) => v.len(),
            ColumnValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell(&self, i: usize) -> String {
        match self {
            ColumnValues::Numeric(v) => super::fmt_f64(v[i]),
            ColumnValues::Categorical(v) => v[i].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: ColumnValues,
}

/// Per-sample covariates. Required columns are `sample`, `subject` and
/// `time`; an `offset` column, when present, supplies log normalization
/// offsets directly.
///
/// Column types are inferred (numeric when every value parses as a number)
/// unless the header names them as `name:num` or `name:cat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSheet {
    pub sample_ids: Vec<String>,
    pub subjects: Vec<String>,
    pub time: Vec<f64>,
    pub offset: Option<Vec<f64>>,
    /// Other covariates, in file order.
    pub columns: Vec<Column>,
}

pub const SAMPLE_COL: &str = "sample";
pub const SUBJECT_COL: &str = "subject";
pub const TIME_COL: &str = "time";
pub const OFFSET_COL: &str = "offset";

impl SampleSheet {
    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnValues> {
        if name == TIME_COL {
            return None;
        }
        self.columns.iter().find(|c| c.name == name).map(|c| &c.values)
    }

    pub fn read_tsv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = tsv_reader(r);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let mut names = Vec::new();
        let mut declared = Vec::new();
        for h in header.iter() {
            let (name, kind) = match h.rsplit_once(':') {
                Some((n, "num")) => (n, Some(true)),
                Some((n, "cat")) => (n, Some(false)),
                _ => (h, None),
            };
            names.push(name.trim().to_string());
            declared.push(kind);
        }
        check_unique(&names, "column")?;
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); names.len()];
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            for (j, v) in rec.iter().enumerate() {
                raw[j].push(v.trim().to_string());
            }
        }
        let idx = |n: &str| names.iter().position(|c| c == n);
        let need = |n: &str| idx(n).ok_or_else(|| Error::Data(format!("sample sheet lacks a '{n}' column")));
        let (si, ui, ti) = (need(SAMPLE_COL)?, need(SUBJECT_COL)?, need(TIME_COL)?);
        let numeric = |j: usize| -> Result<Vec<f64>> {
            raw[j]
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Parse(format!("column '{}', row {}: '{v}' is not a finite number", names[j], i + 1)))
                })
                .collect()
        };
        if let Some(i) = raw[ui].iter().position(String::is_empty) {
            return Err(Error::Data(format!("missing subject in row {}", i + 1)));
        }
        let sample_ids = raw[si].clone();
        check_unique(&sample_ids, "sample")?;
        let time = numeric(ti)?;
        let offset = idx(OFFSET_COL).map(numeric).transpose()?;
        let mut columns = Vec::new();
        for (j, name) in names.iter().enumerate() {
            if [si, ui, ti].contains(&j) || name == OFFSET_COL {
                continue;
            }
            let is_numeric = declared[j].unwrap_or_else(|| raw[j].iter().all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)));
            let values = if is_numeric {
                ColumnValues::Numeric(numeric(j)?)
            } else {
                ColumnValues::Categorical(raw[j].clone())
            };
            columns.push(Column { name: name.clone(), values });
        }
        Ok(Self { sample_ids, subjects: raw[ui].clone(), time, offset, columns })
    }

    /// Writes a typed header so the sheet reads back identically.
    pub fn write_tsv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = tsv_writer(w);
        let mut header = vec![SAMPLE_COL.to_string(), SUBJECT_COL.to_string(), format!("{TIME_COL}:num")];
        if self.offset.is_some() {
            header.push(format!("{OFFSET_COL}:num"));
        }
        for c in &self.columns {
            let tag = match c.values {
                ColumnValues::Numeric(_) => "num",
                ColumnValues::Categorical(_) => "cat",
            };
            header.push(format!("{}:{tag}", c.name));
        }
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n_samples() {
            let mut rec = vec![self.sample_ids[i].clone(), self.subjects[i].clone(), super::fmt_f64(self.time[i])];
            if let Some(o) = &self.offset {
                rec.push(super::fmt_f64(o[i]));
            }
            rec.extend(self.columns.iter().map(|c| c.values.cell(i)));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read_tsv(std::io::BufReader::new(f))
    }

    /// Row of each counts-table sample in this sheet; the two id sets must
    /// coincide.
    pub fn align_to(&self, sample_ids: &[String]) -> Result<Vec<usize>> {
        if sample_ids.len() != self.n_samples() {
            return Err(Error::Data(format!(
                "counts table has {} samples, sample sheet has {}",
                sample_ids.len(),
                self.n_samples()
            )));
        }
        let pos: HashMap<&str, usize> = self.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        sample_ids
            .iter()
            .map(|s| pos.get(s.as_str()).copied().ok_or_else(|| Error::Data(format!("sample '{s}' missing from the sample sheet"))))
            .collect()
    }

    /// Same sheet with rows permuted by `order`.
    pub fn reorder(&self, order: &[usize]) -> Self {
        let pick_f = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let pick_s = |v: &[String]| order.iter().map(|&i| v[i].clone()).collect::<Vec<String>>();
        Self {
            sample_ids: pick_s(&self.sample_ids),
            subjects: pick_s(&self.subjects),
            time: pick_f(&self.time),
            offset: self.offset.as_deref().map(pick_f),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    values: match &c.values {
                        ColumnValues::Numeric(v) => ColumnValues::Numeric(pick_f(v)),
                        ColumnValues::Categorical(v) => ColumnValues::Categorical(pick_s(v)),
                    },
                })
                .collect(),
        }
    }

    /// Contiguous subject indices in order of first appearance.
    pub fn subject_indices(&self) -> Vec<usize> {
        let mut map: HashMap<&str, usize> = HashMap::new();
        self.subjects
            .iter()
            .map(|s| {
                let next = map.len();
                *map.entry(s.as_str()).or_insert(next)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_reject_bad_cells() {
        let bad = "gene\ts1\ts2\ng1\t3\t-1\n";
        assert!(matches!(CountsTable::read_tsv(bad.as_bytes()), Err(Error::Parse(_))));
        let dup = "gene\ts1\ts1\ng1\t3\t1\n";
        assert!(matches!(CountsTable::read_tsv(dup.as_bytes()), Err(Error::Data(_))));
        let ragged = "gene\ts1\ts2\ng1\t3\n";
        assert!(CountsTable::read_tsv(ragged.as_bytes()).is_err());
    }

    #[test]
    fn sheet_types_and_alignment() {
        let s = "sample\tsubject\ttime\tgroup\tbatch:cat\nA\tm1\t0\twt\t1\nB\tm1\t1\tmdx\t2\n";
        let sheet = SampleSheet::read_tsv(s.as_bytes()).unwrap();
        assert!(matches!(sheet.column("group"), Some(ColumnValues::Categorical(_))));
        assert!(matches!(sheet.column("batch"), Some(ColumnValues::Categorical(_))));
        assert_eq!(sheet.align_to(&["B".into(), "A".into()]).unwrap(), vec![1, 0]);
        assert!(sheet.align_to(&["B".into(), "C".into()]).is_err());
        assert_eq!(sheet.subject_indices(), vec![0, 0]);
    }
}
