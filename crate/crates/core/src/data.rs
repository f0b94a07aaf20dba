//! Binned signal datasets: ingestion, label binarization, splitting, and
//! mark subsetting.
//!
//! File layout (CSV, header required):
//!
//! ```text
//! gene_id,bin,<mark_1>,...,<mark_M>,expression
//! ```
//!
//! One row per `(gene, bin)`, `bin` in `[0, T)`, the expression repeated on
//! every row of a gene. An empty expression field means "not measured".

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    /// `-1`, class index 0.
    Low,
    /// `+1`, class index 1.
    High,
}

impl Label {
    pub fn from_sign(sign: i64) -> Result<Label> {
        match sign {
            -1 => Ok(Label::Low),
            1 => Ok(Label::High),
            other => Err(Error::Contract(format!("label must be -1 or +1, got {other}"))),
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Low => -1,
            Label::High => 1,
        }
    }

    pub fn class_index(self) -> usize {
        match self {
            Label::Low => 0,
            Label::High => 1,
        }
    }

    pub fn from_class_index(k: usize) -> Label {
        if k == 1 {
            Label::High
        } else {
            Label::Low
        }
    }
}

/// `M x T` matrix of non-negative signal values.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalMatrix {
    values: Tensor,
}

impl SignalMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        values.dims2()?;
        if let Some(v) = values.data().iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(Error::Contract(format!("signal values must be finite and >= 0, got {v}")));
        }
        Ok(SignalMatrix { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn marks(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn get(&self, mark: usize, bin: usize) -> f64 {
        self.values.get2(mark, bin)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneSample {
    pub gene_id: String,
    pub x: SignalMatrix,
    pub label: Option<Label>,
    pub expression_raw: Option<f64>,
}

impl GeneSample {
    pub fn label(&self) -> Result<Label> {
        self.label
            .ok_or_else(|| Error::Contract(format!("gene {} has no label", self.gene_id)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<GeneSample>,
    mark_names: Vec<String>,
    bins: usize,
}

impl Dataset {
    pub fn new(mark_names: Vec<String>, bins: usize, samples: Vec<GeneSample>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(samples.len());
        for s in &samples {
            if s.x.marks() != mark_names.len() || s.x.bins() != bins {
                return Err(Error::Contract(format!(
                    "gene {} is {}x{}, dataset is {}x{}",
                    s.gene_id,
                    s.x.marks(),
                    s.x.bins(),
                    mark_names.len(),
                    bins
                )));
            }
            if seen.insert(s.gene_id.as_str(), ()).is_some() {
                return Err(Error::Contract(format!("duplicate gene id {}", s.gene_id)));
            }
        }
        Ok(Dataset {
            samples,
            mark_names,
            bins,
        })
    }

    pub fn samples(&self) -> &[GeneSample] {
        &self.samples
    }

    pub fn mark_names(&self) -> &[String] {
        &self.mark_names
    }

    pub fn marks(&self) -> usize {
        self.mark_names.len()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Result<Vec<Label>> {
        self.samples.iter().map(GeneSample::label).collect()
    }

    fn with_samples(&self, samples: Vec<GeneSample>) -> Dataset {
        Dataset {
            samples,
            mark_names: self.mark_names.clone(),
            bins: self.bins,
        }
    }

    /// `asinh` of every signal value.
    pub fn arcsinh(&self) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| GeneSample {
                x: SignalMatrix {
                    values: s.x.values.map(f64::asinh),
                },
                ..s.clone()
            })
            .collect();
        self.with_samples(samples)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header = vec!["gene_id".to_string(), "bin".to_string()];
        header.extend(self.mark_names.iter().cloned());
        header.push("expression".to_string());
        w.write_record(&header).map_err(csv_write_error)?;
        for s in &self.samples {
            let expr = s.expression_raw.map(|e| e.to_string()).unwrap_or_default();
            for t in 0..self.bins {
                let mut rec = Vec::with_capacity(header.len());
                rec.push(s.gene_id.clone());
                rec.push(t.to_string());
                for j in 0..self.marks() {
                    rec.push(s.x.get(j, t).to_string());
                }
                rec.push(expr.clone());
                w.write_record(&rec).map_err(csv_write_error)?;
            }
        }
        w.flush().map_err(|e| Error::io("<dataset writer>", e))?;
        Ok(())
    }
}

fn csv_write_error(e: csv::Error) -> Error {
    Error::io("<dataset writer>", std::io::Error::other(e.to_string()))
}

fn ingest(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

struct PendingGene {
    id: String,
    first_line: u64,
    values: Vec<f64>,
    filled: Vec<bool>,
    expression: Option<f64>,
}

/// Number of bins implied by a dataset file: one more than its largest bin index.
pub fn scan_bins(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut max: Option<usize> = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| ingest(path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = rec.get(1).unwrap_or("");
        let bin: usize = field
            .trim()
            .parse()
            .map_err(|_| ingest(path, line, format!("bad bin '{field}'")))?;
        max = Some(max.map_or(bin, |m| m.max(bin)));
    }
    max.map(|m| m + 1).ok_or_else(|| Error::NoSamples(path.to_path_buf()))
}

/// Reads a dataset file with `bins` bins per gene. Labels are left unset.
pub fn load_dataset(path: impl AsRef<Path>, bins: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(ingest(path, 1, e.to_string())),
    };
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::NoSamples(path.to_path_buf()));
    }
    if header.len() < 4
        || &header[0] != "gene_id"
        || &header[1] != "bin"
        || &header[header.len() - 1] != "expression"
    {
        return Err(ingest(
            path,
            1,
            "header must be gene_id,bin,<mark_1>,...,<mark_M>,expression",
        ));
    }
    let mark_names: Vec<String> = header.iter().skip(2).take(header.len() - 3).map(String::from).collect();
    let m = mark_names.len();

    let mut genes: Vec<PendingGene> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            ingest(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let gene_id = rec[0].to_string();
        if gene_id.is_empty() {
            return Err(ingest(path, line, "empty gene_id"));
        }
        let bin: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| ingest(path, line, format!("bin '{}' is not a non-negative integer", &rec[1])))?;
        if bin >= bins {
            return Err(ingest(path, line, format!("bin {bin} is outside [0, {bins})")));
        }
        let expr_field = rec[m + 2].trim();
        let expression = if expr_field.is_empty() {
            None
        } else {
            let e: f64 = expr_field
                .parse()
                .map_err(|_| ingest(path, line, format!("expression '{expr_field}' is not numeric")))?;
            if !e.is_finite() {
                return Err(ingest(path, line, format!("expression '{expr_field}' is not finite")));
            }
            Some(e)
        };

        let gi = match index.get(&gene_id) {
            Some(&gi) => gi,
            None => {
                genes.push(PendingGene {
                    id: gene_id.clone(),
                    first_line: line,
                    values: vec![0.0; m * bins],
                    filled: vec![false; bins],
                    expression,
                });
                index.insert(gene_id.clone(), genes.len() - 1);
                genes.len() - 1
            }
        };
        let g = &mut genes[gi];
        if g.expression.map(f64::to_bits) != expression.map(f64::to_bits) {
            return Err(ingest(
                path,
                line,
                format!("gene {gene_id} has inconsistent expression values"),
            ));
        }
        if std::mem::replace(&mut g.filled[bin], true) {
            return Err(ingest(path, line, format!("duplicate row for gene {gene_id}, bin {bin}")));
        }
        for j in 0..m {
            let field = rec[j + 2].trim();
            let v: f64 = field.parse().map_err(|_| {
                ingest(path, line, format!("signal '{field}' for mark {} is not numeric", mark_names[j]))
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(ingest(
                    path,
                    line,
                    format!("signal {field} for mark {} must be finite and >= 0", mark_names[j]),
                ));
            }
            g.values[j * bins + bin] = v;
        }
    }
    if genes.is_empty() {
        return Err(Error::NoSamples(path.to_path_buf()));
    }
    let mut samples = Vec::with_capacity(genes.len());
    for g in genes {
        if let Some(missing) = g.filled.iter().position(|f| !f) {
            return Err(ingest(
                path,
                g.first_line,
                format!("gene {} is missing bin {missing}", g.id),
            ));
        }
        samples.push(GeneSample {
            gene_id: g.id,
            x: SignalMatrix {
                values: Tensor::from_parts(vec![m, bins], g.values),
            },
            label: None,
            expression_raw: g.expression,
        });
    }
    Dataset::new(mark_names, bins, samples)
}

/// Lower middle value for even counts.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// `+1` when expression is strictly above the median, `-1` otherwise.
pub fn binarize_labels(dataset: &Dataset) -> Result<Dataset> {
    let expr: Vec<f64> = dataset
        .samples
        .iter()
        .map(|s| {
            s.expression_raw
                .ok_or_else(|| Error::Contract(format!("gene {} has no expression value", s.gene_id)))
        })
        .collect::<Result<_>>()?;
    let median = lower_median(&expr).ok_or_else(|| Error::Contract("binarize: empty dataset".into()))?;
    let samples = dataset
        .samples
        .iter()
        .zip(&expr)
        .map(|(s, &e)| GeneSample {
            label: Some(if e > median { Label::High } else { Label::Low }),
            ..s.clone()
        })
        .collect();
    Ok(dataset.with_samples(samples))
}

/// Partition sizes: `floor(n * f)` each, the remainder handed out one at a
/// time in train, validation, test order.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Contract(format!("split fractions must be > 0, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("split fractions sum to {total}, not 1")));
    }
    let mut sizes = fractions.map(|f| ((n as f64) * f + 1e-9).floor() as usize);
    let mut assigned: usize = sizes.iter().sum();
    let mut k = 0;
    while assigned > n {
        let i = 2 - (k % 3);
        if sizes[i] > 0 {
            sizes[i] -= 1;
            assigned -= 1;
        }
        k += 1;
    }
    k = 0;
    while assigned < n {
        sizes[k % 3] += 1;
        assigned += 1;
        k += 1;
    }
    Ok(sizes)
}

/// Seeded shuffle, then contiguous train / validation / test partitions.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let sizes = split_sizes(dataset.len(), fractions)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let take = |range: std::ops::Range<usize>| {
        dataset.with_samples(order[range].iter().map(|&i| dataset.samples[i].clone()).collect())
    };
    let a = sizes[0];
    let b = a + sizes[1];
    Ok((take(0..a), take(a..b), take(b..dataset.len())))
}

/// Keeps only the listed marks, in the listed order.
pub fn restrict_marks(dataset: &Dataset, marks: &[usize]) -> Result<Dataset> {
    if marks.is_empty() {
        return Err(Error::Contract("restrict_marks: no marks selected".into()));
    }
    let mut seen = vec![false; dataset.marks()];
    for &j in marks {
        if j >= dataset.marks() {
            return Err(Error::Contract(format!(
                "restrict_marks: mark {j} out of range 0..{}",
                dataset.marks()
            )));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::Contract(format!("restrict_marks: mark {j} listed twice")));
        }
    }
    let t = dataset.bins;
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let mut data = Vec::with_capacity(marks.len() * t);
            for &j in marks {
                data.extend_from_slice(s.x.values.row(j));
            }
            GeneSample {
                x: SignalMatrix {
                    values: Tensor::from_parts(vec![marks.len(), t], data),
                },
                ..s.clone()
            }
        })
        .collect();
    Ok(Dataset {
        samples,
        mark_names: marks.iter().map(|&j| dataset.mark_names[j].clone()).collect(),
        bins: t,
    })
}

/// Per-mark profiles over bins, as stored in `mark,bin,<value>` files.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkProfiles {
    pub bins: usize,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MarkProfiles {
    pub fn get(&self, mark: &str) -> Option<&[f64]> {
        self.rows.iter().find(|(m, _)| m == mark).map(|(_, v)| v.as_slice())
    }

    pub fn write_csv<W: Write>(&self, out: W, value_column: &str) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["mark", "bin", value_column]).map_err(csv_write_error)?;
        for (mark, vals) in &self.rows {
            for (t, v) in vals.iter().enumerate() {
                w.write_record([mark.as_str(), &t.to_string(), &v.to_string()])
                    .map_err(csv_write_error)?;
            }
        }
        w.flush().map_err(|e| Error::io("<profile writer>", e))?;
        Ok(())
    }

    /// Reads a `mark,bin,<value>` file. Every listed mark needs all `bins` bins.
    pub fn load(path: impl AsRef<Path>, bins: usize) -> Result<MarkProfiles> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header = reader.headers().map_err(|e| ingest(path, 1, e.to_string()))?.clone();
        if header.len() != 3 || &header[0] != "mark" || &header[1] != "bin" {
            return Err(ingest(path, 1, "header must be mark,bin,<value>"));
        }
        let mut rows: Vec<(String, Vec<Option<f64>>, u64)> = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                ingest(path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string())
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bin: usize = rec[1]
                .trim()
                .parse()
                .map_err(|_| ingest(path, line, format!("bad bin '{}'", &rec[1])))?;
            if bin >= bins {
                return Err(ingest(path, line, format!("bin {bin} is outside [0, {bins})")));
            }
            let v: f64 = rec[2]
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| ingest(path, line, format!("bad value '{}'", &rec[2])))?;
            let idx = match rows.iter().position(|(m, _, _)| m == &rec[0]) {
                Some(i) => i,
                None => {
                    rows.push((rec[0].to_string(), vec![None; bins], line));
                    rows.len() - 1
                }
            };
            if rows[idx].1[bin].replace(v).is_some() {
                return Err(ingest(path, line, format!("duplicate row for mark {}, bin {bin}", &rec[0])));
            }
        }
        if rows.is_empty() {
            return Err(Error::NoSamples(path.to_path_buf()));
        }
        let rows = rows
            .into_iter()
            .map(|(mark, vals, line)| {
                let filled: Option<Vec<f64>> = vals.iter().copied().collect();
                filled
                    .map(|v| (mark.clone(), v))
                    .ok_or_else(|| ingest(path, line, format!("mark {mark} is missing bins")))
            })
            .collect::<Result<_>>()?;
        Ok(MarkProfiles { bins, rows })
    }
}
