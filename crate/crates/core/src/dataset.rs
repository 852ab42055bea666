//! Datasets with an explicit input-space / output-space split.
//!
//! A [`Dataset`] never changes after construction. Point ids are the row
//! indices `0..n` in load order.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Categorical per-point labels stored as dense codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    codes: Vec<u32>,
    names: Vec<String>,
}

impl Labels {
    /// Builds labels from arbitrary strings; codes follow first appearance.
    pub fn from_strings<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut lookup: HashMap<String, u32> = HashMap::new();
        let mut names = Vec::new();
        let codes = values
            .into_iter()
            .map(|v| {
                let v = v.into();
                *lookup.entry(v.clone()).or_insert_with(|| {
                    names.push(v);
                    (names.len() - 1) as u32
                })
            })
            .collect();
        Self { codes, names }
    }

    /// Numeric class codes, named by their decimal value.
    pub fn from_codes(codes: Vec<u32>) -> Self {
        let max = codes.iter().copied().max().map_or(0, |m| m as usize + 1);
        let names = (0..max).map(|c| c.to_string()).collect();
        Self { codes, names }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    #[inline]
    pub fn code(&self, i: usize) -> u32 {
        self.codes[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[self.codes[i] as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    outputs: Array2<f64>,
    input_dims: Vec<usize>,
    output_dims: Vec<usize>,
    column_names: Option<Vec<String>>,
    labels: Option<Labels>,
    image_shape: Option<(usize, usize)>,
    source_meta: String,
}

impl Dataset {
    /// Splits an `n × (I+O)` matrix into its input and output columns.
    pub fn from_columns(
        points: &Array2<f64>,
        input_dims: &[usize],
        output_dims: &[usize],
    ) -> Result<Self> {
        let width = points.ncols();
        check_split(input_dims, output_dims, width)?;
        let inputs = points.select(ndarray::Axis(1), input_dims);
        let outputs = points.select(ndarray::Axis(1), output_dims);
        let mut ds = Self::from_parts(inputs, outputs)?;
        ds.input_dims = input_dims.to_vec();
        ds.output_dims = output_dims.to_vec();
        Ok(ds)
    }

    /// Builds a dataset from separate input and output matrices.
    pub fn from_parts(inputs: Array2<f64>, outputs: Array2<f64>) -> Result<Self> {
        let n = inputs.nrows();
        if outputs.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: outputs.nrows(),
            });
        }
        if inputs.ncols() == 0 || outputs.ncols() == 0 {
            return Err(Error::Config(
                "input and output spaces must both be non-empty".into(),
            ));
        }
        if n < 2 {
            return Err(Error::DatasetTooSmall { n });
        }
        for (name, m) in [("input", &inputs), ("output", &outputs)] {
            if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite {name} value at row {}, column {}",
                    pos / m.ncols(),
                    pos % m.ncols()
                )));
            }
        }
        let input_dims = (0..inputs.ncols()).collect::<Vec<_>>();
        let output_dims = (inputs.ncols()..inputs.ncols() + outputs.ncols()).collect();
        Ok(Self {
            inputs: inputs.as_standard_layout().into_owned(),
            outputs: outputs.as_standard_layout().into_owned(),
            input_dims,
            output_dims,
            column_names: None,
            labels: None,
            image_shape: None,
            source_meta: String::new(),
        })
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Marks the input vector as a row-major `rows × cols` image.
    pub fn with_image_shape(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.input_dim() {
            return Err(Error::Config(format!(
                "image shape {rows}x{cols} does not match {} input dims",
                self.input_dim()
            )));
        }
        self.image_shape = Some((rows, cols));
        Ok(self)
    }

    pub fn with_source_meta(mut self, meta: impl Into<String>) -> Self {
        self.source_meta = meta.into();
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> std::ops::Range<usize> {
        0..self.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &Array2<f64> {
        &self.outputs
    }

    /// Input vector of point `i` as a contiguous slice.
    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.inputs.ncols();
        &self.inputs.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn output(&self, i: usize) -> &[f64] {
        let d = self.outputs.ncols();
        &self.outputs.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn input_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.inputs.row(i)
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn source_meta(&self) -> &str {
        &self.source_meta
    }

    /// Stable content hash over shape, values and labels (hex, 128 bits).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.input_dim() as u64).to_le_bytes());
        h.update((self.output_dim() as u64).to_le_bytes());
        for v in self.inputs.iter().chain(self.outputs.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for c in labels.codes() {
                h.update(c.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..16])
    }

    /// Writes inputs, outputs and (if present) labels as CSV with a header.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = match &self.column_names {
            Some(names) => names.clone(),
            None => (0..self.input_dim())
                .map(|j| format!("in{j}"))
                .chain((0..self.output_dim()).map(|j| format!("out{j}")))
                .collect(),
        };
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for i in self.ids() {
            let mut rec: Vec<String> = self
                .input(i)
                .iter()
                .chain(self.output(i))
                .map(|v| v.to_string())
                .collect();
            if let Some(labels) = &self.labels {
                rec.push(labels.name(i).to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn check_split(input_dims: &[usize], output_dims: &[usize], width: usize) -> Result<()> {
    if input_dims.is_empty() || output_dims.is_empty() {
        return Err(Error::Config(
            "input and output column lists must both be non-empty".into(),
        ));
    }
    if let Some(c) = input_dims.iter().chain(output_dims).find(|&&c| c >= width) {
        return Err(Error::Config(format!(
            "column {c} does not exist ({width} columns)"
        )));
    }
    if let Some(c) = input_dims.iter().find(|c| output_dims.contains(c)) {
        return Err(Error::Config(format!(
            "column {c} is declared as both input and output"
        )));
    }
    Ok(())
}

/// A column selected by position or by header name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    fn resolve(&self, header: Option<&[String]>) -> Result<usize> {
        match self {
            ColumnRef::Index(i) => Ok(*i),
            ColumnRef::Name(name) => header
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| Error::Config(format!("column '{name}' not found in header"))),
        }
    }
}

/// Parses `"0,2-4,price"` into column references.
pub fn parse_column_list(spec: &str) -> Result<Vec<ColumnRef>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            if let (Ok(a), Ok(b)) = (a.trim().parse::<usize>(), b.trim().parse::<usize>()) {
                if a > b {
                    return Err(Error::Config(format!("empty column range '{part}'")));
                }
                out.extend((a..=b).map(ColumnRef::Index));
                continue;
            }
        }
        match part.parse::<usize>() {
            Ok(i) => out.push(ColumnRef::Index(i)),
            Err(_) => out.push(ColumnRef::Name(part.to_string())),
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no columns in '{spec}'")));
    }
    Ok(out)
}

struct RawCsv {
    header: Option<Vec<String>>,
    rows: Vec<Vec<String>>,
    // 1-based file line of the first data row
    first_line: usize,
}

fn read_raw_csv(path: &Path) -> Result<RawCsv> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let header_present = rows
        .first()
        .is_some_and(|first| first.iter().all(|f| f.parse::<f64>().is_err()));
    let header = if header_present {
        Some(rows.remove(0))
    } else {
        None
    };
    Ok(RawCsv {
        header,
        rows,
        first_line: if header_present { 2 } else { 1 },
    })
}

fn parse_cell(raw: &RawCsv, row: usize, col: usize) -> Result<f64> {
    let cell = &raw.rows[row][col];
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::Parse {
            row: row + raw.first_line,
            column: col,
            message: format!("non-finite value '{cell}'"),
        }),
        Err(_) => Err(Error::Parse {
            row: row + raw.first_line,
            column: col,
            message: format!("'{cell}' is not a number"),
        }),
    }
}

/// Loads a CSV dataset (comma separator, optional header row).
///
/// `label_col` may overlap an output column, e.g. a numeric class column
/// that serves as both the output value and the categorical label.
pub fn load_csv(
    path: impl AsRef<Path>,
    input_cols: &[ColumnRef],
    output_cols: &[ColumnRef],
    label_col: Option<&ColumnRef>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = read_raw_csv(path)?;
    let header = raw.header.as_deref();
    let width = match (header, raw.rows.first()) {
        (Some(h), _) => h.len(),
        (None, Some(r)) => r.len(),
        (None, None) => return Err(Error::DatasetTooSmall { n: 0 }),
    };
    let resolve = |cols: &[ColumnRef]| -> Result<Vec<usize>> {
        cols.iter().map(|c| c.resolve(header)).collect()
    };
    let input_dims = resolve(input_cols)?;
    let output_dims = resolve(output_cols)?;
    check_split(&input_dims, &output_dims, width)?;
    let label_idx = label_col.map(|c| c.resolve(header)).transpose()?;
    if let Some(l) = label_idx {
        if l >= width {
            return Err(Error::Config(format!("label column {l} does not exist")));
        }
        if input_dims.contains(&l) {
            return Err(Error::Config(format!(
                "label column {l} cannot be an input column"
            )));
        }
    }

    let n = raw.rows.len();
    if n < 2 {
        return Err(Error::DatasetTooSmall { n });
    }
    let mut inputs = Array2::zeros((n, input_dims.len()));
    let mut outputs = Array2::zeros((n, output_dims.len()));
    for r in 0..n {
        for (j, &c) in input_dims.iter().enumerate() {
            inputs[(r, j)] = parse_cell(&raw, r, c)?;
        }
        for (j, &c) in output_dims.iter().enumerate() {
            outputs[(r, j)] = parse_cell(&raw, r, c)?;
        }
    }
    let mut ds = Dataset::from_parts(inputs, outputs)?;
    ds.input_dims = input_dims.clone();
    ds.output_dims = output_dims.clone();
    ds.column_names = header.map(|h| {
        input_dims
            .iter()
            .chain(&output_dims)
            .map(|&c| h[c].clone())
            .collect()
    });
    if let Some(l) = label_idx {
        let labels = Labels::from_strings(raw.rows.iter().map(|r| r[l].clone()));
        ds = ds.with_labels(labels)?;
    }
    Ok(ds.with_source_meta(format!("csv:{}", path.display())))
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Loads an MNIST-style IDX3 image file and its IDX1 label file.
///
/// Pixels stay raw in `[0, 255]`; the digit becomes the single output
/// value and the label.
pub fn load_idx_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let magic = read_be_u32(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            images_path,
            format!("bad magic number {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_be_u32(&images, 4, images_path)? as usize;
    let rows = read_be_u32(&images, 8, images_path)? as usize;
    let cols = read_be_u32(&images, 12, images_path)? as usize;
    let pixels = rows * cols;
    if images.len() != 16 + count * pixels {
        return Err(Error::format(
            images_path,
            format!(
                "expected {} bytes for {count} images of {rows}x{cols}, found {}",
                16 + count * pixels,
                images.len()
            ),
        ));
    }

    let magic = read_be_u32(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            labels_path,
            format!("bad magic number {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let label_count = read_be_u32(&labels, 4, labels_path)? as usize;
    if labels.len() != 8 + label_count {
        return Err(Error::format(
            labels_path,
            format!("expected {} bytes, found {}", 8 + label_count, labels.len()),
        ));
    }
    if label_count != count {
        return Err(Error::InvalidData(format!(
            "{count} images but {label_count} labels"
        )));
    }

    let inputs = Array2::from_shape_vec(
        (count, pixels),
        images[16..].iter().map(|&p| f64::from(p)).collect(),
    )
    .map_err(|e| Error::InvalidData(e.to_string()))?;
    let digits = &labels[8..];
    let outputs = Array2::from_shape_vec((count, 1), digits.iter().map(|&d| f64::from(d)).collect())
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    let ds = Dataset::from_parts(inputs, outputs)?
        .with_labels(Labels::from_codes(digits.iter().map(|&d| u32::from(d)).collect()))?
        .with_image_shape(rows, cols)?;
    Ok(ds.with_source_meta(format!(
        "idx:{}|{}",
        images_path.display(),
        labels_path.display()
    )))
}

/// Precomputed 2-D coordinates aligned to dataset ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
}

impl Embedding2D {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Loads `x,y` rows (or `id,x,y` rows, reordered by id) for an `n`-point
/// dataset.
pub fn load_embedding(path: impl AsRef<Path>, n: usize) -> Result<Embedding2D> {
    let path = path.as_ref();
    let raw = read_raw_csv(path)?;
    if raw.rows.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: raw.rows.len(),
        });
    }
    let width = raw.rows.first().map_or(0, Vec::len);
    let mut coords = vec![[f64::NAN; 2]; n];
    match width {
        2 => {
            for (r, c) in coords.iter_mut().enumerate() {
                *c = [parse_cell(&raw, r, 0)?, parse_cell(&raw, r, 1)?];
            }
        }
        3 => {
            let mut seen = vec![false; n];
            for r in 0..n {
                let id = raw.rows[r][0].parse::<usize>().map_err(|_| Error::Parse {
                    row: r + raw.first_line,
                    column: 0,
                    message: format!("'{}' is not a point id", raw.rows[r][0]),
                })?;
                if id >= n || seen[id] {
                    return Err(Error::InvalidData(format!(
                        "embedding id {id} is out of range or repeated"
                    )));
                }
                seen[id] = true;
                coords[id] = [parse_cell(&raw, r, 1)?, parse_cell(&raw, r, 2)?];
            }
        }
        w => {
            return Err(Error::format(
                path,
                format!("expected 2 or 3 columns, found {w}"),
            ))
        }
    }
    Ok(Embedding2D { coords })
}

/// Writes `x,y` rows without a header.
pub fn write_embedding(emb: &Embedding2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for [x, y] in &emb.coords {
        writeln!(f, "{x},{y}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
