//! File formats: MNIST IDX, weights and report JSON, PGM images and coverage CSV.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::arrangement::CoverageReport;
use crate::densecore::Matrix;
use crate::relunet::{DenseLayer, MlpNetwork};
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Inputs in `[0, 1]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(Error::DataFormat(format!(
                "{} input values for {} labels of dimension {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(i) = inputs.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::DataFormat(format!(
                "input value {} at sample {} lies outside [0, 1]",
                inputs[i],
                i / dim
            )));
        }
        Ok(LabeledDataset {
            dim,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// The first `count` samples.
    pub fn head(&self, count: usize) -> LabeledDataset {
        let count = count.min(self.len());
        LabeledDataset {
            dim: self.dim,
            inputs: self.inputs[..count * self.dim].to_vec(),
            labels: self.labels[..count].to_vec(),
        }
    }
}

/// Raw IDX image file contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let sz = self.rows * self.cols;
        &self.pixels[i * sz..(i + 1) * sz]
    }

    /// Pixels divided by 255.
    pub fn normalized(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_idx(path: &Path, magic: u32, dims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let header = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let found = read_u32(&bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let shape: Vec<usize> = (0..dims)
        .map(|d| read_u32(&bytes, 4 + 4 * d) as usize)
        .collect();
    let body: usize = shape.iter().product();
    if bytes.len() < header + body {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: header + body,
            found: bytes.len(),
        });
    }
    if bytes.len() > header + body {
        return Err(Error::DataFormat(format!(
            "{}: {} trailing bytes after IDX body",
            path.display(),
            bytes.len() - header - body
        )));
    }
    Ok((shape, bytes[header..].to_vec()))
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let (shape, pixels) = read_idx(path.as_ref(), IDX_IMAGES_MAGIC, 3)?;
    Ok(IdxImages {
        count: shape[0],
        rows: shape[1],
        cols: shape[2],
        pixels,
    })
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    Ok(read_idx(path.as_ref(), IDX_LABELS_MAGIC, 1)?.1)
}

fn write_idx(path: &Path, magic: u32, shape: &[usize], body: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 4 * shape.len() + body.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in shape {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("IDX dimension {d} too large")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(body);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_images(path: impl AsRef<Path>, images: &IdxImages) -> Result<()> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::DimensionMismatch(
            "pixel count does not match IDX shape".into(),
        ));
    }
    write_idx(
        path.as_ref(),
        IDX_IMAGES_MAGIC,
        &[images.count, images.rows, images.cols],
        &images.pixels,
    )
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    write_idx(path.as_ref(), IDX_LABELS_MAGIC, &[labels.len()], labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// MNIST split as raw images and labels. Both the `train-images.idx3-ubyte`
/// and `train-images-idx3-ubyte` naming conventions are accepted.
pub fn load_mnist_raw(dir: impl AsRef<Path>, split: Split) -> Result<(IdxImages, Vec<u8>)> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let find = |stem: &str, kind: &str| -> PathBuf {
        let dotted = dir.as_ref().join(format!("{prefix}-{stem}.{kind}-ubyte"));
        if dotted.exists() {
            dotted
        } else {
            dir.as_ref().join(format!("{prefix}-{stem}-{kind}-ubyte"))
        }
    };
    let images = load_idx_images(find("images", "idx3"))?;
    let labels = load_idx_labels(find("labels", "idx1"))?;
    if images.count != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    Ok((images, labels))
}

pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let (images, labels) = load_mnist_raw(dir, split)?;
    LabeledDataset::new(
        images.rows * images.cols,
        images.normalized(),
        labels.into_iter().map(usize::from).collect(),
    )
}

/// Free-form metadata stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub seed: Option<u64>,
    pub test_accuracy: Option<f64>,
}

pub fn weights_to_json(net: &MlpNetwork, meta: &WeightsMeta) -> Value {
    let layers: Vec<Value> = net
        .layers()
        .iter()
        .map(|l| {
            json!({
                "rows": l.weights.rows(),
                "cols": l.weights.cols(),
                "weights": l.weights.as_slice(),
                "biases": l.biases,
            })
        })
        .collect();
    json!({ "layers": layers, "meta": meta })
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Value, key: &str, at: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| schema(format!("{at}.{key}"), "missing field"))
}

fn as_count(v: &Value, at: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| schema(at, "expected a non-negative integer"))
}

fn as_reals(v: &Value, at: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| schema(at, "expected an array of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .ok_or_else(|| schema(format!("{at}[{i}]"), "expected a number"))
        })
        .collect()
}

pub fn weights_from_json(doc: &Value) -> Result<(MlpNetwork, WeightsMeta)> {
    let layers_v = field(doc, "layers", "$")?
        .as_array()
        .ok_or_else(|| schema("$.layers", "expected an array"))?;
    if layers_v.is_empty() {
        return Err(schema("$.layers", "no layers"));
    }
    let mut layers = Vec::with_capacity(layers_v.len());
    for (i, lv) in layers_v.iter().enumerate() {
        let at = format!("$.layers[{i}]");
        let rows = as_count(field(lv, "rows", &at)?, &format!("{at}.rows"))?;
        let cols = as_count(field(lv, "cols", &at)?, &format!("{at}.cols"))?;
        let weights = as_reals(field(lv, "weights", &at)?, &format!("{at}.weights"))?;
        let biases = as_reals(field(lv, "biases", &at)?, &format!("{at}.biases"))?;
        if weights.len() != rows * cols {
            return Err(schema(
                format!("{at}.weights"),
                format!("{} values for a {rows}x{cols} matrix", weights.len()),
            ));
        }
        if biases.len() != rows {
            return Err(schema(
                format!("{at}.biases"),
                format!("{} values for {rows} rows", biases.len()),
            ));
        }
        if let Some(prev) = layers.last() {
            let prev: &DenseLayer = prev;
            if prev.weights.rows() != cols {
                return Err(schema(
                    format!("{at}.cols"),
                    format!(
                        "{cols} inputs but the previous layer has {} outputs",
                        prev.weights.rows()
                    ),
                ));
            }
        }
        let w = Matrix::from_row_major(rows, cols, weights)
            .map_err(|e| schema(format!("{at}.weights"), e.to_string()))?;
        layers.push(DenseLayer::new(w, biases)?);
    }
    let meta = match doc.get("meta") {
        None | Some(Value::Null) => WeightsMeta::default(),
        Some(m) => {
            serde_json::from_value(m.clone()).map_err(|e| schema("$.meta", e.to_string()))?
        }
    };
    Ok((MlpNetwork::new(layers)?, meta))
}

pub fn save_weights(path: impl AsRef<Path>, net: &MlpNetwork, meta: &WeightsMeta) -> Result<()> {
    write_json(path, &weights_to_json(net, meta))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(MlpNetwork, WeightsMeta)> {
    let text = fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| schema("$", e.to_string()))?;
    weights_from_json(&doc)
}

/// Pretty-printed JSON; `f64` values are written in shortest round-trip form.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Byte value shown for a normalized pixel: `255 v`, clamped and rounded.
pub fn display_byte(v: f64) -> u8 {
    (v * 255.0).clamp(0.0, 255.0).round() as u8
}

/// Binary greyscale PGM (P5) of an image stored row-major in `[0, 1]` units.
pub fn write_pgm(path: impl AsRef<Path>, image: &[f64], width: usize, height: usize) -> Result<()> {
    if image.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} pixels for a {width}x{height} image",
            image.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(image.iter().map(|&v| display_byte(v)));
    fs::write(path, out)?;
    Ok(())
}

/// Reads back a P5 file written by [`write_pgm`]: `(width, height, bytes)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::DataFormat("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::DataFormat(
            "only 8-bit P5 images are supported".into(),
        ));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::DataFormat(format!("bad PGM size {s}")))
    };
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != w * h {
        return Err(Error::DataFormat(format!(
            "PGM body has {} bytes, expected {}",
            body.len(),
            w * h
        )));
    }
    Ok((w, h, body.to_vec()))
}

pub const COVERAGE_CSV_HEADER: &str =
    "m,n,k,seed,covered,total,fraction,independence_estimate,dimension_bound,elapsed_seconds,degenerate_pairs";

pub fn coverage_csv(reports: &[CoverageReport]) -> String {
    let mut out = String::from(COVERAGE_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.3},{}\n",
            r.m,
            r.n,
            r.k,
            r.seed,
            r.covered,
            r.total,
            r.fraction,
            r.independence_estimate,
            crate::arrangement::dimension_bound(r.m as u64, r.k as u64),
            r.elapsed_seconds,
            r.degenerate_pairs
        ));
    }
    out
}

pub fn write_coverage_csv(path: impl AsRef<Path>, reports: &[CoverageReport]) -> Result<()> {
    fs::write(path, coverage_csv(reports))?;
    Ok(())
}
