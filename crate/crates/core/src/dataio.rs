//! The `IQDS` dataset container, split manifests and the raw-array importer.
//!
//! Byte layout, all little-endian:
//!
//! ```text
//! "IQDS" | version: u16 = 1 | header_len: u32 | header (UTF-8 JSON)
//!        | payload: N·M·2·T f32, sample-major, then antenna, channel, time
//!        | labels:  N·F i32, sample-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::IqTensor;

pub const DATASET_MAGIC: [u8; 4] = *b"IQDS";
pub const DATASET_VERSION: u16 = 1;
/// Only 32-bit float payloads are defined.
pub const DTYPE_F32: u32 = 0;
/// Label value meaning "unlabeled".
pub const UNLABELED: i32 = -1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    /// `[N, M, 2, T]`.
    pub shape: [usize; 4],
    pub dtype: u32,
    pub labels: Vec<String>,
    pub provenance: String,
}

/// In-memory dataset: records are held in `f64`, labels as `i32`.
#[derive(Clone, Debug, PartialEq)]
pub struct IqDataset {
    antennas: usize,
    time: usize,
    samples: Vec<IqTensor<f64>>,
    label_fields: Vec<String>,
    labels: Vec<i32>,
    provenance: String,
}

impl IqDataset {
    pub fn new(
        antennas: usize,
        time: usize,
        samples: Vec<IqTensor<f64>>,
        label_fields: Vec<String>,
        labels: Vec<i32>,
        provenance: String,
    ) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|s| s.antennas() != antennas || s.time() != time) {
            return Err(Error::shape(
                "dataset",
                format!("record {}x2x{} in a {antennas}x2x{time} dataset", bad.antennas(), bad.time()),
            ));
        }
        if labels.len() != samples.len() * label_fields.len() {
            return Err(Error::shape(
                "dataset",
                format!(
                    "{} label values for {} records x {} fields",
                    labels.len(),
                    samples.len(),
                    label_fields.len()
                ),
            ));
        }
        Ok(Self {
            antennas,
            time,
            samples,
            label_fields,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn samples(&self) -> &[IqTensor<f64>] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &IqTensor<f64> {
        &self.samples[i]
    }

    pub fn label_fields(&self) -> &[String] {
        &self.label_fields
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn raw_labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn field_index(&self, field: &str) -> Result<usize> {
        self.label_fields
            .iter()
            .position(|f| f == field)
            .ok_or_else(|| Error::invalid(format!("dataset has no label field `{field}` (fields: {:?})", self.label_fields)))
    }

    pub fn label(&self, i: usize, field: usize) -> i32 {
        self.labels[i * self.label_fields.len() + field]
    }

    /// All values of one label field, in record order.
    pub fn field_values(&self, field: &str) -> Result<Vec<i32>> {
        let f = self.field_index(field)?;
        Ok((0..self.len()).map(|i| self.label(i, f)).collect())
    }

    /// `max label + 1` over labeled records.
    pub fn num_classes(&self, field: &str) -> Result<usize> {
        Ok(self
            .field_values(field)?
            .into_iter()
            .filter(|&v| v >= 0)
            .max()
            .map_or(0, |m| m as usize + 1))
    }

    /// Record `i` with absent antennas zero-padded up to `antennas`.
    pub fn padded_sample(&self, i: usize, antennas: usize) -> Result<IqTensor<f64>> {
        self.samples[i].zero_padded(antennas)
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            shape: [self.len(), self.antennas, 2, self.time],
            dtype: DTYPE_F32,
            labels: self.label_fields.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let payload_len = self.len() * self.antennas * 2 * self.time * 4;
        let mut out = Vec::with_capacity(10 + header.len() + payload_len + self.labels.len() * 4);
        out.extend_from_slice(&DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for s in &self.samples {
            for &v in s.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        for &l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let take = |range: std::ops::Range<usize>, what: &'static str| -> Result<&[u8]> {
            bytes.get(range.clone()).ok_or(Error::Truncated {
                what,
                expected: range.end,
                found: bytes.len(),
            })
        };
        let magic: [u8; 4] = take(0..4, "magic")?.try_into().expect("4 bytes");
        if magic != DATASET_MAGIC {
            return Err(Error::BadMagic {
                path: origin.to_path_buf(),
                found: magic,
                expected: DATASET_MAGIC,
            });
        }
        let version = u16::from_le_bytes(take(4..6, "version")?.try_into().expect("2 bytes"));
        if version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header_len = u32::from_le_bytes(take(6..10, "header length")?.try_into().expect("4 bytes")) as usize;
        let header: DatasetHeader = serde_json::from_slice(take(10..10 + header_len, "header")?)
            .map_err(|e| Error::HeaderMismatch(format!("unreadable header: {e}")))?;
        if header.dtype != DTYPE_F32 {
            return Err(Error::HeaderMismatch(format!("unsupported dtype code {}", header.dtype)));
        }
        let [n, m, c, t] = header.shape;
        if c != 2 || m == 0 || t == 0 {
            return Err(Error::HeaderMismatch(format!("invalid shape {:?}", header.shape)));
        }
        let per_sample = m * 2 * t;
        let payload_start = 10 + header_len;
        let labels_start = payload_start + n * per_sample * 4;
        let end = labels_start + n * header.labels.len() * 4;
        let payload = take(payload_start..labels_start, "payload")?;
        let label_bytes = take(labels_start..end, "labels")?;
        if bytes.len() != end {
            return Err(Error::HeaderMismatch(format!(
                "header shape {:?} implies {end} bytes, file has {}",
                header.shape,
                bytes.len()
            )));
        }
        let samples = payload
            .chunks_exact(per_sample * 4)
            .map(|rec| {
                let data = rec
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    .collect();
                IqTensor::new(m, t, data)
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = label_bytes
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Self::new(m, t, samples, header.labels, labels, header.provenance)
    }
}

pub fn write_dataset(dataset: &IqDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = dataset.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<IqDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    IqDataset::from_bytes(&bytes, path)
}

/// Stratified train/test partition of a dataset, stored next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(&bad) = self.train.iter().chain(&self.test).find(|&&i| i >= n) {
            return Err(Error::invalid(format!("split index {bad} out of range for {n} records")));
        }
        let mut sorted_test = self.test.clone();
        sorted_test.sort_unstable();
        if self.train.iter().any(|i| sorted_test.binary_search(i).is_ok()) {
            return Err(Error::invalid("train and test partitions overlap"));
        }
        Ok(())
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Conventional manifest location for a dataset file.
pub fn split_path(dataset: &Path) -> std::path::PathBuf {
    dataset.with_extension("split.json")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarLabels {
    pub name: String,
    pub values: Vec<i32>,
}

/// Description of an externally converted raw float array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    /// `"f32"` or `"f64"`, little-endian.
    pub dtype: String,
    pub labels: Vec<SidecarLabels>,
}

/// Imports a raw `N × M × 2 × T` little-endian array described by a JSON
/// sidecar. Records keep their native antenna count and length; padding to an
/// encoder's antenna count happens when batches are formed.
pub fn import_raw(raw_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>, provenance: &str) -> Result<IqDataset> {
    let raw_path = raw_path.as_ref();
    let sidecar: Sidecar = read_json(sidecar_path)?;
    let width = match sidecar.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::HeaderMismatch(format!("unsupported sidecar dtype `{other}`"))),
    };
    if sidecar.m == 0 || sidecar.t == 0 {
        return Err(Error::HeaderMismatch(format!("sidecar shape m={} t={} must be positive", sidecar.m, sidecar.t)));
    }
    let bytes = fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
    let per_sample = sidecar.m * 2 * sidecar.t;
    let expected = sidecar.n * per_sample * width;
    if bytes.len() != expected {
        return Err(Error::HeaderMismatch(format!(
            "sidecar declares {} records of {}x2x{} {} ({expected} bytes), raw file has {}",
            sidecar.n,
            sidecar.m,
            sidecar.t,
            sidecar.dtype,
            bytes.len()
        )));
    }
    if let Some(bad) = sidecar.labels.iter().find(|l| l.values.len() != sidecar.n) {
        return Err(Error::HeaderMismatch(format!(
            "label column `{}` has {} values for {} records",
            bad.name,
            bad.values.len(),
            sidecar.n
        )));
    }
    let values: Vec<f64> = match width {
        4 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
        _ => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
    };
    let samples = values
        .chunks_exact(per_sample)
        .map(|rec| IqTensor::new(sidecar.m, sidecar.t, rec.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let fields: Vec<String> = sidecar.labels.iter().map(|l| l.name.clone()).collect();
    let labels = (0..sidecar.n)
        .flat_map(|i| sidecar.labels.iter().map(move |l| l.values[i]))
        .collect();
    IqDataset::new(sidecar.m, sidecar.t, samples, fields, labels, provenance.to_string())
}
