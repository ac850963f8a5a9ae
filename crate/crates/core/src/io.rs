//! On-disk interchange formats.
//!
//! Every format is a JSON manifest next to a flat payload of little-endian
//! `f32` values (row-major). The manifest names the payload file relative to
//! its own directory.
//!
//! * dataset: JSON-lines. Line 1 is a header
//!   `{"format":"tsq-dataset","version":1,"classes":C,"videos":N,"feature_dim":d,"object_count":C_o,"payload":"x.bin"}`,
//!   then one line per video
//!   `{"id","label","frames","feature_dim","object_count","features_offset","objects_offset","planted_salient"}`.
//!   Offsets are byte offsets into the payload; records tile it in order.
//! * vocabulary: a single JSON object
//!   `{"format":"tsq-vocabulary","version":1,"dim":D,"object_names":[..],"class_names":[..],"payload":"x.bin"}`;
//!   the payload holds the object rows followed by the class rows.
//! * tensor archive (checkpoints): a single JSON object
//!   `{"format":"tsq-checkpoint","version":1,"meta":{..},"tensors":[{"name","rows","cols","offset"}],"payload":"x.bin"}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::data::{
    Dataset, FeatureSequence, ObjectScoreSequence, VideoRecord, Vocabulary, WordEmbeddingTable,
};
use crate::error::{Result, TsqError};

const DATASET_FORMAT: &str = "tsq-dataset";
const VOCAB_FORMAT: &str = "tsq-vocabulary";
const ARCHIVE_FORMAT: &str = "tsq-checkpoint";
const VERSION: u32 = 1;

pub fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn payload_name(manifest: &Path) -> String {
    payload_path(manifest)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "payload.bin".to_string())
}

fn resolve_payload(manifest: &Path, name: &str) -> PathBuf {
    manifest
        .parent()
        .map(|dir| dir.join(name))
        .unwrap_or_else(|| PathBuf::from(name))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| TsqError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| TsqError::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| TsqError::io(path, e))
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f32s(payload: &[u8], offset: u64, count: usize, record: &str) -> Result<Vec<f32>> {
    let start = usize::try_from(offset)
        .map_err(|_| TsqError::format(record, "payload offset overflows"))?;
    let len = count
        .checked_mul(4)
        .ok_or_else(|| TsqError::format(record, "payload length overflows"))?;
    let end = start
        .checked_add(len)
        .ok_or_else(|| TsqError::format(record, "payload length overflows"))?;
    if end > payload.len() {
        return Err(TsqError::mismatch(
            format!("payload of record {record}"),
            format!("{end} bytes"),
            format!("{} bytes", payload.len()),
        ));
    }
    let values: Vec<f32> = payload[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TsqError::format(record, "non-finite value in payload"));
    }
    Ok(values)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    version: u32,
    classes: usize,
    videos: usize,
    feature_dim: usize,
    object_count: usize,
    payload: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoLine {
    id: String,
    label: usize,
    frames: usize,
    feature_dim: usize,
    object_count: usize,
    features_offset: u64,
    objects_offset: u64,
    planted_salient: Option<Vec<usize>>,
}

/// Serializes a dataset into `(manifest text, payload bytes)`.
pub fn encode_dataset(dataset: &Dataset, payload: &str) -> Result<(String, Vec<u8>)> {
    let mut bytes = Vec::new();
    let mut manifest = String::new();
    if dataset.is_empty() {
        return Ok((manifest, bytes));
    }
    let header = DatasetHeader {
        format: DATASET_FORMAT.to_string(),
        version: VERSION,
        classes: dataset.classes,
        videos: dataset.len(),
        feature_dim: dataset.feature_dim().unwrap_or(0),
        object_count: dataset.object_count().unwrap_or(0),
        payload: payload.to_string(),
    };
    manifest.push_str(&serde_json::to_string(&header)?);
    manifest.push('\n');
    for v in &dataset.videos {
        if v.features.dim() != header.feature_dim || v.objects.object_count() != header.object_count
        {
            return Err(TsqError::mismatch(
                format!("dimensions of {}", v.id()),
                format!("d={} C_o={}", header.feature_dim, header.object_count),
                format!("d={} C_o={}", v.features.dim(), v.objects.object_count()),
            ));
        }
        let features_offset = bytes.len() as u64;
        push_f32s(&mut bytes, v.features.values());
        let objects_offset = bytes.len() as u64;
        push_f32s(&mut bytes, v.objects.values());
        let line = VideoLine {
            id: v.id().to_string(),
            label: v.label,
            frames: v.frames(),
            feature_dim: v.features.dim(),
            object_count: v.objects.object_count(),
            features_offset,
            objects_offset,
            planted_salient: v.planted_salient.clone(),
        };
        manifest.push_str(&serde_json::to_string(&line)?);
        manifest.push('\n');
    }
    Ok((manifest, bytes))
}

/// Parses a dataset from manifest text and its payload. An empty manifest is
/// an empty dataset.
pub fn decode_dataset(manifest: &str, payload: &[u8]) -> Result<Dataset> {
    let mut lines = manifest.lines().filter(|l| !l.trim().is_empty());
    let Some(first) = lines.next() else {
        return Ok(Dataset::default());
    };
    let header: DatasetHeader = serde_json::from_str(first)
        .map_err(|e| TsqError::format("header", format!("malformed header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != VERSION {
        return Err(TsqError::format(
            "header",
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    // Layout pass: every record must tile the payload before any value is read.
    let mut records = Vec::new();
    let mut cursor = 0u64;
    for (n, line) in lines.enumerate() {
        let rec: VideoLine = serde_json::from_str(line)
            .map_err(|e| TsqError::format(format!("line {}", n + 2), e.to_string()))?;
        if rec.feature_dim != header.feature_dim || rec.object_count != header.object_count {
            return Err(TsqError::mismatch(
                format!("record {}", rec.id),
                format!("d={} C_o={}", header.feature_dim, header.object_count),
                format!("d={} C_o={}", rec.feature_dim, rec.object_count),
            ));
        }
        let n_feat = rec.frames.checked_mul(rec.feature_dim);
        let n_obj = rec.frames.checked_mul(rec.object_count);
        let (Some(n_feat), Some(n_obj)) = (n_feat, n_obj) else {
            return Err(TsqError::format(&rec.id, "block size overflows"));
        };
        let obj_at = cursor.saturating_add((n_feat as u64).saturating_mul(4));
        let end = obj_at.saturating_add((n_obj as u64).saturating_mul(4));
        if rec.features_offset != cursor || rec.objects_offset != obj_at {
            return Err(TsqError::mismatch(
                format!("payload offsets of record {}", rec.id),
                format!("({cursor}, {obj_at})"),
                format!("({}, {})", rec.features_offset, rec.objects_offset),
            ));
        }
        if end > payload.len() as u64 {
            return Err(TsqError::mismatch(
                format!("payload of record {}", rec.id),
                format!("{end} bytes"),
                format!("{} bytes", payload.len()),
            ));
        }
        cursor = end;
        records.push((rec, n_feat, n_obj));
    }
    if records.len() != header.videos {
        return Err(TsqError::format(
            "header",
            format!("declares {} videos, found {}", header.videos, records.len()),
        ));
    }
    if cursor != payload.len() as u64 {
        let last = records
            .last()
            .map(|(r, _, _)| r.id.clone())
            .unwrap_or_default();
        return Err(TsqError::mismatch(
            format!("payload size after record {last}"),
            format!("{cursor} bytes"),
            format!("{} bytes", payload.len()),
        ));
    }

    let mut videos = Vec::with_capacity(records.len());
    for (rec, n_feat, n_obj) in records {
        let feats = read_f32s(payload, rec.features_offset, n_feat, &rec.id)?;
        let objs = read_f32s(payload, rec.objects_offset, n_obj, &rec.id)?;
        let wrap = |e: TsqError| match e {
            TsqError::Format { .. } | TsqError::DimensionMismatch { .. } => e,
            other => TsqError::format(&rec.id, other.to_string()),
        };
        if rec.label >= header.classes {
            return Err(TsqError::format(&rec.id, "label out of range"));
        }
        let features = FeatureSequence::new(rec.id.clone(), rec.frames, rec.feature_dim, feats)
            .map_err(wrap)?;
        let objects = ObjectScoreSequence::new(rec.frames, rec.object_count, objs).map_err(wrap)?;
        videos.push(
            VideoRecord::new(features, objects, rec.label, rec.planted_salient).map_err(wrap)?,
        );
    }
    Dataset::new(header.classes, videos)
}

/// Writes `path` (manifest) and its sibling `.bin` payload.
pub fn write_manifest(dataset: &Dataset, path: &Path) -> Result<()> {
    let (manifest, payload) = encode_dataset(dataset, &payload_name(path))?;
    write_file(&payload_path(path), &payload)?;
    write_file(path, manifest.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Dataset> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| TsqError::format("header", "manifest is not UTF-8"))?;
    let Some(first) = text.lines().find(|l| !l.trim().is_empty()) else {
        return Ok(Dataset::default());
    };
    let header: DatasetHeader = serde_json::from_str(first)
        .map_err(|e| TsqError::format("header", format!("malformed header: {e}")))?;
    let payload = read_file(&resolve_payload(path, &header.payload))?;
    decode_dataset(&text, &payload)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabManifest {
    format: String,
    version: u32,
    dim: usize,
    object_names: Vec<String>,
    class_names: Vec<String>,
    payload: String,
}

pub fn encode_vocabulary(vocab: &Vocabulary, payload: &str) -> Result<(String, Vec<u8>)> {
    let manifest = VocabManifest {
        format: VOCAB_FORMAT.to_string(),
        version: VERSION,
        dim: vocab.dim(),
        object_names: vocab.objects.names().to_vec(),
        class_names: vocab.classes.names().to_vec(),
        payload: payload.to_string(),
    };
    let mut bytes = Vec::new();
    push_f32s(&mut bytes, vocab.objects.values());
    push_f32s(&mut bytes, vocab.classes.values());
    Ok((serde_json::to_string_pretty(&manifest)?, bytes))
}

pub fn decode_vocabulary(manifest: &str, payload: &[u8]) -> Result<Vocabulary> {
    let m: VocabManifest = serde_json::from_str(manifest)
        .map_err(|e| TsqError::format("vocabulary", format!("malformed manifest: {e}")))?;
    if m.format != VOCAB_FORMAT || m.version != VERSION {
        return Err(TsqError::format("vocabulary", "unsupported format"));
    }
    if m.dim == 0 {
        return Err(TsqError::format("vocabulary", "dim must be positive"));
    }
    let n_obj = m.object_names.len().saturating_mul(m.dim);
    let n_cls = m.class_names.len().saturating_mul(m.dim);
    let expect = n_obj.saturating_add(n_cls).saturating_mul(4);
    if payload.len() != expect {
        return Err(TsqError::mismatch(
            "vocabulary payload",
            format!("{expect} bytes"),
            format!("{} bytes", payload.len()),
        ));
    }
    let objects = read_f32s(payload, 0, n_obj, "objects")?;
    let classes = read_f32s(payload, 4 * n_obj as u64, n_cls, "classes")?;
    Vocabulary::new(
        WordEmbeddingTable::new(m.object_names, m.dim, objects)?,
        WordEmbeddingTable::new(m.class_names, m.dim, classes)?,
    )
}

pub fn write_vocabulary(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let (manifest, payload) = encode_vocabulary(vocab, &payload_name(path))?;
    write_file(&payload_path(path), &payload)?;
    write_file(path, manifest.as_bytes())
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| TsqError::format("vocabulary", "manifest is not UTF-8"))?;
    let m: VocabManifest = serde_json::from_str(&text)
        .map_err(|e| TsqError::format("vocabulary", format!("malformed manifest: {e}")))?;
    let payload = read_file(&resolve_payload(path, &m.payload))?;
    decode_vocabulary(&text, &payload)
}

/// Named tensors plus free-form metadata; the checkpoint container.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorArchive {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Mat)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveManifest {
    format: String,
    version: u32,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
    payload: String,
}

impl TensorArchive {
    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn encode(&self, payload: &str) -> Result<(String, Vec<u8>)> {
        let mut bytes = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, m) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                rows: m.nrows(),
                cols: m.ncols(),
                offset: bytes.len() as u64,
            });
            for v in m.iter() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let manifest = ArchiveManifest {
            format: ARCHIVE_FORMAT.to_string(),
            version: VERSION,
            meta: self.meta.clone(),
            tensors: entries,
            payload: payload.to_string(),
        };
        Ok((serde_json::to_string_pretty(&manifest)?, bytes))
    }

    pub fn decode(manifest: &str, payload: &[u8]) -> Result<Self> {
        let m: ArchiveManifest = serde_json::from_str(manifest)
            .map_err(|e| TsqError::format("checkpoint", format!("malformed manifest: {e}")))?;
        if m.format != ARCHIVE_FORMAT || m.version != VERSION {
            return Err(TsqError::format("checkpoint", "unsupported format"));
        }
        let mut tensors = Vec::with_capacity(m.tensors.len());
        let mut cursor = 0u64;
        for e in m.tensors {
            if e.offset != cursor {
                return Err(TsqError::mismatch(
                    format!("offset of tensor {}", e.name),
                    cursor,
                    e.offset,
                ));
            }
            let count = e
                .rows
                .checked_mul(e.cols)
                .ok_or_else(|| TsqError::format(&e.name, "tensor size overflows"))?;
            let values = read_f32s(payload, e.offset, count, &e.name)?;
            cursor += 4 * count as u64;
            let mat = Mat::from_shape_fn((e.rows, e.cols), |(r, c)| values[r * e.cols + c] as f64);
            tensors.push((e.name, mat));
        }
        if cursor != payload.len() as u64 {
            return Err(TsqError::mismatch(
                "checkpoint payload",
                format!("{cursor} bytes"),
                format!("{} bytes", payload.len()),
            ));
        }
        Ok(Self {
            meta: m.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let (manifest, payload) = self.encode(&payload_name(path))?;
        write_file(&payload_path(path), &payload)?;
        write_file(path, manifest.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_file(path)?)
            .map_err(|_| TsqError::format("checkpoint", "manifest is not UTF-8"))?;
        let m: ArchiveManifest = serde_json::from_str(&text)
            .map_err(|e| TsqError::format("checkpoint", format!("malformed manifest: {e}")))?;
        let payload = read_file(&resolve_payload(path, &m.payload))?;
        Self::decode(&text, &payload)
    }
}
