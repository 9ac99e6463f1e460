//! On-disk data model: the JSON manifest, raw little-endian `f32` embedding
//! blobs, class-anchor sidecars, prototype stores, and cache snapshots.
//!
//! All shape metadata lives in JSON; vector payloads are headerless raw
//! float32, row-major. Save/load pairs round-trip vector payloads bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::core::{ClassAnchors, ClassSet, Embedding};
use crate::error::{Error, Result};

pub const ANCHORS_FORMAT: &str = "ttacache.anchors/v1";
pub const PROTOS_FORMAT: &str = "ttacache.protos/v1";
pub const PCACHE_FORMAT: &str = "ttacache.pcache/v1";
pub const CACHESNAP_FORMAT: &str = "ttacache.cachesnap/v1";

/// Whether a subject contributes prototypes or receives adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

/// One video of one subject: frame count, labels, and the embedding blob path
/// (relative to the manifest's directory).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_range: Option<(usize, usize)>,
    pub embeddings_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub role: Role,
    pub videos: Vec<VideoRecord>,
}

/// The dataset description: dimension, class set, and subject records.
/// Only constructible through [`load_manifest`] / [`Manifest::validate`],
/// so a held `Manifest` always satisfies its invariants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub classes: ClassSet,
    pub subjects: Vec<SubjectRecord>,
    #[serde(skip)]
    root: PathBuf,
}

impl Manifest {
    /// Assembles a manifest rooted at `root` and checks every invariant
    /// (including blob existence), so writers get the same guarantees as
    /// [`load_manifest`].
    pub fn new(
        dim: usize,
        classes: ClassSet,
        subjects: Vec<SubjectRecord>,
        root: &Path,
    ) -> Result<Self> {
        let manifest = Self {
            dim,
            classes,
            subjects,
            root: root.to_path_buf(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Directory that relative embedding paths resolve against.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn embeddings_file(&self, video: &VideoRecord) -> PathBuf {
        self.root.join(&video.embeddings_path)
    }

    pub fn subject(&self, id: &str) -> Result<&SubjectRecord> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Validation(format!("unknown subject id {id:?}")))
    }

    pub fn sources(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.subjects.iter().filter(|s| s.role == Role::Source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.subjects.iter().filter(|s| s.role == Role::Target)
    }

    /// Checks every manifest invariant, including on-disk blob sizes.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Validation("dim must be >= 1".into()));
        }
        let mut subject_ids = std::collections::HashSet::new();
        for subject in &self.subjects {
            if !subject_ids.insert(subject.id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate subject id {:?}",
                    subject.id
                )));
            }
            let mut video_ids = std::collections::HashSet::new();
            for video in &subject.videos {
                let tag = format!("subject {:?} video {:?}", subject.id, video.id);
                if !video_ids.insert(video.id.clone()) {
                    return Err(Error::Validation(format!("duplicate video id in {tag}")));
                }
                if let Some(label) = &video.label {
                    if self.classes.index_of(label).is_none() {
                        return Err(Error::Validation(format!(
                            "{tag}: unknown label {label:?}"
                        )));
                    }
                }
                if let Some(frame_labels) = &video.frame_labels {
                    if subject.role != Role::Source {
                        return Err(Error::Validation(format!(
                            "{tag}: frame_labels are only valid on source videos"
                        )));
                    }
                    if frame_labels.len() != video.frames {
                        return Err(Error::Validation(format!(
                            "{tag}: {} frame_labels for {} frames",
                            frame_labels.len(),
                            video.frames
                        )));
                    }
                    for l in frame_labels {
                        if self.classes.index_of(l).is_none() {
                            return Err(Error::Validation(format!(
                                "{tag}: unknown frame label {l:?}"
                            )));
                        }
                    }
                }
                if let Some((start, end)) = video.anchor_range {
                    if subject.role != Role::Target {
                        return Err(Error::Validation(format!(
                            "{tag}: anchor_range is only valid on target videos"
                        )));
                    }
                    if !(start < end && end <= video.frames) {
                        return Err(Error::Validation(format!(
                            "{tag}: anchor_range [{start}, {end}) out of bounds for {} frames",
                            video.frames
                        )));
                    }
                }
                let path = self.embeddings_file(video);
                let expected = video.frames as u64 * self.dim as u64 * 4;
                let meta = fs::metadata(&path).map_err(|e| {
                    Error::io(format!("{tag}: embeddings file {}", path.display()), e)
                })?;
                if meta.len() != expected {
                    return Err(Error::SizeMismatch {
                        path,
                        expected,
                        found: meta.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Loads and fully validates a manifest. Every invariant is checked eagerly,
/// including the existence and byte length of each referenced blob.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("manifest {}", path.display()), e))?;
    let mut manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
            path: path.to_path_buf(),
            source: e,
        })?;
    manifest.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    write_json(path, manifest)
}

/// Reads a video's embeddings: little-endian `f32`, row-major `[frame][dim]`.
pub fn load_embeddings(manifest: &Manifest, video: &VideoRecord) -> Result<Vec<Embedding>> {
    let path = manifest.embeddings_file(video);
    read_embedding_blob(&path, video.frames, manifest.dim)
}

/// Reads a raw blob of `rows` embeddings of dimension `dim`, validating the
/// byte length and the finiteness of every value.
pub fn read_embedding_blob(path: &Path, rows: usize, dim: usize) -> Result<Vec<Embedding>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("blob {}", path.display()), e))?;
    let expected = rows as u64 * dim as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut values = Vec::with_capacity(dim);
        for c in 0..dim {
            let off = (r * dim + c) * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::CorruptData {
                    path: path.to_path_buf(),
                    frame: r,
                });
            }
            values.push(v);
        }
        out.push(Embedding::new(values)?);
    }
    Ok(out)
}

/// Writes embeddings as a raw little-endian `f32` blob.
pub fn write_embedding_blob(path: &Path, rows: &[Embedding]) -> Result<()> {
    let mut bytes = Vec::with_capacity(rows.iter().map(|r| r.dim() * 4).sum());
    for row in rows {
        for &v in row.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("blob {}", path.display()), e))
}

#[derive(Serialize, Deserialize)]
struct AnchorsHeader {
    format: String,
    dim: usize,
    classes: ClassSet,
    logit_scale: f64,
    data: String,
}

/// Writes `anchors.json` plus the sibling `f32` matrix named in its header.
pub fn save_anchors(anchors: &ClassAnchors, json_path: &Path) -> Result<()> {
    let data_name = blob_name(json_path);
    let header = AnchorsHeader {
        format: ANCHORS_FORMAT.into(),
        dim: anchors.dim(),
        classes: anchors.classes().clone(),
        logit_scale: anchors.logit_scale(),
        data: data_name.clone(),
    };
    write_json(json_path, &header)?;
    write_embedding_blob(&sibling(json_path, &data_name), anchors.anchors())
}

/// Loads a class-anchor sidecar; anchors are (re)normalized at load time.
pub fn load_anchors(json_path: &Path) -> Result<ClassAnchors> {
    let header: AnchorsHeader = read_json(json_path)?;
    expect_format(&header.format, ANCHORS_FORMAT)?;
    let rows = read_embedding_blob(
        &sibling(json_path, &header.data),
        header.classes.len(),
        header.dim,
    )?;
    ClassAnchors::new(header.classes, rows, header.logit_scale)
}

/// Clustering metadata attached to one prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoMeta {
    pub eps: f64,
    pub min_pts: usize,
    pub stability: f64,
    pub fallback: bool,
}

impl Default for ProtoMeta {
    fn default() -> Self {
        Self {
            eps: 0.0,
            min_pts: 0,
            stability: 0.0,
            fallback: false,
        }
    }
}

/// One medoid (or fallback sample) summarizing a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeEntry {
    pub vector: Embedding,
    pub cluster_size: usize,
    pub meta: ProtoMeta,
}

/// One grid candidate evaluated during parameter selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub eps: f64,
    pub min_pts: usize,
    pub outlier_rate: f64,
    pub n_clusters: usize,
    pub mean_ari: f64,
    pub valid: bool,
}

/// The parameter-search audit record for one (subject, class) job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchRecord {
    pub subject: String,
    pub class_index: usize,
    pub chosen_eps: f64,
    pub chosen_min_pts: usize,
    pub fallback_used: bool,
    pub candidates: Vec<CandidateRecord>,
}

/// Per-(source-subject, class) prototypes with clustering metadata.
#[derive(Debug, Clone)]
pub struct PrototypeStore {
    dim: usize,
    n_classes: usize,
    extractor: String,
    entries: BTreeMap<(String, usize), Vec<PrototypeEntry>>,
    reports: Vec<SearchRecord>,
}

impl PrototypeStore {
    pub fn new(dim: usize, n_classes: usize, extractor: impl Into<String>) -> Self {
        Self {
            dim,
            n_classes,
            extractor: extractor.into(),
            entries: BTreeMap::new(),
            reports: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn extractor(&self) -> &str {
        &self.extractor
    }

    /// Inserts one (subject, class) group; entries must be nonempty unit
    /// vectors of the store dimension.
    pub fn insert(
        &mut self,
        subject: &str,
        class_index: usize,
        entries: Vec<PrototypeEntry>,
    ) -> Result<()> {
        if class_index >= self.n_classes {
            return Err(Error::Validation(format!(
                "class index {class_index} out of range (n_classes = {})",
                self.n_classes
            )));
        }
        if entries.is_empty() {
            return Err(Error::Validation(format!(
                "empty prototype list for subject {subject:?} class {class_index}"
            )));
        }
        for e in &entries {
            if e.vector.dim() != self.dim {
                return Err(Error::DimensionMismatch(format!(
                    "prototype dim {} in a dim-{} store",
                    e.vector.dim(),
                    self.dim
                )));
            }
            if !e.vector.is_unit() {
                return Err(Error::Validation(format!(
                    "prototype for subject {subject:?} class {class_index} is not unit-norm"
                )));
            }
            if e.cluster_size == 0 {
                return Err(Error::Validation("cluster_size must be >= 1".into()));
            }
        }
        self.entries.insert((subject.to_string(), class_index), entries);
        Ok(())
    }

    pub fn push_report(&mut self, report: SearchRecord) {
        self.reports.push(report);
    }

    pub fn reports(&self) -> &[SearchRecord] {
        &self.reports
    }

    /// Distinct subject ids in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (subject, _) in self.entries.keys() {
            if out.last().map(|s| s != subject).unwrap_or(true) {
                out.push(subject.clone());
            }
        }
        out
    }

    pub fn get(&self, subject: &str, class_index: usize) -> Result<&[PrototypeEntry]> {
        self.entries
            .get(&(subject.to_string(), class_index))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "no prototypes for subject {subject:?} class {class_index}"
                ))
            })
    }

    /// Every (subject, class) pair must be present with ≥ 1 entry.
    pub fn validate_coverage(&self) -> Result<()> {
        for subject in self.subjects() {
            for c in 0..self.n_classes {
                self.get(&subject, c)?;
            }
        }
        if self.entries.is_empty() {
            return Err(Error::Validation("prototype store is empty".into()));
        }
        Ok(())
    }
}

impl PartialEq for PrototypeStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.n_classes == other.n_classes
            && self.extractor == other.extractor
            && self.entries == other.entries
    }
}

#[derive(Serialize, Deserialize)]
struct ProtoRow {
    subject: String,
    class_index: usize,
    row: usize,
    cluster_size: usize,
    eps: f64,
    min_pts: usize,
    stability: f64,
    fallback: bool,
}

#[derive(Serialize, Deserialize)]
struct ProtosHeader {
    format: String,
    dim: usize,
    n_classes: usize,
    extractor: String,
    data: String,
    entries: Vec<ProtoRow>,
    #[serde(default)]
    reports: Vec<SearchRecord>,
}

/// Serializes a prototype store as JSON metadata plus a raw `f32` blob.
pub fn save_prototype_store(store: &PrototypeStore, json_path: &Path) -> Result<()> {
    store.validate_coverage()?;
    let data_name = blob_name(json_path);
    let mut rows = Vec::new();
    let mut vectors = Vec::new();
    for ((subject, class_index), entries) in &store.entries {
        for e in entries {
            rows.push(ProtoRow {
                subject: subject.clone(),
                class_index: *class_index,
                row: vectors.len(),
                cluster_size: e.cluster_size,
                eps: e.meta.eps,
                min_pts: e.meta.min_pts,
                stability: e.meta.stability,
                fallback: e.meta.fallback,
            });
            vectors.push(e.vector.clone());
        }
    }
    let header = ProtosHeader {
        format: PROTOS_FORMAT.into(),
        dim: store.dim,
        n_classes: store.n_classes,
        extractor: store.extractor.clone(),
        data: data_name.clone(),
        entries: rows,
        reports: store.reports.clone(),
    };
    write_json(json_path, &header)?;
    write_embedding_blob(&sibling(json_path, &data_name), &vectors)
}

pub fn load_prototype_store(json_path: &Path) -> Result<PrototypeStore> {
    let header: ProtosHeader = read_json(json_path)?;
    expect_format(&header.format, PROTOS_FORMAT)?;
    let vectors = read_embedding_blob(
        &sibling(json_path, &header.data),
        header.entries.len(),
        header.dim,
    )?;
    let mut store = PrototypeStore::new(header.dim, header.n_classes, header.extractor);
    let mut grouped: BTreeMap<(String, usize), Vec<PrototypeEntry>> = BTreeMap::new();
    for row in &header.entries {
        let vector = vectors
            .get(row.row)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("blob row {} out of range", row.row)))?;
        grouped
            .entry((row.subject.clone(), row.class_index))
            .or_default()
            .push(PrototypeEntry {
                vector,
                cluster_size: row.cluster_size,
                meta: ProtoMeta {
                    eps: row.eps,
                    min_pts: row.min_pts,
                    stability: row.stability,
                    fallback: row.fallback,
                },
            });
    }
    for ((subject, class_index), entries) in grouped {
        store.insert(&subject, class_index, entries)?;
    }
    store.reports = header.reports;
    store.validate_coverage()?;
    Ok(store)
}

fn blob_name(json_path: &Path) -> String {
    let stem = json_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    format!("{stem}.f32")
}

fn sibling(json_path: &Path, name: &str) -> PathBuf {
    json_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
        .join(name)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("JSON encode failed: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(format!("write {}", path.display()), e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
        path: path.to_path_buf(),
        source: e,
    })
}

pub(crate) fn expect_format(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::VersionMismatch {
            expected: expected.into(),
            found: found.into(),
        });
    }
    Ok(())
}
