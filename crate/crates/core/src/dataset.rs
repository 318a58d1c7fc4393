//! Ground-truth CSV ingestion and the dataset manifest passed between
//! pipeline stages.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::{class_index, CLASS_NAMES};

/// Expected header of the ground-truth CSV. Column order maps one to one
/// onto the internal class order: MEL=MLN, NV=MCN, BCC, AK, BKL=BK, DF,
/// VASC=VL, SCC.
pub const ISIC_HEADER: &str = "image,MEL,NV,BCC,AK,BKL,DF,VASC,SCC";

/// One labeled image, resolved to a real file at ingest time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub class: usize,
    /// Companion segmentation mask, when the layout provides one.
    pub mask_path: Option<PathBuf>,
    /// Free-form stage annotations (semicolon-joined when serialized).
    pub tags: String,
}

/// Validated dataset listing: every path existed when the manifest was
/// built, class ids are in range, ids are unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn class_counts(&self) -> [usize; 8] {
        let mut counts = [0usize; 8];
        for e in &self.entries {
            counts[e.class] += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Plain CSV serialization: `id,path,class,mask_path,tags` with class
    /// stored by name. Loading does not re-check file existence.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "path", "class", "mask_path", "tags"])?;
        for e in &self.entries {
            w.write_record([
                e.id.as_str(),
                &e.path.to_string_lossy(),
                CLASS_NAMES[e.class],
                &e.mask_path.as_ref().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default(),
                e.tags.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for (i, record) in r.records().enumerate() {
            let rec = record?;
            if rec.len() != 5 {
                return Err(Error::Dataset(format!(
                    "manifest row {}: expected 5 fields, got {}",
                    i + 1,
                    rec.len()
                )));
            }
            let class = class_index(&rec[2]).map_err(|_| {
                Error::Dataset(format!("manifest row {}: unknown class {:?}", i + 1, &rec[2]))
            })?;
            let mask = if rec[3].is_empty() { None } else { Some(PathBuf::from(&rec[3])) };
            entries.push(ManifestEntry {
                id: rec[0].to_string(),
                path: PathBuf::from(&rec[1]),
                class,
                mask_path: mask,
                tags: rec[4].to_string(),
            });
        }
        Ok(DatasetManifest { entries })
    }
}

fn resolve_image(image_dir: &Path, id: &str) -> Option<PathBuf> {
    for ext in ["png", "jpg", "jpeg"] {
        let p = image_dir.join(format!("{id}.{ext}"));
        if p.is_file() {
            return Some(p);
        }
    }
    None
}

fn resolve_mask(image_dir: &Path, id: &str) -> Option<PathBuf> {
    let candidates = [
        image_dir.join("masks").join(format!("{id}.png")),
        image_dir.join(format!("{id}_segmentation.png")),
    ];
    candidates.into_iter().find(|p| p.is_file())
}

/// Reads a ground-truth CSV in the layout above, validates every row as
/// strictly one-hot, and resolves each image id to a file under
/// `image_dir`. Row numbers in errors are 1-based over data rows.
pub fn ingest(labels_csv: &Path, image_dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(labels_csv)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", labels_csv.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Dataset(format!("{} is empty", labels_csv.display())))?;
    if header.trim_end_matches('\r') != ISIC_HEADER {
        return Err(Error::Dataset(format!(
            "unexpected header {header:?}; expected {ISIC_HEADER:?}"
        )));
    }

    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    let mut rows = 0usize;
    for (n, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        rows += 1;
        let row = n + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Dataset(format!("row {row}: expected 9 fields, got {}", fields.len())));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::Dataset(format!("row {row}: empty image id")));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::Dataset(format!("row {row}: duplicate image id {id:?}")));
        }
        let mut hot: Option<usize> = None;
        for (c, field) in fields[1..].iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Dataset(format!("row {row}: field {:?} is not a number", field))
            })?;
            if v == 1.0 {
                if hot.is_some() {
                    return Err(Error::Dataset(format!("row {row}: more than one class marked")));
                }
                hot = Some(c);
            } else if v != 0.0 {
                return Err(Error::Dataset(format!("row {row}: label value {v} is not 0 or 1")));
            }
        }
        let class = hot.ok_or_else(|| Error::Dataset(format!("row {row}: no class marked")))?;
        let path = resolve_image(image_dir, id).ok_or_else(|| {
            Error::Dataset(format!("row {row}: no image file for id {id:?} under {}", image_dir.display()))
        })?;
        entries.push(ManifestEntry {
            id: id.to_string(),
            path,
            class,
            mask_path: resolve_mask(image_dir, id),
            tags: String::new(),
        });
    }
    if rows == 0 {
        return Err(Error::Dataset(format!("{} has a header but no rows", labels_csv.display())));
    }
    Ok(DatasetManifest { entries })
}
