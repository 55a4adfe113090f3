//! On-disk datasets: discovery, loading and writing.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use walkdir::WalkDir;

use super::SampleRecord;
use crate::error::{Error, Result};
use crate::raster::Mask;

/// How image pairs and masks are arranged under a root directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetLayout {
    /// `a/<id>.png`, `b/<id>.png`, `mask/<id>.png`.
    TripletDirs,
    /// Files anywhere below the root named `<id>_target.png` (image A),
    /// `<id>_moving.png` (image B) and `<id>_gtmask.png`.
    AicdStyle,
}

impl FromStr for DatasetLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet-dirs" => Ok(Self::TripletDirs),
            "aicd-style" => Ok(Self::AicdStyle),
            other => Err(Error::Config(format!(
                "unknown dataset layout `{other}` (expected triplet-dirs or aicd-style)"
            ))),
        }
    }
}

impl fmt::Display for DatasetLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TripletDirs => "triplet-dirs",
            Self::AicdStyle => "aicd-style",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image_a: PathBuf,
    pub image_b: PathBuf,
    pub mask: PathBuf,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub layout: DatasetLayout,
    pub split: Split,
    /// Complete triples, sorted by id.
    pub entries: Vec<ManifestEntry>,
    /// One line per skipped triple.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_all(&self) -> Result<Vec<SampleRecord>> {
        self.entries.iter().map(load_record).collect()
    }
}

#[derive(Default)]
struct Candidate {
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    mask: Option<PathBuf>,
}

fn triplet_candidates(root: &Path) -> Result<BTreeMap<String, Candidate>> {
    let mut found: BTreeMap<String, Candidate> = BTreeMap::new();
    for sub in ["a", "b", "mask"] {
        let dir = root.join(sub);
        if !dir.is_dir() {
            continue;
        }
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let c = found.entry(id.to_string()).or_default();
            match sub {
                "a" => c.a = Some(path),
                "b" => c.b = Some(path),
                _ => c.mask = Some(path),
            }
        }
    }
    Ok(found)
}

fn aicd_candidates(root: &Path) -> Result<BTreeMap<String, Candidate>> {
    let mut found: BTreeMap<String, Candidate> = BTreeMap::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Data(format!("walking {}: {e}", root.display())))?;
        let Some(name) = entry.file_name().to_str() else { continue };
        let Some(stem) = name.strip_suffix(".png") else { continue };
        let slot = [("_target", 0), ("_moving", 1), ("_gtmask", 2)]
            .into_iter()
            .find_map(|(suffix, k)| stem.strip_suffix(suffix).map(|id| (id.to_string(), k)));
        let Some((id, k)) = slot else { continue };
        let c = found.entry(id).or_default();
        let path = Some(entry.into_path());
        match k {
            0 => c.a = path,
            1 => c.b = path,
            _ => c.mask = path,
        }
    }
    Ok(found)
}

fn dims(path: &Path) -> std::result::Result<(usize, usize), String> {
    image::image_dimensions(path)
        .map(|(w, h)| (h as usize, w as usize))
        .map_err(|e| format!("{}: {e}", path.display()))
}

/// Indexes every complete, decodable triple under `root`. Incomplete or
/// undecodable triples are logged and listed in `warnings`.
pub fn load_dataset(root: &Path, layout: DatasetLayout, split: Split) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset directory {} does not exist", root.display())));
    }
    let candidates = match layout {
        DatasetLayout::TripletDirs => triplet_candidates(root)?,
        DatasetLayout::AicdStyle => aicd_candidates(root)?,
    };
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (id, c) in candidates {
        let (Some(a), Some(b), Some(mask)) = (c.a, c.b, c.mask) else {
            warnings.push(format!("sample {id}: incomplete triple, skipped"));
            continue;
        };
        let shapes = [&a, &b, &mask].map(|p| dims(p));
        match shapes {
            [Ok(sa), Ok(sb), Ok(sm)] if sa == sb && sa == sm => entries.push(ManifestEntry {
                id,
                image_a: a,
                image_b: b,
                mask,
                height: sa.0,
                width: sa.1,
            }),
            [Ok(sa), Ok(sb), Ok(sm)] => {
                warnings.push(format!("sample {id}: sizes disagree ({sa:?}, {sb:?}, {sm:?}), skipped"))
            }
            other => {
                let why = other.into_iter().find_map(|r| r.err()).unwrap_or_default();
                warnings.push(format!("sample {id}: undecodable ({why}), skipped"));
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "no complete {layout} triples under {}",
            root.display()
        )));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        layout,
        split,
        entries,
        warnings,
    })
}

pub fn load_record(entry: &ManifestEntry) -> Result<SampleRecord> {
    let open = |p: &Path| image::open(p).map(|i| i.to_rgb8()).map_err(|e| Error::image(p, e));
    let a = open(&entry.image_a)?;
    let b = open(&entry.image_b)?;
    let mask = Mask::load(&entry.mask)?;
    SampleRecord::new(entry.id.clone(), a, b, mask)
}

/// Writes records in the triplet-dirs layout plus a `manifest.tsv`.
pub fn write_dataset(records: &[SampleRecord], out: &Path) -> Result<()> {
    for sub in ["a", "b", "mask"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut tsv = String::from("id\theight\twidth\tedits\tnuisance\n");
    for r in records {
        let file = format!("{}.png", r.id);
        let pa = out.join("a").join(&file);
        r.image_a.save(&pa).map_err(|e| Error::image(&pa, e))?;
        let pb = out.join("b").join(&file);
        r.image_b.save(&pb).map_err(|e| Error::image(&pb, e))?;
        r.mask.save(&out.join("mask").join(&file))?;
        let meta = |k: &str| r.meta.get(k).map_or("-", String::as_str).to_string();
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.id,
            r.height(),
            r.width(),
            meta("edits"),
            meta("nuisance")
        ));
    }
    let path = out.join("manifest.tsv");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(tsv.as_bytes()).map_err(|e| Error::io(&path, e))
}
