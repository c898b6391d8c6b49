use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_fvs, write_fvs, Dataset, VideoSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: usize,
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
}

/// Split listing. Entries are kept sorted by id; ids are unique across splits.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub train: Vec<ManifestEntry>,
    #[serde(default)]
    pub val: Vec<ManifestEntry>,
    #[serde(default)]
    pub test: Vec<ManifestEntry>,
}

impl Manifest {
    fn splits_mut(&mut self) -> [&mut Vec<ManifestEntry>; 3] {
        [&mut self.train, &mut self.val, &mut self.test]
    }

    /// Sorts each split by id and rejects duplicates.
    pub fn normalize(&mut self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for split in self.splits_mut() {
            split.sort_by(|a, b| a.id.cmp(&b.id));
            for e in split.iter() {
                if !seen.insert(e.id.clone()) {
                    return Err(Error::DuplicateId(e.id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::ManifestNotFound(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        m.normalize()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut m = self.clone();
        m.normalize()?;
        fs::write(path, serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }
}

/// Writes one FVS file per video under `dir` plus `dir/manifest.json`, and
/// returns the manifest path.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest::default();
    for (videos, entries) in [
        (&data.train, &mut manifest.train),
        (&data.val, &mut manifest.val),
        (&data.test, &mut manifest.test),
    ] {
        for v in videos {
            let file = format!("{}.fvs", v.id);
            write_fvs(&dir.join(&file), v)?;
            entries.push(ManifestEntry {
                id: v.id.clone(),
                label: v.label,
                path: file,
            });
        }
    }
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

/// Loads every split listed in a manifest. Ids and labels come from the
/// manifest; a label disagreeing with the file is a corrupt file.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let load = |entries: &[ManifestEntry]| -> Result<Vec<VideoSample>> {
        entries
            .iter()
            .map(|e| {
                let mut v = read_fvs(&base.join(&e.path))?;
                if v.label != e.label {
                    return Err(Error::CorruptFile(format!(
                        "{}: label {} in file, {} in manifest",
                        e.id, v.label, e.label
                    )));
                }
                v.id = e.id.clone();
                Ok(v)
            })
            .collect()
    };
    Ok(Dataset {
        train: load(&manifest.train)?,
        val: load(&manifest.val)?,
        test: load(&manifest.test)?,
    })
}
