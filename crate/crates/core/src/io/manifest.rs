use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "study_id\tpatient_id\tbmode\tdoppler\tmask1\tmask2\tmask3";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub study_id: String,
    pub patient_id: String,
    pub bmode: PathBuf,
    pub doppler: PathBuf,
    /// One to three annotator masks.
    pub masks: Vec<PathBuf>,
}

/// Whitespace-separated study table. Relative paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.study_id.as_str()) {
                return Err(Error::Manifest {
                    line: i + 2,
                    reason: format!("duplicate study_id {}", e.study_id),
                });
            }
            if e.masks.is_empty() || e.masks.len() > 3 {
                return Err(Error::Manifest {
                    line: i + 2,
                    reason: format!("{} mask paths (expected 1 to 3)", e.masks.len()),
                });
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn get(&self, study_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.study_id == study_id)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// `(study_id, patient_id)` pairs in manifest order.
    pub fn identities(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .map(|e| (e.study_id.clone(), e.patient_id.clone()))
            .collect()
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Manifest {
            line: 1,
            reason: "missing header row".into(),
        })?;
        let cols: Vec<&str> = header.split_whitespace().collect();
        let expected = ["study_id", "patient_id", "bmode", "doppler", "mask1"];
        if cols.len() < 5 || cols.len() > 7 || cols[..5] != expected {
            return Err(Error::Manifest {
                line: hline,
                reason: format!("header must start with `{}`", expected.join(" ")),
            });
        }
        let mut entries = Vec::new();
        for (line, row) in lines {
            let f: Vec<&str> = row.split_whitespace().collect();
            if f.len() < 5 || f.len() > 7 {
                return Err(Error::Manifest {
                    line,
                    reason: format!("expected 5 to 7 columns, found {}", f.len()),
                });
            }
            entries.push(ManifestEntry {
                study_id: f[0].to_string(),
                patient_id: f[1].to_string(),
                bmode: f[2].into(),
                doppler: f[3].into(),
                masks: f[4..].iter().map(PathBuf::from).collect(),
            });
        }
        Self::new(entries, base_dir)
    }

    /// Reads a manifest file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for e in &self.entries {
            let _ = write!(
                s,
                "{}\t{}\t{}\t{}",
                e.study_id,
                e.patient_id,
                e.bmode.display(),
                e.doppler.display()
            );
            for m in &e.masks {
                let _ = write!(s, "\t{}", m.display());
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Fails on the first referenced file that does not exist.
    pub fn check_paths(&self) -> Result<()> {
        for e in &self.entries {
            for p in [&e.bmode, &e.doppler].into_iter().chain(e.masks.iter()) {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::MissingFile(full));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_variable_mask_columns() {
        let text = "study_id patient_id bmode doppler mask1 mask2 mask3\n\
                    # comment\n\
                    s1 p1 a.nii b.nii m.nii\n\
                    s2 p1 c.nii d.nii m1.nii m2.nii m3.nii\n";
        let m = DatasetManifest::parse(text, "/data").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries()[1].masks.len(), 3);
        assert_eq!(m.resolve(&m.entries()[0].bmode), PathBuf::from("/data/a.nii"));
        let again = DatasetManifest::parse(&m.to_text(), "/data").unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_duplicates_and_bad_rows() {
        let dup = "study_id patient_id bmode doppler mask1\ns1 p a b m\ns1 q a b m\n";
        assert!(matches!(DatasetManifest::parse(dup, "."), Err(Error::Manifest { .. })));
        let short = "study_id patient_id bmode doppler mask1\ns1 p a b\n";
        assert!(matches!(DatasetManifest::parse(short, "."), Err(Error::Manifest { line: 2, .. })));
        let long = "study_id patient_id bmode doppler mask1\ns1 p a b m m m m\n";
        assert!(DatasetManifest::parse(long, ".").is_err());
        assert!(DatasetManifest::parse("id x\n", ".").is_err());
    }

    #[test]
    fn empty_manifest_is_valid() {
        let m = DatasetManifest::parse(MANIFEST_HEADER, ".").unwrap();
        assert!(m.is_empty());
        assert!(m.check_paths().is_ok());
    }

    #[test]
    fn check_paths_reports_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let text = "study_id patient_id bmode doppler mask1\ns1 p a.nii b.nii m.nii\n";
        let m = DatasetManifest::parse(text, dir.path()).unwrap();
        assert!(matches!(m.check_paths(), Err(Error::MissingFile(_))));
    }
}
