//! Dataset manifest: a CSV file with a header row
//! `clean_path,bcm_path,split,speaker_id`. Relative paths are resolved
//! against the manifest's directory; an empty `bcm_path` means no vibration
//! channel.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clean_path: PathBuf,
    pub bcm_path: Option<PathBuf>,
    pub split: Split,
    pub speaker_id: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    clean_path: String,
    bcm_path: String,
    split: String,
    speaker_id: String,
}

const HEADER: [&str; 4] = ["clean_path", "bcm_path", "split", "speaker_id"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != HEADER {
            return Err(Error::Manifest(format!(
                "header must be {}, got {}",
                HEADER.join(","),
                header.join(",")
            )));
        }
        let mut entries = Vec::new();
        for (line, row) in rd.deserialize::<Row>().enumerate() {
            let row = row?;
            let resolve = |p: &str| {
                let p = PathBuf::from(p);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            };
            let clean_path = resolve(&row.clean_path);
            let bcm_path = (!row.bcm_path.is_empty()).then(|| resolve(&row.bcm_path));
            for p in std::iter::once(&clean_path).chain(bcm_path.iter()) {
                if !p.is_file() {
                    return Err(Error::Manifest(format!(
                        "row {}: {} is not a readable file",
                        line + 2,
                        p.display()
                    )));
                }
            }
            entries.push(ManifestEntry {
                clean_path,
                bcm_path,
                split: row.split.parse()?,
                speaker_id: row.speaker_id,
            });
        }
        Ok(Manifest { entries })
    }

    /// Writes paths relative to `base` when they live below it.
    pub fn write<W: Write>(&self, w: W, base: &Path) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let rel = |p: &Path| {
            p.strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        for e in &self.entries {
            wr.serialize(Row {
                clean_path: rel(&e.clean_path),
                bcm_path: e.bcm_path.as_deref().map(rel).unwrap_or_default(),
                split: e.split.to_string(),
                speaker_id: e.speaker_id.clone(),
            })?;
        }
        if self.entries.is_empty() {
            wr.write_record(HEADER)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path();
        std::fs::write(base.join("a.wav"), b"x").unwrap();
        std::fs::write(base.join("b.wav"), b"x").unwrap();
        let m = Manifest {
            entries: vec![
                ManifestEntry {
                    clean_path: base.join("a.wav"),
                    bcm_path: Some(base.join("b.wav")),
                    split: Split::Train,
                    speaker_id: "p1".into(),
                },
                ManifestEntry {
                    clean_path: base.join("b.wav"),
                    bcm_path: None,
                    split: Split::Val,
                    speaker_id: "p2".into(),
                },
            ],
        };
        let mpath = base.join("m.csv");
        m.write(std::fs::File::create(&mpath).unwrap(), base).unwrap();
        let text = std::fs::read_to_string(&mpath).unwrap();
        assert!(text.starts_with("clean_path,bcm_path,split,speaker_id"));
        assert!(text.contains("a.wav,b.wav,train,p1"));
        assert_eq!(Manifest::load(&mpath).unwrap(), m);
        assert_eq!(m.split(Split::Val).len(), 1);

        std::fs::write(&mpath, "clean_path,bcm_path,split,speaker_id\nmissing.wav,,train,p\n").unwrap();
        assert!(matches!(Manifest::load(&mpath), Err(Error::Manifest(_))));
        std::fs::write(&mpath, "clean_path,bcm_path,split,speaker_id\na.wav,,dev,p\n").unwrap();
        assert!(Manifest::load(&mpath).is_err());
        std::fs::write(&mpath, "path,split\na.wav,train\n").unwrap();
        assert!(Manifest::load(&mpath).is_err());
    }
}
