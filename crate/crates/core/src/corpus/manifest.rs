use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "eval" => Ok(Split::Eval),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One corpus entry. `audio_path` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    #[serde(default)]
    pub audio_path: Option<String>,
    /// Audio is held by the producer rather than on disk (text-only records).
    #[serde(default, skip_serializing_if = "is_false")]
    pub inline_audio: bool,
    pub transcript: String,
    pub domain_label: usize,
    pub intent_label: usize,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rir_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn new(records: Vec<Record>) -> Self {
        Manifest { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Manifest {
        Manifest::new(self.records.iter().filter(|r| r.split == split).cloned().collect())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| CorpusError::Manifest {
                line: i + 1,
                detail: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Manifest { records })
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| CorpusError::io(path, e))
    }

    /// Resolved audio path of a record, relative to `base`.
    pub fn audio_file(base: &Path, rec: &Record) -> Option<PathBuf> {
        rec.audio_path.as_ref().map(|p| base.join(p))
    }

    /// Rejects duplicate ids, labels outside the inventories and dangling
    /// audio paths.
    pub fn validate(&self, base: &Path, n_domains: usize, n_intents: usize) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            let at = |detail: String| CorpusError::Invalid {
                record: i + 1,
                id: r.id.clone(),
                detail,
            };
            if !seen.insert(r.id.as_str()) {
                return Err(at("duplicate id".into()));
            }
            if r.domain_label >= n_domains {
                return Err(at(format!(
                    "domain_label {} outside inventory of {n_domains}",
                    r.domain_label
                )));
            }
            if r.intent_label >= n_intents {
                return Err(at(format!(
                    "intent_label {} outside inventory of {n_intents}",
                    r.intent_label
                )));
            }
            match (&r.audio_path, r.inline_audio) {
                (Some(p), _) => {
                    let full = base.join(p);
                    if !full.is_file() {
                        return Err(at(format!("audio_path {} does not exist", full.display())));
                    }
                }
                (None, true) => {}
                (None, false) => return Err(at("neither audio_path nor inline_audio".into())),
            }
        }
        Ok(())
    }
}
