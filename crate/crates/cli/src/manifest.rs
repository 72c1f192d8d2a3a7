//! Corpus manifests: one subject per line,
//! `subject_id<TAB>wav_path<TAB>label_path<TAB>segment_kind`.
//! Relative paths are resolved against the manifest's directory; blank lines
//! and lines starting with `#` are ignored.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use resprate::audio::{load_wav_at, load_wav_native};
use resprate::labels::parse_labels;
use resprate::pipeline::LooSubject;
use resprate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub subject_id: String,
    pub wav: PathBuf,
    pub labels: PathBuf,
    pub segment_kind: String,
}

pub fn parse(text: &str, base: &Path) -> Result<Vec<Entry>, Error> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(Error::Manifest(format!(
                "line {}: expected 4 tab-separated fields, got {}",
                no + 1,
                fields.len()
            )));
        }
        let id = fields[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Manifest(format!("line {}: duplicate subject {id}", no + 1)));
        }
        out.push(Entry {
            subject_id: id,
            wav: base.join(fields[1].trim()),
            labels: base.join(fields[2].trim()),
            segment_kind: fields[3].trim().to_string(),
        });
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<Entry>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn render(entries: &[Entry]) -> String {
    entries
        .iter()
        .map(|e| {
            format!(
                "{}\t{}\t{}\t{}\n",
                e.subject_id,
                e.wav.display(),
                e.labels.display(),
                e.segment_kind
            )
        })
        .collect()
}

/// Reads every subject, bringing its audio to `rate` when given.
pub fn load_subjects(path: &Path, rate: Option<f64>, min_subjects: usize) -> Result<Vec<LooSubject>, Error> {
    let entries = read(path)?;
    if entries.len() < min_subjects {
        return Err(Error::Manifest(format!(
            "{} lists {} subjects; at least {min_subjects} needed",
            path.display(),
            entries.len()
        )));
    }
    entries
        .into_iter()
        .map(|e| {
            let mut audio = match rate {
                Some(r) => load_wav_at(&e.wav, r)?,
                None => load_wav_native(&e.wav)?,
            };
            audio.meta.horse_id = e.subject_id.clone();
            audio.meta.segment_kind = e.segment_kind.clone();
            let mut labels = parse_labels(&e.labels)?;
            labels.horse_id = e.subject_id.clone();
            Ok(LooSubject {
                id: e.subject_id,
                audio,
                labels,
            })
        })
        .collect()
}
