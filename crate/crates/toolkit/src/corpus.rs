//! On-disk corpus: `tracks/<id>.csv` and `phonemes/<id>.json`.

use std::path::{Path, PathBuf};

use pflow_core::context::PhonemeSeq;
use pflow_core::prep::SequenceTrack;

use crate::error::{ToolError, ToolResult};

pub const TRACKS: &str = "tracks";
pub const PHONEMES: &str = "phonemes";

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub track: Option<SequenceTrack>,
    pub phonemes: PhonemeSeq,
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:04}")
}

pub fn track_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(TRACKS).join(format!("{id}.csv"))
}

pub fn phoneme_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(PHONEMES).join(format!("{id}.json"))
}

fn stems(dir: &Path, ext: &str) -> ToolResult<Vec<String>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| ToolError::io(dir, e))? {
        let p = entry.map_err(|e| ToolError::io(dir, e))?.path();
        if p.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                out.push(s.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Track CSV files directly under `dir`, by stem.
pub fn track_stems(dir: &Path) -> ToolResult<Vec<String>> {
    stems(dir, "csv")
}

/// Loads every utterance with a phoneme file; tracks are optional unless
/// `need_tracks`.
pub fn load_corpus(dir: &Path, need_tracks: bool) -> ToolResult<Vec<Utterance>> {
    if !dir.is_dir() {
        return Err(ToolError::io(dir, "corpus directory not found"));
    }
    let ids = stems(&dir.join(PHONEMES), "json")?;
    if ids.is_empty() {
        return Err(ToolError::io(dir.join(PHONEMES), "no phoneme files"));
    }
    ids.into_iter()
        .map(|id| {
            let phonemes = PhonemeSeq::load(phoneme_path(dir, &id))?;
            let tp = track_path(dir, &id);
            let track = if tp.exists() {
                Some(SequenceTrack::load(&tp)?)
            } else if need_tracks {
                return Err(ToolError::io(&tp, "missing track for phoneme file"));
            } else {
                None
            };
            Ok(Utterance { id, track, phonemes })
        })
        .collect()
}

/// Corpus files in a stable order, for manifest digests.
pub fn corpus_files(dir: &Path, utterances: &[Utterance]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for u in utterances {
        out.push(phoneme_path(dir, &u.id));
        if u.track.is_some() {
            out.push(track_path(dir, &u.id));
        }
    }
    out
}
