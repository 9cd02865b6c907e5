//! On-disk corpus layout.
//!
//! A corpus directory holds `manifest.json` plus one JSON-lines file per
//! split (`train.jsonl`, `test_mono.jsonl`, `test_cs.jsonl`) and
//! `lm_text.jsonl`. Each split line is one object
//!
//! ```text
//! {"id":"train-00000","class":"mono_l1","transcript":[5,9,4],"features":[[0.12,-1.5],[...]]}
//! ```
//!
//! with `class` one of `mono_l1`, `mono_l2`, `code_switched`, `transcript`
//! the token ids (no start/end tokens) and `features` the `T × feature_dim`
//! frames, row by row. Reals are written in shortest round-trip decimal form
//! so reading restores every bit. Lines end with `\n`; an empty split is an
//! empty file. `lm_text.jsonl` lines are `{"id":"lm-00000","transcript":[...]}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generate::{Corpus, CorpusSpec, Prototypes, UttClass, Utterance};
use super::vocab::{Token, TokenId, Vocabulary};
use super::CorpusError;
use crate::autodiff::Tensor;

pub const CORPUS_FORMAT: &str = "csasr-corpus/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    class: UttClass,
    transcript: Vec<TokenId>,
    features: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRecord {
    id: String,
    transcript: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub name: String,
    pub file: String,
    pub utterances: usize,
    pub code_switched: usize,
    pub l1_tokens: usize,
    pub l2_tokens: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub spec: CorpusSpec,
    pub vocabulary: Vec<Token>,
    pub prototypes: Prototypes,
    pub splits: Vec<SplitStats>,
    pub lm_text_file: String,
    pub lm_text_transcripts: usize,
}

impl Manifest {
    pub fn split(&self, name: &str) -> Option<&SplitStats> {
        self.splits.iter().find(|s| s.name == name)
    }
}

pub fn split_stats(name: &str, vocab: &Vocabulary, utts: &[Utterance]) -> SplitStats {
    let count = |lang| utts.iter().flat_map(|u| &u.transcript).filter(|&&t| vocab.language(t) == Some(lang)).count();
    SplitStats {
        name: name.to_string(),
        file: format!("{name}.jsonl"),
        utterances: utts.len(),
        code_switched: utts.iter().filter(|u| u.class == UttClass::CodeSwitched).count(),
        l1_tokens: count(super::Language::L1),
        l2_tokens: count(super::Language::L2),
        frames: utts.iter().map(Utterance::frames).sum(),
    }
}

/// One split line, without the trailing newline.
pub fn format_record(u: &Utterance) -> String {
    let rec = Record {
        id: u.id.clone(),
        class: u.class,
        transcript: u.transcript.clone(),
        features: (0..u.features.rows()).map(|r| u.features.row(r).to_vec()).collect(),
    };
    serde_json::to_string(&rec).expect("records always serialize")
}

/// Parses one split line. Structural checks only: rectangular, non-empty,
/// finite features and a non-empty transcript.
pub fn parse_record(line: &str) -> Result<Utterance, String> {
    let rec: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.transcript.is_empty() {
        return Err("empty transcript".into());
    }
    let Some(first) = rec.features.first() else {
        return Err("no feature frames".into());
    };
    let d = first.len();
    if d == 0 {
        return Err("zero-width feature frames".into());
    }
    let mut data = Vec::with_capacity(rec.features.len() * d);
    for (i, row) in rec.features.iter().enumerate() {
        if row.len() != d {
            return Err(format!("frame {i} has {} values, expected {d}", row.len()));
        }
        data.extend_from_slice(row);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err("non-finite feature value".into());
    }
    let features = Tensor::new(vec![rec.features.len(), d], data).map_err(|e| e.to_string())?;
    Ok(Utterance { id: rec.id, class: rec.class, transcript: rec.transcript, features })
}

pub fn write_split(path: &Path, utts: &[Utterance]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for u in utts {
        out.push_str(&format_record(u));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CorpusError::io(path, e))
}

fn parse_lines<T>(path: &Path, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        let item = parse(line).map_err(|msg| CorpusError::Parse { file: path.display().to_string(), line: i + 1, msg })?;
        out.push(item);
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(CorpusError::Parse {
            file: path.display().to_string(),
            line: out.len(),
            msg: "missing final newline (truncated file?)".into(),
        });
    }
    Ok(out)
}

pub fn read_split(path: &Path) -> Result<Vec<Utterance>, CorpusError> {
    parse_lines(path, parse_record)
}

pub fn write_text(path: &Path, transcripts: &[Vec<TokenId>]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for (i, t) in transcripts.iter().enumerate() {
        let rec = TextRecord { id: format!("lm-{i:05}"), transcript: t.clone() };
        out.push_str(&serde_json::to_string(&rec).expect("records always serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CorpusError::io(path, e))
}

/// Parses one LM text line into its transcript.
pub fn parse_text_record(line: &str) -> Result<Vec<TokenId>, String> {
    serde_json::from_str::<TextRecord>(line).map(|r| r.transcript).map_err(|e| e.to_string())
}

pub fn read_text(path: &Path) -> Result<Vec<Vec<TokenId>>, CorpusError> {
    parse_lines(path, parse_text_record)
}

pub fn manifest_for(corpus: &Corpus) -> Manifest {
    Manifest {
        format: CORPUS_FORMAT.to_string(),
        spec: corpus.spec.clone(),
        vocabulary: corpus.vocab.tokens().to_vec(),
        prototypes: corpus.prototypes.clone(),
        splits: vec![
            split_stats("train", &corpus.vocab, &corpus.train),
            split_stats("test_mono", &corpus.vocab, &corpus.test_mono),
            split_stats("test_cs", &corpus.vocab, &corpus.test_cs),
        ],
        lm_text_file: "lm_text.jsonl".into(),
        lm_text_transcripts: corpus.lm_text.len(),
    }
}

pub fn manifest_bytes(m: &Manifest) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s.into_bytes()
}

/// Hex SHA-256 of the manifest file contents.
pub fn manifest_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<Manifest, CorpusError> {
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let manifest = manifest_for(corpus);
    write_split(&dir.join("train.jsonl"), &corpus.train)?;
    write_split(&dir.join("test_mono.jsonl"), &corpus.test_mono)?;
    write_split(&dir.join("test_cs.jsonl"), &corpus.test_cs)?;
    write_text(&dir.join(&manifest.lm_text_file), &corpus.lm_text)?;
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| CorpusError::io(&path, e))?;
    f.write_all(&manifest_bytes(&manifest)).map_err(|e| CorpusError::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CorpusError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

/// Parses manifest text; `file` only labels errors.
pub fn parse_manifest(text: &str, file: &str) -> Result<Manifest, CorpusError> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        file: file.to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if m.format != CORPUS_FORMAT {
        return Err(CorpusError::Parse { file: file.to_string(), line: 1, msg: format!("unsupported format '{}'", m.format) });
    }
    Ok(m)
}

fn check_split(name: &str, utts: &[Utterance], vocab: &Vocabulary, spec: &CorpusSpec) -> Result<(), CorpusError> {
    for (i, u) in utts.iter().enumerate() {
        let fail = |msg: String| CorpusError::Parse { file: format!("{name}.jsonl"), line: i + 1, msg };
        if u.features.cols() != spec.feature_dim {
            return Err(fail(format!("feature width {} != feature_dim {}", u.features.cols(), spec.feature_dim)));
        }
        if let Some(&bad) = u.transcript.iter().find(|&&t| !vocab.contains(t) || vocab.is_special(t)) {
            return Err(fail(format!("token id {bad} is not a lexical vocabulary entry")));
        }
        if UttClass::of(vocab, &u.transcript) != Some(u.class) {
            return Err(fail(format!("class {:?} contradicts the transcript's languages", u.class)));
        }
    }
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let m = read_manifest(dir)?;
    let vocab = Vocabulary::from_tokens(m.vocabulary.clone())?;
    let load = |name: &str| -> Result<Vec<Utterance>, CorpusError> {
        let file = m.split(name).map_or_else(|| format!("{name}.jsonl"), |s| s.file.clone());
        let utts = read_split(&dir.join(file))?;
        check_split(name, &utts, &vocab, &m.spec)?;
        Ok(utts)
    };
    let train = load("train")?;
    let test_mono = load("test_mono")?;
    let test_cs = load("test_cs")?;
    let lm_text = read_text(&dir.join(&m.lm_text_file))?;
    Ok(Corpus { spec: m.spec, vocab, prototypes: m.prototypes, train, test_mono, test_cs, lm_text })
}
