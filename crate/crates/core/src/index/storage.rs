//! On-disk layout of an index directory:
//!
//! ```text
//! manifest.json    format version, normalization config, provider, dim, counts
//! vocab.tsv        <id>\t<surface>
//! vectors.f32      JSON header line {dim,count,provider} + little-endian f32 rows
//! postings.bin     "MKBP", then per entity: LEB128 length, LEB128 deltas of
//!                  (relation_slot << 1 | position - 1)
//! relations.jsonl  one canonical relation per line, in slot order
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{IndexError, KbIndex, Manifest, Posting, Vocabulary, FORMAT_VERSION};
use crate::embed::{read_matrix, write_matrix, MatrixHeader};
use crate::ingest::read_relations;
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const VECTORS_FILE: &str = "vectors.f32";
pub const POSTINGS_FILE: &str = "postings.bin";
pub const RELATIONS_FILE: &str = "relations.jsonl";

const POSTINGS_MAGIC: &[u8; 4] = b"MKBP";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn read_varint(bytes: &[u8], pos: &mut usize) -> Option<u64> {
    let mut value = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *bytes.get(*pos)?;
        *pos += 1;
        value |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Some(value);
        }
    }
    None
}

fn encode_postings(lists: &[Vec<Posting>]) -> Vec<u8> {
    let mut out = POSTINGS_MAGIC.to_vec();
    write_varint(&mut out, lists.len() as u64);
    for list in lists {
        let mut codes: Vec<u64> = list.iter().map(|p| p.encode()).collect();
        codes.sort_unstable();
        write_varint(&mut out, codes.len() as u64);
        let mut prev = 0;
        for c in codes {
            write_varint(&mut out, c - prev);
            prev = c;
        }
    }
    out
}

fn decode_postings(bytes: &[u8]) -> Result<Vec<Vec<Posting>>, IndexError> {
    let corrupt = || IndexError::Format("truncated or invalid postings.bin".into());
    if !bytes.starts_with(POSTINGS_MAGIC) {
        return Err(IndexError::Format("postings.bin has no magic".into()));
    }
    let mut pos = POSTINGS_MAGIC.len();
    let lists = read_varint(bytes, &mut pos).ok_or_else(corrupt)?;
    let mut out = Vec::with_capacity(lists.min(1 << 24) as usize);
    for _ in 0..lists {
        let len = read_varint(bytes, &mut pos).ok_or_else(corrupt)?;
        let mut list = Vec::with_capacity(len.min(1 << 20) as usize);
        let mut code = 0u64;
        for _ in 0..len {
            code = code
                .checked_add(read_varint(bytes, &mut pos).ok_or_else(corrupt)?)
                .ok_or_else(corrupt)?;
            list.push(Posting::decode(code).ok_or_else(corrupt)?);
        }
        out.push(list);
    }
    if pos != bytes.len() {
        return Err(corrupt());
    }
    Ok(out)
}

fn write_files<S: Scalar>(index: &KbIndex<S>, dir: &Path) -> Result<(), IndexError> {
    let path = dir.join(MANIFEST_FILE);
    let mut manifest = serde_json::to_vec_pretty(index.manifest())
        .map_err(|e| IndexError::Format(e.to_string()))?;
    manifest.push(b'\n');
    fs::write(&path, manifest).map_err(io_err(&path))?;

    let path = dir.join(VOCAB_FILE);
    let mut vocab = String::new();
    for (id, surface) in index.vocabulary().surfaces().iter().enumerate() {
        vocab.push_str(&format!("{id}\t{surface}\n"));
    }
    fs::write(&path, vocab).map_err(io_err(&path))?;

    let path = dir.join(VECTORS_FILE);
    let file = File::create(&path).map_err(io_err(&path))?;
    write_matrix(
        BufWriter::new(file),
        &MatrixHeader {
            dim: index.dim(),
            count: index.vocabulary().len(),
            provider: index.manifest().provider.clone(),
        },
        &index.vectors,
    )
    .map_err(io_err(&path))?;

    let path = dir.join(POSTINGS_FILE);
    fs::write(&path, encode_postings(&index.postings)).map_err(io_err(&path))?;

    let path = dir.join(RELATIONS_FILE);
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut out = BufWriter::new(file);
    for rel in index.relations() {
        serde_json::to_writer(&mut out, rel).map_err(|e| IndexError::Format(e.to_string()))?;
        out.write_all(b"\n").map_err(io_err(&path))?;
    }
    out.flush().map_err(io_err(&path))?;
    Ok(())
}

fn staging_dir(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "index".into());
    dir.with_file_name(format!(".{name}.staging-{}", std::process::id()))
}

/// Write `index` into `dir` atomically: files go to a sibling staging
/// directory that is renamed into place only when complete. An existing
/// `dir` is replaced only when `force` is set.
pub fn write_index_dir<S: Scalar>(index: &KbIndex<S>, dir: &Path, force: bool) -> Result<(), IndexError> {
    if dir.exists() && !force {
        return Err(IndexError::AlreadyExists(dir.display().to_string()));
    }
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let staging = staging_dir(dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    fs::create_dir(&staging).map_err(io_err(&staging))?;
    if let Err(e) = write_files(index, &staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::rename(&staging, dir).map_err(io_err(dir))
}

fn read_vocab(path: &Path) -> Result<Vocabulary, IndexError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut vocab = Vocabulary::default();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let Some((id, surface)) = line.split_once('\t') else {
            return Err(IndexError::Format(format!("vocab.tsv line {}: no tab", n + 1)));
        };
        if id.parse::<usize>().ok() != Some(n) || vocab.intern(surface) as usize != n {
            return Err(IndexError::Format(format!(
                "vocab.tsv line {}: ids must be dense and surfaces unique",
                n + 1
            )));
        }
    }
    Ok(vocab)
}

/// Load and verify an index directory.
pub fn load_index<S: Scalar>(dir: &Path) -> Result<KbIndex<S>, IndexError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| IndexError::Format(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(IndexError::Format(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }

    let vocab = read_vocab(&dir.join(VOCAB_FILE))?;

    let path = dir.join(VECTORS_FILE);
    let file = File::open(&path).map_err(io_err(&path))?;
    let (header, vectors) = read_matrix::<S, _>(BufReader::new(file)).map_err(io_err(&path))?;
    if header.dim != manifest.dim
        || header.count != vocab.len()
        || header.provider != manifest.provider
    {
        return Err(IndexError::Format(format!(
            "vectors.f32 header {header:?} disagrees with manifest/vocabulary"
        )));
    }

    let path = dir.join(POSTINGS_FILE);
    let mut bytes = Vec::new();
    File::open(&path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(&path))?;
    let postings = decode_postings(&bytes)?;

    let path = dir.join(RELATIONS_FILE);
    let file = File::open(&path).map_err(io_err(&path))?;
    let relations = read_relations(BufReader::new(file))
        .map_err(|e| IndexError::Format(format!("relations.jsonl {e}")))?;

    KbIndex::from_parts(vocab, vectors, postings, relations, manifest)
}
