//! Emission matrices as NPY files with a vocabulary sidecar, JSON-lines
//! dataset manifests, and plain-text corpora.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::decoder::{EmissionError, EmissionMatrix};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const VOCAB_HEADER: &str = "# natural-log probabilities; one emission column per line";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not an NPY file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported NPY version {major}.{minor}, only 1.0 is read")]
    UnsupportedVersion { major: u8, minor: u8 },
    #[error("unsupported dtype {0:?}, expected '<f4'")]
    UnsupportedDtype(String),
    #[error("Fortran-ordered arrays are not supported")]
    UnsupportedLayout,
    #[error("malformed NPY header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("row {row} is not normalized (log-sum-exp {log_sum})")]
    UnnormalizedRows { row: usize, log_sum: f64 },
    #[error("invalid vocabulary sidecar: {0}")]
    InvalidVocab(String),
    #[error("manifest line {line}: missing field {field:?}")]
    MissingField { line: usize, field: &'static str },
    #[error("manifest line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
}

impl From<EmissionError> for IoError {
    fn from(e: EmissionError) -> Self {
        match e {
            EmissionError::ShapeMismatch { expected, found } => IoError::ShapeMismatch {
                expected: format!("{expected} values"),
                found: format!("{found} values"),
            },
            EmissionError::InvalidVocab(reason) => IoError::InvalidVocab(reason),
            EmissionError::UnnormalizedRows { row, log_sum } => {
                IoError::UnnormalizedRows { row, log_sum }
            }
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a little-endian float32 C-order 2-D array as NPY 1.0.
pub fn write_npy<W: Write>(mut out: W, data: &[f32], rows: usize, cols: usize) -> std::io::Result<()> {
    assert_eq!(data.len(), rows * cols, "data does not match shape");
    let mut header = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({rows}, {cols}), }}"
    );
    let unpadded = MAGIC.len() + 4 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    out.write_all(MAGIC)?;
    out.write_all(&[1, 0])?;
    out.write_all(&(header.len() as u16).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    for x in data {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a 2-D NPY 1.0 float32 array, returning `(data, rows, cols)`.
pub fn read_npy<R: Read>(mut src: R) -> Result<(Vec<f32>, usize, usize), IoError> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes).map_err(io_err(Path::new("<npy>")))?;
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(IoError::BadMagic);
    }
    if (bytes[6], bytes[7]) != (1, 0) {
        return Err(IoError::UnsupportedVersion {
            major: bytes[6],
            minor: bytes[7],
        });
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body = 10 + header_len;
    if bytes.len() < body {
        return Err(IoError::MalformedHeader {
            offset: bytes.len(),
            reason: "file ends inside the header".into(),
        });
    }
    let header = std::str::from_utf8(&bytes[10..body]).map_err(|e| IoError::MalformedHeader {
        offset: 10 + e.valid_up_to(),
        reason: "header is not valid text".into(),
    })?;
    let (descr, fortran, shape) = parse_header(header)?;
    if descr != "<f4" {
        return Err(IoError::UnsupportedDtype(descr));
    }
    if fortran {
        return Err(IoError::UnsupportedLayout);
    }
    let [rows, cols] = shape[..] else {
        return Err(IoError::ShapeMismatch {
            expected: "a 2-D array".into(),
            found: format!("{}-D", shape.len()),
        });
    };
    let payload = &bytes[body..];
    if payload.len() != rows * cols * 4 {
        return Err(IoError::ShapeMismatch {
            expected: format!("{} payload bytes for ({rows}, {cols})", rows * cols * 4),
            found: format!("{} bytes", payload.len()),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((data, rows, cols))
}

fn parse_header(header: &str) -> Result<(String, bool, Vec<usize>), IoError> {
    let bad = |at: &str, reason: &str| IoError::MalformedHeader {
        offset: 10 + header.find(at).unwrap_or(0),
        reason: reason.to_string(),
    };
    let value_after = |key: &str| -> Result<&str, IoError> {
        let pattern = format!("'{key}':");
        let at = header
            .find(&pattern)
            .ok_or_else(|| bad("", &format!("missing key {key:?}")))?;
        Ok(header[at + pattern.len()..].trim_start())
    };
    let descr = value_after("descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|d| d.split_once('\''))
        .map(|(d, _)| d.to_string())
        .ok_or_else(|| bad("'descr'", "descr is not a quoted string"))?;
    let fortran = value_after("fortran_order")?;
    let fortran = if fortran.starts_with("False") {
        false
    } else if fortran.starts_with("True") {
        true
    } else {
        return Err(bad("'fortran_order'", "fortran_order is not a boolean"));
    };
    let shape = value_after("shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split_once(')'))
        .map(|(s, _)| s)
        .ok_or_else(|| bad("'shape'", "shape is not a tuple"))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad("'shape'", "shape entries must be integers"))?;
    Ok((descr, fortran, shape))
}

/// Path of the vocabulary sidecar of an emission file.
pub fn vocab_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".vocab");
    PathBuf::from(p)
}

/// Symbols one per line; a first line starting with `# ` is a comment.
pub fn read_vocab<R: BufRead>(src: R) -> Result<Vec<String>, IoError> {
    let mut vocab = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let line = line.map_err(io_err(Path::new("<vocab>")))?;
        if i == 0 && line.starts_with("# ") {
            continue;
        }
        if line.is_empty() {
            return Err(IoError::InvalidVocab(format!("empty symbol at line {}", i + 1)));
        }
        vocab.push(line);
    }
    Ok(vocab)
}

pub fn write_vocab<W: Write>(mut out: W, vocab: &[String]) -> std::io::Result<()> {
    writeln!(out, "{VOCAB_HEADER}")?;
    for s in vocab {
        writeln!(out, "{s}")?;
    }
    Ok(())
}

/// Reads `path` and its `.vocab` sidecar and checks row normalization.
pub fn read_emissions(path: &Path) -> Result<EmissionMatrix, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let (data, rows, cols) = read_npy(BufReader::new(file))?;
    let vp = vocab_path(path);
    let vocab = read_vocab(BufReader::new(File::open(&vp).map_err(io_err(&vp))?))?;
    if vocab.len() != cols {
        return Err(IoError::ShapeMismatch {
            expected: format!("{cols} vocabulary entries"),
            found: format!("{}", vocab.len()),
        });
    }
    Ok(EmissionMatrix::new(data, rows, vocab)?)
}

pub fn write_emissions(matrix: &EmissionMatrix, path: &Path) -> Result<(), IoError> {
    let write = |p: &Path, f: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| {
        let mut out = BufWriter::new(File::create(p).map_err(io_err(p))?);
        f(&mut out).and_then(|_| out.flush()).map_err(io_err(p))
    };
    write(path, &|out| {
        write_npy(out, matrix.data(), matrix.frames(), matrix.symbols())
    })?;
    write(&vocab_path(path), &|out| write_vocab(out, matrix.vocab()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    /// Resolved against the manifest's directory.
    pub emissions: PathBuf,
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub items: Vec<ManifestItem>,
}

/// Loads a JSON-lines manifest with `id`, `emissions` and an optional
/// `reference`. A reference of the form `@file` is read from that file.
/// Relative paths are taken from the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IoError> {
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let file = File::open(path).map_err(io_err(path))?;
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| IoError::MalformedManifest {
            line: n,
            reason: e.to_string(),
        })?;
        let field = |name: &'static str| -> Result<Option<String>, IoError> {
            match value.get(name) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(IoError::MalformedManifest {
                    line: n,
                    reason: format!("field {name:?} must be a string"),
                }),
            }
        };
        let id = field("id")?.ok_or(IoError::MissingField { line: n, field: "id" })?;
        let emissions = field("emissions")?.ok_or(IoError::MissingField {
            line: n,
            field: "emissions",
        })?;
        let reference = match field("reference")? {
            Some(r) => match r.strip_prefix('@') {
                Some(file) => {
                    let p = base.join(file);
                    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
                    Some(text.strip_suffix('\n').unwrap_or(&text).to_string())
                }
                None => Some(r),
            },
            None => None,
        };
        if !seen.insert(id.clone()) {
            return Err(IoError::DuplicateId { line: n, id });
        }
        items.push(ManifestItem {
            id,
            emissions: base.join(emissions),
            reference,
        });
    }
    Ok(DatasetManifest { items })
}

/// Writes one JSON object per item; emission paths are written as given.
pub fn write_manifest<W: Write>(mut out: W, items: &[ManifestItem]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Non-empty lines of a UTF-8 text file, trailing carriage returns removed.
pub fn read_lines(path: &Path) -> Result<Vec<String>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .filter(|l| !l.is_empty())
        .collect())
}
