//! Word vectors in the plain text format (`<token> <f1> ... <fdim>` per line).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Environment variable consulted when no explicit embedding path is given.
pub const EMBEDDINGS_ENV: &str = "FSEC_EMB_PATH";

pub const DEFAULT_DIM: usize = 300;

/// Token → vector map with a total lookup: unknown tokens map to the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    oov: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
            oov: vec![0.0; dim],
        })
    }

    /// Builds a table from `(token, vector)` pairs; the first occurrence of a
    /// (lowercased) token wins.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut table = Self::new(dim)?;
        for (token, vector) in entries {
            table.insert(token.as_ref(), vector)?;
        }
        Ok(table)
    }

    /// Inserts unless the token is already present. Returns whether it was inserted.
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                left: vector.len(),
                right: self.dim,
            });
        }
        let key = token.to_lowercase();
        if self.vectors.contains_key(&key) {
            return Ok(false);
        }
        self.vectors.insert(key, vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(&token.to_lowercase())
    }

    /// Case-insensitive lookup; OOV tokens get the zero vector.
    pub fn lookup(&self, token: &str) -> &[f64] {
        match self.vectors.get(token) {
            Some(v) => v,
            None => self
                .vectors
                .get(&token.to_lowercase())
                .map(Vec::as_slice)
                .unwrap_or(&self.oov),
        }
    }

    pub fn oov_vector(&self) -> &[f64] {
        &self.oov
    }
}

fn is_header(line: &str) -> bool {
    let fields: Vec<&str> = line.split_whitespace().collect();
    fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok())
}

pub fn read_table<R: BufRead>(reader: R, dim: usize, source_name: &str) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(dim)?;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() || (lineno == 0 && is_header(line)) {
            continue;
        }
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: lineno + 1,
            message,
        };
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let token = fields.next().unwrap_or_default();
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| err(format!("bad float `{f}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(err(format!(
                "expected {dim} floats, found {}",
                values.len()
            )));
        }
        table.insert(token, values)?;
    }
    Ok(table)
}

pub fn load_table(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    read_table(
        BufReader::new(File::open(path)?),
        dim,
        &path.display().to_string(),
    )
}

/// Explicit path if given, else `$FSEC_EMB_PATH`.
pub fn resolve_path(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(EMBEDDINGS_ENV).map(PathBuf::from))
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(l2(a, b))
}

/// Unchecked Euclidean distance; callers guarantee equal lengths.
pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
