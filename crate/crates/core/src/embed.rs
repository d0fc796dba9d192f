//! Frozen content embeddings, their binary codec, deterministic stub
//! encoders, and the trainable item-ID table.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ItemVocab;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8] = b"TSRV1\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }
}

/// Vectors of one modality keyed by review or image id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    kind: Modality,
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(kind: Modality, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Codec("dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            kind,
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn kind(&self) -> Modality {
        self.kind
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

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Codec(format!(
                "vector `{id}` has {} components, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} vector `{id}`", self.kind.as_str())));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::Codec(format!("id of {} bytes is too long", id.len())));
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    /// Vector for `id` widened to `f64`.
    pub fn lookup(&self, id: &str) -> Result<Vec<f64>> {
        self.get(id)
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .ok_or_else(|| Error::MissingEmbedding {
                kind: self.kind.as_str(),
                id: id.to_string(),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Review-text and image vectors; the boundary to the frozen encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    pub text: EmbeddingTable,
    pub image: EmbeddingTable,
}

impl EmbeddingStore {
    pub fn new(text_dim: usize, image_dim: usize) -> Result<Self> {
        Ok(EmbeddingStore {
            text: EmbeddingTable::new(Modality::Text, text_dim)?,
            image: EmbeddingTable::new(Modality::Image, image_dim)?,
        })
    }

    pub fn text_dim(&self) -> usize {
        self.text.dim
    }

    pub fn image_dim(&self) -> usize {
        self.image.dim
    }

    pub fn load(text_path: &Path, image_path: &Path) -> Result<Self> {
        let text = read_embeddings(text_path)?;
        let image = read_embeddings(image_path)?;
        if text.kind != Modality::Text || image.kind != Modality::Image {
            return Err(Error::Codec("expected one text and one image file".into()));
        }
        Ok(EmbeddingStore { text, image })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: Modality,
    dim: usize,
    count: usize,
}

/// Encode a table: magic, one JSON header line, then `count` records of
/// `u16 LE id length | id bytes | dim x f32 LE`.
pub fn encode_embeddings<W: Write>(table: &EmbeddingTable, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    let header = Header {
        kind: table.kind,
        dim: table.dim,
        count: table.vectors.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (id, v) in &table.vectors {
        w.write_all(&(id.len() as u16).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn decode_embeddings<R: Read>(mut r: R) -> Result<EmbeddingTable> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Codec("truncated before magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Codec("bad magic".into()));
    }
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)
            .map_err(|_| Error::Codec("truncated header".into()))?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| Error::Codec(format!("header: {e}")))?;
    let mut table = EmbeddingTable::new(header.kind, header.dim)?;
    for rec in 0..header.count {
        let truncated = |what: &str| Error::Codec(format!("record {rec}: truncated {what}"));
        let mut len = [0u8; 2];
        r.read_exact(&mut len).map_err(|_| truncated("id length"))?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut id).map_err(|_| truncated("id"))?;
        let id = String::from_utf8(id).map_err(|_| Error::Codec(format!("record {rec}: id is not UTF-8")))?;
        let mut payload = vec![0u8; 4 * header.dim];
        r.read_exact(&mut payload).map_err(|_| truncated("vector"))?;
        let v = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        table.insert(id, v)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Codec("trailing bytes after last record".into()));
    }
    Ok(table)
}

pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_embeddings(table, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    decode_embeddings(BufReader::new(File::open(path)?))
}

/// Deterministic unit vector standing in for a pretrained encoder output.
/// The same `(kind, id, dim, seed)` always yields the same vector.
pub fn stub_encode(kind: Modality, id: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(kind.as_str().as_bytes());
    h.update([0u8]);
    h.update(id.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Trainable `|I| x d_i` item table, one row per vocabulary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct IdEmbeddingTable {
    pub table: Matrix,
}

impl IdEmbeddingTable {
    /// Uniform in `[-0.1, 0.1]`.
    pub fn init<R: Rng + ?Sized>(items: usize, dim: usize, rng: &mut R) -> Self {
        IdEmbeddingTable {
            table: Matrix::uniform(items, dim, 0.1, rng),
        }
    }

    /// `d_i x N` matrix whose column `n` is the row of `sequence[n]`.
    pub fn embed(&self, sequence: &[usize]) -> Result<Matrix> {
        id_embed(&self.table, sequence)
    }

    pub fn embed_ids(&self, vocab: &ItemVocab, sequence: &[&str]) -> Result<Matrix> {
        let idx = sequence
            .iter()
            .map(|s| vocab.try_index(s))
            .collect::<Result<Vec<_>>>()?;
        self.embed(&idx)
    }
}

pub fn id_embed(table: &Matrix, sequence: &[usize]) -> Result<Matrix> {
    let mut out = Matrix::zeros(table.cols(), sequence.len());
    for (n, &item) in sequence.iter().enumerate() {
        if item >= table.rows() {
            return Err(Error::UnknownItem(format!("#{item}")));
        }
        for (d, &v) in table.row(item).iter().enumerate() {
            out[(d, n)] = v;
        }
    }
    Ok(out)
}
