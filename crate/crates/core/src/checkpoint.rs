//! Trained-model checkpoints: a small header followed by the output
//! embedding tables as little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::hex;
use crate::linalg::DenseMatrix;

const MAGIC: &[u8; 8] = b"GDECKPT\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Model family label, e.g. `gde` or `lightgcn`.
    pub model: String,
    /// The JSON configuration the model was trained with.
    pub config_json: String,
    pub user_output: DenseMatrix,
    pub item_output: DenseMatrix,
}

pub fn config_hash(config_json: &str) -> String {
    hex(&Sha256::digest(config_json.as_bytes()))
}

impl Checkpoint {
    pub fn new(model: &str, config_json: String, user_output: DenseMatrix, item_output: DenseMatrix) -> Result<Self> {
        if user_output.cols() != item_output.cols() {
            return Err(Error::input("user and item tables have different widths"));
        }
        Ok(Checkpoint {
            model: model.to_string(),
            config_json,
            user_output,
            item_output,
        })
    }

    pub fn users(&self) -> usize {
        self.user_output.rows()
    }

    pub fn items(&self) -> usize {
        self.item_output.rows()
    }

    pub fn dim(&self) -> usize {
        self.user_output.cols()
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config_json)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * (self.users() + self.items()) * self.dim());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.users(), self.items(), self.dim()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for s in [self.config_hash().as_str(), self.model.as_str(), self.config_json.as_str()] {
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for m in [&self.user_output, &self.item_output] {
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::input("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::input(format!("unsupported checkpoint version {version}")));
        }
        let users = r.u64()? as usize;
        let items = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let hash = r.string()?;
        let model = r.string()?;
        let config_json = r.string()?;
        if config_hash(&config_json) != hash {
            return Err(Error::input("checkpoint config hash does not match its config"));
        }
        let user_output = r.matrix(users, dim)?;
        let item_output = r.matrix(items, dim)?;
        if r.pos != bytes.len() {
            return Err(Error::input("trailing bytes after checkpoint payload"));
        }
        Ok(Checkpoint {
            model,
            config_json,
            user_output,
            item_output,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::input("truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::input("checkpoint string is not UTF-8"))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DenseMatrix> {
        let n = rows.checked_mul(cols).ok_or_else(|| Error::input("checkpoint shape overflows"))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::input("checkpoint shape overflows"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        DenseMatrix::from_vec(rows, cols, data)
    }
}
