use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"EXTREEMB";
pub const FORMAT_VERSION: u32 = 1;

/// Standard deviation of the random initialisation.
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingRole {
    Pretrain,
    Finetune,
    /// Fine-tuned half followed by the frozen pre-trained half.
    Concat,
}

impl EmbeddingRole {
    fn code(self) -> u8 {
        match self {
            EmbeddingRole::Pretrain => 0,
            EmbeddingRole::Finetune => 1,
            EmbeddingRole::Concat => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(EmbeddingRole::Pretrain),
            1 => Ok(EmbeddingRole::Finetune),
            2 => Ok(EmbeddingRole::Concat),
            other => Err(Error::Format(format!("unknown embedding role code {other}"))),
        }
    }
}

/// Row-major embeddings over the joint group-then-item node space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    rows: usize,
    dim: usize,
    role: EmbeddingRole,
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn zeros(rows: usize, dim: usize, role: EmbeddingRole) -> Self {
        EmbeddingTable {
            rows,
            dim,
            role,
            data: vec![T::zero(); rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, role: EmbeddingRole, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{dim} table",
                data.len()
            )));
        }
        Ok(EmbeddingTable { rows, dim, role, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn role(&self) -> EmbeddingRole {
        self.role
    }

    pub fn with_role(mut self, role: EmbeddingRole) -> Self {
        self.role = role;
        self
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-wise concatenation `left ∥ right`.
    pub fn concat(left: &Self, right: &Self) -> Result<Self> {
        if left.rows != right.rows {
            return Err(Error::Shape(format!(
                "cannot concatenate tables with {} and {} rows",
                left.rows, right.rows
            )));
        }
        let dim = left.dim + right.dim;
        let mut data = Vec::with_capacity(left.rows * dim);
        for i in 0..left.rows {
            data.extend_from_slice(left.row(i));
            data.extend_from_slice(right.row(i));
        }
        Ok(EmbeddingTable {
            rows: left.rows,
            dim,
            role: EmbeddingRole::Concat,
            data,
        })
    }

    /// Splits columns `[0, at)` and `[at, dim)` into two tables.
    pub fn split_cols(&self, at: usize, roles: (EmbeddingRole, EmbeddingRole)) -> Result<(Self, Self)> {
        if at > self.dim {
            return Err(Error::Shape(format!("split column {at} beyond dim {}", self.dim)));
        }
        let mut left = Self::zeros(self.rows, at, roles.0);
        let mut right = Self::zeros(self.rows, self.dim - at, roles.1);
        for i in 0..self.rows {
            let (a, b) = self.row(i).split_at(at);
            left.row_mut(i).copy_from_slice(a);
            right.row_mut(i).copy_from_slice(b);
        }
        Ok((left, right))
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingTable<U> {
        EmbeddingTable {
            rows: self.rows,
            dim: self.dim,
            role: self.role,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Binary layout: magic, version, rows, dim, role byte, then row-major
    /// little-endian `f32` values.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.rows as u32).to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&[self.role.code()])?;
        for &v in &self.data {
            out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let fmt_err = |e: std::io::Error| Error::Format(format!("truncated embedding file: {e}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(fmt_err)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an embedding file".into()));
        }
        let mut word = [0u8; 4];
        let mut next_u32 = |input: &mut R| -> Result<u32> {
            input.read_exact(&mut word).map_err(fmt_err)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = next_u32(&mut input)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported embedding format version {version}")));
        }
        let rows = next_u32(&mut input)? as usize;
        let dim = next_u32(&mut input)? as usize;
        let mut role = [0u8; 1];
        input.read_exact(&mut role).map_err(fmt_err)?;
        let role = EmbeddingRole::from_code(role[0])?;

        let mut bytes = vec![0u8; rows * dim * 4];
        input.read_exact(&mut bytes).map_err(fmt_err)?;
        if input.read(&mut [0u8; 1]).map_err(fmt_err)? != 0 {
            return Err(Error::Format("trailing bytes after embedding values".into()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Ok(EmbeddingTable { rows, dim, role, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.to_owned())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::read_from(BufReader::new(file))
    }
}

/// I.i.d. `N(0, 0.1²)` entries from a seeded ChaCha stream.
pub fn init_embeddings<T: Scalar>(n: usize, dim: usize, seed: u64, role: EmbeddingRole) -> Result<EmbeddingTable<T>> {
    if n == 0 || dim == 0 {
        return Err(Error::Shape(format!("cannot initialise a {n}x{dim} table")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal parameters");
    let data = (0..n * dim).map(|_| T::of(normal.sample(&mut rng))).collect();
    EmbeddingTable::from_vec(n, dim, role, data)
}
