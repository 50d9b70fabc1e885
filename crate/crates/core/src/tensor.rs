//! Dense row-major tensor of f64 values, shared by the encoder outputs and
//! the network engine, plus the on-disk dump format used for fixtures.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} does not match value count {values}")]
    ShapeMismatch { shape: Vec<usize>, values: usize },
    #[error("index {index:?} out of bounds for shape {shape:?}")]
    OutOfBounds { index: Vec<usize>, shape: Vec<usize> },
    #[error("tensor dump io: {0}")]
    Io(#[from] std::io::Error),
    #[error("tensor dump parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch { shape: shape.to_vec(), values: data.len() });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Flat offset of a (channel, row, col) triple for rank-3 tensors.
    #[inline]
    pub fn offset3(&self, c: usize, r: usize, col: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (c * self.shape[1] + r) * self.shape[2] + col
    }

    #[inline]
    pub fn at3(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[self.offset3(c, r, col)]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, r: usize, col: usize, v: f64) {
        let off = self.offset3(c, r, col);
        self.data[off] = v;
    }

    /// Write the dump format: one ASCII header line
    /// `tensor v1 <ndim> <d0> <d1> ... f32`, then the values row-major as
    /// little-endian f32.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        write!(w, "tensor v1 {}", self.shape.len())?;
        for d in &self.shape {
            write!(w, " {d}")?;
        }
        writeln!(w, " f32")?;
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_dump_file(&self, path: &Path) -> Result<(), TensorError> {
        let f = std::fs::File::create(path)?;
        self.write_dump(BufWriter::new(f))
    }

    pub fn read_dump<R: Read>(r: R) -> Result<Self, TensorError> {
        let mut r = BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() < 4 || parts[0] != "tensor" {
            return Err(TensorError::Parse("bad header".into()));
        }
        if parts[1] != "v1" {
            return Err(TensorError::Parse(format!("unsupported version {}", parts[1])));
        }
        let ndim: usize = parts[2]
            .parse()
            .map_err(|_| TensorError::Parse("bad ndim".into()))?;
        if parts.len() != 4 + ndim || parts[3 + ndim] != "f32" {
            return Err(TensorError::Parse("bad header field count".into()));
        }
        let mut shape = Vec::with_capacity(ndim);
        for p in &parts[3..3 + ndim] {
            shape.push(p.parse::<usize>().map_err(|_| TensorError::Parse("bad dim".into()))?);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        Ok(Self { shape, data })
    }

    pub fn read_dump_file(path: &Path) -> Result<Self, TensorError> {
        Self::read_dump(std::fs::File::open(path)?)
    }
}
