//! Named parameter tensors, the Adam optimiser and the checkpoint format.
//!
//! A checkpoint is two files sharing a stem:
//!
//! * `<stem>.idx`: text index, one line per tensor: `name rows cols offset`
//!   where `offset` counts f64 values from the start of the binary file;
//! * `<stem>.bin`: all tensor data, row-major, little-endian f64.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// An ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor and returns its index.
    pub fn push(&mut self, tensor: ParamTensor) -> usize {
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn get(&self, idx: usize) -> &ParamTensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut ParamTensor {
        &mut self.tensors[idx]
    }

    pub fn find(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    /// Zero-filled gradient buffers matching every tensor.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    /// Flat view helpers for finite-difference checks.
    pub fn scalar(&self, flat: usize) -> f64 {
        let (t, i) = self.locate(flat);
        self.tensors[t].data[i]
    }

    pub fn set_scalar(&mut self, flat: usize, value: f64) {
        let (t, i) = self.locate(flat);
        self.tensors[t].data[i] = value;
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if flat < tensor.len() {
                return (t, flat);
            }
            flat -= tensor.len();
        }
        panic!("flat parameter index out of range");
    }

    /// Copies values from `other`, matching tensors by position; names and
    /// shapes must agree.
    pub fn assign(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model has {}",
                other.len(),
                self.len()
            )));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.name != src.name || dst.rows != src.rows || dst.cols != src.cols {
                return Err(Error::Shape(format!(
                    "tensor {} ({}x{}) does not match {} ({}x{})",
                    dst.name, dst.rows, dst.cols, src.name, src.rows, src.cols
                )));
            }
            dst.data.clone_from(&src.data);
        }
        Ok(())
    }

    /// Concatenation of several sets with name prefixes.
    pub fn merged(parts: &[(&str, &ParamSet)]) -> ParamSet {
        let mut out = ParamSet::new();
        for (prefix, set) in parts {
            for t in set.tensors() {
                out.push(ParamTensor {
                    name: format!("{prefix}{}", t.name),
                    ..t.clone()
                });
            }
        }
        out
    }

    /// Tensors whose name starts with `prefix`, prefix stripped.
    pub fn extract(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        for t in &self.tensors {
            if let Some(rest) = t.name.strip_prefix(prefix) {
                out.push(ParamTensor {
                    name: rest.to_owned(),
                    ..t.clone()
                });
            }
        }
        out
    }

    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let (idx_path, bin_path) = checkpoint_paths(stem.as_ref());
        let mut index = String::from("# name rows cols offset\n");
        let mut bytes = Vec::with_capacity(self.num_scalars() * 8);
        let mut offset = 0;
        for t in &self.tensors {
            if t.name.contains(char::is_whitespace) {
                return Err(Error::invalid("tensor name", format!("`{}` contains whitespace", t.name)));
            }
            let _ = writeln!(index, "{} {} {} {}", t.name, t.rows, t.cols, offset);
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            offset += t.len();
        }
        text::write_file(&idx_path, &index)?;
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let (idx_path, bin_path) = checkpoint_paths(stem.as_ref());
        let ctx = idx_path.display().to_string();
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::parse(&ctx, 0, "binary length is not a multiple of 8"));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut set = ParamSet::new();
        for (line, tokens) in text::read_records(&idx_path)? {
            if tokens.len() != 4 {
                return Err(Error::parse(&ctx, line, "expected `name rows cols offset`"));
            }
            let dims: Vec<usize> = text::parse_tokens(&ctx, line, &tokens[1..], None)?;
            let (rows, cols, offset) = (dims[0], dims[1], dims[2]);
            let end = offset + rows * cols;
            if end > values.len() {
                return Err(Error::parse(&ctx, line, "tensor extends past the binary file"));
            }
            set.push(ParamTensor {
                name: tokens[0].clone(),
                rows,
                cols,
                data: values[offset..end].to_vec(),
            });
        }
        Ok(set)
    }
}

fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("idx"), stem.with_extension("bin"))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Descends along `grads` (pass negated gradients to ascend).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        if self.m.is_empty() {
            self.m = params.zero_grads();
            self.v = params.zero_grads();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in tensor.data.iter_mut().enumerate() {
                let g = grads[k][i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
