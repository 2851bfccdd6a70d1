//! Sectioned text tensor files.
//!
//! ```text
//! [tensor encoder.input.weight 3 4]
//! 0.1 0.2 0.3 0.4
//! ...
//! ```
//!
//! Each section header names a tensor and its dimensions; the values that
//! follow, up to the next header, are read in row-major order. Whitespace
//! and line breaks between values are free-form. Lines starting with `;`
//! are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(m: &Array2<f64>) -> Self {
        Self {
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    pub fn from_vector(v: &Array1<f64>) -> Self {
        Self {
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            dims: vec![1],
            data: vec![x],
        }
    }
}

/// Named tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorMap {
    tensors: BTreeMap<String, Tensor>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn insert_matrix(&mut self, name: impl Into<String>, m: &Array2<f64>) {
        self.insert(name, Tensor::from_matrix(m));
    }

    pub fn insert_vector(&mut self, name: impl Into<String>, v: &Array1<f64>) {
        self.insert(name, Tensor::from_vector(v));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let t = self.get(name)?;
        match t.dims.as_slice() {
            &[r, c] => Ok(Array2::from_shape_vec((r, c), t.data.clone()).expect("validated at parse")),
            d => Err(Error::Shape(format!("`{name}` has dims {d:?}, expected a matrix"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        let t = self.get(name)?;
        match t.dims.as_slice() {
            &[_] => Ok(Array1::from_vec(t.data.clone())),
            d => Err(Error::Shape(format!("`{name}` has dims {d:?}, expected a vector"))),
        }
    }

    pub fn scalar_usize(&self, name: &str) -> Result<usize> {
        let v = self.vector(name)?;
        if v.len() != 1 || v[0] < 0.0 || v[0].fract() != 0.0 {
            return Err(Error::Shape(format!("`{name}` must be a single non-negative integer")));
        }
        Ok(v[0] as usize)
    }

    pub fn parse(text: &str) -> Result<Self> {
        const WHAT: &str = "tensor file";
        let mut map = TensorMap::new();
        let mut current: Option<(String, Vec<usize>, Vec<f64>, usize)> = None;

        let finish = |map: &mut TensorMap, cur: Option<(String, Vec<usize>, Vec<f64>, usize)>| -> Result<()> {
            if let Some((name, dims, data, line)) = cur {
                let expected: usize = dims.iter().product();
                if data.len() != expected {
                    return Err(Error::parse(
                        WHAT,
                        line,
                        format!("tensor `{name}` declares {expected} values, found {}", data.len()),
                    ));
                }
                if map.contains(&name) {
                    return Err(Error::parse(WHAT, line, format!("duplicate tensor `{name}`")));
                }
                map.insert(name, Tensor { dims, data });
            }
            Ok(())
        };

        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let inner = inner
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(WHAT, lineno, "unterminated section header"))?;
                let mut parts = inner.split_whitespace();
                if parts.next() != Some("tensor") {
                    return Err(Error::parse(WHAT, lineno, "expected `[tensor <name> <dims...>]`"));
                }
                let name = parts
                    .next()
                    .ok_or_else(|| Error::parse(WHAT, lineno, "missing tensor name"))?
                    .to_string();
                let dims = parts
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::parse(WHAT, lineno, format!("bad dimension: {e}")))?;
                if dims.is_empty() {
                    return Err(Error::parse(WHAT, lineno, "tensor needs at least one dimension"));
                }
                finish(&mut map, current.take())?;
                current = Some((name, dims, Vec::new(), lineno));
                continue;
            }
            let Some((_, _, data, _)) = current.as_mut() else {
                return Err(Error::parse(WHAT, lineno, "values before the first section header"));
            };
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(WHAT, lineno, format!("bad number `{tok}`")))?;
                data.push(v);
            }
        }
        finish(&mut map, current)?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes with one matrix row per line. Values use Rust's shortest
    /// round-trip formatting, so `parse(to_text())` is lossless.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.dims.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "[tensor {name} {}]", dims.join(" "));
            let row = *t.dims.last().unwrap_or(&1);
            for chunk in t.data.chunks(row.max(1)) {
                let vals: Vec<String> = chunk.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", vals.join(" "));
            }
        }
        out
    }
}
