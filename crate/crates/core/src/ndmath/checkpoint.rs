//! Plain-text parameter container.
//!
//! ```text
//! micro-checkpoint 1
//! meta <key> <value>
//! tensor <name> <dims> <v0> <v1> ...
//! ```
//!
//! `<dims>` is a comma-separated list (`-` for a scalar). Values use Rust's
//! shortest round-trip float formatting, so `load(save(c)) == c` bit for bit.
//! Names and meta keys must not contain whitespace; meta values may not
//! contain newlines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::mlp::{Activation, Linear, Mlp};
use super::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &str = "micro-checkpoint 1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("checkpoint is missing meta entry `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)?.parse().map_err(|_| Error::invalid(format!("checkpoint meta `{key}` is malformed")))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        debug_assert!(!name.contains(char::is_whitespace));
        if let Some(slot) = self.tensors.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = t;
        } else {
            self.tensors.push((name, t));
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::invalid(format!("checkpoint is missing tensor `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn insert_mlp(&mut self, prefix: &str, mlp: &Mlp) {
        self.set_meta(&format!("{prefix}.activation"), activation_name(mlp.activation));
        for (i, l) in mlp.layers.iter().enumerate() {
            self.insert(format!("{prefix}.{i}.weight"), l.weight.clone());
            self.insert(format!("{prefix}.{i}.bias"), l.bias.clone());
        }
    }

    pub fn get_mlp(&self, prefix: &str) -> Result<Mlp> {
        let activation = match self.meta(&format!("{prefix}.activation"))? {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "identity" => Activation::Identity,
            other => return Err(Error::invalid(format!("unknown activation `{other}`"))),
        };
        let mut layers = Vec::new();
        while self.contains(&format!("{prefix}.{}.weight", layers.len())) {
            let i = layers.len();
            layers.push(Linear {
                weight: self.get(&format!("{prefix}.{i}.weight"))?.clone(),
                bias: self.get(&format!("{prefix}.{i}.bias"))?.clone(),
            });
        }
        if layers.is_empty() {
            return Err(Error::invalid(format!("checkpoint has no layers under `{prefix}`")));
        }
        Mlp::from_layers(layers, activation)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.tensors {
            let dims = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
            };
            let _ = write!(out, "tensor {name} {dims}");
            for v in t.data() {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == MAGIC => {}
            _ => return Err(parse_err(1, format!("expected header `{MAGIC}`"))),
        }
        let mut ckpt = Checkpoint::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| parse_err(lineno, "meta without key".into()))?;
                    let value = parts.next().unwrap_or("");
                    ckpt.meta.insert(key.to_string(), value.to_string());
                }
                Some("tensor") => {
                    let name = parts.next().ok_or_else(|| parse_err(lineno, "tensor without name".into()))?;
                    let rest = parts.next().unwrap_or("");
                    let mut fields = rest.split(' ');
                    let dims = fields.next().unwrap_or("");
                    let shape: Vec<usize> = if dims == "-" {
                        Vec::new()
                    } else {
                        dims.split(',')
                            .map(|d| d.parse().map_err(|_| parse_err(lineno, format!("bad dimension `{d}`"))))
                            .collect::<Result<_>>()?
                    };
                    let data: Vec<f64> = fields
                        .filter(|f| !f.is_empty())
                        .map(|f| f.parse().map_err(|_| parse_err(lineno, format!("bad value `{f}`"))))
                        .collect::<Result<_>>()?;
                    let t = Tensor::new(shape, data).map_err(|e| parse_err(lineno, e.to_string()))?;
                    ckpt.tensors.push((name.to_string(), t));
                }
                _ => return Err(parse_err(lineno, "expected `meta` or `tensor` record".into())),
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
        Activation::Identity => "identity",
    }
}
