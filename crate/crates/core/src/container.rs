//! Versioned text container for fitted parameters.
//!
//! ```text
//! shiftscope-container 1
//! kind <kind>
//! attr <key> <value...>
//! block <name> <rows> <cols>
//! <cols values>            (one line per row, row-major)
//! end
//! ```
//!
//! Values are written in shortest round-trip exponent form, so reading a
//! file back reproduces every `f64` bit for bit. Attribute and block order is
//! preserved.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub const MAGIC: &str = "shiftscope-container";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

impl Block {
    pub fn from_matrix(name: impl Into<String>, m: &DMatrix<f64>) -> Self {
        let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        Block {
            name: name.into(),
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn from_vector(name: impl Into<String>, v: &DVector<f64>) -> Self {
        Block {
            name: name.into(),
            rows: 1,
            cols: v.len(),
            data: v.iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        if self.rows != 1 {
            return Err(Error::Format {
                path: PathBuf::new(),
                message: format!("block {} is not a row vector", self.name),
            });
        }
        Ok(DVector::from_column_slice(&self.data))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    attrs: Vec<(String, String)>,
    blocks: Vec<Block>,
    origin: Option<PathBuf>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Container {
            kind: kind.into(),
            attrs: Vec::new(),
            blocks: Vec::new(),
            origin: None,
        }
    }

    pub fn set_attr(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.attrs.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.attrs.push((key, value)),
        }
    }

    pub fn push_block(&mut self, block: Block) {
        self.blocks.push(block);
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub(crate) fn format_error(&self, message: String) -> Error {
        Error::Format {
            path: self.origin.clone().unwrap_or_default(),
            message,
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(self.format_error(format!(
                "expected a '{kind}' container, found '{}'",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn attr(&self, key: &str) -> Result<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| self.format_error(format!("missing attribute '{key}'")))
    }

    pub fn parse_attr<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.attr(key)?;
        raw.parse()
            .map_err(|_| self.format_error(format!("attribute '{key}' has bad value '{raw}'")))
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| self.format_error(format!("missing block '{name}'")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = parse(&text).map_err(|(line, message)| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })?;
        c.origin = Some(path.to_path_buf());
        Ok(c)
    }
}

impl fmt::Display for Container {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{MAGIC} {FORMAT_VERSION}")?;
        writeln!(f, "kind {}", self.kind)?;
        for (k, v) in &self.attrs {
            writeln!(f, "attr {k} {v}")?;
        }
        for b in &self.blocks {
            writeln!(f, "block {} {} {}", b.name, b.rows, b.cols)?;
            for r in 0..b.rows {
                let row = &b.data[r * b.cols..(r + 1) * b.cols];
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(f, "{}", line.join(" "))?;
            }
        }
        writeln!(f, "end")
    }
}

impl FromStr for Container {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse(s).map_err(|(line, message)| Error::Parse {
            path: PathBuf::new(),
            line,
            message,
        })
    }
}

fn parse(text: &str) -> std::result::Result<Container, (usize, String)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, header) = lines.next().ok_or((1, "empty container".to_string()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err((n, format!("missing '{MAGIC}' header")));
    }
    match parts.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err((n, format!("unsupported container version {v}"))),
        None => return Err((n, "missing container version".into())),
    }
    let (n, kind_line) = lines.next().ok_or((n + 1, "missing kind line".to_string()))?;
    let kind = kind_line
        .strip_prefix("kind ")
        .ok_or((n, "expected 'kind <name>'".to_string()))?
        .trim()
        .to_string();
    let mut c = Container::new(kind);
    let mut saw_end = false;
    while let Some((n, line)) = lines.next() {
        if line == "end" {
            saw_end = true;
            break;
        }
        if let Some(rest) = line.strip_prefix("attr ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            c.attrs.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("block ") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 3 {
                return Err((n, "expected 'block <name> <rows> <cols>'".into()));
            }
            let rows: usize = fields[1].parse().map_err(|_| (n, "bad row count".to_string()))?;
            let cols: usize = fields[2].parse().map_err(|_| (n, "bad column count".to_string()))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (rn, row) = lines.next().ok_or((n, "truncated block".to_string()))?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    data.push(
                        tok.parse::<f64>()
                            .map_err(|_| (rn, format!("bad number '{tok}'")))?,
                    );
                }
                if data.len() - before != cols {
                    return Err((rn, format!("expected {cols} values, found {}", data.len() - before)));
                }
            }
            c.blocks.push(Block {
                name: fields[0].to_string(),
                rows,
                cols,
                data,
            });
        } else if !line.trim().is_empty() {
            return Err((n, format!("unexpected line '{line}'")));
        }
    }
    if !saw_end {
        return Err((text.lines().count(), "missing 'end' marker".into()));
    }
    Ok(c)
}
