//! Binary sample matrices and their text formats.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subset::MAX_VARS;

/// Where a sample set came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Synthetic { target_id: u64 },
    File { path: String },
    Model,
    Unknown,
}

impl Source {
    fn to_header(&self) -> String {
        match self {
            Source::Synthetic { target_id } => format!("synthetic:{target_id}"),
            Source::File { path } => format!("file:{path}"),
            Source::Model => "model".into(),
            Source::Unknown => "unknown".into(),
        }
    }

    fn from_header(s: &str) -> Result<Self> {
        if let Some(id) = s.strip_prefix("synthetic:") {
            let target_id = id
                .parse()
                .map_err(|_| Error::Parse(format!("bad target id in source \"{s}\"")))?;
            return Ok(Source::Synthetic { target_id });
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Source::File { path: path.into() });
        }
        match s {
            "model" => Ok(Source::Model),
            "unknown" => Ok(Source::Unknown),
            _ => Err(Error::Parse(format!("unrecognised source \"{s}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: Option<u64>,
    pub source: Source,
}

impl Default for SampleMeta {
    fn default() -> Self {
        SampleMeta {
            seed: None,
            source: Source::Unknown,
        }
    }
}

/// `N` rows of `n` binary values, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n: usize,
    bits: Vec<u8>,
    pub meta: SampleMeta,
}

impl SampleSet {
    pub fn from_rows(n: usize, rows: &[Vec<u8>], meta: SampleMeta) -> Result<Self> {
        let mut bits = Vec::with_capacity(n * rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::Parse(format!(
                    "row {} has {} values, expected {n}",
                    i + 1,
                    r.len()
                )));
            }
            bits.extend_from_slice(r);
        }
        SampleSet::from_flat(n, bits, meta)
    }

    pub fn from_flat(n: usize, bits: Vec<u8>, meta: SampleMeta) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parse("rows must have at least one column".into()));
        }
        if bits.len() % n != 0 {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bits.len() % n,
            });
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::Parse(format!(
                "non-binary value {} in row {}",
                bits[pos],
                pos / n + 1
            )));
        }
        Ok(SampleSet { n, bits, meta })
    }

    /// Rows given as state masks (bit `i - 1` is `x_i`).
    pub fn from_masks(n: usize, masks: &[usize], meta: SampleMeta) -> Self {
        let mut bits = Vec::with_capacity(n * masks.len());
        for &m in masks {
            bits.extend((0..n).map(|i| (m >> i & 1) as u8));
        }
        SampleSet { n, bits, meta }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.bits.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.bits[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.bits.chunks_exact(self.n)
    }

    pub fn as_flat(&self) -> &[u8] {
        &self.bits
    }

    pub fn masks(&self) -> Result<Vec<usize>> {
        if self.n > MAX_VARS {
            return Err(Error::CapExceeded {
                n: self.n,
                cap: MAX_VARS,
            });
        }
        Ok(self.rows().map(crate::subset::bits_to_mask).collect())
    }

    /// State counts over all `2^n` states.
    pub fn counts(&self) -> Result<Vec<u64>> {
        let mut c = vec![0u64; 1 << self.n.min(MAX_VARS)];
        for m in self.masks()? {
            c[m] += 1;
        }
        Ok(c)
    }

    /// Rows packed into `u64` words, `ceil(n / 64)` words per row.
    pub fn packed(&self) -> (usize, Vec<u64>) {
        let words = self.n.div_ceil(64);
        let mut out = vec![0u64; words * self.len()];
        for (r, row) in self.rows().enumerate() {
            for (i, &b) in row.iter().enumerate() {
                out[r * words + i / 64] |= (b as u64) << (i % 64);
            }
        }
        (words, out)
    }

    /// `⟨x_i⟩` over the rows.
    pub fn first_moments(&self) -> Vec<f64> {
        let mut s = vec![0u64; self.n];
        for row in self.rows() {
            for (acc, &b) in s.iter_mut().zip(row) {
                *acc += b as u64;
            }
        }
        let norm = self.len().max(1) as f64;
        s.into_iter().map(|c| c as f64 / norm).collect()
    }

    /// `⟨x_i x_j⟩` as a row-major `n × n` matrix (diagonal holds `⟨x_i⟩`).
    pub fn second_moments(&self) -> Vec<f64> {
        let n = self.n;
        let mut s = vec![0u64; n * n];
        let mut on = Vec::with_capacity(n);
        for row in self.rows() {
            on.clear();
            on.extend(
                row.iter()
                    .enumerate()
                    .filter(|(_, &b)| b == 1)
                    .map(|(i, _)| i),
            );
            for &i in &on {
                for &j in &on {
                    s[i * n + j] += 1;
                }
            }
        }
        let norm = self.len().max(1) as f64;
        s.into_iter().map(|c| c as f64 / norm).collect()
    }

    /// One `0`/`1` string per row, preceded by `#` metadata lines.
    pub fn to_lines01(&self) -> String {
        let mut out = String::with_capacity(self.bits.len() + self.len() + 64);
        let _ = writeln!(out, "# n={}", self.n);
        if let Some(seed) = self.meta.seed {
            let _ = writeln!(out, "# seed={seed}");
        }
        let _ = writeln!(out, "# source={}", self.meta.source.to_header());
        for row in self.rows() {
            out.extend(row.iter().map(|&b| (b'0' + b) as char));
            out.push('\n');
        }
        out
    }

    /// Parses the `lines01` format. Metadata lines are optional; `source`
    /// is used when the text carries none.
    pub fn from_lines01(text: &str, source: Source) -> Result<Self> {
        let mut meta = SampleMeta { seed: None, source };
        let mut n: Option<usize> = None;
        let mut bits = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some((key, value)) = comment.split_once('=') {
                    match key.trim() {
                        "n" => {
                            n =
                                Some(value.trim().parse().map_err(|_| {
                                    Error::Parse(format!("line {}: bad n", lineno + 1))
                                })?)
                        }
                        "seed" => {
                            meta.seed = Some(value.trim().parse().map_err(|_| {
                                Error::Parse(format!("line {}: bad seed", lineno + 1))
                            })?)
                        }
                        "source" => meta.source = Source::from_header(value.trim())?,
                        _ => {}
                    }
                }
                continue;
            }
            let width = *n.get_or_insert(line.len());
            if line.len() != width {
                return Err(Error::Parse(format!(
                    "line {}: row has {} values, expected {width}",
                    lineno + 1,
                    line.len()
                )));
            }
            for c in line.bytes() {
                match c {
                    b'0' | b'1' => bits.push(c - b'0'),
                    _ => {
                        return Err(Error::Parse(format!(
                            "line {}: non-binary character '{}'",
                            lineno + 1,
                            c as char
                        )))
                    }
                }
            }
        }
        let n = n.ok_or_else(|| Error::Parse("no rows and no n= header".into()))?;
        SampleSet::from_flat(n, bits, meta)
    }

    /// Parses comma-separated `0`/`1` cells, one row per line.
    pub fn from_csv(text: &str, source: Source) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut n: Option<usize> = None;
        let mut bits = Vec::new();
        for (r, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let width = *n.get_or_insert(rec.len());
            if rec.len() != width {
                return Err(Error::Parse(format!(
                    "row {}: {} cells, expected {width}",
                    r + 1,
                    rec.len()
                )));
            }
            for cell in rec.iter() {
                match cell {
                    "0" => bits.push(0),
                    "1" => bits.push(1),
                    other => {
                        return Err(Error::Parse(format!(
                            "row {}: non-binary cell \"{other}\"",
                            r + 1
                        )))
                    }
                }
            }
        }
        let n = n.ok_or_else(|| Error::Parse("empty csv input".into()))?;
        SampleSet::from_flat(n, bits, SampleMeta { seed: None, source })
    }
}
