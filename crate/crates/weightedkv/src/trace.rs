//! Serialized query/key/value streams.
//!
//! A [`QkvTrace`] holds one record per (step, layer, head): the projected
//! query, key, and value vectors an attention engine consumes. Traces are
//! written as `.qkv.jsonl` — one self-describing JSON object per line with
//! fields `step`, `layer`, `head`, `token_id`, `q`, `k`, `v`. Floats are
//! written with 17 significant digits so a read-back is bit-exact.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

#[derive(Debug)]
pub enum TraceError {
    Io(io::Error),
    Parse { line: usize, message: String },
    /// A (step, layer, head) cell is missing or duplicated.
    NotRectangular { step: usize, layer: usize, head: usize },
    Empty,
    DimensionMismatch { expected: usize, got: usize },
    NonFinite { step: usize },
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "trace i/o: {e}"),
            Self::Parse { line, message } => write!(f, "trace line {line}: {message}"),
            Self::NotRectangular { step, layer, head } => {
                write!(f, "trace is not rectangular at (step {step}, layer {layer}, head {head})")
            }
            Self::Empty => write!(f, "trace has no records"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "trace vector length {got}, expected {expected}")
            }
            Self::NonFinite { step } => write!(f, "non-finite trace value at step {step}"),
        }
    }
}

impl std::error::Error for TraceError {}

impl From<io::Error> for TraceError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

/// One (step, layer, head) cell of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct QkvRecord {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Deserialize)]
struct TraceLine {
    step: usize,
    layer: usize,
    head: usize,
    token_id: u32,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
}

/// Rectangular grid of projected q/k/v vectors: every (step, layer, head)
/// cell is present and all vectors share the head dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct QkvTrace {
    steps: usize,
    layers: usize,
    heads: usize,
    d_head: usize,
    token_ids: Vec<u32>,
    records: Vec<QkvRecord>,
}

impl QkvTrace {
    /// Pre-sized trace filled with zero vectors; populate with [`Self::set`].
    pub fn zeroed(steps: usize, layers: usize, heads: usize, d_head: usize) -> Self {
        assert!(steps > 0 && layers > 0 && heads > 0 && d_head > 0);
        let cell = QkvRecord { q: vec![0.0; d_head], k: vec![0.0; d_head], v: vec![0.0; d_head] };
        Self {
            steps,
            layers,
            heads,
            d_head,
            token_ids: vec![0; steps],
            records: vec![cell; steps * layers * heads],
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn set_token_id(&mut self, step: usize, token_id: u32) {
        self.token_ids[step] = token_id;
    }

    fn index(&self, step: usize, layer: usize, head: usize) -> usize {
        assert!(step < self.steps && layer < self.layers && head < self.heads);
        (step * self.layers + layer) * self.heads + head
    }

    pub fn get(&self, step: usize, layer: usize, head: usize) -> &QkvRecord {
        &self.records[self.index(step, layer, head)]
    }

    pub fn set(&mut self, step: usize, layer: usize, head: usize, record: QkvRecord) -> Result<(), TraceError> {
        for vec in [&record.q, &record.k, &record.v] {
            if vec.len() != self.d_head {
                return Err(TraceError::DimensionMismatch { expected: self.d_head, got: vec.len() });
            }
            if vec.iter().any(|x| !x.is_finite()) {
                return Err(TraceError::NonFinite { step });
            }
        }
        let idx = self.index(step, layer, head);
        self.records[idx] = record;
        Ok(())
    }

    /// Accumulated key rows of one head over all steps, one row per step.
    pub fn key_rows(&self, layer: usize, head: usize) -> Vec<Vec<f64>> {
        (0..self.steps).map(|s| self.get(s, layer, head).k.clone()).collect()
    }

    pub fn value_rows(&self, layer: usize, head: usize) -> Vec<Vec<f64>> {
        (0..self.steps).map(|s| self.get(s, layer, head).v.clone()).collect()
    }

    pub fn query_rows(&self, layer: usize, head: usize) -> Vec<Vec<f64>> {
        (0..self.steps).map(|s| self.get(s, layer, head).q.clone()).collect()
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<(), TraceError> {
        for step in 0..self.steps {
            for layer in 0..self.layers {
                for head in 0..self.heads {
                    let rec = self.get(step, layer, head);
                    write!(w, "{{\"step\":{step},\"layer\":{layer},\"head\":{head},\"token_id\":{}", self.token_ids[step])?;
                    for (name, vec) in [("q", &rec.q), ("k", &rec.k), ("v", &rec.v)] {
                        write!(w, ",\"{name}\":[")?;
                        for (i, x) in vec.iter().enumerate() {
                            if i > 0 {
                                write!(w, ",")?;
                            }
                            write!(w, "{}", fmt_f64(*x))?;
                        }
                        write!(w, "]")?;
                    }
                    writeln!(w, "}}")?;
                }
            }
        }
        Ok(())
    }

    pub fn to_file<P: AsRef<Path>>(&self, path: P) -> Result<(), TraceError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut lines = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(&line)
                .map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?;
            lines.push(parsed);
        }
        if lines.is_empty() {
            return Err(TraceError::Empty);
        }
        let steps = lines.iter().map(|l| l.step).max().unwrap() + 1;
        let layers = lines.iter().map(|l| l.layer).max().unwrap() + 1;
        let heads = lines.iter().map(|l| l.head).max().unwrap() + 1;
        let d_head = lines[0].q.len();
        if d_head == 0 {
            return Err(TraceError::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut trace = Self::zeroed(steps, layers, heads, d_head);
        let mut seen = vec![false; steps * layers * heads];
        for l in lines {
            let idx = trace.index(l.step, l.layer, l.head);
            if seen[idx] {
                return Err(TraceError::NotRectangular { step: l.step, layer: l.layer, head: l.head });
            }
            seen[idx] = true;
            trace.token_ids[l.step] = l.token_id;
            trace.set(l.step, l.layer, l.head, QkvRecord { q: l.q, k: l.k, v: l.v })?;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let step = missing / (layers * heads);
            let layer = (missing / heads) % layers;
            let head = missing % heads;
            return Err(TraceError::NotRectangular { step, layer, head });
        }
        Ok(trace)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, TraceError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

/// 17-significant-digit scientific notation: enough digits that parsing
/// the text recovers the original `f64` bit pattern.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
