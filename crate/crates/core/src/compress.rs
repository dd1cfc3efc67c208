//! Contractive compressors: identity, Top-K and (unscaled) Rand-K.
//!
//! Every operator here satisfies `E‖C(v) − v‖² ≤ (1 − α)‖v‖²` with
//! `α = k/d` for the sparsifiers and `α = 1` for the identity.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::vector::Vector;

/// Bits charged per transmitted coordinate index.
pub const INDEX_BITS: u64 = 32;
/// Bits charged per transmitted value.
pub const VALUE_BITS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompressorKind {
    Identity,
    TopK { k: usize },
    RandK { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompressorSpec {
    kind: CompressorKind,
    d: usize,
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("dim", "dimension must be positive"));
        }
        match kind {
            CompressorKind::TopK { k } | CompressorKind::RandK { k } if k == 0 || k > d => {
                Err(Error::config("compressor", format!("k must lie in [1, {d}], got {k}")))
            }
            _ => Ok(CompressorSpec { kind, d }),
        }
    }

    pub fn identity(d: usize) -> Result<Self> {
        Self::new(CompressorKind::Identity, d)
    }

    pub fn top_k(k: usize, d: usize) -> Result<Self> {
        Self::new(CompressorKind::TopK { k }, d)
    }

    pub fn rand_k(k: usize, d: usize) -> Result<Self> {
        Self::new(CompressorKind::RandK { k }, d)
    }

    pub fn kind(&self) -> CompressorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Contraction factor α.
    pub fn alpha(&self) -> f64 {
        match self.kind {
            CompressorKind::Identity => 1.0,
            CompressorKind::TopK { k } | CompressorKind::RandK { k } => k as f64 / self.d as f64,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self.kind, CompressorKind::RandK { .. })
    }

    pub fn compress(&self, v: &Vector, rng: &mut RngStream) -> Result<CompressedMessage> {
        compress(self, v, rng)
    }
}

/// Sparse `(index, value)` message; indices are strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedMessage {
    indices: Vec<u32>,
    values: Vec<f64>,
    d: usize,
}

impl CompressedMessage {
    pub fn new(d: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Decode(format!("{} indices but {} values", indices.len(), values.len())));
        }
        if indices.len() > d {
            return Err(Error::Decode(format!("{} entries exceed dimension {d}", indices.len())));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Decode("indices not strictly increasing".into()));
        }
        if let Some(&last) = indices.last() {
            if last as usize >= d {
                return Err(Error::Decode(format!("index {last} out of range for d={d}")));
            }
        }
        Ok(CompressedMessage { indices, values, d })
    }

    fn dense(v: &Vector) -> Self {
        CompressedMessage {
            indices: (0..v.len() as u32).collect(),
            values: v.as_slice().to_vec(),
            d: v.len(),
        }
    }

    fn sparse_from_sorted(v: &Vector, mut idx: Vec<usize>) -> Self {
        idx.sort_unstable();
        let values = idx.iter().map(|&i| v[i]).collect();
        CompressedMessage { indices: idx.into_iter().map(|i| i as u32).collect(), values, d: v.len() }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn densify(&self) -> Vector {
        let mut out = vec![0.0; self.d];
        for (&i, &x) in self.indices.iter().zip(&self.values) {
            out[i as usize] = x;
        }
        Vector::from_raw(out)
    }

    /// Adds the message into `target` in place (`target += densify(self)`).
    pub fn add_into(&self, target: &mut Vector) {
        let t = target.as_mut_slice();
        for (&i, &x) in self.indices.iter().zip(&self.values) {
            t[i as usize] += x;
        }
    }

    /// Framed little-endian record: `d:u32, count:u32, indices:u32*, values:f64*`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 12 * self.len());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for x in &self.values {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Decodes one framed record from the front of `bytes`, returning it and
    /// the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let u32_at = |off: usize| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::Decode("truncated record".into()))
        };
        let d = u32_at(0)? as usize;
        let count = u32_at(4)? as usize;
        let idx_start = 8;
        let val_start = idx_start + 4 * count;
        let end = val_start + 8 * count;
        if bytes.len() < end {
            return Err(Error::Decode("truncated record".into()));
        }
        let indices = (0..count).map(|j| u32_at(idx_start + 4 * j)).collect::<Result<Vec<_>>>()?;
        let values = bytes[val_start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((CompressedMessage::new(d, indices, values)?, end))
    }
}

pub fn compress(spec: &CompressorSpec, v: &Vector, rng: &mut RngStream) -> Result<CompressedMessage> {
    v.check_len(spec.d)?;
    Ok(match spec.kind {
        CompressorKind::Identity => CompressedMessage::dense(v),
        CompressorKind::TopK { k } => {
            CompressedMessage::sparse_from_sorted(v, top_k_indices(v.as_slice(), k))
        }
        CompressorKind::RandK { k } => {
            let idx = rand::seq::index::sample(rng, spec.d, k).into_vec();
            CompressedMessage::sparse_from_sorted(v, idx)
        }
    })
}

/// Indices of the `k` largest magnitudes; among equal magnitudes the lower
/// index wins.
fn top_k_indices(x: &[f64], k: usize) -> Vec<usize> {
    if k >= x.len() {
        return (0..x.len()).collect();
    }
    // For non-negative floats the bit patterns order like the values, so
    // ascending keys mean descending magnitude, then ascending index.
    let mut keys: Vec<(u64, usize)> =
        x.iter().enumerate().map(|(i, v)| (u64::MAX - v.abs().to_bits(), i)).collect();
    keys.select_nth_unstable(k - 1);
    keys[..k].iter().map(|&(_, i)| i).collect()
}

/// `‖C(v) − v‖² / ‖v‖²` for one realization of the compressor.
pub fn contraction_gap(spec: &CompressorSpec, v: &Vector, rng: &mut RngStream) -> Result<f64> {
    let total = v.norm_squared();
    if total == 0.0 {
        return Err(Error::ZeroVector);
    }
    let msg = compress(spec, v, rng)?;
    let kept: f64 = msg.values.iter().map(|x| x * x).sum();
    // Unsent coordinates are the whole residual.
    Ok(((total - kept) / total).max(0.0))
}

/// Communication cost of one message. A message carrying every coordinate is
/// sent densely and needs no indices.
pub fn payload_bits(msg: &CompressedMessage) -> u64 {
    let count = msg.len() as u64;
    if msg.len() == msg.d {
        count * VALUE_BITS
    } else {
        count * (INDEX_BITS + VALUE_BITS)
    }
}

/// Compressor choice independent of dimension, as written on the command line:
/// `identity`, `topk:<fraction>` or `randk:<fraction>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CompressorChoice {
    Identity,
    TopK(f64),
    RandK(f64),
}

impl CompressorChoice {
    /// `k = max(1, floor(fraction · d))`.
    pub fn resolve(&self, d: usize) -> Result<CompressorSpec> {
        let k_of = |frac: f64| ((frac * d as f64).floor() as usize).clamp(1, d.max(1));
        match *self {
            CompressorChoice::Identity => CompressorSpec::identity(d),
            CompressorChoice::TopK(f) => CompressorSpec::top_k(k_of(f), d),
            CompressorChoice::RandK(f) => CompressorSpec::rand_k(k_of(f), d),
        }
    }
}

impl FromStr for CompressorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::config("compressor", msg);
        if s == "identity" {
            return Ok(CompressorChoice::Identity);
        }
        let (name, frac) = s
            .split_once(':')
            .ok_or_else(|| bad(format!("expected identity, topk:<f> or randk:<f>, got `{s}`")))?;
        let frac: f64 = frac.parse().map_err(|_| bad(format!("malformed fraction `{frac}`")))?;
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(bad(format!("fraction must lie in (0, 1], got {frac}")));
        }
        match name {
            "topk" => Ok(CompressorChoice::TopK(frac)),
            "randk" => Ok(CompressorChoice::RandK(frac)),
            _ => Err(bad(format!("unknown compressor `{name}`"))),
        }
    }
}

impl fmt::Display for CompressorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressorChoice::Identity => write!(f, "identity"),
            CompressorChoice::TopK(x) => write!(f, "topk:{x}"),
            CompressorChoice::RandK(x) => write!(f, "randk:{x}"),
        }
    }
}
