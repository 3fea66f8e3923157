//! Top-k magnitude sparsification, error feedback and uplink byte accounting.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{check_len, Error, Result};
use crate::model::ParamVector;

/// Bytes per transmitted value (values travel as `f32`).
pub const VALUE_BYTES: u64 = 4;
/// Bytes per transmitted index (`u32`).
pub const INDEX_BYTES: u64 = 4;

/// Index/value pairs kept by the compressor.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradient {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseGradient {
    pub fn new(dim: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        check_len(indices.len(), values.len())?;
        if indices.is_empty() {
            return Err(Error::InvalidArgument(
                "a sparse gradient keeps at least one entry".into(),
            ));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "sparse indices must be strictly increasing".into(),
            ));
        }
        if indices[indices.len() - 1] as usize >= dim {
            return Err(Error::InvalidArgument("sparse index out of range".into()));
        }
        Ok(Self {
            dim,
            indices,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// `[dim:u32][nnz:u32][indices:u32 x nnz][values:f32 x nnz]`, little endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.nnz());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.nnz() as u32).to_le_bytes());
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<[u8; 4]> {
            bytes
                .get(at..at + 4)
                .and_then(|s| s.try_into().ok())
                .ok_or_else(|| Error::InvalidArgument("truncated sparse gradient frame".into()))
        };
        let dim = u32::from_le_bytes(word(0)?) as usize;
        let nnz = u32::from_le_bytes(word(4)?) as usize;
        check_len(8 + 8 * nnz, bytes.len())?;
        let indices = (0..nnz)
            .map(|i| word(8 + 4 * i).map(u32::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let values = (0..nnz)
            .map(|i| word(8 + 4 * (nnz + i)).map(|w| f32::from_le_bytes(w) as f64))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, indices, values)
    }
}

/// Number of kept coordinates, `max(1, ceil(gamma * dim))`.
///
/// Products within `1e-9` of an integer are snapped to it first so that
/// e.g. `0.07 * 100` keeps 7 entries rather than 8.
pub fn kept_count(dim: usize, gamma: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    let exact = gamma * dim as f64;
    let nearest = libm::round(exact);
    let k = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
        nearest
    } else {
        libm::ceil(exact)
    };
    Ok((k as usize).clamp(1, dim.max(1)))
}

/// Keeps the `kept_count(d, gamma)` entries of largest modulus. Equal
/// moduli are resolved toward the smaller index.
pub fn sparsify_topk(g: &[f64], gamma: f64) -> Result<SparseGradient> {
    if g.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot sparsify an empty vector".into(),
        ));
    }
    let k = kept_count(g.len(), gamma)?;
    let mut order: Vec<u32> = (0..g.len() as u32).collect();
    if k < g.len() {
        let rank = |a: &u32, b: &u32| -> Ordering {
            g[*b as usize]
                .abs()
                .total_cmp(&g[*a as usize].abs())
                .then(a.cmp(b))
        };
        order.select_nth_unstable_by(k - 1, rank);
        order.truncate(k);
        order.sort_unstable();
    }
    let values = order.iter().map(|&i| g[i as usize]).collect();
    SparseGradient::new(g.len(), order, values)
}

pub fn densify(sg: &SparseGradient) -> ParamVector {
    let mut out = ParamVector::zeros(sg.dim);
    for (&i, &v) in sg.indices.iter().zip(&sg.values) {
        out[i as usize] = v;
    }
    out
}

/// `out += alpha * densify(sg)` without materializing the dense vector.
pub fn add_scaled_into(out: &mut [f64], alpha: f64, sg: &SparseGradient) -> Result<()> {
    check_len(sg.dim, out.len())?;
    for (&i, &v) in sg.indices.iter().zip(&sg.values) {
        out[i as usize] += alpha * v;
    }
    Ok(())
}

/// Residual memory of everything the compressor has dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorFeedback {
    pub e: ParamVector,
}

impl ErrorFeedback {
    pub fn zeros(dim: usize) -> Self {
        Self {
            e: ParamVector::zeros(dim),
        }
    }

    /// `e <- e + (g - densify(phi_g))`.
    ///
    /// The parenthesized difference is exactly zero on transmitted
    /// coordinates, so `e` is untouched there.
    pub fn update(&mut self, g: &[f64], phi_g: &SparseGradient) -> Result<()> {
        check_len(self.e.dim(), g.len())?;
        check_len(self.e.dim(), phi_g.dim)?;
        let mut kept = phi_g.indices.iter().zip(&phi_g.values).peekable();
        for (i, (e, &gi)) in self.e.iter_mut().zip(g).enumerate() {
            let sent = match kept.peek() {
                Some((&idx, &v)) if idx as usize == i => {
                    kept.next();
                    v
                }
                _ => 0.0,
            };
            *e += gi - sent;
        }
        Ok(())
    }
}

pub fn update_error_feedback(
    e: &ErrorFeedback,
    g: &[f64],
    phi_g: &SparseGradient,
) -> Result<ErrorFeedback> {
    let mut next = e.clone();
    next.update(g, phi_g)?;
    Ok(next)
}

/// Dense transmission: values only.
pub fn dense_wire_bytes(dim: usize) -> u64 {
    VALUE_BYTES * dim as u64
}

/// Uplink cost of a sparse gradient: one index and one value per entry.
/// A gradient that keeps every coordinate is framed densely, since its
/// indices carry no information.
pub fn wire_bytes(sg: &SparseGradient) -> u64 {
    if sg.nnz() == sg.dim {
        dense_wire_bytes(sg.dim)
    } else {
        (VALUE_BYTES + INDEX_BYTES) * sg.nnz() as u64
    }
}
