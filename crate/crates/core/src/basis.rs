//! Scalar basis functions `f₀…f_K` for the eAdL friction field
//! `ξ(θ) = Σ_k ξ_k f_k(θ)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms below this are treated as "no sample fell in the support".
pub const UNSUPPORTED_NORM: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("boxes {first} and {second} overlap")]
    OverlappingBoxes { first: usize, second: usize },
    #[error("box {index} is degenerate along axis {axis} (upper bound must exceed lower bound)")]
    DegenerateBox { index: usize, axis: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("basis is empty")]
    Empty,
}

/// Axis-aligned half-open box `∏_j [lo_j, hi_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Region { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn contains(&self, theta: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(theta)
            .all(|((lo, hi), t)| *lo <= *t && *t < *hi)
    }

    fn interiors_overlap(&self, other: &Region) -> bool {
        (0..self.dim()).all(|j| self.lo[j] < other.hi[j] && other.lo[j] < self.hi[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    Constant,
    Indicator { region: Region },
    /// `∏_j ((θ_j − lo_j)/(hi_j − lo_j))^{p_j}` inside the region, 0 outside.
    ScaledMonomial { region: Region, powers: Vec<u32> },
    /// `cos(ω·θ)`.
    Cosine { frequency: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFunction {
    pub kind: BasisKind,
    pub norm_const: f64,
    #[serde(default)]
    pub unsupported: bool,
}

impl BasisFunction {
    pub fn new(kind: BasisKind) -> Self {
        BasisFunction {
            kind,
            norm_const: 1.0,
            unsupported: false,
        }
    }

    /// Value before normalisation.
    #[inline]
    pub fn raw(&self, theta: &[f64]) -> f64 {
        match &self.kind {
            BasisKind::Constant => 1.0,
            BasisKind::Indicator { region } => {
                if region.contains(theta) {
                    1.0
                } else {
                    0.0
                }
            }
            BasisKind::ScaledMonomial { region, powers } => {
                if !region.contains(theta) {
                    return 0.0;
                }
                let mut v = 1.0;
                for j in 0..powers.len() {
                    let u = (theta[j] - region.lo[j]) / (region.hi[j] - region.lo[j]);
                    v *= u.powi(powers[j] as i32);
                }
                v
            }
            BasisKind::Cosine { frequency } => {
                let phase: f64 = frequency.iter().zip(theta).map(|(w, t)| w * t).sum();
                phase.cos()
            }
        }
    }

    #[inline]
    pub fn value(&self, theta: &[f64]) -> f64 {
        self.raw(theta) / self.norm_const
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub dim: usize,
    pub functions: Vec<BasisFunction>,
}

fn validate_boxes(dim: usize, boxes: &[Region]) -> Result<(), BasisError> {
    if boxes.is_empty() {
        return Err(BasisError::Empty);
    }
    for (index, b) in boxes.iter().enumerate() {
        if b.lo.len() != dim || b.hi.len() != dim {
            return Err(BasisError::DimensionMismatch {
                expected: dim,
                got: b.lo.len().max(b.hi.len()),
            });
        }
        for axis in 0..dim {
            if !(b.hi[axis] > b.lo[axis]) {
                return Err(BasisError::DegenerateBox { index, axis });
            }
        }
    }
    for a in 0..boxes.len() {
        for b in (a + 1)..boxes.len() {
            if boxes[a].interiors_overlap(&boxes[b]) {
                return Err(BasisError::OverlappingBoxes {
                    first: a,
                    second: b,
                });
            }
        }
    }
    Ok(())
}

impl BasisSet {
    pub fn new(dim: usize, kinds: Vec<BasisKind>) -> Result<Self, BasisError> {
        if kinds.is_empty() {
            return Err(BasisError::Empty);
        }
        Ok(BasisSet {
            dim,
            functions: kinds.into_iter().map(BasisFunction::new).collect(),
        })
    }

    /// The single function `f₀ ≡ 1`; eAdL on this basis is AdL.
    pub fn constant(dim: usize) -> Self {
        BasisSet {
            dim,
            functions: vec![BasisFunction::new(BasisKind::Constant)],
        }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Writes `f_k(θ)/norm_k` for every k into `out`.
    #[inline]
    pub fn evaluate_into(&self, theta: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.functions) {
            *o = f.value(theta);
        }
    }

    pub fn evaluate_all(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(theta, &mut out);
        out
    }

    pub fn norm_consts(&self) -> Vec<f64> {
        self.functions.iter().map(|f| f.norm_const).collect()
    }

    /// Rescales every function to unit empirical `L²(π)` norm over
    /// `samples`. Functions that vanish on every sample are flagged
    /// unsupported and keep `norm_const = 1`.
    pub fn normalize_l2_pi(&self, samples: &[Vec<f64>]) -> BasisSet {
        let mut out = self.clone();
        let m = samples.len().max(1) as f64;
        for f in &mut out.functions {
            let ms: f64 = samples.iter().map(|t| f.raw(t).powi(2)).sum::<f64>() / m;
            let norm = ms.sqrt();
            if norm < UNSUPPORTED_NORM || !norm.is_finite() {
                f.norm_const = 1.0;
                f.unsupported = true;
            } else {
                f.norm_const = norm;
                f.unsupported = false;
            }
        }
        out
    }
}

/// One indicator per box.
pub fn indicator_partition(boxes: &[Region]) -> Result<BasisSet, BasisError> {
    let dim = boxes.first().ok_or(BasisError::Empty)?.dim();
    validate_boxes(dim, boxes)?;
    BasisSet::new(
        dim,
        boxes
            .iter()
            .map(|b| BasisKind::Indicator { region: b.clone() })
            .collect(),
    )
}

/// For each box, every exponent tuple in `{0..=degree}^d` (last axis
/// varying fastest).
pub fn tensor_monomials(boxes: &[Region], degree: u32) -> Result<BasisSet, BasisError> {
    let dim = boxes.first().ok_or(BasisError::Empty)?.dim();
    validate_boxes(dim, boxes)?;
    let per_axis = degree as usize + 1;
    let count = per_axis.pow(dim as u32);
    let mut kinds = Vec::with_capacity(boxes.len() * count);
    for b in boxes {
        for code in 0..count {
            let mut powers = vec![0u32; dim];
            let mut c = code;
            for j in (0..dim).rev() {
                powers[j] = (c % per_axis) as u32;
                c /= per_axis;
            }
            kinds.push(BasisKind::ScaledMonomial {
                region: b.clone(),
                powers,
            });
        }
    }
    BasisSet::new(dim, kinds)
}

/// Splits `[lo, hi)^d` into `splits^d` equal boxes.
pub fn uniform_grid_boxes(dim: usize, lo: f64, hi: f64, splits: usize) -> Vec<Region> {
    let h = (hi - lo) / splits as f64;
    let count = splits.pow(dim as u32);
    (0..count)
        .map(|code| {
            let mut c = code;
            let mut l = vec![0.0; dim];
            let mut u = vec![0.0; dim];
            for j in (0..dim).rev() {
                let k = c % splits;
                c /= splits;
                l[j] = lo + k as f64 * h;
                u[j] = if k + 1 == splits { hi } else { lo + (k + 1) as f64 * h };
            }
            Region::new(l, u)
        })
        .collect()
}
