//! Schatten-p norms, mixed L^p→L^q operator norms, and unit-cube block
//! extraction — the measurement side of every estimate in this crate.
//!
//! The discrete L^p norm carries the measure weight h^d,
//! `‖φ‖_p = (h^d Σ|φ(x)|^p)^{1/p}`, so continuum-flavored inequalities keep
//! their constants as the spacing varies. Schatten norms are basis-invariant
//! and need no weight.

use crate::lattice::GridDomain;
use crate::CMatrix;

#[derive(Debug, thiserror::Error)]
pub enum NormError {
    #[error("Schatten index p must satisfy p >= 1 (or infinity), got {0}")]
    BadSchattenIndex(f64),
    #[error("mixed norm ({p},{q}) is not exactly computable; supported: (1,q), (p,inf), (2,2)")]
    NotExactlyComputable { p: f64, q: f64 },
}

/// One measured block norm `‖χ_β M χ_γ‖_{J_p}` with its pair geometry.
#[derive(Debug, Clone)]
pub struct BlockNorm {
    pub beta: Vec<i64>,
    pub gamma: Vec<i64>,
    pub distance: f64,
    pub p: f64,
    pub n: u32,
    pub value: f64,
}

/// Euclidean distance between two integer points.
pub fn pair_distance(beta: &[i64], gamma: &[i64]) -> f64 {
    beta.iter()
        .zip(gamma)
        .map(|(&b, &g)| ((b - g) as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// `(Σ σ_k^p)^{1/p}`; for p = ∞ the largest singular value.
pub fn schatten_norm(m: &CMatrix, p: f64) -> Result<f64, NormError> {
    if !(p >= 1.0) {
        return Err(NormError::BadSchattenIndex(p));
    }
    let sv = singular_values(m);
    if sv.is_empty() {
        return Ok(0.0);
    }
    if p.is_infinite() {
        return Ok(sv[0]);
    }
    // factor out the top value so large p does not underflow
    let top = sv[0];
    if top == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = sv.iter().map(|&s| (s / top).powf(p)).sum();
    Ok(top * sum.powf(1.0 / p))
}

/// Discrete `L^p(Λ) → L^q(Λ)` operator norm with measure weight h^d, for the
/// exactly computable index pairs:
/// - (1, q): max over columns of the weighted q-norm,
/// - (p, ∞): max over rows of the weighted conjugate norm,
/// - (2, 2): top singular value (weights cancel).
pub fn mixed_norm(m: &CMatrix, p: f64, q: f64, h: f64, d: usize) -> Result<f64, NormError> {
    let hd = h.powi(d as i32);
    if p == 2.0 && q == 2.0 {
        let sv = singular_values(m);
        return Ok(sv.first().copied().unwrap_or(0.0));
    }
    if p == 1.0 {
        // extreme points of the L¹ ball are ±e_j / h^d
        let mut best = 0.0_f64;
        for j in 0..m.ncols() {
            let col: Vec<f64> = (0..m.nrows()).map(|i| m[(i, j)].norm()).collect();
            let nq = if q.is_infinite() {
                col.iter().fold(0.0_f64, |a, &b| a.max(b))
            } else if q >= 1.0 {
                (hd * col.iter().map(|&c| c.powf(q)).sum::<f64>()).powf(1.0 / q)
            } else {
                return Err(NormError::NotExactlyComputable { p, q });
            };
            best = best.max(nq / hd);
        }
        return Ok(best);
    }
    if q.is_infinite() && p >= 1.0 {
        // sup over the L^p ball is attained by Hölder per row
        let mut best = 0.0_f64;
        for i in 0..m.nrows() {
            let row: Vec<f64> = (0..m.ncols()).map(|j| m[(i, j)].norm()).collect();
            let dual = if p.is_infinite() {
                // p = ∞ dual is the weighted 1-norm
                hd * row.iter().sum::<f64>()
            } else if p == 1.0 {
                unreachable!("handled above")
            } else {
                let pc = p / (p - 1.0);
                row.iter().map(|&r| r.powf(pc)).sum::<f64>().powf(1.0 / pc) * hd.powf(-1.0 / p)
            };
            best = best.max(dual);
        }
        return Ok(best);
    }
    Err(NormError::NotExactlyComputable { p, q })
}

/// Submatrix of `m` with rows restricted to the sites of χ_β and columns to
/// the sites of χ_γ. Deleting the zero rows/columns of `χ_β M χ_γ` leaves
/// every Schatten norm unchanged while keeping SVDs small. An empty cube
/// intersection yields a 0×0 matrix, whose norms are all 0.
pub fn block(m: &CMatrix, dom: &GridDomain, beta: &[i64], gamma: &[i64]) -> CMatrix {
    let rows = dom.cube_sites(beta);
    let cols = dom.cube_sites(gamma);
    let mut out = CMatrix::zeros(rows.len(), cols.len());
    for (bi, &i) in rows.iter().enumerate() {
        for (bj, &j) in cols.iter().enumerate() {
            out[(bi, bj)] = m[(i, j)];
        }
    }
    out
}

/// `‖χ_β M χ_γ‖_{J_p}` for one pair.
pub fn block_norm(
    m: &CMatrix,
    dom: &GridDomain,
    beta: &[i64],
    gamma: &[i64],
    p: f64,
    n: u32,
) -> Result<BlockNorm, NormError> {
    let value = schatten_norm(&block(m, dom, beta, gamma), p)?;
    Ok(BlockNorm {
        beta: beta.to_vec(),
        gamma: gamma.to_vec(),
        distance: pair_distance(beta, gamma),
        p,
        n,
        value,
    })
}

/// Frobenius norm, i.e. the J₂ norm computed without an SVD.
pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}
