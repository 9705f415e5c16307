//! Finite-lattice Dirichlet discretization of `H = ½(-i∇ - A)² + V`.
//!
//! Magnetic coupling uses the Peierls substitution: the hop between adjacent
//! sites x → y carries the phase `exp(-i h A_{x→y})` with `A_{x→y}` sampled at
//! the link midpoint. This keeps gauge covariance and the diamagnetic
//! inequality exact on the lattice. Boundaries are hard Dirichlet walls: hops
//! leaving the interior are dropped while the diagonal keeps `d/h²`.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::{CMatrix, CVector};

#[derive(Debug, thiserror::Error)]
pub enum LatticeError {
    #[error("dimension d >= 2 required, got {0}")]
    DimensionTooSmall(usize),
    #[error("spacing must be 1/m for integer m >= 1, got {0}")]
    SpacingNotAligned(f64),
    #[error("extents must be positive")]
    EmptyExtent,
    #[error("interior mask selects no sites")]
    EmptyInterior,
    #[error("field sample shape does not match domain: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// A finite grid with spacing `h = 1/m`; site `i` sits at physical
/// coordinate `i * h` per axis. The interior mask selects the sites of Λ.
#[derive(Debug, Clone)]
pub struct GridDomain {
    dim: usize,
    extents: Vec<usize>,
    spacing: f64,
    mask: Vec<bool>,
    /// grid linear index of each interior site, in row-major order
    interior: Vec<usize>,
    /// grid linear index -> interior index
    interior_of_grid: Vec<Option<usize>>,
}

impl GridDomain {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of grid points, interior or not.
    pub fn grid_len(&self) -> usize {
        self.extents.iter().product()
    }

    /// Number of interior sites (the matrix dimension N).
    pub fn interior_len(&self) -> usize {
        self.interior.len()
    }

    pub fn interior_sites(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_index(&self, grid: usize) -> Option<usize> {
        self.interior_of_grid[grid]
    }

    pub fn grid_index_of_interior(&self, interior: usize) -> usize {
        self.interior[interior]
    }

    pub fn multi_index(&self, grid: usize) -> Vec<usize> {
        let mut rem = grid;
        let mut idx = vec![0usize; self.dim];
        for ax in (0..self.dim).rev() {
            idx[ax] = rem % self.extents[ax];
            rem /= self.extents[ax];
        }
        idx
    }

    pub fn grid_index(&self, multi: &[usize]) -> usize {
        let mut g = 0usize;
        for ax in 0..self.dim {
            g = g * self.extents[ax] + multi[ax];
        }
        g
    }

    /// Physical coordinates of a grid point.
    pub fn coords(&self, grid: usize) -> Vec<f64> {
        self.multi_index(grid)
            .iter()
            .map(|&i| i as f64 * self.spacing)
            .collect()
    }

    /// Physical coordinates of an interior site.
    pub fn site_coords(&self, interior: usize) -> Vec<f64> {
        self.coords(self.interior[interior])
    }

    /// Forward neighbor of a grid point along `axis`, if inside the grid box.
    pub fn forward_neighbor(&self, grid: usize, axis: usize) -> Option<usize> {
        let mut idx = self.multi_index(grid);
        if idx[axis] + 1 >= self.extents[axis] {
            return None;
        }
        idx[axis] += 1;
        Some(self.grid_index(&idx))
    }

    /// Interior sites whose coordinates lie in the half-open unit cube
    /// `[β_i - ½, β_i + ½)` centered at the integer point `beta`.
    pub fn cube_sites(&self, beta: &[i64]) -> Vec<usize> {
        assert_eq!(beta.len(), self.dim, "beta dimension mismatch");
        self.interior
            .iter()
            .enumerate()
            .filter(|(_, &g)| {
                self.coords(g)
                    .iter()
                    .zip(beta)
                    .all(|(&x, &b)| x >= b as f64 - 0.5 && x < b as f64 + 0.5)
            })
            .map(|(k, _)| k)
            .collect()
    }

    /// Integer points β whose unit cubes intersect the interior; together
    /// their indicators partition the interior sites.
    pub fn covering_cubes(&self) -> Vec<Vec<i64>> {
        let mut betas: Vec<Vec<i64>> = Vec::new();
        for &g in &self.interior {
            let beta: Vec<i64> = self
                .coords(g)
                .iter()
                .map(|&x| (x + 0.5).floor() as i64)
                .collect();
            if !betas.contains(&beta) {
                betas.push(beta);
            }
        }
        betas
    }

    /// True when every interior site of `self` is interior in `other` (same
    /// grid geometry required).
    pub fn nested_in(&self, other: &GridDomain) -> bool {
        self.dim == other.dim
            && self.extents == other.extents
            && (self.spacing - other.spacing).abs() < 1e-15
            && self
                .mask
                .iter()
                .zip(&other.mask)
                .all(|(&a, &b)| !a || b)
    }
}

/// Validated construction of a [`GridDomain`]. An omitted mask means the
/// full box is interior.
pub fn build_domain(
    d: usize,
    extents: &[usize],
    h: f64,
    mask: Option<&[bool]>,
) -> Result<GridDomain, LatticeError> {
    if d < 2 {
        return Err(LatticeError::DimensionTooSmall(d));
    }
    if extents.len() != d || extents.iter().any(|&e| e == 0) {
        return Err(LatticeError::EmptyExtent);
    }
    if !(h > 0.0) {
        return Err(LatticeError::SpacingNotAligned(h));
    }
    let m = 1.0 / h;
    if (m - m.round()).abs() > 1e-9 || m.round() < 1.0 {
        return Err(LatticeError::SpacingNotAligned(h));
    }
    let n: usize = extents.iter().product();
    let mask_vec = match mask {
        Some(mk) => {
            if mk.len() != n {
                return Err(LatticeError::ShapeMismatch {
                    expected: n,
                    got: mk.len(),
                });
            }
            mk.to_vec()
        }
        None => vec![true; n],
    };
    let mut interior = Vec::new();
    let mut interior_of_grid = vec![None; n];
    for (g, &inside) in mask_vec.iter().enumerate() {
        if inside {
            interior_of_grid[g] = Some(interior.len());
            interior.push(g);
        }
    }
    if interior.is_empty() {
        return Err(LatticeError::EmptyInterior);
    }
    Ok(GridDomain {
        dim: d,
        extents: extents.to_vec(),
        spacing: h,
        mask: mask_vec,
        interior,
        interior_of_grid,
    })
}

/// Per-link vector potential samples: `links[g * d + axis]` is the value of
/// `A·ê_axis` at the midpoint of the link from grid point `g` to its forward
/// neighbor along `axis`. Reverse links are the negatives (antisymmetry).
#[derive(Debug, Clone)]
pub struct VectorPotential {
    kind: FieldKind,
    links: Vec<f64>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    Zero,
    /// Constant magnetic field `b` in the Landau gauge `A = (0, b·x₁, 0, …)`.
    Landau(f64),
    Explicit,
}

impl VectorPotential {
    pub fn zero(dom: &GridDomain) -> Self {
        VectorPotential {
            kind: FieldKind::Zero,
            links: vec![0.0; dom.grid_len() * dom.dim()],
            dim: dom.dim(),
        }
    }

    /// Landau gauge for a constant field `b` in the (x₀, x₁) plane.
    pub fn landau(dom: &GridDomain, b: f64) -> Self {
        let mut vp = VectorPotential::from_fn(dom, |mid, axis| {
            if axis == 1 {
                b * mid[0]
            } else {
                0.0
            }
        });
        vp.kind = FieldKind::Landau(b);
        vp
    }

    /// Sample `A·ê_axis` at each forward link midpoint.
    pub fn from_fn(dom: &GridDomain, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let d = dom.dim();
        let mut links = vec![0.0; dom.grid_len() * d];
        for g in 0..dom.grid_len() {
            let x = dom.coords(g);
            for axis in 0..d {
                if dom.forward_neighbor(g, axis).is_some() {
                    let mut mid = x.clone();
                    mid[axis] += 0.5 * dom.spacing();
                    links[g * d + axis] = f(&mid, axis);
                }
            }
        }
        VectorPotential {
            kind: FieldKind::Explicit,
            links,
            dim: d,
        }
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    /// Value on the forward link from grid point `g` along `axis`.
    pub fn link(&self, g: usize, axis: usize) -> f64 {
        self.links[g * self.dim + axis]
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }
}

/// Per-site scalar potential samples. Unbounded continuum potentials are
/// represented by capped samples; the cap, when applied, is recorded.
#[derive(Debug, Clone)]
pub struct ScalarPotential {
    values: Vec<f64>,
    cap: Option<f64>,
}

impl ScalarPotential {
    pub fn zero(dom: &GridDomain) -> Self {
        ScalarPotential {
            values: vec![0.0; dom.grid_len()],
            cap: None,
        }
    }

    pub fn constant(dom: &GridDomain, c: f64) -> Self {
        ScalarPotential {
            values: vec![c; dom.grid_len()],
            cap: None,
        }
    }

    pub fn from_fn(dom: &GridDomain, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..dom.grid_len()).map(|g| f(&dom.coords(g))).collect();
        ScalarPotential { values, cap: None }
    }

    /// Sample with magnitudes clipped to `cap`; the cap is recorded.
    pub fn from_fn_capped(dom: &GridDomain, cap: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..dom.grid_len())
            .map(|g| f(&dom.coords(g)).clamp(-cap, cap))
            .collect();
        ScalarPotential {
            values,
            cap: Some(cap),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    pub fn at(&self, g: usize) -> f64 {
        self.values[g]
    }

    /// V₊ = max(V, 0) at a grid point.
    pub fn plus(&self, g: usize) -> f64 {
        self.values[g].max(0.0)
    }

    /// V₋ = max(-V, 0) at a grid point.
    pub fn minus(&self, g: usize) -> f64 {
        (-self.values[g]).max(0.0)
    }

    /// sup of V₋ over the interior.
    pub fn minus_sup(&self, dom: &GridDomain) -> f64 {
        dom.interior_sites()
            .iter()
            .map(|&g| self.minus(g))
            .fold(0.0, f64::max)
    }
}

/// Cached eigendecomposition: ascending real eigenvalues with orthonormal
/// eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

/// Hermitian matrix realization of the lattice operator plus its grid
/// metadata. The eigendecomposition is computed once and reused by all
/// downstream functional calculus.
#[derive(Debug)]
pub struct Hamiltonian {
    matrix: CMatrix,
    dom: GridDomain,
    eigen: OnceLock<EigenPairs>,
}

impl Clone for Hamiltonian {
    fn clone(&self) -> Self {
        Hamiltonian {
            matrix: self.matrix.clone(),
            dom: self.dom.clone(),
            eigen: OnceLock::new(),
        }
    }
}

impl Hamiltonian {
    pub fn from_matrix(matrix: CMatrix, dom: GridDomain) -> Self {
        assert_eq!(matrix.nrows(), dom.interior_len());
        Hamiltonian {
            matrix,
            dom,
            eigen: OnceLock::new(),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn domain(&self) -> &GridDomain {
        &self.dom
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn spacing(&self) -> f64 {
        self.dom.spacing()
    }

    /// Largest entrywise deviation from H = H†.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Ascending eigenvalues and orthonormal eigenvectors, cached on first use.
    pub fn eigen(&self) -> &EigenPairs {
        self.eigen.get_or_init(|| {
            let se = self.matrix.clone().symmetric_eigen();
            let n = se.eigenvalues.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
            let values: Vec<f64> = order.iter().map(|&k| se.eigenvalues[k]).collect();
            let mut vectors = CMatrix::zeros(n, n);
            for (col, &k) in order.iter().enumerate() {
                vectors.set_column(col, &se.eigenvectors.column(k));
            }
            EigenPairs { values, vectors }
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigen().values
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().values[0]
    }
}

/// Assemble the Peierls Hamiltonian: hop `-(1/(2h²))·exp(-i h A_{x→y})`
/// between adjacent interior sites, diagonal `d/h² + V(x)`.
pub fn assemble_hamiltonian(
    dom: &GridDomain,
    a: &VectorPotential,
    v: &ScalarPotential,
) -> Result<Hamiltonian, LatticeError> {
    let d = dom.dim();
    if a.link_count() != dom.grid_len() * d {
        return Err(LatticeError::ShapeMismatch {
            expected: dom.grid_len() * d,
            got: a.link_count(),
        });
    }
    if v.values().len() != dom.grid_len() {
        return Err(LatticeError::ShapeMismatch {
            expected: dom.grid_len(),
            got: v.values().len(),
        });
    }
    let h = dom.spacing();
    let n = dom.interior_len();
    let hop_mag = 1.0 / (2.0 * h * h);
    let diag_kin = d as f64 / (h * h);
    let mut m = CMatrix::zeros(n, n);
    for (k, &g) in dom.interior_sites().iter().enumerate() {
        m[(k, k)] = Complex64::new(diag_kin + v.at(g), 0.0);
        for axis in 0..d {
            if let Some(gn) = dom.forward_neighbor(g, axis) {
                if let Some(kn) = dom.interior_index(gn) {
                    let phase = Complex64::from_polar(hop_mag, -h * a.link(g, axis));
                    m[(k, kn)] = -phase;
                    m[(kn, k)] = -phase.conj();
                }
            }
        }
    }
    Ok(Hamiltonian::from_matrix(m, dom.clone()))
}

/// Conjugate by the site-diagonal unitary `e^{iχ}`: returns `e^{iχ} H e^{-iχ}`.
/// Equals assembly with link values `A_{x→y} + (χ(y)-χ(x))/h`.
pub fn gauge_transform(ham: &Hamiltonian, chi: &[f64]) -> Hamiltonian {
    let n = ham.dim();
    assert_eq!(chi.len(), n, "chi must be defined on all interior sites");
    let mut m = ham.matrix().clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= Complex64::from_polar(1.0, chi[i] - chi[j]);
        }
    }
    Hamiltonian::from_matrix(m, ham.domain().clone())
}

/// Eigendecomposition accessor matching the spec operation signature.
pub fn spectrum(ham: &Hamiltonian) -> (&[f64], &CMatrix) {
    let e = ham.eigen();
    (&e.values, &e.vectors)
}

/// Exact functional calculus `Σ_k f(λ_k) v_k v_k†` from the cached
/// eigendecomposition. This is the reference oracle for every approximate
/// route to `f(H)`.
pub fn apply_function_exact(ham: &Hamiltonian, f: impl Fn(f64) -> f64) -> CMatrix {
    apply_function_exact_complex(ham, |lam| Complex64::new(f(lam), 0.0))
}

pub fn apply_function_exact_complex(ham: &Hamiltonian, f: impl Fn(f64) -> Complex64) -> CMatrix {
    let e = ham.eigen();
    let n = ham.dim();
    let mut out = CMatrix::zeros(n, n);
    for (k, &lam) in e.values.iter().enumerate() {
        let flam = f(lam);
        if flam.norm() == 0.0 {
            continue;
        }
        let vk: CVector = e.vectors.column(k).into();
        for i in 0..n {
            let fv = flam * vk[i];
            for j in 0..n {
                out[(i, j)] += fv * vk[j].conj();
            }
        }
    }
    out
}

/// Resolvent power `(H - z)^{-n}` from the cached eigendecomposition.
pub fn resolvent_power(ham: &Hamiltonian, z: Complex64, n: u32) -> CMatrix {
    apply_function_exact_complex(ham, |lam| (Complex64::new(lam, 0.0) - z).powi(-(n as i32)))
}

/// Diagonal 0/1 projection onto the unit cube centered at `beta`.
/// A cube disjoint from the domain yields the zero matrix.
pub fn indicator(dom: &GridDomain, beta: &[i64]) -> CMatrix {
    let n = dom.interior_len();
    let mut m = CMatrix::zeros(n, n);
    for k in dom.cube_sites(beta) {
        m[(k, k)] = Complex64::new(1.0, 0.0);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Closed-form tensor spectrum of the free Dirichlet box:
    /// per-axis eigenvalues (1/h²)(1 - cos(kπ/(n+1))), summed over axes.
    fn free_dirichlet_spectrum(extents: &[usize], h: f64) -> Vec<f64> {
        let mut levels: Vec<f64> = vec![0.0];
        for &n_ax in extents {
            let axis: Vec<f64> = (1..=n_ax)
                .map(|k| (1.0 - (k as f64 * std::f64::consts::PI / (n_ax as f64 + 1.0)).cos()) / (h * h))
                .collect();
            let mut next = Vec::with_capacity(levels.len() * n_ax);
            for &base in &levels {
                for &e in &axis {
                    next.push(base + e);
                }
            }
            levels = next;
        }
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels
    }

    fn free_ham(ext: &[usize], h: f64) -> Hamiltonian {
        let dom = build_domain(ext.len(), ext, h, None).unwrap();
        let a = VectorPotential::zero(&dom);
        let v = ScalarPotential::zero(&dom);
        assemble_hamiltonian(&dom, &a, &v).unwrap()
    }

    #[test]
    fn build_domain_validates() {
        assert!(build_domain(1, &[5], 1.0, None).is_err());
        assert!(build_domain(2, &[3, 3], 0.3, None).is_err());
        assert!(build_domain(2, &[3, 3], 1.0, Some(&[false; 9])).is_err());
        let dom = build_domain(2, &[3, 3], 1.0, None).unwrap();
        assert_eq!(dom.interior_len(), 9);
        let dom2 = build_domain(2, &[4, 4], 0.5, None).unwrap();
        assert_eq!(dom2.interior_len(), 16);
    }

    #[test]
    fn single_site_hamiltonian() {
        let mut mask = vec![false; 9];
        mask[4] = true;
        let dom = build_domain(2, &[3, 3], 1.0, Some(&mask)).unwrap();
        let ham = assemble_hamiltonian(
            &dom,
            &VectorPotential::zero(&dom),
            &ScalarPotential::zero(&dom),
        )
        .unwrap();
        assert_eq!(ham.dim(), 1);
        assert_abs_diff_eq!(ham.matrix()[(0, 0)].re, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn free_box_matches_closed_form() {
        let ham = free_ham(&[3, 3], 1.0);
        let expect = free_dirichlet_spectrum(&[3, 3], 1.0);
        let got = ham.eigenvalues();
        for (g, e) in got.iter().zip(&expect) {
            assert_abs_diff_eq!(g, e, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(got[0], 2.0 - 2.0_f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn real_symmetric_without_field() {
        let ham = free_ham(&[4, 3], 1.0);
        for i in 0..ham.dim() {
            for j in 0..ham.dim() {
                assert_abs_diff_eq!(ham.matrix()[(i, j)].im, 0.0, epsilon = 1e-15);
            }
        }
        assert!(ham.hermiticity_defect() <= 1e-12);
    }

    #[test]
    fn hermitian_with_field() {
        let dom = build_domain(2, &[5, 5], 0.5, None).unwrap();
        let a = VectorPotential::landau(&dom, 0.7);
        let v = ScalarPotential::from_fn(&dom, |x| x[0].sin() - 0.3);
        let ham = assemble_hamiltonian(&dom, &a, &v).unwrap();
        assert!(ham.hermiticity_defect() <= 1e-12);
    }

    #[test]
    fn gauge_covariance() {
        use rand::{Rng, SeedableRng};
        let dom = build_domain(2, &[3, 3], 1.0, None).unwrap();
        let a = VectorPotential::zero(&dom);
        let v = ScalarPotential::zero(&dom);
        let ham = assemble_hamiltonian(&dom, &a, &v).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let chi_site: Vec<f64> = (0..dom.interior_len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        // chi as a grid field for the link-gradient route
        let mut chi_grid = vec![0.0; dom.grid_len()];
        for (k, &g) in dom.interior_sites().iter().enumerate() {
            chi_grid[g] = chi_site[k];
        }
        let h = dom.spacing();
        let a_shift = VectorPotential::from_fn(&dom, |mid, axis| {
            // discrete gradient (χ(y)-χ(x))/h across the link at `mid`
            let mut lo = mid.to_vec();
            lo[axis] -= 0.5 * h;
            let mut hi = mid.to_vec();
            hi[axis] += 0.5 * h;
            let gi = |x: &[f64]| {
                let mi: Vec<usize> = x.iter().map(|&c| (c / h).round() as usize).collect();
                chi_grid[dom.grid_index(&mi)]
            };
            (gi(&hi) - gi(&lo)) / h
        });
        let transformed = gauge_transform(&ham, &chi_site);
        let direct = assemble_hamiltonian(&dom, &a_shift, &v).unwrap();
        for i in 0..ham.dim() {
            for j in 0..ham.dim() {
                assert!((transformed.matrix()[(i, j)] - direct.matrix()[(i, j)]).norm() <= 1e-12);
            }
        }
        // spectrum invariance under any gauge
        for (x, y) in transformed.eigenvalues().iter().zip(ham.eigenvalues()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
        // constant chi leaves H unchanged
        let constant = gauge_transform(&ham, &vec![1.234; ham.dim()]);
        for i in 0..ham.dim() {
            for j in 0..ham.dim() {
                assert!((constant.matrix()[(i, j)] - ham.matrix()[(i, j)]).norm() <= 1e-14);
            }
        }
    }

    #[test]
    fn spectrum_residuals_and_orthonormality() {
        let dom = build_domain(2, &[4, 4], 0.5, None).unwrap();
        let a = VectorPotential::landau(&dom, 0.4);
        let v = ScalarPotential::from_fn(&dom, |x| 0.2 * x[1]);
        let ham = assemble_hamiltonian(&dom, &a, &v).unwrap();
        let (vals, vecs) = spectrum(&ham);
        let scale = vals.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
        for (k, &lam) in vals.iter().enumerate() {
            let vk: CVector = vecs.column(k).into();
            let res = (ham.matrix() * &vk) - vk.clone() * Complex64::new(lam, 0.0);
            assert!(res.norm() <= 1e-10 * scale);
        }
        let gram = vecs.adjoint() * vecs;
        for i in 0..vals.len() {
            for j in 0..vals.len() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - Complex64::new(expect, 0.0)).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn exact_function_application() {
        let dom = build_domain(2, &[2, 2], 1.0, None).unwrap();
        let mut m = CMatrix::zeros(4, 4);
        for (i, &d) in [0.0, 1.0, 2.5, 4.0].iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        let ham = Hamiltonian::from_matrix(m, dom);
        let g = apply_function_exact(&ham, |x| (-x * x).exp());
        assert_abs_diff_eq!(g[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[(1, 1)].re, (-1.0_f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(g[(0, 1)].norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_sqrt_squares_to_resolvent() {
        let ham = free_ham(&[3, 3], 1.0);
        let lam0 = -1.0;
        let half = apply_function_exact(&ham, |lam| (lam - lam0).powf(-0.5));
        let squared = &half * &half;
        let inv = resolvent_power(&ham, Complex64::new(lam0, 0.0), 1);
        for i in 0..ham.dim() {
            for j in 0..ham.dim() {
                assert!((squared[(i, j)] - inv[(i, j)]).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn diamagnetic_ground_state_bound() {
        let dom = build_domain(2, &[5, 5], 1.0, None).unwrap();
        let v = ScalarPotential::from_fn(&dom, |x| -0.5 * (x[0] - 2.0).abs());
        let free = assemble_hamiltonian(&dom, &VectorPotential::zero(&dom), &v).unwrap();
        for b in [0.2, 0.9, 2.0] {
            let mag =
                assemble_hamiltonian(&dom, &VectorPotential::landau(&dom, b), &v).unwrap();
            assert!(mag.min_eigenvalue() >= free.min_eigenvalue() - 1e-10);
        }
    }

    #[test]
    fn indicators_partition_and_count() {
        let dom = build_domain(2, &[3, 3], 1.0, None).unwrap();
        for beta0 in 0..3i64 {
            for beta1 in 0..3i64 {
                assert_eq!(dom.cube_sites(&[beta0, beta1]).len(), 1);
            }
        }
        assert_eq!(dom.cube_sites(&[7, 7]).len(), 0);

        let dom_half = build_domain(2, &[4, 4], 0.5, None).unwrap();
        assert_eq!(dom_half.cube_sites(&[1, 1]).len(), 4);

        // covering indicators sum to the identity; distinct cubes disjoint
        let betas = dom_half.covering_cubes();
        let mut sum = CMatrix::zeros(16, 16);
        for b in &betas {
            sum += indicator(&dom_half, b);
        }
        for i in 0..16 {
            for j in 0..16 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((sum[(i, j)] - Complex64::new(expect, 0.0)).norm() <= 1e-14);
            }
        }
    }

    #[test]
    fn constant_potential_shifts_spectrum() {
        let base = free_ham(&[3, 4], 1.0);
        let dom = base.domain().clone();
        let shifted = assemble_hamiltonian(
            &dom,
            &VectorPotential::zero(&dom),
            &ScalarPotential::constant(&dom, 0.75),
        )
        .unwrap();
        for (a, b) in shifted.eigenvalues().iter().zip(base.eigenvalues()) {
            assert_abs_diff_eq!(a - b, 0.75, epsilon = 1e-10);
        }
    }
}
