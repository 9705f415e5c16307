//! Almost-analytic functional calculus: smooth function descriptors with
//! exact derivatives, the order-n quasi-analytic extension and its ∂̄, the
//! pointwise ∂̄ bound, and quadrature evaluation of f(H) from the resolvent.
//!
//! Derivatives are produced by truncated Taylor-series arithmetic (jets), so
//! every registered function family gets exact f^{(r)} without hand-coded
//! formulas. The cutoff τ is the standard exp(−1/t) smoothstep with plateau
//! on |u| ≤ 1 and support in |u| ≤ 2.

use num_complex::Complex64;

use crate::lattice::{apply_function_exact, apply_function_exact_complex, Hamiltonian};
use crate::schatten::{block, pair_distance, schatten_norm};
use crate::CMatrix;

#[derive(Debug, thiserror::Error)]
pub enum HsError {
    #[error("extension order n = {n} needs derivatives through {need}, descriptor caps at {have}")]
    InsufficientOrder { n: u32, need: u32, have: u32 },
    #[error("integrand does not decay; the norm integral diverges (integrand {0:.3e} at |u| = {1:.1e})")]
    Divergent(f64, f64),
    #[error("quadrature failed to converge within the panel budget; residual estimate {0:.3e}")]
    NonConvergence(f64),
    #[error("schatten index p = {p} violates p > d/2 = {floor}")]
    IndexTooSmall { p: f64, floor: f64 },
    #[error("pair ({0:?}, {1:?}) has distance 0; the polynomial bound requires distinct cubes")]
    CoincidentPair(Vec<i64>, Vec<i64>),
    #[error(transparent)]
    Norm(#[from] crate::schatten::NormError),
}

// ---------------------------------------------------------------------------
// cutoff tau

fn mollifier(t: f64) -> (f64, f64, f64) {
    // psi(t) = exp(-1/t) on t > 0 with its first two derivatives
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let p = (-1.0 / t).exp();
    (p, p / (t * t), p * (1.0 / t.powi(4) - 2.0 / t.powi(3)))
}

fn smoothstep(t: f64) -> (f64, f64, f64) {
    // S = psi(t)/(psi(t)+psi(1-t)); 0 at t<=0, 1 at t>=1
    let (g, g1, g2) = mollifier(t);
    let (h0, h1m, h2m) = mollifier(1.0 - t);
    let (h1, h2) = (-h1m, h2m);
    let d = g + h0;
    let d1 = g1 + h1;
    let d2 = g2 + h2;
    let s = g / d;
    let s1 = g1 / d - g * d1 / (d * d);
    let s2 = g2 / d - 2.0 * g1 * d1 / (d * d) - g * d2 / (d * d)
        + 2.0 * g * d1 * d1 / (d * d * d);
    (s, s1, s2)
}

/// τ(u), τ′(u), τ″(u): 1 on |u| ≤ 1, 0 on |u| ≥ 2, smoothstep between.
pub fn cutoff_tau_full(u: f64) -> (f64, f64, f64) {
    let a = u.abs();
    if a <= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    if a >= 2.0 {
        return (0.0, 0.0, 0.0);
    }
    let (s, s1, s2) = smoothstep(2.0 - a);
    let sign = if u > 0.0 { -1.0 } else { 1.0 }; // d|u|/du folded into the chain rule
    (s, sign * s1, s2)
}

/// τ(u) alone.
pub fn cutoff_tau(u: f64) -> f64 {
    cutoff_tau_full(u).0
}

// ---------------------------------------------------------------------------
// jets

/// Truncated Taylor coefficients of a function at a point; index k holds
/// f^{(k)}/k!.
#[derive(Clone, Debug)]
struct Jet(Vec<f64>);

impl Jet {
    fn var(u: f64, len: usize) -> Self {
        let mut c = vec![0.0; len];
        c[0] = u;
        if len > 1 {
            c[1] = 1.0;
        }
        Jet(c)
    }

    fn constant(v: f64, len: usize) -> Self {
        let mut c = vec![0.0; len];
        c[0] = v;
        Jet(c)
    }

    fn add(&self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }

    fn scale(&self, s: f64) -> Jet {
        Jet(self.0.iter().map(|a| a * s).collect())
    }

    fn mul(&self, o: &Jet) -> Jet {
        let n = self.0.len();
        let mut c = vec![0.0; n];
        for k in 0..n {
            let mut acc = 0.0;
            for j in 0..=k {
                acc += self.0[j] * o.0[k - j];
            }
            c[k] = acc;
        }
        Jet(c)
    }

    fn exp(&self) -> Jet {
        // y' = x'y gives k y_k = sum_{j=1..k} j x_j y_{k-j}
        let n = self.0.len();
        let mut y = vec![0.0; n];
        y[0] = self.0[0].exp();
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * self.0[j] * y[k - j];
            }
            y[k] = acc / k as f64;
        }
        Jet(y)
    }

    fn recip(&self) -> Jet {
        let n = self.0.len();
        let mut y = vec![0.0; n];
        y[0] = 1.0 / self.0[0];
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += self.0[j] * y[k - j];
            }
            y[k] = -acc * y[0];
        }
        Jet(y)
    }
}

// ---------------------------------------------------------------------------
// smooth functions

#[derive(Clone, Debug)]
enum Kind {
    /// amp · exp(−(u−mu)²/(2σ²))
    Gaussian { amp: f64, mu: f64, sigma: f64 },
    /// P(u) · exp(−(u−mu)²/(2σ²)), coefficients low-to-high
    PolyDampedGaussian { coeffs: Vec<f64>, mu: f64, sigma: f64 },
    /// amp · exp(−1/(1−t²)) on |t| < 1 with t = (u−center)/halfwidth
    Bump { amp: f64, center: f64, halfwidth: f64 },
    /// not Schwartz; exists to exercise the divergence guards
    Constant(f64),
    Zero,
    Sum(Box<Kind>, Box<Kind>),
    Scaled(f64, Box<Kind>),
}

impl Kind {
    fn jet(&self, u: f64, len: usize) -> Jet {
        match self {
            Kind::Gaussian { amp, mu, sigma } => {
                let x = Jet::var(u - mu, len);
                let q = x.mul(&x).scale(-0.5 / (sigma * sigma));
                q.exp().scale(*amp)
            }
            Kind::PolyDampedGaussian { coeffs, mu, sigma } => {
                let x = Jet::var(u, len);
                let mut p = Jet::constant(0.0, len);
                for &c in coeffs.iter().rev() {
                    p = p.mul(&x).add(&Jet::constant(c, len));
                }
                let xm = Jet::var(u - mu, len);
                let q = xm.mul(&xm).scale(-0.5 / (sigma * sigma));
                p.mul(&q.exp())
            }
            Kind::Bump { amp, center, halfwidth } => {
                let t0 = (u - center) / halfwidth;
                if t0.abs() >= 1.0 {
                    return Jet::constant(0.0, len);
                }
                let t = Jet::var(u - center, len).scale(1.0 / halfwidth);
                let one_minus = Jet::constant(1.0, len).add(&t.mul(&t).scale(-1.0));
                one_minus.recip().scale(-1.0).exp().scale(*amp)
            }
            Kind::Constant(v) => Jet::constant(*v, len),
            Kind::Zero => Jet::constant(0.0, len),
            Kind::Sum(a, b) => a.jet(u, len).add(&b.jet(u, len)),
            Kind::Scaled(s, a) => a.jet(u, len).scale(*s),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Kind::Gaussian { .. } => "gaussian",
            Kind::PolyDampedGaussian { .. } => "polynomial-damped-gaussian",
            Kind::Bump { .. } => "bump",
            _ => "user",
        }
    }

    fn schwartz(&self) -> bool {
        match self {
            Kind::Gaussian { .. } | Kind::PolyDampedGaussian { .. } | Kind::Bump { .. }
            | Kind::Zero => true,
            Kind::Constant(v) => *v == 0.0,
            Kind::Sum(a, b) => a.schwartz() && b.schwartz(),
            Kind::Scaled(_, a) => a.schwartz(),
        }
    }
}

/// Smooth function with exact derivatives up to `r_max`.
#[derive(Clone, Debug)]
pub struct SmoothFunction {
    kind: Kind,
    r_max: u32,
}

impl SmoothFunction {
    pub fn gaussian(amp: f64, mu: f64, sigma: f64) -> Self {
        assert!(sigma > 0.0);
        Self { kind: Kind::Gaussian { amp, mu, sigma }, r_max: 8 }
    }

    pub fn poly_damped_gaussian(coeffs: Vec<f64>, mu: f64, sigma: f64) -> Self {
        assert!(sigma > 0.0);
        Self { kind: Kind::PolyDampedGaussian { coeffs, mu, sigma }, r_max: 8 }
    }

    pub fn bump(amp: f64, center: f64, halfwidth: f64) -> Self {
        assert!(halfwidth > 0.0);
        Self { kind: Kind::Bump { amp, center, halfwidth }, r_max: 8 }
    }

    pub fn zero() -> Self {
        Self { kind: Kind::Zero, r_max: 8 }
    }

    pub fn constant(v: f64) -> Self {
        Self { kind: Kind::Constant(v), r_max: 8 }
    }

    pub fn sum(self, other: SmoothFunction) -> Self {
        let r = self.r_max.min(other.r_max);
        Self { kind: Kind::Sum(Box::new(self.kind), Box::new(other.kind)), r_max: r }
    }

    pub fn scaled(self, s: f64) -> Self {
        Self { kind: Kind::Scaled(s, Box::new(self.kind)), r_max: self.r_max }
    }

    pub fn r_max(&self) -> u32 {
        self.r_max
    }

    pub fn tag(&self) -> &'static str {
        self.kind.tag()
    }

    pub fn is_schwartz(&self) -> bool {
        self.kind.schwartz()
    }

    /// f^{(0)}(u) .. f^{(r)}(u).
    pub fn derivatives(&self, u: f64, r: u32) -> Vec<f64> {
        assert!(r <= self.r_max, "descriptor caps derivatives at {}", self.r_max);
        let jet = self.kind.jet(u, r as usize + 1);
        let mut fact = 1.0;
        jet.0
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k > 0 {
                    fact *= k as f64;
                }
                c * fact
            })
            .collect()
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.kind.jet(u, 1).0[0]
    }

    /// Schwartz seminorm sup_u (1+|u|)^N |f^{(r)}(u)|, sampled on a wide grid.
    pub fn schwartz_norm(&self, big_n: u32, r: u32) -> f64 {
        let mut best = 0.0_f64;
        let mut u = -60.0;
        while u <= 60.0 {
            let d = self.derivatives(u, r);
            best = best.max((1.0 + u.abs()).powi(big_n as i32) * d[r as usize].abs());
            u += 0.01;
        }
        best
    }
}

// ---------------------------------------------------------------------------
// extension and dbar

fn bracket(u: f64) -> f64 {
    (1.0 + u * u).sqrt()
}

/// Powers of (iv)^r/r! for r = 0..n.
fn iv_powers(v: f64, n: u32) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut cur = Complex64::new(1.0, 0.0);
    out.push(cur);
    for r in 1..=n {
        cur *= Complex64::new(0.0, v) / r as f64;
        out.push(cur);
    }
    out
}

/// The order-n extension f̃_n(u+iv) = {Σ_{r≤n} f^{(r)}(u)(iv)^r/r!}·τ(v/⟨u⟩).
pub fn f_tilde(f: &SmoothFunction, n: u32, u: f64, v: f64) -> Complex64 {
    let br = bracket(u);
    let sigma = cutoff_tau(v / br);
    if sigma == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let d = f.derivatives(u, n);
    let pw = iv_powers(v, n);
    let mut s = Complex64::new(0.0, 0.0);
    for r in 0..=n as usize {
        s += pw[r] * d[r];
    }
    s * sigma
}

/// ∂f̃_n/∂z̄ = ½(∂_u + i∂_v)f̃_n in closed form: Taylor telescoping leaves
/// ½f^{(n+1)}(u)(iv)^n/n!·σ plus the σ-derivative terms, which vanish
/// identically on |v| < ⟨u⟩.
pub fn extension_dbar(f: &SmoothFunction, n: u32, u: f64, v: f64) -> Result<Complex64, HsError> {
    if n + 1 > f.r_max() {
        return Err(HsError::InsufficientOrder { n, need: n + 1, have: f.r_max() });
    }
    let br = bracket(u);
    let w = v / br;
    let (sigma, tau1, _) = cutoff_tau_full(w);
    if sigma == 0.0 && tau1 == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let d = f.derivatives(u, n + 1);
    let pw = iv_powers(v, n);
    let lead = Complex64::new(0.5, 0.0) * pw[n as usize] * d[n as usize + 1] * sigma;
    if tau1 == 0.0 {
        return Ok(lead);
    }
    // sigma_u = tau'(w)·(−v u/⟨u⟩³), sigma_v = tau'(w)/⟨u⟩
    let sigma_u = tau1 * (-v * u / (br * br * br));
    let sigma_v = tau1 / br;
    let mut s = Complex64::new(0.0, 0.0);
    for r in 0..=n as usize {
        s += pw[r] * d[r];
    }
    Ok(lead + Complex64::new(0.5, 0.0) * s * Complex64::new(sigma_u, sigma_v))
}

/// Result of fitting the smallest constant in the pointwise ∂̄ bound.
#[derive(Debug, Clone)]
pub struct DbarReport {
    pub c: f64,
    pub samples: usize,
    /// largest violation of the C-free part alone on |v| < ⟨u⟩ (should be ~0)
    pub plateau_excess: f64,
}

/// Sampled fit of the smallest C with
/// |∂̄f̃_n| ≤ C·{Σ_r |f^{(r)}(u)||v|^r/(r!⟨u⟩)}·χ_{⟨u⟩<|v|<2⟨u⟩} + |f^{(n+1)}(u)||v|^n/(2n!).
pub fn dbar_bound_check(
    f: &SmoothFunction,
    n: u32,
    samples: usize,
    seed: u64,
) -> Result<DbarReport, HsError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut c = 0.0_f64;
    let mut plateau_excess = 0.0_f64;
    let fact: f64 = (1..=n as u64).map(|k| k as f64).product();
    for _ in 0..samples {
        let u = rng.gen_range(-8.0..8.0);
        let br = bracket(u);
        let v = rng.gen_range(-2.0 * br..2.0 * br);
        if v == 0.0 {
            continue;
        }
        let lhs = extension_dbar(f, n, u, v)?.norm();
        let d = f.derivatives(u, n + 1);
        let term2 = d[n as usize + 1].abs() * v.abs().powi(n as i32) / (2.0 * fact);
        if v.abs() <= br {
            plateau_excess = plateau_excess.max(lhs - term2);
            continue;
        }
        let mut rfact = 1.0;
        let mut term_u = 0.0;
        for r in 0..=n as usize {
            if r > 0 {
                rfact *= r as f64;
            }
            term_u += d[r].abs() * v.abs().powi(r as i32) / (rfact * br);
        }
        if lhs > term2 && term_u > 0.0 {
            c = c.max((lhs - term2) / term_u);
        }
    }
    Ok(DbarReport { c, samples, plateau_excess })
}

// ---------------------------------------------------------------------------
// integrals

/// ⦀f⦀_n = Σ_{r=0}^n ∫ |f^{(r)}(u)| ⟨u⟩^{r−1} du, adaptive to relative 1e−8.
pub fn a_norm(f: &SmoothFunction, n: u32) -> Result<f64, HsError> {
    let mut total = 0.0;
    for r in 0..=n {
        let integrand = |u: f64| {
            let d = f.derivatives(u, r);
            d[r as usize].abs() * bracket(u).powi(r as i32 - 1)
        };
        // find a truncation point where the integrand has died off
        let mut cut = 4.0_f64;
        let scale = integrand(0.0).max(integrand(1.0)).max(1e-30);
        loop {
            let edge = integrand(cut).max(integrand(-cut));
            if edge < 1e-16 * scale {
                break;
            }
            cut *= 1.5;
            if cut > 1e6 {
                return Err(HsError::Divergent(edge, cut));
            }
        }
        total += adaptive_simpson(&integrand, -cut, cut, 1e-8);
    }
    Ok(total)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        // the second test stops refinement once delta is rounding noise
        if depth == 0
            || delta.abs() <= 15.0 * tol
            || delta.abs() <= 1e-14 * (left.abs() + right.abs())
        {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    let tol = rel_tol * whole.abs().max(1e-300);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 24)
}

/// Quadrature parameters for [`hs_apply`].
#[derive(Debug, Clone)]
pub struct ExtensionParams {
    pub n: u32,
    /// truncate the u integral to |u| ≤ this
    pub u_halfwidth: f64,
    /// relative tolerance on the converged panel refinement
    pub tol: f64,
}

impl ExtensionParams {
    /// Truncation chosen where ⟨u⟩^{n+2}·max_{r≤n+1}|f^{(r)}(u)| < 1e−14.
    pub fn auto(f: &SmoothFunction, n: u32) -> Self {
        assert!(n >= 1);
        let mut u = 2.0_f64;
        while u < 300.0 {
            let tail = [u, -u]
                .iter()
                .map(|&x| {
                    f.derivatives(x, n + 1)
                        .iter()
                        .fold(0.0_f64, |m, d| m.max(d.abs()))
                        * bracket(x).powi(n as i32 + 2)
                })
                .fold(0.0_f64, f64::max);
            if tail < 1e-14 {
                break;
            }
            u += 0.5;
        }
        ExtensionParams { n, u_halfwidth: u, tol: 1e-6 }
    }
}

const GL8_X: [f64; 8] = [
    -0.9602898564975363,
    -0.7966664774136267,
    -0.525532409916329,
    -0.1834346424956498,
    0.1834346424956498,
    0.525532409916329,
    0.7966664774136267,
    0.9602898564975363,
];
const GL8_W: [f64; 8] = [
    0.10122853629037626,
    0.22238103445337448,
    0.31370664587788727,
    0.3626837833783619,
    0.3626837833783619,
    0.31370664587788727,
    0.22238103445337448,
    0.10122853629037626,
];

/// ∫_{−W}^{W} (iv)^k/(ζ−iv) dv in closed form. The base case is
/// J₀ = 2·atan(W/ζ), the branch that stays correct for ζ < 0; its jump at
/// ζ = 0 is harmless because only k ≥ 1 is used and ζ·J₀ is continuous
/// (J₀ = 0 at ζ = 0 is the principal value).
fn plateau_integral(k: u32, zeta: f64, w: f64) -> Complex64 {
    let base = if zeta == 0.0 { 0.0 } else { 2.0 * (w / zeta).atan() };
    let mut j = Complex64::new(base, 0.0);
    for r in 1..=k {
        // moment of (iv)^{r-1}: zero for odd power, 2(iW)^{..}/.. pattern for even
        let m = if (r - 1) % 2 == 0 {
            Complex64::i().powu(r - 1) * (2.0 * w.powi(r as i32) / r as f64)
        } else {
            Complex64::new(0.0, 0.0)
        };
        j = zeta * j - m;
    }
    j
}

/// One fixed quadrature pass: returns I(λ) for every λ. `panels_per_unit`
/// controls the u resolution; the outer-v band uses `t_panels` panels.
fn hs_integrals(
    f: &SmoothFunction,
    params: &ExtensionParams,
    lambdas: &[f64],
    panels_per_unit: u32,
    t_panels: u32,
) -> Result<Vec<Complex64>, HsError> {
    let n = params.n;
    let uw = params.u_halfwidth;
    let n_up = ((2.0 * uw * panels_per_unit as f64).ceil() as usize).max(2);
    let fact: f64 = (1..=n as u64).map(|k| k as f64).product();
    // panel edges: the uniform grid plus every λ, so the kink of the
    // plateau integral at u = λ always sits on a panel boundary
    let mut edges: Vec<f64> = (0..=n_up)
        .map(|k| -uw + 2.0 * uw * k as f64 / n_up as f64)
        .collect();
    for &l in lambdas {
        if l > -uw && l < uw {
            edges.push(l);
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    // u nodes shared by both regions
    let mut u_nodes = Vec::with_capacity(edges.len() * 8);
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        for g in 0..8 {
            let x = 0.5 * (a + b) + 0.5 * (b - a) * GL8_X[g];
            u_nodes.push((x, 0.5 * (b - a) * GL8_W[g]));
        }
    }
    // plateau region |v| < ⟨u⟩: sigma ≡ 1 and the v integral is closed form
    struct UNode {
        u: f64,
        wu: f64,
        br: f64,
        lead: f64, // f^{(n+1)}(u)/(2 n!)
    }
    let mut plateau = Vec::with_capacity(u_nodes.len());
    // outer band ⟨u⟩ < |v| < 2⟨u⟩: precompute ∂̄ at tensor nodes
    let mut band: Vec<(Complex64, Complex64)> = Vec::new(); // (weight·∂̄, z)
    for &(u, wu) in &u_nodes {
        let d = f.derivatives(u, n + 1);
        let br = bracket(u);
        plateau.push(UNode { u, wu, br, lead: d[n as usize + 1] / (2.0 * fact) });
        for tp in 0..t_panels {
            let ta = tp as f64 / t_panels as f64;
            let tb = (tp + 1) as f64 / t_panels as f64;
            for g in 0..8 {
                let t = 0.5 * (ta + tb) + 0.5 * (tb - ta) * GL8_X[g];
                let wt = 0.5 * (tb - ta) * GL8_W[g] * br; // jacobian dv = ⟨u⟩ dt
                for sign in [1.0, -1.0] {
                    let v = sign * br * (1.0 + t);
                    let db = extension_dbar(f, n, u, v)?;
                    if db.norm() > 0.0 {
                        band.push((db * (wu * wt), Complex64::new(u, v)));
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let mut acc = Complex64::new(0.0, 0.0);
        for nd in &plateau {
            acc += Complex64::new(nd.wu * nd.lead, 0.0)
                * plateau_integral(n, l - nd.u, nd.br);
        }
        for &(wdb, z) in &band {
            acc += wdb / (Complex64::new(l, 0.0) - z);
        }
        out.push(acc / std::f64::consts::PI);
    }
    Ok(out)
}

/// f(H) by the resolvent-integral formula
/// (1/π)∫ ∂̄f̃_n(z)·(H−z)^{−1} du dv, evaluated per eigenvalue and refined
/// until two successive panel levels agree to `params.tol`.
pub fn hs_apply(
    h: &Hamiltonian,
    f: &SmoothFunction,
    params: &ExtensionParams,
) -> Result<CMatrix, HsError> {
    assert!(params.n >= 1 && params.tol > 0.0);
    let lambdas = h.eigenvalues().to_vec();
    let scale = lambdas
        .iter()
        .map(|&l| f.eval(l).abs())
        .fold(1e-30_f64, f64::max);
    // refine u panels and outer-band v panels together, otherwise two
    // levels can share the dominant error and agree prematurely
    let mut prev = hs_integrals(f, params, &lambdas, 2, 2)?;
    let mut resid = f64::INFINITY;
    for level in [4_u32, 8, 16] {
        let cur = hs_integrals(f, params, &lambdas, level, level)?;
        resid = prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0_f64, f64::max)
            / scale;
        prev = cur;
        if resid <= params.tol {
            let vals = prev;
            let k = std::cell::Cell::new(0);
            let m = apply_function_exact_complex(h, |_| {
                let v = vals[k.get()];
                k.set(k.get() + 1);
                v
            });
            let sym = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
            return Ok(sym);
        }
    }
    Err(HsError::NonConvergence(resid))
}

// ---------------------------------------------------------------------------
// kernel decay experiment

#[derive(Debug, Clone)]
pub struct KernelRow {
    pub beta: Vec<i64>,
    pub gamma: Vec<i64>,
    pub distance: f64,
    pub p: f64,
    pub k: u32,
    pub norm: f64,
    pub product: f64,
}

#[derive(Debug, Clone)]
pub struct KernelReport {
    pub rows: Vec<KernelRow>,
    /// per k: sup over pairs of norm·distance^k
    pub sup_per_k: Vec<(u32, f64)>,
    /// per k: whether the per-distance max of the product is nonincreasing
    /// beyond the knee distance
    pub monotone_per_k: Vec<(u32, bool)>,
    pub knee: f64,
    pub degenerate: bool,
}

/// Measure ‖χ_β f(H)χ_γ‖_{J_p} and the polynomial-decay products
/// norm·|β−γ|^k. f(H) is evaluated through the exact eigendecomposition.
pub fn kernel_decay_experiment(
    h: &Hamiltonian,
    f: &SmoothFunction,
    p: f64,
    k_list: &[u32],
    pairs: &[(Vec<i64>, Vec<i64>)],
) -> Result<KernelReport, HsError> {
    let d = h.domain().dim();
    if !(p > d as f64 / 2.0) {
        return Err(HsError::IndexTooSmall { p, floor: d as f64 / 2.0 });
    }
    let m = apply_function_exact(h, |l| f.eval(l));
    let knee = 4.0;
    let mut norms = Vec::with_capacity(pairs.len());
    for (beta, gamma) in pairs {
        let r = pair_distance(beta, gamma);
        if r == 0.0 {
            return Err(HsError::CoincidentPair(beta.clone(), gamma.clone()));
        }
        let value = schatten_norm(&block(&m, h.domain(), beta, gamma), p)?;
        norms.push((beta.clone(), gamma.clone(), r, value));
    }
    let degenerate = norms.iter().all(|(_, _, _, v)| *v < 1e-13);
    let mut rows = Vec::new();
    let mut sup_per_k = Vec::new();
    let mut monotone_per_k = Vec::new();
    for &k in k_list {
        let mut sup = 0.0_f64;
        // per-distance max of the product, for the monotonicity check
        let mut by_dist: Vec<(f64, f64)> = Vec::new();
        for (beta, gamma, r, value) in &norms {
            let product = value * r.powi(k as i32);
            sup = sup.max(product);
            rows.push(KernelRow {
                beta: beta.clone(),
                gamma: gamma.clone(),
                distance: *r,
                p,
                k,
                norm: *value,
                product,
            });
            match by_dist.iter_mut().find(|(rd, _)| (*rd - r).abs() < 1e-12) {
                Some((_, mx)) => *mx = mx.max(product),
                None => by_dist.push((*r, product)),
            }
        }
        by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let tail: Vec<f64> = by_dist
            .iter()
            .filter(|(r, _)| *r >= knee)
            .map(|(_, v)| *v)
            .collect();
        let monotone = degenerate
            || tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-300);
        sup_per_k.push((k, sup));
        monotone_per_k.push((k, monotone));
    }
    Ok(KernelReport { rows, sup_per_k, monotone_per_k, knee, degenerate })
}
