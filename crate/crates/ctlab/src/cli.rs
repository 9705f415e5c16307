//! Experiment runner: structured config in, CSV/SVG artifacts out, with
//! reproducible seeds and a hashed manifest.
//!
//! Exit codes: 0 success, 2 validation error, 3 infeasible admissibility,
//! 4 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::ctbounds::{
    admissible_params, ct_decay_experiment, e0_lambda0, form_bound_constants, Branch, CtError,
    Strategy,
};
use crate::fk::{fk_semigroup_apply, smoothing_check, FkError, ScalarField, VectorField};
use crate::hscalc::{
    hs_apply, kernel_decay_experiment, ExtensionParams, HsError, SmoothFunction,
};
use crate::lattice::{
    apply_function_exact, assemble_hamiltonian, build_domain, GridDomain, Hamiltonian,
    LatticeError, ScalarPotential, VectorPotential,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io { .. } => EXIT_VALIDATION,
        }
    }
}

impl From<LatticeError> for CliError {
    fn from(e: LatticeError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CtError> for CliError {
    fn from(e: CtError) -> Self {
        match e {
            CtError::Infeasible(_) | CtError::Lambda0NotBelow { .. } => {
                CliError::Infeasible(e.to_string())
            }
            CtError::IndexTooSmall { .. } | CtError::InsufficientPoints(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<HsError> for CliError {
    fn from(e: HsError) -> Self {
        match e {
            HsError::IndexTooSmall { .. } | HsError::CoincidentPair(_, _) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<FkError> for CliError {
    fn from(e: FkError) -> Self {
        match e {
            FkError::Norm(_) => CliError::Numerical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// config schema

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub field: FieldSpec,
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub d: usize,
    pub extents: Vec<usize>,
    pub h: f64,
    /// multi-indices of grid points excluded from the interior
    #[serde(default)]
    pub masked: Vec<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// separable cosine profile amp·Σᵢ cos(freq·xᵢ)
    Cosine {
        amp: f64,
        freq: f64,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    #[default]
    Zero,
    Landau {
        b: f64,
    },
}

/// Gaussian profile used for smooth functions and initial states.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    #[serde(default = "one")]
    pub amp: f64,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "two")]
    pub width: f64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            amp: 1.0,
            center: 0.0,
            width: 2.0,
        }
    }
}

/// Axis-aligned cube pair generator: pairs ((x0, y), (x0+r, y)) for every
/// row y and distance r. Two-dimensional domains only.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsSpec {
    pub x0: i64,
    pub rows: Vec<i64>,
    pub distances: Vec<i64>,
}

impl PairsSpec {
    pub fn generate(&self, d: usize) -> Result<Vec<(Vec<i64>, Vec<i64>)>, CliError> {
        if d != 2 {
            return Err(CliError::Validation(
                "pair generation requires d = 2".into(),
            ));
        }
        if self.rows.is_empty() || self.distances.is_empty() {
            return Err(CliError::Validation(
                "pairs.rows and pairs.distances must be nonempty".into(),
            ));
        }
        let mut out = Vec::new();
        for &y in &self.rows {
            for &r in &self.distances {
                if r == 0 {
                    return Err(CliError::Validation(
                        "pair distances must be nonzero".into(),
                    ));
                }
                out.push((vec![self.x0, y], vec![self.x0 + r, y]));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentSpec {
    Build,
    Spectrum,
    Constants {
        z: [f64; 2],
        #[serde(default = "default_theta1")]
        theta1: f64,
        #[serde(default = "one")]
        offset: f64,
        #[serde(default = "default_branch")]
        branch: String,
    },
    CtDecay {
        z: [f64; 2],
        #[serde(default = "default_theta1")]
        theta1: f64,
        #[serde(default = "one")]
        offset: f64,
        #[serde(default = "default_branch")]
        branch: String,
        #[serde(default = "default_n")]
        n: u32,
        #[serde(default = "two")]
        p: f64,
        delta0: Option<f64>,
        pairs: PairsSpec,
    },
    KernelDecay {
        #[serde(default = "two")]
        p: f64,
        k_list: Vec<u32>,
        #[serde(default)]
        gaussian: GaussianSpec,
        pairs: PairsSpec,
    },
    HsApply {
        #[serde(default = "default_n")]
        n: u32,
        #[serde(default)]
        gaussian: GaussianSpec,
    },
    FkSemigroup {
        t: f64,
        dt: f64,
        count: usize,
        #[serde(default)]
        phi: GaussianSpec,
        phi_center: Vec<f64>,
    },
    Smoothing {
        t_grid: Vec<f64>,
        p: f64,
        q: f64,
    },
}

fn default_theta1() -> f64 {
    0.5
}
fn default_branch() -> String {
    "condition-1".into()
}
fn default_n() -> u32 {
    1
}

fn parse_branch(s: &str) -> Result<Branch, CliError> {
    match s {
        "condition-1" => Ok(Branch::Condition1),
        "condition-2" => Ok(Branch::Condition2),
        other => Err(CliError::Validation(format!(
            "branch must be condition-1 or condition-2, got {other}"
        ))),
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
    if cfg.domain.d < 2 {
        return Err(CliError::Validation("dimension d >= 2 required".into()));
    }
    if cfg.domain.extents.len() != cfg.domain.d {
        return Err(CliError::Validation(format!(
            "extents length {} does not match d = {}",
            cfg.domain.extents.len(),
            cfg.domain.d
        )));
    }
    Ok(cfg)
}

fn build_from_config(cfg: &ExperimentConfig) -> Result<(GridDomain, Hamiltonian), CliError> {
    let mask = if cfg.domain.masked.is_empty() {
        None
    } else {
        let len: usize = cfg.domain.extents.iter().product();
        let mut mask = vec![true; len];
        let probe = build_domain(cfg.domain.d, &cfg.domain.extents, cfg.domain.h, None)?;
        for multi in &cfg.domain.masked {
            if multi.len() != cfg.domain.d
                || multi.iter().zip(&cfg.domain.extents).any(|(&i, &n)| i >= n)
            {
                return Err(CliError::Validation(format!(
                    "masked index {multi:?} outside the grid"
                )));
            }
            mask[probe.grid_index(multi)] = false;
        }
        Some(mask)
    };
    let dom = build_domain(
        cfg.domain.d,
        &cfg.domain.extents,
        cfg.domain.h,
        mask.as_deref(),
    )?;
    let v = match &cfg.potential {
        PotentialSpec::Zero => ScalarPotential::zero(&dom),
        PotentialSpec::Constant { value } => ScalarPotential::constant(&dom, *value),
        PotentialSpec::Cosine { amp, freq } => {
            let (amp, freq) = (*amp, *freq);
            ScalarPotential::from_fn(&dom, move |x| {
                amp * x.iter().map(|&xi| (freq * xi).cos()).sum::<f64>()
            })
        }
    };
    let a = match &cfg.field {
        FieldSpec::Zero => VectorPotential::zero(&dom),
        FieldSpec::Landau { b } => VectorPotential::landau(&dom, *b),
    };
    let ham = assemble_hamiltonian(&dom, &a, &v)?;
    Ok((dom, ham))
}

fn scalar_potential(cfg: &ExperimentConfig, dom: &GridDomain) -> ScalarPotential {
    match &cfg.potential {
        PotentialSpec::Zero => ScalarPotential::zero(dom),
        PotentialSpec::Constant { value } => ScalarPotential::constant(dom, *value),
        PotentialSpec::Cosine { amp, freq } => {
            let (amp, freq) = (*amp, *freq);
            ScalarPotential::from_fn(dom, move |x| {
                amp * x.iter().map(|&xi| (freq * xi).cos()).sum::<f64>()
            })
        }
    }
}

fn vector_potential(cfg: &ExperimentConfig, dom: &GridDomain) -> VectorPotential {
    match &cfg.field {
        FieldSpec::Zero => VectorPotential::zero(dom),
        FieldSpec::Landau { b } => VectorPotential::landau(dom, *b),
    }
}

// ---------------------------------------------------------------------------
// artifact plumbing

struct ArtifactSink {
    dir: PathBuf,
    written: Vec<(String, String)>,
}

impl ArtifactSink {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(ArtifactSink {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        let hash = Sha256::digest(contents.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in hash {
            write!(hex, "{byte:02x}").expect("hex");
        }
        self.written.push((name.to_string(), hex));
        Ok(path)
    }

    /// Manifest listing every artifact of this run with its content hash.
    fn finish(mut self) -> Result<PathBuf, CliError> {
        let mut text = String::new();
        self.written.sort();
        for (name, hash) in &self.written {
            writeln!(text, "{hash}  {name}").expect("manifest");
        }
        let path = self.dir.join("manifest.txt");
        std::fs::write(&path, &text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

fn fmt_f(x: f64) -> String {
    // shortest decimal that round-trips the float exactly
    format!("{x}")
}

fn fmt_site(multi: &[i64]) -> String {
    multi
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn csv(header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// experiments

fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let mut sink = ArtifactSink::new(out_dir)?;
    let (dom, ham) = build_from_config(cfg)?;
    match &cfg.experiment {
        ExperimentSpec::Build => {
            let rows = vec![
                vec!["sites".into(), dom.interior_len().to_string()],
                vec!["d".into(), dom.dim().to_string()],
                vec!["h".into(), fmt_f(dom.spacing())],
                vec!["min_eigenvalue".into(), fmt_f(ham.min_eigenvalue())],
                vec!["hermiticity_defect".into(), fmt_f(ham.hermiticity_defect())],
            ];
            sink.write("build.csv", &csv("key,value", &rows))?;
        }
        ExperimentSpec::Spectrum => {
            let rows: Vec<Vec<String>> = ham
                .eigenvalues()
                .iter()
                .enumerate()
                .map(|(i, &l)| vec![i.to_string(), fmt_f(l)])
                .collect();
            sink.write("spectrum.csv", &csv("index,lambda", &rows))?;
        }
        ExperimentSpec::Constants {
            z,
            theta1,
            offset,
            branch,
        } => {
            let branch = parse_branch(branch)?;
            let z = Complex64::new(z[0], z[1]);
            let v = scalar_potential(cfg, &dom);
            let (theta1, theta2) = form_bound_constants(&v, &dom, *theta1);
            let (e0, lambda0) = e0_lambda0(&v, &dom, theta2, *offset);
            let params = admissible_params(
                ham.eigenvalues(),
                z,
                lambda0,
                theta1,
                theta2,
                e0,
                branch,
                Strategy::MaxA0,
            )?;
            let rows = vec![
                vec!["theta1".into(), fmt_f(params.theta1)],
                vec!["theta2".into(), fmt_f(params.theta2)],
                vec!["e0".into(), fmt_f(e0)],
                vec!["lambda0".into(), fmt_f(params.lambda0)],
                vec!["delta".into(), fmt_f(params.delta)],
                vec!["s".into(), fmt_f(params.s)],
                vec!["a0".into(), fmt_f(params.a0)],
                vec!["xi1".into(), fmt_f(params.xi1)],
                vec!["xi2".into(), fmt_f(params.xi2)],
                vec!["c_z".into(), fmt_f(params.c_z)],
                vec!["c_star".into(), fmt_f(params.c_star)],
                vec!["branch".into(), params.branch.to_string()],
            ];
            sink.write("constants.csv", &csv("name,value", &rows))?;
        }
        ExperimentSpec::CtDecay {
            z,
            theta1,
            offset,
            branch,
            n,
            p,
            delta0,
            pairs,
        } => {
            let branch = parse_branch(branch)?;
            let pairs = pairs.generate(dom.dim())?;
            let z = Complex64::new(z[0], z[1]);
            let delta0 = delta0.unwrap_or(if *n == 1 { 1.0 } else { 0.9 });
            if (*n == 1 && delta0 != 1.0) || (*n > 1 && !(delta0 > 0.0 && delta0 < 1.0)) {
                return Err(CliError::Validation(format!(
                    "delta0 = {delta0} invalid for n = {n}"
                )));
            }
            let v = scalar_potential(cfg, &dom);
            let (theta1, theta2) = form_bound_constants(&v, &dom, *theta1);
            let (e0, lambda0) = e0_lambda0(&v, &dom, theta2, *offset);
            let params = admissible_params(
                ham.eigenvalues(),
                z,
                lambda0,
                theta1,
                theta2,
                e0,
                branch,
                Strategy::MaxA0,
            )?;
            let (norms, fit, bound) =
                ct_decay_experiment(&ham, z, *n, *p, &pairs, &params, delta0)?;
            let mut rows: Vec<Vec<String>> = Vec::with_capacity(norms.len() + 1);
            for b in &norms {
                let predicted = bound.c_empirical
                    * (-bound.target_rate * b.distance).exp();
                rows.push(vec![
                    fmt_site(&b.beta),
                    fmt_site(&b.gamma),
                    fmt_f(b.distance),
                    fmt_f(b.p),
                    b.n.to_string(),
                    fmt_f(b.value),
                    fmt_f(predicted),
                    params.branch.to_string(),
                    fmt_f(params.a0),
                    fmt_f(params.s),
                    fmt_f(params.c_star),
                ]);
            }
            // trailing summary row carries the fit in the numeric columns
            rows.push(vec![
                "fit".into(),
                "fit".into(),
                fmt_f(fit.rate),
                fmt_f(*p),
                n.to_string(),
                fmt_f(fit.log_prefactor),
                fmt_f(fit.r_squared),
                params.branch.to_string(),
                fmt_f(params.a0),
                fmt_f(params.s),
                fmt_f(params.c_star),
            ]);
            sink.write(
                "ct_decay.csv",
                &csv(
                    "beta,gamma,distance,p,n,norm,predicted_bound,branch,a0,s,c_star",
                    &rows,
                ),
            )?;
        }
        ExperimentSpec::KernelDecay {
            p,
            k_list,
            gaussian,
            pairs,
        } => {
            let pairs = pairs.generate(dom.dim())?;
            let f = SmoothFunction::gaussian(gaussian.amp, gaussian.center, gaussian.width);
            let report = kernel_decay_experiment(&ham, &f, *p, k_list, &pairs)?;
            let rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    vec![
                        fmt_site(&r.beta),
                        fmt_site(&r.gamma),
                        fmt_f(r.distance),
                        fmt_f(r.p),
                        r.k.to_string(),
                        fmt_f(r.norm),
                        fmt_f(r.product),
                    ]
                })
                .collect();
            sink.write(
                "kernel_decay.csv",
                &csv(
                    "beta,gamma,distance,p,k,norm,norm_times_distance_pow_k",
                    &rows,
                ),
            )?;
        }
        ExperimentSpec::HsApply { n, gaussian } => {
            let f = SmoothFunction::gaussian(gaussian.amp, gaussian.center, gaussian.width);
            let params = ExtensionParams::auto(&f, *n);
            let approx = hs_apply(&ham, &f, &params)?;
            let exact = apply_function_exact(&ham, |l| f.eval(l));
            let mut rows = Vec::with_capacity(approx.nrows() * approx.ncols());
            for i in 0..approx.nrows() {
                for j in 0..approx.ncols() {
                    rows.push(vec![
                        i.to_string(),
                        j.to_string(),
                        fmt_f(approx[(i, j)].re),
                        fmt_f(approx[(i, j)].im),
                        fmt_f(exact[(i, j)].re),
                        fmt_f(exact[(i, j)].im),
                    ]);
                }
            }
            sink.write(
                "hs_apply.csv",
                &csv("row,col,hs_re,hs_im,exact_re,exact_im", &rows),
            )?;
        }
        ExperimentSpec::FkSemigroup {
            t,
            dt,
            count,
            phi,
            phi_center,
        } => {
            if !(*t > 0.0 && *dt > 0.0 && dt <= t) {
                return Err(CliError::Validation(format!(
                    "need 0 < dt <= t, got t = {t}, dt = {dt}"
                )));
            }
            if *count == 0 {
                return Err(CliError::Validation("count must be positive".into()));
            }
            if phi_center.len() != dom.dim() {
                return Err(CliError::Validation(format!(
                    "phi_center length {} does not match d = {}",
                    phi_center.len(),
                    dom.dim()
                )));
            }
            let a = match &cfg.field {
                FieldSpec::Zero => VectorField::zero(dom.dim()),
                FieldSpec::Landau { b } => {
                    let b = *b;
                    VectorField::from_fn(
                        dom.dim(),
                        move |x, axis| if axis == 1 { b * x[0] } else { 0.0 },
                        |_| 0.0,
                    )
                }
            };
            let v = match &cfg.potential {
                PotentialSpec::Zero => ScalarField::zero(),
                PotentialSpec::Constant { value } => ScalarField::constant(*value),
                PotentialSpec::Cosine { amp, freq } => {
                    let (amp, freq) = (*amp, *freq);
                    ScalarField::from_fn(move |x| {
                        amp * x.iter().map(|&xi| (freq * xi).cos()).sum::<f64>()
                    })
                }
            };
            let sigma_sq = phi.width * phi.width;
            let phi_values: Vec<Complex64> = (0..dom.interior_len())
                .map(|i| {
                    let x = dom.site_coords(i);
                    let r2: f64 = x
                        .iter()
                        .zip(phi_center)
                        .map(|(xi, ci)| (xi - ci) * (xi - ci))
                        .sum();
                    Complex64::new(phi.amp * (-r2 / (2.0 * sigma_sq)).exp(), 0.0)
                })
                .collect();
            let (est, err) =
                fk_semigroup_apply(&dom, &a, &v, *t, &phi_values, *count, *dt, seed);
            let rows: Vec<Vec<String>> = (0..dom.interior_len())
                .map(|i| {
                    vec![
                        i.to_string(),
                        fmt_f(est[i].re),
                        fmt_f(est[i].im),
                        fmt_f(err[i]),
                    ]
                })
                .collect();
            sink.write(
                "fk_semigroup.csv",
                &csv("site,estimate_re,estimate_im,stderr", &rows),
            )?;
        }
        ExperimentSpec::Smoothing { t_grid, p, q } => {
            let v = scalar_potential(cfg, &dom);
            let a = vector_potential(cfg, &dom);
            let report = smoothing_check(&dom, &a, &v, t_grid, *p, *q)?;
            let rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    vec![
                        fmt_f(r.t),
                        fmt_f(r.p),
                        fmt_f(r.q),
                        fmt_f(r.norm_av),
                        fmt_f(r.norm_0v),
                        fmt_f(r.envelope),
                    ]
                })
                .collect();
            sink.write(
                "smoothing.csv",
                &csv("t,p,q,norm_AV,norm_0V,envelope", &rows),
            )?;
        }
    }
    sink.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// plotting

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Decay,
    Envelope,
}

fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .filter(|l| !l.trim().is_empty())
        .ok_or_else(|| CliError::Validation("empty CSV".into()))?;
    let cols: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != cols.len() {
            return Err(CliError::Validation(format!(
                "malformed CSV row: {line}"
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Validation("CSV has no data rows".into()));
    }
    Ok((cols, rows))
}

fn column_index(cols: &[String], name: &str) -> Result<usize, CliError> {
    cols.iter()
        .position(|c| c == name)
        .ok_or_else(|| CliError::Validation(format!("CSV lacks a `{name}` column")))
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 50.0;

    fn from_points(pts: &[(f64, f64)]) -> Frame {
        let mut f = Frame {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for &(x, y) in pts {
            f.x_min = f.x_min.min(x);
            f.x_max = f.x_max.max(x);
            f.y_min = f.y_min.min(y);
            f.y_max = f.y_max.max(y);
        }
        if f.x_max - f.x_min < 1e-12 {
            f.x_max = f.x_min + 1.0;
        }
        if f.y_max - f.y_min < 1e-12 {
            f.y_max = f.y_min + 1.0;
        }
        f
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = Frame::M + (x - self.x_min) / (self.x_max - self.x_min) * (Frame::W - 2.0 * Frame::M);
        let py = Frame::H - Frame::M
            - (y - self.y_min) / (self.y_max - self.y_min) * (Frame::H - 2.0 * Frame::M);
        (px, py)
    }
}

fn svg_scatter(
    series: &[(&str, &[(f64, f64)])],
    fitted: Option<(f64, f64)>,
    annotation: &str,
    y_label: &str,
) -> String {
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().copied())
        .collect();
    let frame = Frame::from_points(&all);
    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        Frame::W,
        Frame::H,
        Frame::W,
        Frame::H
    )
    .unwrap();
    writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    let colors = ["#1f77b4", "#d62728", "#2ca02c"];
    for (si, (label, pts)) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let mut path = String::new();
        for &(x, y) in pts.iter() {
            let (px, py) = frame.map(x, y);
            writeln!(
                out,
                "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{color}\"/>"
            )
            .unwrap();
            if path.is_empty() {
                write!(path, "M {px:.2} {py:.2}").unwrap();
            } else {
                write!(path, " L {px:.2} {py:.2}").unwrap();
            }
        }
        if pts.len() > 1 && si > 0 {
            // connect non-primary series so curves read as curves
            writeln!(
                out,
                "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\"/>"
            )
            .unwrap();
        }
        writeln!(
            out,
            "<text x=\"{:.0}\" y=\"{:.0}\" fill=\"{color}\" font-size=\"12\">{label}</text>",
            Frame::W - 160.0,
            20.0 + 14.0 * si as f64
        )
        .unwrap();
    }
    if let Some((intercept, slope)) = fitted {
        let (x0, x1) = (frame.x_min, frame.x_max);
        let (px0, py0) = frame.map(x0, intercept + slope * x0);
        let (px1, py1) = frame.map(x1, intercept + slope * x1);
        writeln!(
            out,
            "<line x1=\"{px0:.2}\" y1=\"{py0:.2}\" x2=\"{px1:.2}\" y2=\"{py1:.2}\" stroke=\"black\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>"
        )
        .unwrap();
    }
    writeln!(
        out,
        "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"13\">{annotation}</text>",
        Frame::M,
        20.0
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"12\" y=\"{:.0}\" font-size=\"11\" transform=\"rotate(-90 12 {:.0})\">{y_label}</text>",
        Frame::H / 2.0,
        Frame::H / 2.0
    )
    .unwrap();
    writeln!(out, "</svg>").unwrap();
    out
}

/// Render a decay or envelope CSV as a static SVG scatter.
pub fn emit_plot(csv_path: &Path, kind: PlotKind, out_path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(csv_path).map_err(|source| CliError::Io {
        path: csv_path.to_path_buf(),
        source,
    })?;
    let (cols, rows) = parse_csv(&text)?;
    let svg = match kind {
        PlotKind::Decay => {
            let xi = column_index(&cols, "distance")?;
            let yi = column_index(&cols, "norm")?;
            let mut pts = Vec::new();
            for row in &rows {
                // summary rows carry non-numeric tags; skip them
                let (Ok(x), Ok(y)) = (row[xi].parse::<f64>(), row[yi].parse::<f64>()) else {
                    continue;
                };
                if row.first().map(|s| s.as_str()) == Some("fit") {
                    continue;
                }
                if y > 0.0 {
                    pts.push((x, y.ln()));
                }
            }
            if pts.len() < 2 {
                return Err(CliError::Validation(
                    "decay plot needs at least 2 positive data rows".into(),
                ));
            }
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let den: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
            let slope = if den > 0.0 { num / den } else { 0.0 };
            let intercept = my - slope * mx;
            let annotation = format!("rate \u{2248} {:.3}", -slope);
            svg_scatter(
                &[("log norm", pts.as_slice())],
                Some((intercept, slope)),
                &annotation,
                "log norm",
            )
        }
        PlotKind::Envelope => {
            let ti = column_index(&cols, "t")?;
            let av = column_index(&cols, "norm_AV")?;
            let zv = column_index(&cols, "norm_0V")?;
            let ev = column_index(&cols, "envelope")?;
            let mut s_av = Vec::new();
            let mut s_0v = Vec::new();
            let mut s_env = Vec::new();
            for row in &rows {
                let t: f64 = row[ti]
                    .parse()
                    .map_err(|_| CliError::Validation(format!("bad t value {}", row[ti])))?;
                let a: f64 = row[av]
                    .parse()
                    .map_err(|_| CliError::Validation("bad norm_AV value".into()))?;
                let z: f64 = row[zv]
                    .parse()
                    .map_err(|_| CliError::Validation("bad norm_0V value".into()))?;
                let e: f64 = row[ev]
                    .parse()
                    .map_err(|_| CliError::Validation("bad envelope value".into()))?;
                s_av.push((t, a));
                s_0v.push((t, z));
                s_env.push((t, e));
            }
            svg_scatter(
                &[
                    ("norm_AV", s_av.as_slice()),
                    ("norm_0V", s_0v.as_slice()),
                    ("envelope", s_env.as_slice()),
                ],
                None,
                "norm vs t with fitted envelope",
                "norm",
            )
        }
    };
    std::fs::write(out_path, svg).map_err(|source| CliError::Io {
        path: out_path.to_path_buf(),
        source,
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// argument parsing and dispatch

#[derive(Parser, Debug)]
#[command(name = "ctlab", disable_help_subcommand = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// experiment config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// output directory (overrides the config's `output`)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// seed override
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// worker threads (accepted for interface stability; experiments are
    /// deterministic and single-streamed)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
#[command(rename_all = "kebab-case")]
pub enum Command {
    Build,
    Spectrum,
    Constants,
    CtDecay,
    KernelDecay,
    HsApply,
    FkSemigroup,
    Smoothing,
    Plot {
        /// CSV produced by this tool
        #[arg(long)]
        csv: PathBuf,
        /// decay | envelope
        #[arg(long)]
        kind: String,
        /// SVG output path
        #[arg(long = "svg")]
        svg: PathBuf,
    },
}

fn expected_kind(cmd: &Command) -> Option<&'static str> {
    match cmd {
        Command::Build => Some("build"),
        Command::Spectrum => Some("spectrum"),
        Command::Constants => Some("constants"),
        Command::CtDecay => Some("ct-decay"),
        Command::KernelDecay => Some("kernel-decay"),
        Command::HsApply => Some("hs-apply"),
        Command::FkSemigroup => Some("fk-semigroup"),
        Command::Smoothing => Some("smoothing"),
        Command::Plot { .. } => None,
    }
}

fn spec_kind(spec: &ExperimentSpec) -> &'static str {
    match spec {
        ExperimentSpec::Build => "build",
        ExperimentSpec::Spectrum => "spectrum",
        ExperimentSpec::Constants { .. } => "constants",
        ExperimentSpec::CtDecay { .. } => "ct-decay",
        ExperimentSpec::KernelDecay { .. } => "kernel-decay",
        ExperimentSpec::HsApply { .. } => "hs-apply",
        ExperimentSpec::FkSemigroup { .. } => "fk-semigroup",
        ExperimentSpec::Smoothing { .. } => "smoothing",
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Validation("threads must be >= 1".into()));
        }
    }
    if let Command::Plot { csv, kind, svg } = &cli.command {
        let kind = match kind.as_str() {
            "decay" => PlotKind::Decay,
            "envelope" => PlotKind::Envelope,
            other => {
                return Err(CliError::Validation(format!(
                    "plot kind must be decay or envelope, got {other}"
                )))
            }
        };
        return emit_plot(csv, kind, svg);
    }
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let cfg = load_config(config_path)?;
    if let Some(expected) = expected_kind(&cli.command) {
        let actual = spec_kind(&cfg.experiment);
        if expected != actual {
            return Err(CliError::Validation(format!(
                "config experiment kind is `{actual}` but the `{expected}` subcommand was invoked"
            )));
        }
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("artifacts"));
    let seed = cli.seed.unwrap_or(cfg.seed);
    if cli.verbose {
        eprintln!(
            "running `{}` from {} into {} (seed {seed})",
            spec_kind(&cfg.experiment),
            config_path.display(),
            out_dir.display()
        );
    }
    run_experiment(&cfg, &out_dir, seed)
}

/// Entry point shared by the binary and the integration tests; returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with a zero exit
            let code = if e.exit_code() == 0 { EXIT_OK } else { EXIT_VALIDATION };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
