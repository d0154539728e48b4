//! Numerical linearisation, eigenanalysis, participation factors and
//! electromechanical mode classification.

use std::f64::consts::PI;

use nalgebra::linalg::balancing::balance_parlett_reinsch;
use nalgebra::{DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{initialize, Equilibrium, SystemModel};
use crate::C64;

/// Semi-explicit DAE `ẋ = f(x, y)`, `0 = g(x, y)`.
pub trait DaeSystem {
    fn n_x(&self) -> usize;
    fn n_y(&self) -> usize;
    fn residuals(&self, x: &[f64], y: &[f64], f: &mut [f64], g: &mut [f64]) -> Result<()>;
    fn state_labels(&self) -> Vec<String>;
}

/// Explicit ODE wrapped as a DAE with no algebraic part; handy for test blocks.
pub struct OdeSystem<F: Fn(&[f64], &mut [f64])> {
    pub n: usize,
    pub rhs: F,
}

impl<F: Fn(&[f64], &mut [f64])> DaeSystem for OdeSystem<F> {
    fn n_x(&self) -> usize {
        self.n
    }
    fn n_y(&self) -> usize {
        0
    }
    fn residuals(&self, x: &[f64], _y: &[f64], f: &mut [f64], _g: &mut [f64]) -> Result<()> {
        (self.rhs)(x, f);
        Ok(())
    }
    fn state_labels(&self) -> Vec<String> {
        (0..self.n).map(|i| format!("x{i}")).collect()
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub state_labels: Vec<String>,
    pub x_eq: Vec<f64>,
    /// Rotor-speed states and the region of their machine.
    #[serde(default)]
    pub speed_states: Vec<(usize, String)>,
}

pub const DEFAULT_H_REL: f64 = 1e-5;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// State matrix by central differences of `f` with the algebraic equations
/// re-solved at every perturbed point.
pub fn linearize<S: DaeSystem + ?Sized>(sys: &S, x_eq: &[f64], y_eq: &[f64], h_rel: f64) -> Result<LinearModel> {
    let (nx, ny) = (sys.n_x(), sys.n_y());
    let mut f = vec![0.0; nx];
    let mut g = vec![0.0; ny];
    // Algebraic Jacobian at the equilibrium, reused by every inner solve.
    let gy_lu = if ny > 0 {
        let mut gy = DMatrix::<f64>::zeros(ny, ny);
        let mut y = y_eq.to_vec();
        let mut gp = vec![0.0; ny];
        let mut gm = vec![0.0; ny];
        for c in 0..ny {
            let h = 1e-6 * y[c].abs().max(1.0);
            y[c] = y_eq[c] + h;
            sys.residuals(x_eq, &y, &mut f, &mut gp)?;
            y[c] = y_eq[c] - h;
            sys.residuals(x_eq, &y, &mut f, &mut gm)?;
            y[c] = y_eq[c];
            for r in 0..ny {
                gy[(r, c)] = (gp[r] - gm[r]) / (2.0 * h);
            }
        }
        Some(gy.lu())
    } else {
        None
    };

    let solve_y = |x: &[f64], f: &mut [f64], g: &mut [f64]| -> Result<Vec<f64>> {
        let mut y = y_eq.to_vec();
        if let Some(lu) = &gy_lu {
            let mut residual = f64::INFINITY;
            for _ in 0..30 {
                sys.residuals(x, &y, f, g)?;
                let r = max_abs(g);
                if r < 1e-14 || r >= residual {
                    residual = residual.min(r);
                    break;
                }
                residual = r;
                let rhs = DVector::from_iterator(ny, g.iter().map(|v| -v));
                let dy = lu.solve(&rhs).ok_or(Error::AlgebraicSolveFailed { residual })?;
                for (yi, d) in y.iter_mut().zip(dy.iter()) {
                    *yi += d;
                }
            }
            if !(residual < 1e-10) {
                return Err(Error::AlgebraicSolveFailed { residual });
            }
        }
        sys.residuals(x, &y, f, g)?;
        Ok(y)
    };

    let mut a = DMatrix::<f64>::zeros(nx, nx);
    let mut x = x_eq.to_vec();
    let mut fp = vec![0.0; nx];
    let mut fm = vec![0.0; nx];
    for c in 0..nx {
        let h = h_rel * x_eq[c].abs().max(1.0);
        x[c] = x_eq[c] + h;
        solve_y(&x, &mut fp, &mut g)?;
        x[c] = x_eq[c] - h;
        solve_y(&x, &mut fm, &mut g)?;
        x[c] = x_eq[c];
        for r in 0..nx {
            a[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(LinearModel {
        a,
        state_labels: sys.state_labels(),
        x_eq: x_eq.to_vec(),
        speed_states: Vec::new(),
    })
}

/// Initialise a system model and linearise it about the equilibrium.
pub fn linearize_model(model: &SystemModel, h_rel: f64) -> Result<(LinearModel, Equilibrium)> {
    let eq = initialize(model)?;
    let lin = linearize_equilibrium(&eq, h_rel)?;
    Ok((lin, eq))
}

pub fn linearize_equilibrium(eq: &Equilibrium, h_rel: f64) -> Result<LinearModel> {
    linearize_state(&eq.system, &eq.x, &eq.y, h_rel)
}

/// Linearise an assembled system about an arbitrary consistent state.
pub fn linearize_state(sys: &crate::simcore::DynamicSystem, x: &[f64], y: &[f64], h_rel: f64) -> Result<LinearModel> {
    let mut lin = linearize(sys, x, y, h_rel)?;
    lin.speed_states = sys
        .model
        .machines
        .iter()
        .map(|m| {
            let idx = sys.label_index(&format!("{}.omega", m.name())).unwrap();
            (idx, m.region.clone())
        })
        .collect();
    Ok(lin)
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub enum RegionClass {
    InterArea,
    Intra(String),
    NonElectromech,
}

impl std::fmt::Display for RegionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegionClass::InterArea => write!(f, "Inter-area"),
            RegionClass::Intra(r) => write!(f, "{r}"),
            RegionClass::NonElectromech => write!(f, "-"),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Mode {
    pub lambda: C64,
    pub zeta: f64,
    pub freq: f64,
    /// Normalised participation magnitudes (empty outside the band).
    pub participations: Vec<f64>,
    pub region_class: RegionClass,
    /// Right eigenvector, when computed.
    #[serde(skip)]
    pub right: Option<DVector<C64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyOptions {
    pub band_hz: (f64, f64),
    pub thresh: f64,
    pub min_speed_participation: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            band_hz: (0.1, 2.0),
            thresh: 0.3,
            min_speed_participation: 0.1,
        }
    }
}

/// Damping ratio and frequency (Hz) of an eigenvalue.
pub fn damping_frequency(lambda: C64) -> Result<(f64, f64)> {
    if lambda.norm() == 0.0 {
        return Err(Error::ZeroEigenvalue);
    }
    Ok((-lambda.re / lambda.norm(), lambda.im / (2.0 * PI)))
}

/// QR sweeps allowed per matrix dimension for one attempt.
const SCHUR_ITER_PER_DIM: usize = 100;

/// nalgebra deflates on a purely relative test, which can stall next to an
/// exactly-zero eigenvalue (the rotor-angle reference); loosen it stepwise.
const SCHUR_TOLERANCES: [f64; 4] = [f64::EPSILON, 1e-14, 1e-13, 1e-12];

/// All eigenvalues of a real matrix (balanced Hessenberg + shifted QR).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<C64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("state matrix has non-finite entries".into()));
    }
    let mut m = a.clone();
    balance_parlett_reinsch(&mut m);
    let max_iterations = SCHUR_ITER_PER_DIM * a.nrows().max(1);
    for eps in SCHUR_TOLERANCES {
        if let Some(schur) = Schur::try_new(m.clone(), eps, max_iterations) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::EigenNoConvergence { max_iterations })
}

fn inverse_iteration(a: &DMatrix<f64>, lambda: C64, transpose: bool) -> Option<DVector<C64>> {
    let n = a.nrows();
    let shift = lambda + C64::new(1e-10, 1e-10) * (1.0 + lambda.norm());
    let m = DMatrix::<C64>::from_fn(n, n, |r, c| {
        let v = if transpose { a[(c, r)] } else { a[(r, c)] };
        C64::new(v, 0.0) - if r == c { shift } else { C64::new(0.0, 0.0) }
    });
    let lu = m.lu();
    let mut v = DVector::<C64>::from_fn(n, |i, _| C64::new(1.0 + 0.1 * (i as f64).sin(), 0.3 * (i as f64).cos()));
    for _ in 0..4 {
        v = lu.solve(&v)?;
        let norm = v.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        v /= C64::new(norm, 0.0);
    }
    Some(v)
}

/// Right and left eigenvectors scaled so that `wᵀv = 1`, plus the
/// condition number `‖w‖‖v‖/|wᵀv|` before scaling.
pub fn eigenvectors(a: &DMatrix<f64>, lambda: C64) -> Result<(DVector<C64>, DVector<C64>, f64)> {
    let bad = Error::DefectiveMode {
        condition: f64::INFINITY,
    };
    let v = inverse_iteration(a, lambda, false).ok_or(bad)?;
    let w = inverse_iteration(a, lambda, true).ok_or(Error::DefectiveMode {
        condition: f64::INFINITY,
    })?;
    let wv: C64 = w.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    let condition = w.norm() * v.norm() / wv.norm();
    if !(condition <= 1e8) {
        return Err(Error::DefectiveMode { condition });
    }
    let w = w / wv;
    Ok((v, w, condition))
}

/// Complex participation factors `w_k·v_k` (summing to one).
pub fn participation_complex(a: &DMatrix<f64>, lambda: C64) -> Result<Vec<C64>> {
    let (v, w, _) = eigenvectors(a, lambda)?;
    Ok(v.iter().zip(w.iter()).map(|(vk, wk)| vk * wk).collect())
}

/// Participation magnitudes normalised to a maximum of one.
pub fn participation_factors(lin: &LinearModel, lambda: C64) -> Result<Vec<f64>> {
    let p = participation_complex(&lin.a, lambda)?;
    let mags: Vec<f64> = p.iter().map(|c| c.norm()).collect();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    Ok(mags.iter().map(|m| m / max).collect())
}

/// Region class of a mode from its rotor-speed participations.
pub fn classify_mode(mode: &Mode, speed_states: &[(usize, String)], opts: &ClassifyOptions) -> RegionClass {
    if mode.freq < opts.band_hz.0 || mode.freq > opts.band_hz.1 || mode.participations.is_empty() {
        return RegionClass::NonElectromech;
    }
    let max_speed = speed_states
        .iter()
        .map(|(i, _)| mode.participations[*i])
        .fold(0.0, f64::max);
    if max_speed < opts.min_speed_participation {
        return RegionClass::NonElectromech;
    }
    let mut regions: Vec<&String> = speed_states
        .iter()
        .filter(|(i, _)| mode.participations[*i] >= opts.thresh)
        .map(|(_, r)| r)
        .collect();
    regions.sort();
    regions.dedup();
    match regions.len() {
        0 => RegionClass::NonElectromech,
        1 => RegionClass::Intra(regions[0].clone()),
        _ => RegionClass::InterArea,
    }
}

/// Eigenvalues (one per conjugate pair, `Im ≥ 0`), with eigenvectors,
/// participations and region class for modes inside the band.
pub fn eigensolve(lin: &LinearModel) -> Result<Vec<Mode>> {
    eigensolve_with(lin, &ClassifyOptions::default())
}

pub fn eigensolve_with(lin: &LinearModel, opts: &ClassifyOptions) -> Result<Vec<Mode>> {
    let mut lambdas: Vec<C64> = eigenvalues(&lin.a)?.into_iter().filter(|l| l.im >= 0.0).collect();
    lambdas.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
    let mut modes = Vec::with_capacity(lambdas.len());
    for lambda in lambdas {
        let (zeta, freq) = damping_frequency(lambda).unwrap_or((f64::NAN, 0.0));
        let mut mode = Mode {
            lambda,
            zeta,
            freq,
            participations: Vec::new(),
            region_class: RegionClass::NonElectromech,
            right: None,
        };
        if freq >= opts.band_hz.0 && freq <= opts.band_hz.1 {
            let (v, w, _) = eigenvectors(&lin.a, lambda)?;
            let p: Vec<f64> = v.iter().zip(w.iter()).map(|(a, b)| (a * b).norm()).collect();
            let max = p.iter().cloned().fold(0.0, f64::max);
            mode.participations = p.iter().map(|x| x / max).collect();
            mode.right = Some(v);
            mode.region_class = classify_mode(&mode, &lin.speed_states, opts);
        }
        modes.push(mode);
    }
    Ok(modes)
}

/// Electromechanical modes only (those with a region class).
pub fn electromechanical(modes: &[Mode]) -> Vec<&Mode> {
    modes
        .iter()
        .filter(|m| m.region_class != RegionClass::NonElectromech)
        .collect()
}
