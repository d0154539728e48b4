//! POD-Q tuning from numerical eigenvalue sensitivities: estimate the
//! sensitivity of the target mode to the controller gain with the lead/lag
//! bypassed, shape the phase with lead/lag stages, then size the gain so the
//! mode moves towards the requested damping.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::SystemModel;
use crate::smallsignal::{
    eigensolve, eigenvalues, eigenvectors, linearize_model, LinearModel, Mode, RegionClass, DEFAULT_H_REL,
};
use crate::suppctrl::{PodQParams, PodVariant};
use crate::C64;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct DesignTarget {
    pub lambda0: C64,
    pub zeta0: f64,
    pub zeta_d: f64,
    pub lambda_d: C64,
}

impl DesignTarget {
    /// Keeps the damped frequency and moves the real part to `−ζ_d·ω⁰`.
    pub fn new(lambda0: C64, zeta_d: f64) -> Result<Self> {
        let zeta0 = -lambda0.re / lambda0.norm();
        if !(lambda0.im > 0.0) {
            return Err(Error::InvalidConfig("target mode must be oscillatory".into()));
        }
        if !(zeta_d > zeta0) {
            return Err(Error::InvalidConfig(format!(
                "desired damping {zeta_d} does not exceed the current {zeta0:.4}"
            )));
        }
        Ok(Self {
            lambda0,
            zeta0,
            zeta_d,
            lambda_d: C64::new(-zeta_d * lambda0.im, lambda0.im),
        })
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct SensitivityEstimate {
    pub s_nc: C64,
    pub delta_k: f64,
    pub lambda_nc: C64,
    pub phase_nc: f64,
}

impl SensitivityEstimate {
    pub fn from_eigenvalues(lambda0: C64, lambda_nc: C64, delta_k: f64) -> Result<Self> {
        if delta_k == 0.0 {
            return Err(Error::ZeroGainStep);
        }
        let s_nc = (lambda_nc - lambda0) / delta_k;
        Ok(Self {
            s_nc,
            delta_k,
            lambda_nc,
            phase_nc: s_nc.arg(),
        })
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct LeadLagDesign {
    pub a_q: f64,
    pub t_q1: f64,
    pub t_q2: f64,
    pub n_qs: usize,
    pub phi_per_stage: f64,
}

impl LeadLagDesign {
    pub fn is_lead(&self) -> bool {
        self.a_q <= 1.0
    }

    /// Frequency response of the cascaded stages.
    pub fn response(&self, s: C64) -> C64 {
        let one = C64::new(1.0, 0.0);
        ((one + s * self.t_q1) / (one + s * self.a_q * self.t_q1)).powi(self.n_qs as i32)
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct GainResult {
    pub k_q: f64,
    pub gamma: f64,
    pub saturated: bool,
    pub predicted_lambda: C64,
    /// Damping reached after closing the loop, filled in by verification.
    pub achieved_zeta: Option<f64>,
}

/// Maximum compensable phase per stage.
pub const MAX_STAGE_PHASE_DEG: f64 = 85.0;

/// Correlation gap below which two candidate modes are indistinguishable.
pub const MATCH_GAP: f64 = 0.05;

/// Lead/lag stages that rotate the sensitivity phase to 180°.
pub fn design_leadlag(phase_nc: f64, n_qs: usize, omega0: f64) -> Result<LeadLagDesign> {
    if n_qs < 1 || !(omega0 > 0.0) {
        return Err(Error::InvalidConfig(
            "lead/lag design needs n_qs >= 1 and omega0 > 0".into(),
        ));
    }
    let n = n_qs as f64;
    let (phi, a_q) = if phase_nc >= 0.0 {
        let phi = (PI - phase_nc) / n;
        (phi, (1.0 - phi.sin()) / (1.0 + phi.sin()))
    } else {
        let phi = (PI + phase_nc) / n;
        (phi, (1.0 + phi.sin()) / (1.0 - phi.sin()))
    };
    if phi.to_degrees() >= MAX_STAGE_PHASE_DEG {
        return Err(Error::ExcessivePhaseRequirement {
            phi_deg: phi.to_degrees(),
        });
    }
    let t_q1 = 1.0 / (omega0 * a_q.sqrt());
    Ok(LeadLagDesign {
        a_q,
        t_q1,
        t_q2: a_q * t_q1,
        n_qs,
        phi_per_stage: phi,
    })
}

/// Sensitivity after inserting the lead/lag stages, evaluated at the mode.
pub fn compensated_sensitivity(est: &SensitivityEstimate, ll: &LeadLagDesign, lambda0: C64) -> C64 {
    est.s_nc * ll.response(lambda0)
}

/// Gain magnitude `|λ_d − λ⁰| / |Ŝ|` with the sign that lands closest to `λ_d`.
pub fn compute_gain(lambda0: C64, lambda_d: C64, s_hat: C64, k_max: f64) -> Result<GainResult> {
    if s_hat.norm() == 0.0 {
        return Err(Error::ZeroSensitivity);
    }
    let k_abs = (lambda_d - lambda0).norm() / s_hat.norm();
    let miss = |g: f64| (lambda_d - (lambda0 + s_hat * (g * k_abs))).norm();
    let gamma = if miss(1.0) <= miss(-1.0) { 1.0 } else { -1.0 };
    let saturated = k_abs > k_max;
    let k_q = gamma * k_abs.min(k_max);
    Ok(GainResult {
        k_q,
        gamma,
        saturated,
        predicted_lambda: lambda0 + s_hat * k_q,
        achieved_zeta: None,
    })
}

fn nearest(lambdas: &[C64], target: C64) -> C64 {
    *lambdas
        .iter()
        .min_by(|a, b| (*a - target).norm().total_cmp(&(*b - target).norm()))
        .unwrap()
}

fn correlation(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    let dot: C64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
    dot.norm() / (a.norm() * b.norm())
}

/// Eigenvalue of `lin` that continues the mode `(lambda0, v0)`: the best
/// eigenvector correlation among the nearest candidates, nearest λ otherwise.
pub fn match_mode(lin: &LinearModel, lambda0: C64, v0: Option<&DVector<C64>>) -> Result<C64> {
    let mut cands: Vec<C64> = eigenvalues(&lin.a)?.into_iter().filter(|l| l.im >= 0.0).collect();
    cands.sort_by(|a, b| (*a - lambda0).norm().total_cmp(&(*b - lambda0).norm()));
    cands.truncate(4);
    let Some(v0) = v0 else {
        return Ok(cands[0]);
    };
    let mut scored: Vec<(f64, C64)> = cands
        .iter()
        .filter_map(|&l| eigenvectors(&lin.a, l).ok().map(|(v, _, _)| (correlation(v0, &v), l)))
        .collect();
    if scored.is_empty() {
        return Ok(cands[0]);
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    if scored.len() > 1 && scored[0].0 - scored[1].0 < MATCH_GAP {
        return Err(Error::ModeMatchAmbiguous {
            best: scored[0].0,
            second: scored[1].0,
        });
    }
    Ok(scored[0].1)
}

/// Numerical non-compensated sensitivity `(λ_NC − λ⁰)/ΔK`. `linearize_at(k)`
/// returns the linear model with the uncompensated controller at gain `k`.
pub fn numerical_sensitivity<F>(mut linearize_at: F, lambda_target: C64, delta_k: f64) -> Result<SensitivityEstimate>
where
    F: FnMut(f64) -> Result<LinearModel>,
{
    if delta_k == 0.0 {
        return Err(Error::ZeroGainStep);
    }
    let lin0 = linearize_at(0.0)?;
    let lambda0 = nearest(&eigenvalues(&lin0.a)?, lambda_target);
    let v0 = eigenvectors(&lin0.a, lambda0).ok().map(|(v, _, _)| v);
    let lin1 = linearize_at(delta_k)?;
    let lambda_nc = match_mode(&lin1, lambda0, v0.as_ref())?;
    SensitivityEstimate::from_eigenvalues(lambda0, lambda_nc, delta_k)
}

/// Copy of `model` with an uncompensated POD-Q of gain `k` at station `bus`.
pub fn with_uncompensated_pod(model: &SystemModel, bus: u32, variant: PodVariant, k: f64) -> SystemModel {
    let mut m = model.clone();
    m.controllers.station_mut(bus).pod_q = Some(PodQParams::uncompensated(variant, k));
    m
}

pub fn station_sensitivity(
    model: &SystemModel,
    bus: u32,
    variant: PodVariant,
    lambda_target: C64,
    delta_k: f64,
    h_rel: f64,
) -> Result<SensitivityEstimate> {
    numerical_sensitivity(
        |k| Ok(linearize_model(&with_uncompensated_pod(model, bus, variant, k), h_rel)?.0),
        lambda_target,
        delta_k,
    )
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct DesignConfig {
    pub delta_k: f64,
    pub zeta_d: f64,
    pub n_qs: usize,
    pub k_max: f64,
    pub h_rel: f64,
    /// Add lead/lag stages (up to this many) when the per-stage phase is infeasible.
    pub max_stages: Option<usize>,
    /// Align the sensitivity with whichever real axis is nearer and let the
    /// gain sign absorb a 180° difference, instead of always rotating to 180°.
    pub nearest_axis: bool,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            delta_k: 20.0,
            zeta_d: 0.15,
            n_qs: 2,
            k_max: 400.0,
            h_rel: DEFAULT_H_REL,
            max_stages: None,
            nearest_axis: true,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct StationDesign {
    pub bus: u32,
    pub variant: PodVariant,
    pub target: DesignTarget,
    pub sensitivity: SensitivityEstimate,
    pub leadlag: LeadLagDesign,
    pub compensated: C64,
    pub gain: GainResult,
    pub params: PodQParams,
}

/// Full pipeline for one station and one target eigenvalue.
pub fn design_station(
    model: &SystemModel,
    bus: u32,
    variant: PodVariant,
    lambda_target: C64,
    cfg: &DesignConfig,
) -> Result<StationDesign> {
    let sensitivity = station_sensitivity(model, bus, variant, lambda_target, cfg.delta_k, cfg.h_rel)?;
    let lambda0 = sensitivity.lambda_nc - sensitivity.s_nc * cfg.delta_k;
    let target = DesignTarget::new(lambda0, cfg.zeta_d)?;
    let phase = if cfg.nearest_axis && sensitivity.phase_nc.abs() < PI / 2.0 {
        // Design for −Ŝ; compute_gain then selects the negative gain.
        if sensitivity.phase_nc >= 0.0 {
            sensitivity.phase_nc - PI
        } else {
            sensitivity.phase_nc + PI
        }
    } else {
        sensitivity.phase_nc
    };
    let mut n_qs = cfg.n_qs;
    let leadlag = loop {
        match design_leadlag(phase, n_qs, lambda0.im) {
            Err(Error::ExcessivePhaseRequirement { .. }) if n_qs < cfg.max_stages.unwrap_or(cfg.n_qs) => n_qs += 1,
            other => break other?,
        }
    };
    let compensated = compensated_sensitivity(&sensitivity, &leadlag, lambda0);
    let gain = compute_gain(lambda0, target.lambda_d, compensated, cfg.k_max)?;
    let mut params = PodQParams::uncompensated(variant, gain.k_q);
    params.t_q1 = leadlag.t_q1;
    params.a_q = leadlag.a_q;
    params.n_qs = leadlag.n_qs;
    Ok(StationDesign {
        bus,
        variant,
        target,
        sensitivity,
        leadlag,
        compensated,
        gain,
        params,
    })
}

/// Least-damped mode classified to `region`.
pub fn dominant_mode<'a>(modes: &'a [Mode], region: &str) -> Option<&'a Mode> {
    ModeSelector::region(region).select(modes)
}

/// Converter stations whose AC bus lies in `region`.
pub fn region_stations(model: &SystemModel, region: &str) -> Vec<u32> {
    model
        .hvdc_links
        .iter()
        .flat_map(|l| l.stations())
        .filter(|s| model.network.bus(s.bus).is_some_and(|b| b.region == region))
        .map(|s| s.bus)
        .collect()
}

/// Which mode a design targets: the least-damped intra-area mode of `region`,
/// optionally restricted to a frequency window in Hz.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ModeSelector {
    pub region: String,
    #[serde(default)]
    pub freq_window_hz: Option<(f64, f64)>,
}

impl ModeSelector {
    pub fn region(region: &str) -> Self {
        Self {
            region: region.to_string(),
            freq_window_hz: None,
        }
    }

    pub fn select<'a>(&self, modes: &'a [Mode]) -> Option<&'a Mode> {
        let class = RegionClass::Intra(self.region.clone());
        modes
            .iter()
            .filter(|m| m.region_class == class)
            .filter(|m| self.freq_window_hz.is_none_or(|(lo, hi)| m.freq >= lo && m.freq <= hi))
            .min_by(|a, b| a.zeta.total_cmp(&b.zeta))
    }
}

/// Design every station of `region` independently against that region's
/// least-damped mode of `model`.
pub fn design_region(
    model: &SystemModel,
    region: &str,
    variant: PodVariant,
    cfg: &DesignConfig,
) -> Result<(Mode, Vec<StationDesign>)> {
    design_selected(model, &ModeSelector::region(region), variant, cfg)
}

/// Design every station of the selector's region against the selected mode.
pub fn design_selected(
    model: &SystemModel,
    selector: &ModeSelector,
    variant: PodVariant,
    cfg: &DesignConfig,
) -> Result<(Mode, Vec<StationDesign>)> {
    let region = selector.region.as_str();
    let (lin, _) = linearize_model(model, cfg.h_rel)?;
    let modes = eigensolve(&lin)?;
    let target = selector
        .select(&modes)
        .cloned()
        .ok_or_else(|| Error::InvalidConfig(format!("no electromechanical mode selected in region {region}")))?;
    let designs = region_stations(model, region)
        .into_iter()
        .map(|bus| design_station(model, bus, variant, target.lambda, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((target, designs))
}

pub fn install(model: &SystemModel, designs: &[StationDesign]) -> SystemModel {
    let mut m = model.clone();
    for d in designs {
        m.controllers.station_mut(d.bus).pod_q = Some(d.params.clone());
    }
    m
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ModeComparison {
    pub region_class: RegionClass,
    pub baseline: C64,
    pub baseline_zeta: f64,
    pub achieved: C64,
    pub achieved_zeta: f64,
    pub achieved_freq: f64,
}

impl ModeComparison {
    pub fn delta_zeta(&self) -> f64 {
        self.achieved_zeta - self.baseline_zeta
    }
}

/// Follow every electromechanical mode of `baseline` into `designed` by the
/// correlation of their eigenvectors over the states both models share.
pub fn verify_design(baseline: &SystemModel, designed: &SystemModel, h_rel: f64) -> Result<Vec<ModeComparison>> {
    let (lin0, _) = linearize_model(baseline, h_rel)?;
    let (lin1, _) = linearize_model(designed, h_rel)?;
    let modes0 = eigensolve(&lin0)?;
    let modes1 = eigensolve(&lin1)?;
    compare_modes(&lin0, &modes0, &lin1, &modes1)
}

/// Mode shapes are compared on the machine speeds both models share: they
/// carry the electromechanical signature, while controller and network states
/// differ between the models and would dilute the correlation. Candidates
/// within [`MATCH_GAP`] of the best correlation are separated by eigenvalue
/// distance.
pub fn compare_modes(
    lin0: &LinearModel,
    modes0: &[Mode],
    lin1: &LinearModel,
    modes1: &[Mode],
) -> Result<Vec<ModeComparison>> {
    let common: Vec<(usize, usize)> = lin0
        .speed_states
        .iter()
        .filter_map(|(i, _)| {
            let label = &lin0.state_labels[*i];
            lin1.state_labels.iter().position(|m| m == label).map(|j| (*i, j))
        })
        .collect();
    if common.is_empty() {
        return Err(Error::InvalidModel("models share no machine speed states".into()));
    }
    let restrict = |v: &DVector<C64>, pick: &dyn Fn(&(usize, usize)) -> usize| {
        DVector::from_iterator(common.len(), common.iter().map(|p| v[pick(p)]))
    };
    let mut out = Vec::new();
    for m0 in modes0.iter().filter(|m| m.region_class != RegionClass::NonElectromech) {
        let v0 = restrict(m0.right.as_ref().unwrap(), &|p| p.0);
        let scored: Vec<(f64, &Mode)> = modes1
            .iter()
            .filter_map(|m1| {
                m1.right
                    .as_ref()
                    .map(|v| (correlation(&v0, &restrict(v, &|p| p.1)), m1))
            })
            .collect();
        let Some(best) = scored.iter().map(|s| s.0).max_by(f64::total_cmp) else {
            continue;
        };
        let m1 = scored
            .iter()
            .filter(|s| s.0 >= best - MATCH_GAP)
            .min_by(|a, b| {
                (a.1.lambda - m0.lambda)
                    .norm()
                    .total_cmp(&(b.1.lambda - m0.lambda).norm())
            })
            .unwrap()
            .1;
        out.push(ModeComparison {
            region_class: m0.region_class.clone(),
            baseline: m0.lambda,
            baseline_zeta: m0.zeta,
            achieved: m1.lambda,
            achieved_zeta: m1.zeta,
            achieved_freq: m1.freq,
        });
    }
    Ok(out)
}
