//! Four-case comparison: the AC base grid, the DC-segmented grid with constant
//! link set points, and the segmented grid with frequency support plus POD-Q
//! on either the local frequency or the regional centre-of-inertia frequency.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvdc::ControlMode;
use crate::poddesign::{compare_modes, design_region, install, DesignConfig, ModeComparison, StationDesign};
use crate::segment::{segment, SegmentationPlan};
use crate::simcore::{simulate, Event, SimConfig, SystemModel, TimeSeries};
use crate::smallsignal::{eigensolve, linearize_model, LinearModel, Mode, RegionClass};
use crate::suppctrl::{FcParams, PodVariant};
use crate::C64;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Case {
    AcBase,
    DcsConstPQ,
    DcsFcPodLF,
    DcsFcPodFCOI,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::AcBase, Case::DcsConstPQ, Case::DcsFcPodLF, Case::DcsFcPodFCOI];

    pub fn pod_variant(self) -> Option<PodVariant> {
        match self {
            Case::DcsFcPodLF => Some(PodVariant::LF),
            Case::DcsFcPodFCOI => Some(PodVariant::FCOI),
            _ => None,
        }
    }

    pub fn is_segmented(self) -> bool {
        self != Case::AcBase
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::AcBase => "AC base",
            Case::DcsConstPQ => "DCs constant PQ",
            Case::DcsFcPodLF => "DCs FC + POD-Q-LF",
            Case::DcsFcPodFCOI => "DCs FC + POD-Q-FCOI",
        })
    }
}

/// Where nadir and final frequency are read.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
pub enum FrequencySource {
    #[default]
    Coi,
    Bus(u32),
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct StudyConfig {
    /// Regions whose stations get POD-Q controllers; empty means every region.
    #[serde(default)]
    pub pod_regions: Vec<String>,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub fc: FcParams,
    /// Communication delay applied to the FCOI case after design.
    #[serde(default)]
    pub delay_tau_s: Option<f64>,
    #[serde(default)]
    pub delay_sweep_s: Vec<f64>,
    #[serde(default)]
    pub gen_trip: Option<Event>,
    #[serde(default)]
    pub line_trip: Option<Event>,
    pub sim: SimConfig,
    #[serde(default)]
    pub frequency_source: FrequencySource,
}

/// A fully assembled case, ready for linearisation or simulation.
#[derive(Clone, Debug)]
pub struct CaseModel {
    pub case: Case,
    pub model: SystemModel,
    /// Mode each region's POD-Q was designed against.
    pub pod_targets: Vec<Mode>,
    pub designs: Vec<StationDesign>,
}

/// Attach a frequency controller to every P-controlling station.
pub fn with_frequency_support(model: &SystemModel, fc: &FcParams) -> SystemModel {
    let mut m = model.clone();
    let buses: Vec<u32> = m
        .hvdc_links
        .iter()
        .flat_map(|l| l.stations())
        .filter(|s| s.mode == ControlMode::PControl)
        .map(|s| s.bus)
        .collect();
    for b in buses {
        m.controllers.station_mut(b).fc = Some(fc.clone());
    }
    m
}

pub fn build_case(ac: &SystemModel, plan: &SegmentationPlan, case: Case, cfg: &StudyConfig) -> Result<CaseModel> {
    let mut out = CaseModel {
        case,
        model: ac.clone(),
        pod_targets: Vec::new(),
        designs: Vec::new(),
    };
    if !case.is_segmented() {
        return Ok(out);
    }
    let seg = segment(ac, plan)?;
    let Some(variant) = case.pod_variant() else {
        out.model = seg;
        return Ok(out);
    };
    let fc = with_frequency_support(&seg, &cfg.fc);
    let regions = if cfg.pod_regions.is_empty() {
        fc.network.regions()
    } else {
        cfg.pod_regions.clone()
    };
    // Each region is designed on the same frequency-support baseline.
    for region in &regions {
        let (target, designs) = design_region(&fc, region, variant, &cfg.design)?;
        out.pod_targets.push(target);
        out.designs.extend(designs);
    }
    let mut model = install(&fc, &out.designs);
    if variant == PodVariant::FCOI {
        model.controllers.delay_tau_s = cfg.delay_tau_s;
    }
    out.model = model;
    Ok(out)
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct NadirRow {
    pub case: Case,
    pub region: String,
    pub channel: String,
    pub f_min: f64,
    pub t_min: f64,
    pub f_final: f64,
    /// max |df/dt| over the last second of the run was below 1e-4 pu/s.
    pub settled: bool,
}

const SETTLE_RATE: f64 = 1e-4;

/// Minimum and final value of a frequency channel.
pub fn nadir(ts: &TimeSeries, case: Case, region: &str, source: &FrequencySource) -> Result<NadirRow> {
    let channel = match source {
        FrequencySource::Coi => format!("coi.{region}.freq_pu"),
        FrequencySource::Bus(b) => format!("bus.{b}.freq_pu"),
    };
    let f = ts
        .channel(&channel)
        .ok_or_else(|| Error::TargetNotFound(format!("channel {channel}")))?;
    let (k_min, f_min) = f
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::InvalidConfig("empty time series".into()))?;
    let t_end = *ts.time.last().unwrap();
    let rate = ts
        .time
        .windows(2)
        .zip(f.windows(2))
        .filter(|(t, _)| t[0] >= t_end - 1.0)
        .map(|(t, v)| ((v[1] - v[0]) / (t[1] - t[0])).abs())
        .fold(0.0f64, f64::max);
    Ok(NadirRow {
        case,
        region: region.to_string(),
        channel,
        f_min,
        t_min: ts.time[k_min],
        f_final: *f.last().unwrap(),
        settled: rate < SETTLE_RATE,
    })
}

/// Follow `reference` (a mode of `lin_ref`) into another linear model.
pub fn track_mode(
    lin_ref: &LinearModel,
    reference: &Mode,
    lin: &LinearModel,
    modes: &[Mode],
) -> Result<ModeComparison> {
    compare_modes(lin_ref, std::slice::from_ref(reference), lin, modes)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidConfig("reference mode is not electromechanical".into()))
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct DelayRow {
    pub tau_s: f64,
    pub lambda: C64,
    pub zeta: f64,
    pub freq_hz: f64,
}

/// Damping of `reference` in `model` for each communication delay.
pub fn delay_sweep(
    model: &SystemModel,
    lin_ref: &LinearModel,
    reference: &Mode,
    taus: &[f64],
    h_rel: f64,
) -> Result<Vec<DelayRow>> {
    taus.iter()
        .map(|&tau| {
            let mut m = model.clone();
            m.controllers.delay_tau_s = (tau > 0.0).then_some(tau);
            let (lin, _) = linearize_model(&m, h_rel)?;
            let modes = eigensolve(&lin)?;
            let c = track_mode(lin_ref, reference, &lin, &modes)?;
            Ok(DelayRow {
                tau_s: tau,
                lambda: c.achieved,
                zeta: c.achieved_zeta,
                freq_hz: c.achieved_freq,
            })
        })
        .collect()
}

/// Damping and frequency read off a free oscillation.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct Ringdown {
    pub zeta: f64,
    pub freq_hz: f64,
    pub n_extrema: usize,
}

/// Logarithmic-decrement estimate over the samples with `t0 <= t <= t1`.
///
/// Consecutive extrema are located with parabolic refinement; the decay of the
/// peak-to-peak swings makes the estimate insensitive to a slow offset.
pub fn ringdown(time: &[f64], signal: &[f64], t0: f64, t1: f64) -> Result<Ringdown> {
    let idx: Vec<usize> = (0..time.len()).filter(|&k| time[k] >= t0 && time[k] <= t1).collect();
    let mut ext: Vec<(f64, f64)> = Vec::new();
    for w in idx.windows(3) {
        let (a, b, c) = (signal[w[0]], signal[w[1]], signal[w[2]]);
        if (b - a) * (c - b) < 0.0 {
            let h = time[w[1]] - time[w[0]];
            let den = a - 2.0 * b + c;
            let off = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
            ext.push((time[w[1]] + off * h, b - 0.25 * (a - c) * off));
        }
    }
    if ext.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "ringdown window holds {} extrema, need at least 4",
            ext.len()
        )));
    }
    let swings: Vec<f64> = ext.windows(2).map(|w| (w[1].1 - w[0].1).abs()).collect();
    let n_half = (swings.len() - 1) as f64;
    let decay_half = (swings[0] / swings[swings.len() - 1]).ln() / n_half;
    let delta = 2.0 * decay_half;
    let half_period = (ext[ext.len() - 1].0 - ext[0].0) / (ext.len() - 1) as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(Ringdown {
        zeta: delta / (two_pi * two_pi + delta * delta).sqrt(),
        freq_hz: 1.0 / (2.0 * half_period),
        n_extrema: ext.len(),
    })
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct CaseReport {
    pub case: Case,
    pub modes: Vec<Mode>,
    pub designs: Vec<StationDesign>,
    pub nadir: Vec<NadirRow>,
    #[serde(skip)]
    pub gen_trip: Option<TimeSeries>,
    #[serde(skip)]
    pub line_trip: Option<TimeSeries>,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct StudyReport {
    pub cases: Vec<CaseReport>,
    /// Target-mode damping against delay on the FCOI case, one block per region.
    pub delay: Vec<(String, Vec<DelayRow>)>,
}

impl StudyReport {
    pub fn case(&self, case: Case) -> Option<&CaseReport> {
        self.cases.iter().find(|c| c.case == case)
    }
}

fn run_case(cm: &CaseModel, cfg: &StudyConfig) -> Result<(CaseReport, LinearModel)> {
    let (lin, _) = linearize_model(&cm.model, cfg.design.h_rel)?;
    let modes = eigensolve(&lin)?;
    let gen_trip = cfg
        .gen_trip
        .as_ref()
        .map(|e| simulate(&cm.model, std::slice::from_ref(e), &cfg.sim))
        .transpose()?;
    let line_trip = cfg
        .line_trip
        .as_ref()
        .map(|e| simulate(&cm.model, std::slice::from_ref(e), &cfg.sim))
        .transpose()?;
    let mut rows = Vec::new();
    if let Some(ts) = &gen_trip {
        for region in cm.model.network.regions() {
            rows.push(nadir(ts, cm.case, &region, &cfg.frequency_source)?);
        }
    }
    Ok((
        CaseReport {
            case: cm.case,
            modes,
            designs: cm.designs.clone(),
            nadir: rows,
            gen_trip,
            line_trip,
        },
        lin,
    ))
}

/// Build and evaluate all four cases concurrently, then run the delay sweep
/// on the FCOI case against the constant-PQ modes it was designed for.
pub fn run_case_study(ac: &SystemModel, plan: &SegmentationPlan, cfg: &StudyConfig) -> Result<StudyReport> {
    let results: Vec<Result<(CaseModel, CaseReport, LinearModel)>> = std::thread::scope(|s| {
        let handles: Vec<_> = Case::ALL
            .iter()
            .map(|&case| {
                s.spawn(move || {
                    let cm = build_case(ac, plan, case, cfg)?;
                    let (rep, lin) = run_case(&cm, cfg)?;
                    Ok((cm, rep, lin))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("case worker panicked"))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut delay = Vec::new();
    if !cfg.delay_sweep_s.is_empty() {
        let (_, pq, lin_pq) = results.iter().find(|r| r.0.case == Case::DcsConstPQ).unwrap();
        let (fcoi, _, _) = results.iter().find(|r| r.0.case == Case::DcsFcPodFCOI).unwrap();
        for target in &fcoi.pod_targets {
            let RegionClass::Intra(region) = &target.region_class else {
                continue;
            };
            let reference = pq
                .modes
                .iter()
                .filter(|m| &m.region_class == &target.region_class)
                .min_by(|a, b| {
                    (a.lambda - target.lambda)
                        .norm()
                        .total_cmp(&(b.lambda - target.lambda).norm())
                })
                .ok_or_else(|| Error::InvalidConfig(format!("no constant-PQ mode for region {region}")))?;
            let rows = delay_sweep(&fcoi.model, lin_pq, reference, &cfg.delay_sweep_s, cfg.design.h_rel)?;
            delay.push((region.clone(), rows));
        }
    }
    Ok(StudyReport {
        cases: results.into_iter().map(|r| r.1).collect(),
        delay,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ringdown_recovers_damped_sine() {
        let (zeta, f) = (0.05, 0.8);
        let wn = 2.0 * std::f64::consts::PI * f / (1.0f64 - zeta * zeta).sqrt();
        let wd = 2.0 * std::f64::consts::PI * f;
        let t: Vec<f64> = (0..4000).map(|k| k as f64 * 0.005).collect();
        let x: Vec<f64> = t
            .iter()
            .map(|&t| 0.3 + (-zeta * wn * t).exp() * (wd * t + 0.4).sin())
            .collect();
        let r = ringdown(&t, &x, 0.0, 12.0).unwrap();
        assert!((r.zeta - zeta).abs() / zeta < 0.01, "zeta {}", r.zeta);
        assert!((r.freq_hz - f).abs() / f < 0.002, "f {}", r.freq_hz);
    }

    #[test]
    fn ringdown_needs_oscillation() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.01).collect();
        let x: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        assert!(ringdown(&t, &x, 0.0, 1.0).is_err());
    }

    #[test]
    fn case_labels() {
        assert_eq!(Case::DcsConstPQ.to_string(), "DCs constant PQ");
        assert_eq!(Case::DcsFcPodFCOI.pod_variant(), Some(PodVariant::FCOI));
        assert!(!Case::AcBase.is_segmented());
    }
}
