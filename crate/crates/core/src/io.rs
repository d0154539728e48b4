//! Scenario files, canonical JSON and the human-readable report tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PowerFlowSolution;
use crate::poddesign::{DesignConfig, ModeComparison, ModeSelector, StationDesign};
use crate::segment::SegmentationPlan;
use crate::simcore::{Event, SimConfig, SystemModel};
use crate::smallsignal::{Mode, RegionClass};
use crate::study::{build_case, Case, CaseModel, DelayRow, FrequencySource, NadirRow, StudyConfig};
use crate::suppctrl::{ControllerBank, FcParams, PodVariant};

/// One run description. Paths are relative to the scenario file.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Scenario {
    pub system: PathBuf,
    #[serde(default)]
    pub segmentation: Option<PathBuf>,
    #[serde(default = "default_case")]
    pub case: Case,
    #[serde(default)]
    pub events: Vec<Event>,
    pub sim: SimConfig,
    /// Channel selectors added to `sim.record`.
    #[serde(default)]
    pub record: Vec<String>,
    /// Replaces the controller bank of the resolved case when present.
    #[serde(default)]
    pub controllers: Option<ControllerBank>,
    #[serde(default)]
    pub design: DesignConfig,
    /// Target-mode selector for `design-pod`.
    #[serde(default)]
    pub target: Option<ModeSelector>,
    #[serde(default)]
    pub pod_variant: Option<PodVariant>,
    #[serde(default)]
    pub pod_regions: Vec<String>,
    #[serde(default)]
    pub fc: FcParams,
    #[serde(default)]
    pub delay_tau_s: Option<f64>,
    #[serde(default)]
    pub delay_sweep_s: Vec<f64>,
    #[serde(default)]
    pub gen_trip: Option<Event>,
    #[serde(default)]
    pub line_trip: Option<Event>,
    #[serde(default)]
    pub frequency_source: FrequencySource,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_case() -> Case {
    Case::AcBase
}

/// A scenario with its referenced files read.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub path: PathBuf,
    pub scenario: Scenario,
    pub base: SystemModel,
    pub plan: Option<SegmentationPlan>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_model(path: &Path) -> Result<SystemModel> {
    let m: SystemModel = read_json(path)?;
    m.validate()?;
    Ok(m)
}

/// Sorted keys, two-space indentation, shortest round-trip floats: writing
/// what was read back reproduces the same bytes.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_canonical_json(value)?)?;
    Ok(())
}

impl LoadedScenario {
    pub fn load(path: &Path) -> Result<Self> {
        let scenario: Scenario = read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let base = load_model(&dir.join(&scenario.system))?;
        let plan = scenario
            .segmentation
            .as_ref()
            .map(|p| read_json::<SegmentationPlan>(&dir.join(p)))
            .transpose()?;
        if scenario.case.is_segmented() && plan.is_none() {
            return Err(Error::InvalidConfig(format!(
                "case {} needs a segmentation plan",
                scenario.case
            )));
        }
        scenario.sim.validate()?;
        Ok(Self {
            path: path.to_path_buf(),
            scenario,
            base,
            plan,
        })
    }

    pub fn study_config(&self) -> StudyConfig {
        let s = &self.scenario;
        let mut sim = s.sim.clone();
        sim.record.extend(s.record.iter().cloned());
        StudyConfig {
            pod_regions: s.pod_regions.clone(),
            design: s.design.clone(),
            fc: s.fc.clone(),
            delay_tau_s: s.delay_tau_s,
            delay_sweep_s: s.delay_sweep_s.clone(),
            gen_trip: s.gen_trip.clone(),
            line_trip: s.line_trip.clone(),
            sim,
            frequency_source: s.frequency_source.clone(),
        }
    }

    pub fn plan(&self) -> Result<&SegmentationPlan> {
        self.plan
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("scenario has no segmentation plan".into()))
    }

    /// Model of the scenario's case, with the controller override applied.
    pub fn resolve(&self) -> Result<CaseModel> {
        let cfg = self.study_config();
        let mut cm = match &self.plan {
            Some(plan) => build_case(&self.base, plan, self.scenario.case, &cfg)?,
            None => build_case(
                &self.base,
                &SegmentationPlan {
                    links: Vec::new(),
                    rule: Default::default(),
                },
                Case::AcBase,
                &cfg,
            )?,
        };
        if let Some(bank) = &self.scenario.controllers {
            cm.model.controllers = bank.clone();
            cm.model.validate()?;
        }
        Ok(cm)
    }

    /// Output directory: the explicit override, the scenario's `out`, or the
    /// scenario's own directory.
    pub fn out_dir(&self, cli: Option<&Path>) -> PathBuf {
        let dir = self.path.parent().unwrap_or(Path::new("."));
        match (cli, &self.scenario.out) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => dir.join(p),
            (None, None) => dir.to_path_buf(),
        }
    }
}

pub fn format_power_flow(pf: &PowerFlowSolution) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>6} {:>10} {:>11} {:>11} {:>11}",
        "bus", "|V| pu", "angle deg", "P pu", "Q pu"
    );
    for k in 0..pf.bus_ids.len() {
        let _ = writeln!(
            s,
            "{:>6} {:>10.6} {:>11.5} {:>11.5} {:>11.5}",
            pf.bus_ids[k],
            pf.v_mag[k],
            pf.v_ang[k].to_degrees(),
            pf.p_inj[k],
            pf.q_inj[k]
        );
    }
    let _ = writeln!(
        s,
        "iterations {}, max mismatch {:.3e} pu",
        pf.iterations, pf.max_mismatch
    );
    s
}

/// Electromechanical modes (plus any other listed mode) as a table.
pub fn format_mode_table(modes: &[Mode]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>10} {:>10} {:>9} {:>9}",
        "class", "real", "imag", "zeta %", "f Hz"
    );
    for m in modes {
        let _ = writeln!(
            s,
            "{:<12} {:>10.4} {:>10.4} {:>9.2} {:>9.4}",
            m.region_class.to_string(),
            m.lambda.re,
            m.lambda.im,
            100.0 * m.zeta,
            m.freq
        );
    }
    s
}

pub fn electromechanical_rows(modes: &[Mode]) -> Vec<Mode> {
    modes
        .iter()
        .filter(|m| m.region_class != RegionClass::NonElectromech)
        .cloned()
        .collect()
}

pub fn format_comparison_table(rows: &[ModeComparison]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>10} {:>10} {:>10} {:>9}",
        "mode", "zeta0 %", "zeta %", "dzeta pts", "f Hz"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:>10.2} {:>10.2} {:>+10.2} {:>9.4}",
            r.region_class.to_string(),
            100.0 * r.baseline_zeta,
            100.0 * r.achieved_zeta,
            100.0 * r.delta_zeta(),
            r.achieved_freq
        );
    }
    s
}

pub fn format_design_table(designs: &[StationDesign]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>6} {:>6} {:>10} {:>9} {:>8} {:>4} {:>10} {:>5}",
        "bus", "var", "K_Q pu", "T_Q1 s", "a_Q", "N", "phase deg", "sat"
    );
    for d in designs {
        let _ = writeln!(
            s,
            "{:>6} {:>6} {:>10.2} {:>9.4} {:>8.4} {:>4} {:>10.2} {:>5}",
            d.bus,
            format!("{:?}", d.variant),
            d.gain.k_q,
            d.leadlag.t_q1,
            d.leadlag.a_q,
            d.leadlag.n_qs,
            d.sensitivity.phase_nc.to_degrees(),
            if d.gain.saturated { "yes" } else { "no" }
        );
    }
    s
}

pub fn format_nadir_table(rows: &[NadirRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<22} {:<8} {:>11} {:>8} {:>11} {:>8}",
        "case", "region", "f_min pu", "t_min s", "f_final pu", "settled"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<22} {:<8} {:>11.6} {:>8.2} {:>11.6} {:>8}",
            r.case.to_string(),
            r.region,
            r.f_min,
            r.t_min,
            r.f_final,
            r.settled
        );
    }
    s
}

pub fn format_delay_table(region: &str, rows: &[DelayRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "target mode {region}");
    let _ = writeln!(s, "{:>8} {:>10} {:>9}", "tau s", "zeta %", "f Hz");
    for r in rows {
        let _ = writeln!(s, "{:>8.3} {:>10.2} {:>9.4}", r.tau_s, 100.0 * r.zeta, r.freq_hz);
    }
    s
}
