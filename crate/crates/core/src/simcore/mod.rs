//! Whole-system assembly, equilibrium initialisation and implicit
//! time-domain simulation with scripted trips.

mod init;
mod integrate;
mod system;

pub use init::{initialize, initialize_with, Equilibrium, OperatingPoint, INIT_TOL, PF_TOL};
pub use integrate::{fmt_sig9, simulate, simulate_from, TimeSeries};
pub use system::{DynamicSystem, Observation};

use serde::{Deserialize, Serialize};

use crate::dynamics::SynchronousMachine;
use crate::error::{Error, Result};
use crate::grid::NetworkModel;
use crate::hvdc::HvdcLink;
use crate::suppctrl::ControllerBank;

fn d_base_frequency() -> f64 {
    50.0
}
fn d_freq_filter() -> f64 {
    0.02
}

/// Everything needed to build the dynamic model of one case.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SystemModel {
    #[serde(flatten)]
    pub network: NetworkModel,
    #[serde(default = "d_base_frequency")]
    pub base_frequency_hz: f64,
    /// Time constant of the bus-frequency estimators, seconds.
    #[serde(default = "d_freq_filter")]
    pub freq_filter_s: f64,
    #[serde(default)]
    pub machines: Vec<SynchronousMachine>,
    #[serde(default)]
    pub hvdc_links: Vec<HvdcLink>,
    #[serde(default)]
    pub controllers: ControllerBank,
}

impl SystemModel {
    pub fn omega_s(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.base_frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if !(self.freq_filter_s > 0.0) || !(self.base_frequency_hz > 0.0) {
            return Err(Error::InvalidModel(
                "base frequency and frequency filter must be positive".into(),
            ));
        }
        let idx = self.network.bus_index();
        for m in &self.machines {
            m.validate()?;
            if !idx.contains_key(&m.bus) {
                return Err(Error::InvalidModel(format!("{} at unknown bus", m.name())));
            }
        }
        for (i, m) in self.machines.iter().enumerate() {
            if self.machines[..i].iter().any(|o| o.bus == m.bus && o.unit == m.unit) {
                return Err(Error::InvalidModel(format!("duplicate machine {}", m.name())));
            }
        }
        for l in &self.hvdc_links {
            l.validate()?;
            for st in l.stations() {
                if !idx.contains_key(&st.bus) {
                    return Err(Error::InvalidModel(format!(
                        "link {}: station at unknown bus {}",
                        l.name, st.bus
                    )));
                }
            }
        }
        for sc in &self.controllers.stations {
            let station = self
                .hvdc_links
                .iter()
                .flat_map(|l| l.stations())
                .find(|s| s.bus == sc.bus)
                .ok_or_else(|| Error::InvalidConfig(format!("controller at bus {} has no station", sc.bus)))?;
            if sc.fc.is_some() && station.mode != crate::hvdc::ControlMode::PControl {
                return Err(Error::InvalidConfig(format!(
                    "frequency controller at bus {} needs a P-control station",
                    sc.bus
                )));
            }
            if let Some(p) = &sc.pod_q {
                p.validate()?;
            }
        }
        if let Some(tau) = self.controllers.delay_tau_s {
            if tau < 0.0 {
                return Err(Error::InvalidConfig("delay must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn machine_index(&self, bus: u32, unit: u32) -> Option<usize> {
        self.machines.iter().position(|m| m.bus == bus && m.unit == unit)
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind")]
pub enum EventKind {
    /// Open one circuit between two buses (the first in-service one when no
    /// circuit number is given).
    TripBranch {
        from: u32,
        to: u32,
        #[serde(default)]
        circuit: Option<u32>,
    },
    TripMachine {
        bus: u32,
        #[serde(default = "default_unit")]
        unit: u32,
    },
}

fn default_unit() -> u32 {
    1
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn label(&self) -> String {
        match &self.kind {
            EventKind::TripBranch { from, to, circuit } => match circuit {
                Some(c) => format!("branch {from}-{to}#{c}"),
                None => format!("branch {from}-{to}"),
            },
            EventKind::TripMachine { bus, unit } => format!("machine {bus}#{unit}"),
        }
    }
}

/// Apply a topology event and return the modified copy of the model.
pub fn apply_event(model: &SystemModel, event: &Event) -> Result<SystemModel> {
    let mut out = model.clone();
    match &event.kind {
        EventKind::TripBranch { from, to, circuit } => {
            let matches: Vec<usize> = model
                .network
                .branches
                .iter()
                .enumerate()
                .filter(|(_, b)| {
                    ((b.from == *from && b.to == *to) || (b.from == *to && b.to == *from))
                        && circuit.is_none_or(|c| b.circuit == c)
                })
                .map(|(i, _)| i)
                .collect();
            if matches.is_empty() {
                return Err(Error::TargetNotFound(event.label()));
            }
            let i = *matches
                .iter()
                .find(|&&i| model.network.branches[i].status)
                .ok_or_else(|| Error::AlreadyOut(event.label()))?;
            out.network.branches[i].status = false;
            let before = model.network.components().len();
            let after = out.network.components();
            if after.len() > before {
                // The split-off piece is the endpoint component without a slack.
                let idx = out.network.bus_index();
                let comp_of = |bus: u32| after.iter().find(|c| c.contains(&idx[&bus])).unwrap();
                let branch = &out.network.branches[i];
                for end in [branch.from, branch.to] {
                    let comp = comp_of(end);
                    let has_slack = comp
                        .iter()
                        .any(|&k| out.network.buses[k].kind == crate::grid::BusKind::Slack);
                    if !has_slack {
                        if let Some(m) = out.machines.iter().find(|m| comp.contains(&idx[&m.bus])) {
                            return Err(Error::IslandedMachine {
                                branch: event.label(),
                                bus: m.bus,
                            });
                        }
                    }
                }
                return Err(Error::Islanding(event.label()));
            }
        }
        EventKind::TripMachine { bus, unit } => {
            let i = model
                .machine_index(*bus, *unit)
                .ok_or_else(|| Error::TargetNotFound(event.label()))?;
            out.machines.remove(i);
        }
    }
    Ok(out)
}

/// Resolves the DC-link resonances of typical links (tens of Hz) as well as
/// the electromechanical band.
fn d_dt() -> f64 {
    0.0025
}
fn d_newton_tol() -> f64 {
    1e-8
}
fn d_decimation() -> usize {
    1
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IntegrationMethod {
    #[default]
    TrapezoidalImplicit,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SimConfig {
    #[serde(default = "d_dt")]
    pub dt: f64,
    pub t_stop: f64,
    #[serde(default)]
    pub method: IntegrationMethod,
    #[serde(default = "d_newton_tol")]
    pub newton_tol: f64,
    /// Record every n-th grid point.
    #[serde(default = "d_decimation")]
    pub decimation: usize,
    /// Channel selectors (`*` wildcards); empty records every channel.
    #[serde(default)]
    pub record: Vec<String>,
}

impl SimConfig {
    pub fn new(dt: f64, t_stop: f64) -> Self {
        Self {
            dt,
            t_stop,
            method: IntegrationMethod::TrapezoidalImplicit,
            newton_tol: d_newton_tol(),
            decimation: 1,
            record: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.02) {
            return Err(Error::InvalidConfig(format!("dt = {} s outside (0, 0.02]", self.dt)));
        }
        if !(self.t_stop > 0.0) {
            return Err(Error::InvalidConfig("t_stop must be positive".into()));
        }
        if !(self.newton_tol > 0.0) || self.decimation == 0 {
            return Err(Error::InvalidConfig(
                "newton_tol and decimation must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Glob match supporting `*` (any run of characters).
pub fn channel_matches(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let mut rest = name;
    if !rest.starts_with(parts[0]) {
        return false;
    }
    rest = &rest[parts[0].len()..];
    for (k, part) in parts.iter().enumerate().skip(1) {
        if k == parts.len() - 1 {
            return rest.ends_with(part);
        }
        match rest.find(part) {
            Some(p) => rest = &rest[p + part.len()..],
            None => return false,
        }
    }
    true
}
