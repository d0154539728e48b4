//! Supplementary station controllers: frequency support (FC), reactive-power
//! oscillation damping (POD-Q, local-frequency or centre-of-inertia variant)
//! and a first-order Padé communication delay.
//!
//! Every block is written as `output = g(state, input)` plus `dstate/dt`, so
//! the simulator can integrate them alongside the network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn d_k_fc() -> f64 {
    100.0
}
fn d_t_fc() -> f64 {
    0.1
}
fn d_dp_max() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct FcParams {
    #[serde(default = "d_k_fc")]
    pub k_fc: f64,
    #[serde(default = "d_t_fc")]
    pub t_fc: f64,
    #[serde(default = "d_dp_max")]
    pub dp_max: f64,
}

impl Default for FcParams {
    fn default() -> Self {
        Self {
            k_fc: d_k_fc(),
            t_fc: d_t_fc(),
            dp_max: d_dp_max(),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PodVariant {
    LF,
    FCOI,
}

fn d_t_qf() -> f64 {
    0.1
}
fn d_t_qw() -> f64 {
    5.0
}
fn d_n_qs() -> usize {
    2
}
fn d_dq_max() -> f64 {
    0.1
}
fn d_a_q() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct PodQParams {
    pub variant: PodVariant,
    #[serde(default)]
    pub k_q: f64,
    #[serde(default = "d_t_qf")]
    pub t_qf: f64,
    #[serde(default = "d_t_qw")]
    pub t_qw: f64,
    /// Lead/lag time constant; zero bypasses the lead/lag stages.
    #[serde(default)]
    pub t_q1: f64,
    #[serde(default = "d_a_q")]
    pub a_q: f64,
    #[serde(default = "d_n_qs")]
    pub n_qs: usize,
    /// Output limit, converter base.
    #[serde(default = "d_dq_max")]
    pub dq_max: f64,
}

impl PodQParams {
    /// Controller with the default filters, no lead/lag and the given gain.
    pub fn uncompensated(variant: PodVariant, k_q: f64) -> Self {
        Self {
            variant,
            k_q,
            t_qf: d_t_qf(),
            t_qw: d_t_qw(),
            t_q1: 0.0,
            a_q: 1.0,
            n_qs: d_n_qs(),
            dq_max: d_dq_max(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_qf > 0.0 && self.t_qw > 0.0 && self.t_q1 >= 0.0 && self.a_q > 0.0 && self.dq_max > 0.0)
            || self.n_qs < 1
        {
            return Err(Error::InvalidConfig(
                "POD-Q needs t_qf, t_qw, a_q, dq_max > 0, t_q1 >= 0, n_qs >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn leadlag_active(&self) -> bool {
        self.t_q1 > 0.0
    }

    /// Number of states: low-pass, washout and the active lead/lag stages.
    pub fn n_states(&self) -> usize {
        2 + if self.leadlag_active() { self.n_qs } else { 0 }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Default)]
pub struct DelayParams {
    pub tau: f64,
    pub enabled: bool,
}

impl DelayParams {
    pub fn active(&self) -> bool {
        self.enabled && self.tau > 0.0
    }
}

/// Supplementary controllers attached to one converter station.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct StationControllers {
    pub bus: u32,
    #[serde(default)]
    pub fc: Option<FcParams>,
    #[serde(default)]
    pub pod_q: Option<PodQParams>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
pub struct ControllerBank {
    #[serde(default)]
    pub stations: Vec<StationControllers>,
    /// Communication delay on the centre-of-inertia error path.
    #[serde(default)]
    pub delay_tau_s: Option<f64>,
}

impl ControllerBank {
    pub fn station(&self, bus: u32) -> Option<&StationControllers> {
        self.stations.iter().find(|s| s.bus == bus)
    }

    pub fn station_mut(&mut self, bus: u32) -> &mut StationControllers {
        if let Some(i) = self.stations.iter().position(|s| s.bus == bus) {
            &mut self.stations[i]
        } else {
            self.stations.push(StationControllers {
                bus,
                fc: None,
                pod_q: None,
            });
            self.stations.last_mut().unwrap()
        }
    }

    pub fn delay(&self) -> DelayParams {
        match self.delay_tau_s {
            Some(tau) => DelayParams { tau, enabled: true },
            None => DelayParams::default(),
        }
    }
}

/// Frequency controller: drives the local terminal towards the mean of both
/// terminal frequencies. Returns `(ΔP_ref, dx/dt)`.
pub fn fc_reference(omega_i: f64, omega_j: f64, p: &FcParams, x: f64) -> (f64, f64) {
    let omega_bar = 0.5 * (omega_i + omega_j);
    let dx = (p.k_fc * (omega_bar - omega_i) - x) / p.t_fc;
    (x.clamp(-p.dp_max, p.dp_max), dx)
}

/// Frequency set point of a POD-Q controller.
pub fn podq_setpoint(variant: PodVariant, omega_coi: Option<f64>) -> Result<f64> {
    match variant {
        PodVariant::LF => Ok(1.0),
        PodVariant::FCOI => omega_coi.ok_or(Error::MissingCoi),
    }
}

/// POD-Q chain on the frequency error: low-pass, washout, lead/lag stages,
/// gain and output limit. `x` holds `[low-pass, washout, stage_1..stage_n]`;
/// the rates are written into `dx`. Returns ΔQ_ref.
pub fn podq_output(err: f64, p: &PodQParams, x: &[f64], dx: &mut [f64]) -> f64 {
    let lp = x[0];
    dx[0] = (err - lp) / p.t_qf;
    let w = x[1];
    dx[1] = (lp - w) / p.t_qw;
    let mut u = lp - w;
    if p.leadlag_active() {
        let t2 = p.a_q * p.t_q1;
        for k in 0..p.n_qs {
            let l = x[2 + k];
            dx[2 + k] = (u - l) / t2;
            u = l + (u - l) / p.a_q;
        }
    }
    (p.k_q * u).clamp(-p.dq_max, p.dq_max)
}

/// First-order Padé approximation of a delay: `(1 - sτ/2)/(1 + sτ/2)`.
/// Returns `(output, dx/dt)`; with the delay inactive the input passes through.
pub fn pade_delay(u: f64, d: &DelayParams, x: f64) -> (f64, f64) {
    if !d.active() {
        return (u, 0.0);
    }
    (2.0 * x - u, (u - x) / (0.5 * d.tau))
}
