//! Synchronous machines (two-axis model), first-order exciter, droop governor,
//! bus-frequency estimation and centre-of-inertia frequency.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{NetworkModel, PowerFlowSolution};
use crate::C64;

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SimpleExciter {
    pub ka: f64,
    pub ta: f64,
    pub efd_min: f64,
    pub efd_max: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct DroopGovernor {
    pub r_droop: f64,
    pub t1: f64,
    pub p_max: f64,
    pub p_min: f64,
}

fn default_unit() -> u32 {
    1
}

/// Two-axis synchronous machine. Reactances and `h`, `d` are on the machine base.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SynchronousMachine {
    pub bus: u32,
    #[serde(default = "default_unit")]
    pub unit: u32,
    pub s_rated: f64,
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_p: f64,
    pub xq_p: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    pub region: String,
    /// Constant field voltage when absent.
    #[serde(default)]
    pub exciter: Option<SimpleExciter>,
    /// Constant mechanical power when absent.
    #[serde(default)]
    pub governor: Option<DroopGovernor>,
}

impl SynchronousMachine {
    pub fn name(&self) -> String {
        if self.unit == 1 {
            format!("gen.{}", self.bus)
        } else {
            format!("gen.{}-{}", self.bus, self.unit)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidModel(format!("{}: {what}", self.name())));
        if !(self.h > 0.0) {
            return bad("h must be positive");
        }
        if !(self.xd >= self.xd_p && self.xd_p > 0.0) {
            return bad("need xd >= xd_p > 0");
        }
        if !(self.xq >= self.xq_p && self.xq_p > 0.0) {
            return bad("need xq >= xq_p > 0");
        }
        if !(self.td0_p > 0.0 && self.tq0_p > 0.0) {
            return bad("open-circuit time constants must be positive");
        }
        if !(self.s_rated > 0.0) {
            return bad("rating must be positive");
        }
        if let Some(e) = &self.exciter {
            if !(e.ta > 0.0) || !(e.efd_min < e.efd_max) || e.ka <= 0.0 {
                return bad("exciter needs ka > 0, ta > 0 and efd_min < efd_max");
            }
        }
        if let Some(g) = &self.governor {
            if !(g.r_droop > 0.0 && g.t1 > 0.0) || !(g.p_min < g.p_max) {
                return bad("governor needs r_droop > 0, t1 > 0 and p_min < p_max");
            }
        }
        Ok(())
    }

    /// Inertia on the system base, seconds.
    pub fn h_system(&self, system_base_mva: f64) -> f64 {
        self.h * self.s_rated / system_base_mva
    }
}

pub const MACHINE_STATES: [&str; 6] = ["delta", "omega", "eq_p", "ed_p", "efd", "pm"];

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct MachineState {
    pub delta: f64,
    pub omega: f64,
    pub eq_p: f64,
    pub ed_p: f64,
    pub efd: f64,
    /// Mechanical power; doubles as the governor state.
    pub pm: f64,
}

impl MachineState {
    pub fn to_array(&self) -> [f64; 6] {
        [self.delta, self.omega, self.eq_p, self.ed_p, self.efd, self.pm]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            delta: x[0],
            omega: x[1],
            eq_p: x[2],
            ed_p: x[3],
            efd: x[4],
            pm: x[5],
        }
    }
}

/// Voltage and power references fixed at initialisation.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct MachineSetpoints {
    pub v_ref: f64,
    pub p_ref: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatorSolution {
    pub vd: f64,
    pub vq: f64,
    pub id: f64,
    pub iq: f64,
    /// Electrical power, machine base.
    pub pe: f64,
    /// Current injected into the network, system base.
    pub i_net: C64,
}

fn to_machine_frame(z: C64, delta: f64) -> C64 {
    z * C64::from_polar(1.0, -(delta - FRAC_PI_2))
}

fn to_network_frame(z: C64, delta: f64) -> C64 {
    z * C64::from_polar(1.0, delta - FRAC_PI_2)
}

pub fn stator(m: &SynchronousMachine, s: &MachineState, v_bus: C64, system_base_mva: f64) -> StatorSolution {
    let vdq = to_machine_frame(v_bus, s.delta);
    let (vd, vq) = (vdq.re, vdq.im);
    let id = (s.eq_p - vq) / m.xd_p;
    let iq = (vd - s.ed_p) / m.xq_p;
    let pe = vd * id + vq * iq;
    let i_net = to_network_frame(C64::new(id, iq), s.delta) * (m.s_rated / system_base_mva);
    StatorSolution {
        vd,
        vq,
        id,
        iq,
        pe,
        i_net,
    }
}

/// Rate of a state with a non-windup limiter: frozen when pinned against a bound.
fn limited_rate(x: f64, rate: f64, lo: f64, hi: f64) -> f64 {
    if (x >= hi && rate > 0.0) || (x <= lo && rate < 0.0) {
        0.0
    } else {
        rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MachineDerivatives {
    pub dx: [f64; 6],
    pub stator: StatorSolution,
}

pub fn machine_derivatives(
    m: &SynchronousMachine,
    s: &MachineState,
    sp: &MachineSetpoints,
    v_bus: C64,
    omega_s: f64,
    system_base_mva: f64,
) -> MachineDerivatives {
    let st = stator(m, s, v_bus, system_base_mva);
    let slip = s.omega - 1.0;
    let d_delta = omega_s * slip;
    let d_omega = (s.pm - st.pe - m.d * slip) / (2.0 * m.h);
    let d_eq = (-s.eq_p - (m.xd - m.xd_p) * st.id + s.efd) / m.td0_p;
    let d_ed = (-s.ed_p + (m.xq - m.xq_p) * st.iq) / m.tq0_p;
    let d_efd = match &m.exciter {
        Some(e) => {
            let rate = (e.ka * (sp.v_ref - v_bus.norm()) - s.efd) / e.ta;
            limited_rate(s.efd, rate, e.efd_min, e.efd_max)
        }
        None => 0.0,
    };
    let d_pm = match &m.governor {
        Some(g) => {
            let rate = (sp.p_ref - slip / g.r_droop - s.pm) / g.t1;
            limited_rate(s.pm, rate, g.p_min, g.p_max)
        }
        None => 0.0,
    };
    MachineDerivatives {
        dx: [d_delta, d_omega, d_eq, d_ed, d_efd, d_pm],
        stator: st,
    }
}

/// Clamp limiter-bound states back into range after an integration step.
pub fn clamp_machine_state(m: &SynchronousMachine, s: &mut MachineState) {
    if let Some(e) = &m.exciter {
        s.efd = s.efd.clamp(e.efd_min, e.efd_max);
    }
    if let Some(g) = &m.governor {
        s.pm = s.pm.clamp(g.p_min, g.p_max);
    }
}

/// Equilibrium state from a terminal voltage and the machine's output `s_term`
/// (pu on the system base, generator convention).
pub fn init_machine(
    m: &SynchronousMachine,
    v_term: C64,
    s_term: C64,
    system_base_mva: f64,
) -> Result<(MachineState, MachineSetpoints)> {
    m.validate()?;
    let i_sys = (s_term / v_term).conj();
    let i_m = i_sys * (system_base_mva / m.s_rated);
    let e_q_axis = v_term + C64::new(0.0, m.xq) * i_m;
    let delta = e_q_axis.arg();
    let vdq = to_machine_frame(v_term, delta);
    let idq = to_machine_frame(i_m, delta);
    let (vd, vq, id, iq) = (vdq.re, vdq.im, idq.re, idq.im);
    let ed_p = (m.xq - m.xq_p) * iq;
    let eq_p = vq + m.xd_p * id;
    let efd = eq_p + (m.xd - m.xd_p) * id;
    let pm = vd * id + vq * iq;

    let v_ref = match &m.exciter {
        Some(e) => {
            if efd > e.efd_max || efd < e.efd_min {
                return Err(Error::InfeasibleInit { bus: m.bus, efd });
            }
            v_term.norm() + efd / e.ka
        }
        None => v_term.norm(),
    };
    if let Some(g) = &m.governor {
        if pm > g.p_max || pm < g.p_min {
            return Err(Error::InvalidModel(format!(
                "{}: dispatch {pm:.4} pu outside governor limits",
                m.name()
            )));
        }
    }
    Ok((
        MachineState {
            delta,
            omega: 1.0,
            eq_p,
            ed_p,
            efd,
            pm,
        },
        MachineSetpoints { v_ref, p_ref: pm },
    ))
}

/// Initialise from a power-flow solution. The bus generation (net injection
/// plus load) is shared among the bus's machines in proportion to rating.
pub fn init_from_powerflow(
    m: &SynchronousMachine,
    machines_at_bus_mva: f64,
    network: &NetworkModel,
    pf: &PowerFlowSolution,
) -> Result<(MachineState, MachineSetpoints)> {
    let bus = network
        .bus(m.bus)
        .ok_or_else(|| Error::InvalidModel(format!("{} at unknown bus", m.name())))?;
    let v = pf
        .voltage(m.bus)
        .ok_or_else(|| Error::InvalidModel(format!("bus {} missing from power flow", m.bus)))?;
    let s_bus = pf.injection(m.bus).unwrap() + C64::new(bus.p_load, bus.q_load);
    let share = m.s_rated / machines_at_bus_mva;
    init_machine(m, v, s_bus * share, network.system_base_mva)
}

/// Inertia-weighted mean speed of the in-service machines of `region`.
pub fn coi_frequency(states: &[MachineState], machines: &[SynchronousMachine], region: &str) -> Result<f64> {
    let mut num = 0.0;
    let mut h_total = 0.0;
    for (s, m) in states.iter().zip(machines) {
        if m.region == region {
            let w = m.h * m.s_rated;
            num += w * s.omega;
            h_total += w;
        }
    }
    if h_total <= 0.0 {
        return Err(Error::EmptyRegion(region.to_string()));
    }
    Ok(num / h_total)
}

/// Filtered angle-derivative frequency estimate for sampled angle streams.
///
/// Discretised with backward Euler so that `t_f = 0` reduces to the raw finite
/// difference `(theta_k - theta_{k-1}) / dt`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct FrequencyEstimator {
    pub t_f: f64,
    #[serde(skip)]
    last_angle: Option<f64>,
    #[serde(skip)]
    rate: f64,
}

impl FrequencyEstimator {
    pub fn new(t_f: f64) -> Self {
        Self {
            t_f,
            last_angle: None,
            rate: 0.0,
        }
    }

    /// Feed one angle sample (rad, unwrapped) and return the frequency in pu.
    pub fn step(&mut self, angle: f64, dt: f64, omega_s: f64) -> f64 {
        if let Some(prev) = self.last_angle {
            self.rate = (self.t_f * self.rate + (angle - prev)) / (self.t_f + dt);
        }
        self.last_angle = Some(angle);
        1.0 + self.rate / omega_s
    }
}

pub fn bus_frequency(est: &mut FrequencyEstimator, angles: &[f64], dt: f64, omega_s: f64) -> Vec<f64> {
    angles.iter().map(|&a| est.step(a, dt, omega_s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    pub(crate) fn machine() -> SynchronousMachine {
        SynchronousMachine {
            bus: 1,
            unit: 1,
            s_rated: 100.0,
            h: 3.5,
            d: 0.0,
            xd: 1.8,
            xq: 1.8,
            xd_p: 0.3,
            xq_p: 0.55,
            td0_p: 8.0,
            tq0_p: 0.4,
            region: "R1".into(),
            exciter: Some(SimpleExciter {
                ka: 50.0,
                ta: 0.05,
                efd_min: -5.0,
                efd_max: 5.0,
            }),
            governor: Some(DroopGovernor {
                r_droop: 0.05,
                t1: 0.5,
                p_max: 1.1,
                p_min: 0.0,
            }),
        }
    }

    const WS: f64 = 2.0 * PI * 50.0;

    #[test]
    fn synchronous_speed_has_no_angle_drift() {
        let m = machine();
        let (s, sp) = init_machine(&m, C64::new(1.0, 0.0), C64::new(0.5, 0.1), 100.0).unwrap();
        let d = machine_derivatives(&m, &s, &sp, C64::new(1.0, 0.0), WS, 100.0);
        assert_eq!(d.dx[0], 0.0);
    }

    #[test]
    fn swing_acceleration() {
        let mut m = machine();
        m.governor = None;
        let v = C64::new(1.0, 0.0);
        let (mut s, sp) = init_machine(&m, v, C64::new(0.5, 0.0), 100.0).unwrap();
        s.pm += 0.1;
        let d = machine_derivatives(&m, &s, &sp, v, WS, 100.0);
        assert_abs_diff_eq!(d.dx[1], 0.1 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.dx[1], 0.0142857, epsilon = 1e-7);
    }

    #[test]
    fn no_load_init_is_quiescent() {
        let m = machine();
        let v = C64::new(1.0, 0.0);
        let (s, sp) = init_machine(&m, v, C64::new(0.0, 0.0), 100.0).unwrap();
        assert_eq!(s.omega, 1.0);
        let d = machine_derivatives(&m, &s, &sp, v, WS, 100.0);
        assert!(d.stator.pe.abs() < 1e-12);
        assert!(d.dx.iter().all(|x| x.abs() < 1e-10), "{:?}", d.dx);
    }

    #[test]
    fn loaded_init_is_equilibrium_and_matches_terminal_power() {
        let m = machine();
        let v = C64::from_polar(1.02, 0.3);
        let s_term = C64::new(0.8, 0.25);
        let (s, sp) = init_machine(&m, v, s_term, 100.0).unwrap();
        let d = machine_derivatives(&m, &s, &sp, v, WS, 100.0);
        assert!(d.dx.iter().all(|x| x.abs() < 1e-8), "{:?}", d.dx);
        let s_out = v * d.stator.i_net.conj();
        assert_abs_diff_eq!(s_out.re, s_term.re, epsilon = 1e-12);
        assert_abs_diff_eq!(s_out.im, s_term.im, epsilon = 1e-12);
    }

    #[test]
    fn round_rotor_angle() {
        let m = machine();
        let (s, _) = init_machine(&m, C64::new(1.0, 0.0), C64::new(0.9, 0.3), 100.0).unwrap();
        let oracle = (0.9f64 * 1.8).atan2(1.0 + 0.3 * 1.8);
        assert_abs_diff_eq!(s.delta, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(s.delta.to_degrees(), 46.4, epsilon = 0.1);
    }

    #[test]
    fn efd_limit_violation() {
        let mut m = machine();
        m.exciter.as_mut().unwrap().efd_max = 1.2;
        let err = init_machine(&m, C64::new(1.0, 0.0), C64::new(0.9, 0.6), 100.0).unwrap_err();
        assert!(matches!(err, Error::InfeasibleInit { bus: 1, .. }));
    }

    #[test]
    fn coi_examples() {
        let mut m1 = machine();
        let mut m2 = machine();
        let st = |w: f64| MachineState {
            delta: 0.0,
            omega: w,
            eq_p: 1.0,
            ed_p: 0.0,
            efd: 1.0,
            pm: 0.0,
        };
        let c = coi_frequency(&[st(0.99), st(1.01)], &[m1.clone(), m2.clone()], "R1").unwrap();
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-15);
        m1.h = 2.0;
        m2.h = 6.0;
        let c = coi_frequency(&[st(1.0), st(0.99)], &[m1.clone(), m2.clone()], "R1").unwrap();
        assert_abs_diff_eq!(c, 0.9925, epsilon = 1e-15);
        let c = coi_frequency(&[st(0.97)], &[m1.clone()], "R1").unwrap();
        assert_eq!(c, 0.97);
        assert!(matches!(
            coi_frequency(&[st(1.0)], &[m1], "R2"),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn coi_uses_common_base() {
        let mut m1 = machine();
        let mut m2 = machine();
        m1.s_rated = 900.0;
        m1.h = 2.0;
        m2.s_rated = 100.0;
        m2.h = 6.0;
        let st = |w: f64| MachineState {
            delta: 0.0,
            omega: w,
            eq_p: 1.0,
            ed_p: 0.0,
            efd: 1.0,
            pm: 0.0,
        };
        let c = coi_frequency(&[st(1.0), st(0.99)], &[m1, m2], "R1").unwrap();
        assert_abs_diff_eq!(c, (1800.0 * 1.0 + 600.0 * 0.99) / 2400.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_angle_reads_nominal() {
        let mut est = FrequencyEstimator::new(0.02);
        let f = bus_frequency(&mut est, &[0.3; 50], 0.005, WS);
        assert!(f.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn angle_ramp_settles_to_offset() {
        let dt = 0.001;
        let rate = -0.2 * PI;
        let angles: Vec<f64> = (0..200).map(|k| rate * k as f64 * dt).collect();
        let mut est = FrequencyEstimator::new(0.02);
        let f = bus_frequency(&mut est, &angles, dt, WS);
        // 5 t_f = 0.1 s = 100 samples
        let expected = 1.0 - 0.2 * PI / (2.0 * PI * 50.0);
        assert_abs_diff_eq!(expected, 0.998, epsilon = 1e-12);
        assert!((f[110] - expected).abs() < 1e-2 * 0.002);
        // Backward-Euler transient decays geometrically with ratio t_f / (t_f + dt).
        let residual = 0.002 * (0.02f64 / 0.021).powi(199);
        assert_abs_diff_eq!(f[199], expected + residual, epsilon = 1e-12);
    }

    #[test]
    fn zero_filter_is_raw_difference() {
        let dt = 0.01;
        let angles = [0.0, 0.01, 0.05, 0.04, 0.2];
        let mut est = FrequencyEstimator::new(0.0);
        let f = bus_frequency(&mut est, &angles, dt, WS);
        for k in 1..angles.len() {
            let raw = 1.0 + (angles[k] - angles[k - 1]) / dt / WS;
            assert_abs_diff_eq!(f[k], raw, epsilon = 1e-15);
        }
    }
}
