//! RMS model of point-to-point VSC-HVDC links.
//!
//! Each converter is a grid-following current source behind its connection
//! impedance, oriented on the solved terminal voltage (ideal PLL). Currents and
//! powers are per unit on the station rating; the DC side uses the station
//! rating and the pole-to-pole DC voltage as base. Station powers follow the
//! injection-into-AC convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlMode {
    PControl,
    VdcControl,
}

fn d_rs() -> f64 {
    0.004
}
fn d_xs() -> f64 {
    0.2
}
fn d_tau_i() -> f64 {
    0.002
}
fn d_kp() -> f64 {
    10.0
}
fn d_ki() -> f64 {
    20.0
}
fn d_one() -> f64 {
    1.0
}
fn d_q_max() -> f64 {
    0.4
}
fn d_vdc_min() -> f64 {
    0.9
}
fn d_vdc_max() -> f64 {
    1.1
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct VscStation {
    pub bus: u32,
    pub s_rated: f64,
    pub mode: ControlMode,
    #[serde(default = "d_rs")]
    pub rs: f64,
    #[serde(default = "d_xs")]
    pub xs: f64,
    #[serde(default = "d_tau_i")]
    pub tau_i: f64,
    #[serde(default = "d_kp")]
    pub kp_vdc: f64,
    #[serde(default = "d_ki")]
    pub ki_vdc: f64,
    #[serde(default)]
    pub loss_a: f64,
    #[serde(default)]
    pub loss_b: f64,
    #[serde(default)]
    pub loss_c: f64,
    #[serde(default = "d_one")]
    pub i_max: f64,
    #[serde(default = "d_one")]
    pub p_max: f64,
    #[serde(default = "d_q_max")]
    pub q_max: f64,
    #[serde(default = "d_vdc_min")]
    pub vdc_min: f64,
    #[serde(default = "d_vdc_max")]
    pub vdc_max: f64,
    #[serde(default = "d_one")]
    pub vdc_ref: f64,
    /// DC bus capacitance, farads.
    pub c_dc: f64,
    #[serde(default)]
    pub p_set0: f64,
    #[serde(default)]
    pub q_set0: f64,
}

impl VscStation {
    /// Station with the default converter data and the given rating.
    pub fn new(bus: u32, s_rated: f64, mode: ControlMode, c_dc: f64) -> Self {
        Self {
            bus,
            s_rated,
            mode,
            rs: d_rs(),
            xs: d_xs(),
            tau_i: d_tau_i(),
            kp_vdc: d_kp(),
            ki_vdc: d_ki(),
            loss_a: 0.0,
            loss_b: 0.0,
            loss_c: 0.0,
            i_max: 1.0,
            p_max: 1.0,
            q_max: d_q_max(),
            vdc_min: d_vdc_min(),
            vdc_max: d_vdc_max(),
            vdc_ref: 1.0,
            c_dc,
            p_set0: 0.0,
            q_set0: 0.0,
        }
    }

    pub fn losses(&self) -> LossCoefficients {
        LossCoefficients {
            a: self.loss_a,
            b: self.loss_b,
            c: self.loss_c,
        }
    }

    pub fn limits(&self) -> CurrentLimits {
        CurrentLimits {
            i_max: self.i_max,
            p_max: self.p_max,
            q_max: self.q_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidModel(format!("VSC at bus {}: {what}", self.bus)));
        if !(self.tau_i > 0.0) || !(self.i_max > 0.0) || !(self.s_rated > 0.0) {
            return bad("tau_i, i_max and s_rated must be positive");
        }
        if !(self.vdc_min < self.vdc_max) {
            return bad("vdc_min must be below vdc_max");
        }
        if self.loss_a < 0.0 || self.loss_b < 0.0 || self.loss_c < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        if !(self.c_dc > 0.0) {
            return bad("DC capacitance must be positive");
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct DcLine {
    /// Ohms.
    pub r_dc: f64,
    /// Henries.
    pub l_dc: f64,
    /// Pole-to-pole DC voltage base, kV.
    pub v_base_dc: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct HvdcLink {
    pub name: String,
    pub station_1: VscStation,
    pub station_2: VscStation,
    pub line: DcLine,
}

/// DC-side quantities converted to per unit (time constants in seconds).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcPerUnit {
    pub c1: f64,
    pub c2: f64,
    pub l: f64,
    pub r: f64,
}

impl HvdcLink {
    pub fn validate(&self) -> Result<()> {
        self.station_1.validate()?;
        self.station_2.validate()?;
        let modes = (self.station_1.mode, self.station_2.mode);
        if !matches!(
            modes,
            (ControlMode::PControl, ControlMode::VdcControl) | (ControlMode::VdcControl, ControlMode::PControl)
        ) {
            return Err(Error::InvalidModel(format!(
                "link {}: needs exactly one P-control and one Vdc-control station",
                self.name
            )));
        }
        if self.station_1.s_rated != self.station_2.s_rated {
            return Err(Error::InvalidModel(format!(
                "link {}: stations must share one rating",
                self.name
            )));
        }
        if self.line.r_dc < 0.0 || !(self.line.l_dc > 0.0) || !(self.line.v_base_dc > 0.0) {
            return Err(Error::InvalidModel(format!(
                "link {}: need r_dc >= 0, l_dc > 0, v_base_dc > 0",
                self.name
            )));
        }
        Ok(())
    }

    pub fn stations(&self) -> [&VscStation; 2] {
        [&self.station_1, &self.station_2]
    }

    /// Base impedance of the DC side, ohms.
    pub fn z_base(&self) -> f64 {
        self.line.v_base_dc * self.line.v_base_dc / self.station_1.s_rated
    }

    pub fn per_unit(&self) -> DcPerUnit {
        let z = self.z_base();
        DcPerUnit {
            c1: self.station_1.c_dc * z,
            c2: self.station_2.c_dc * z,
            l: self.line.l_dc / z,
            r: self.line.r_dc / z,
        }
    }

    /// Index (0 or 1) of the DC-voltage-controlling station.
    pub fn vdc_station(&self) -> usize {
        if self.station_1.mode == ControlMode::VdcControl {
            0
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurrentLimits {
    pub i_max: f64,
    pub p_max: f64,
    pub q_max: f64,
}

/// Converter current references from power set points, with active-current
/// priority when the current limit binds.
pub fn current_references(p_ref: f64, q_ref: f64, v_ac: f64, limits: &CurrentLimits) -> Result<(f64, f64)> {
    if !(v_ac > 0.1) {
        return Err(Error::VoltageCollapse { bus: 0, v: v_ac });
    }
    let p = p_ref.clamp(-limits.p_max, limits.p_max);
    let q = q_ref.clamp(-limits.q_max, limits.q_max);
    let id = (p / v_ac).clamp(-limits.i_max, limits.i_max);
    let iq_room = (limits.i_max * limits.i_max - id * id).max(0.0).sqrt();
    let iq = (-q / v_ac).clamp(-iq_room, iq_room);
    Ok((id, iq))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VscOutput {
    pub d_id: f64,
    pub d_iq: f64,
    /// Current injected into the AC network, system base.
    pub i_net: C64,
    /// Active and reactive power injected into the AC network, station base.
    pub p_ac: f64,
    pub q_ac: f64,
    pub i_mag: f64,
    /// Power drawn from the converter's DC terminal by the AC side, station
    /// base: terminal power plus connection-resistance losses.
    pub p_conv: f64,
}

/// Current-loop dynamics and AC injection of one station.
pub fn vsc_dynamics(
    st: &VscStation,
    i_d: f64,
    i_q: f64,
    refs: (f64, f64),
    v_bus: C64,
    system_base_mva: f64,
) -> VscOutput {
    let vm = v_bus.norm();
    let orient = if vm > 0.0 { v_bus / vm } else { C64::new(1.0, 0.0) };
    let i_mag = i_d.hypot(i_q);
    VscOutput {
        d_id: (refs.0 - i_d) / st.tau_i,
        d_iq: (refs.1 - i_q) / st.tau_i,
        i_net: C64::new(i_d, i_q) * orient * (st.s_rated / system_base_mva),
        p_ac: vm * i_d,
        q_ac: -vm * i_q,
        i_mag,
        p_conv: vm * i_d + st.rs * i_mag * i_mag,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// DC-side power from AC-side power flowing into the converter. The
/// converter loss `a + b·i + c·i²` is always taken out of the power flow,
/// whichever way it goes.
pub fn ac_dc_power_coupling(p_ac: f64, i_mag: f64, losses: &LossCoefficients) -> f64 {
    let loss = losses.a + losses.b * i_mag + losses.c * i_mag * i_mag;
    p_ac - loss
}

/// Derivatives `[dv1, dv2, di_line]` of the DC grid. `p_dc*` are powers
/// injected into the DC buses, `i_line` flows from bus 1 to bus 2.
pub fn dc_grid_dynamics(
    link: &HvdcLink,
    v_dc1: f64,
    v_dc2: f64,
    i_line: f64,
    p_dc1: f64,
    p_dc2: f64,
) -> Result<[f64; 3]> {
    for (st, v) in [(&link.station_1, v_dc1), (&link.station_2, v_dc2)] {
        if !(v < 1.5 * st.vdc_max) {
            return Err(Error::DcOvervoltage {
                link: link.name.clone(),
                v,
            });
        }
        if !(v > 0.5 * st.vdc_min) {
            return Err(Error::DcUndervoltage {
                link: link.name.clone(),
                v,
            });
        }
    }
    let pu = link.per_unit();
    Ok([
        (p_dc1 / v_dc1 - i_line) / pu.c1,
        (p_dc2 / v_dc2 + i_line) / pu.c2,
        (v_dc1 - v_dc2 - pu.r * i_line) / pu.l,
    ])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VdcPiOutput {
    /// Adjustment added to `p_set0`.
    pub dp: f64,
    /// Integrator rate.
    pub dx: f64,
}

/// DC-voltage PI. A DC voltage above reference raises the power delivered to
/// AC. The integrator freezes while the resulting set point is saturated and
/// the error would push it further.
pub fn vdc_pi_controller(st: &VscStation, v_dc: f64, x_i: f64) -> VdcPiOutput {
    let e = v_dc - st.vdc_ref;
    let dp = st.kp_vdc * e + x_i;
    let p = st.p_set0 + dp;
    let mut dx = st.ki_vdc * e;
    if (p >= st.p_max && dx > 0.0) || (p <= -st.p_max && dx < 0.0) {
        dx = 0.0;
    }
    VdcPiOutput { dp, dx }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lim() -> CurrentLimits {
        CurrentLimits {
            i_max: 1.0,
            p_max: 1.0,
            q_max: 1.0,
        }
    }

    pub(crate) fn link() -> HvdcLink {
        HvdcLink {
            name: "A".into(),
            station_1: VscStation::new(1, 3500.0, ControlMode::PControl, 305e-6),
            station_2: VscStation::new(2, 3500.0, ControlMode::VdcControl, 305e-6),
            line: DcLine {
                r_dc: 1.6,
                l_dc: 0.067,
                v_base_dc: 1070.0,
            },
        }
    }

    #[test]
    fn p_control_reference() {
        assert_eq!(current_references(1.0, 0.0, 1.0, &lim()).unwrap(), (1.0, 0.0));
        assert_eq!(current_references(0.3, 0.0, 0.95, &lim()).unwrap().1, 0.0);
    }

    #[test]
    fn active_priority_truncation() {
        let (id, iq) = current_references(0.9, 0.9, 1.0, &lim()).unwrap();
        assert_eq!(id, 0.9);
        assert_abs_diff_eq!(iq, -(1.0f64 - 0.81).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(iq, -0.43589, epsilon = 1e-5);
    }

    #[test]
    fn collapse_below_tenth_pu() {
        assert!(matches!(
            current_references(0.5, 0.0, 0.1, &lim()),
            Err(Error::VoltageCollapse { .. })
        ));
    }

    #[test]
    fn current_lag() {
        let st = VscStation::new(1, 100.0, ControlMode::PControl, 1e-4);
        let v = C64::new(1.0, 0.0);
        let o = vsc_dynamics(&st, 0.0, 0.0, (1.0, 0.0), v, 100.0);
        assert_abs_diff_eq!(o.d_id, 500.0, epsilon = 1e-9);
        let o = vsc_dynamics(&st, 0.4, 0.1, (0.4, 0.1), v, 100.0);
        assert_eq!((o.d_id, o.d_iq), (0.0, 0.0));
    }

    #[test]
    fn current_lag_settles() {
        let st = VscStation::new(1, 100.0, ControlMode::PControl, 1e-4);
        let v = C64::from_polar(1.0, 0.2);
        let (mut id, mut iq) = (0.0, 0.0);
        let dt = 1e-5;
        for _ in 0..10_000 {
            let o = vsc_dynamics(&st, id, iq, (0.7, -0.2), v, 100.0);
            id += dt * o.d_id;
            iq += dt * o.d_iq;
        }
        assert!((id - 0.7).abs() < 1e-6 && (iq + 0.2).abs() < 1e-6);
    }

    #[test]
    fn injection_matches_set_points() {
        let st = VscStation::new(1, 200.0, ControlMode::PControl, 1e-4);
        let v = C64::from_polar(1.03, -0.4);
        let (id, iq) = current_references(0.5, 0.2, v.norm(), &lim()).unwrap();
        let o = vsc_dynamics(&st, id, iq, (id, iq), v, 100.0);
        let s = v * o.i_net.conj();
        assert_abs_diff_eq!(s.re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.im, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(o.p_ac, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(o.q_ac, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn loss_polynomial() {
        let none = LossCoefficients::default();
        assert_eq!(ac_dc_power_coupling(0.734, 0.8, &none), 0.734);
        let b_only = LossCoefficients {
            a: 0.0,
            b: 0.02,
            c: 0.03,
        };
        assert_eq!(ac_dc_power_coupling(0.5, 0.0, &b_only), 0.5);
        let all = LossCoefficients {
            a: 0.01,
            b: 0.01,
            c: 0.01,
        };
        assert_abs_diff_eq!(0.5 - ac_dc_power_coupling(0.5, 1.0, &all), 0.03, epsilon = 1e-15);
    }

    #[test]
    fn dc_per_unit_conversion() {
        let pu = link().per_unit();
        let z = 1070.0 * 1070.0 / 3500.0;
        assert_abs_diff_eq!(pu.c1, 305e-6 * z, epsilon = 1e-15);
        assert_abs_diff_eq!(pu.l, 0.067 / z, epsilon = 1e-15);
        assert_abs_diff_eq!(pu.r, 1.6 / z, epsilon = 1e-15);
    }

    #[test]
    fn dc_grid_rest_and_inductor_law() {
        let mut l = link();
        assert_eq!(dc_grid_dynamics(&l, 1.0, 1.0, 0.0, 0.0, 0.0).unwrap(), [0.0; 3]);
        l.line.r_dc = 0.0;
        let d = dc_grid_dynamics(&l, 1.005, 0.995, 0.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(d[2], 0.01 / l.per_unit().l, epsilon = 1e-9);
    }

    #[test]
    fn dc_energy_imbalance_drifts_voltages() {
        let l = link();
        let pu = l.per_unit();
        // Net positive injection: the stored charge rises monotonically.
        let (mut v1, mut v2, mut i) = (1.0, 1.0, 0.0);
        let dt = 1e-5;
        let mut prev_sum = pu.c1 * v1 + pu.c2 * v2;
        for _ in 0..2000 {
            let d = dc_grid_dynamics(&l, v1, v2, i, 0.2, -0.1).unwrap();
            v1 += dt * d[0];
            v2 += dt * d[1];
            i += dt * d[2];
            let sum = pu.c1 * v1 + pu.c2 * v2;
            assert!(sum > prev_sum);
            prev_sum = sum;
        }
    }

    #[test]
    fn guard_band() {
        let l = link();
        assert!(matches!(
            dc_grid_dynamics(&l, 1.7, 1.0, 0.0, 0.0, 0.0),
            Err(Error::DcOvervoltage { .. })
        ));
        assert!(matches!(
            dc_grid_dynamics(&l, 1.0, 0.4, 0.0, 0.0, 0.0),
            Err(Error::DcUndervoltage { .. })
        ));
    }

    #[test]
    fn vdc_pi_cases() {
        let st = VscStation::new(2, 100.0, ControlMode::VdcControl, 1e-4);
        assert_eq!(vdc_pi_controller(&st, 1.0, 0.0), VdcPiOutput { dp: 0.0, dx: 0.0 });
        let o = vdc_pi_controller(&st, 1.01, 0.0);
        assert_abs_diff_eq!(o.dp, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(o.dx, 0.2, epsilon = 1e-12);
        let o = vdc_pi_controller(&st, 1.01, 1.2);
        assert_eq!(o.dx, 0.0);
        let o = vdc_pi_controller(&st, 0.99, -1.2);
        assert_eq!(o.dx, 0.0);
    }

    #[test]
    fn link_mode_validation() {
        let mut l = link();
        assert!(l.validate().is_ok());
        l.station_2.mode = ControlMode::PControl;
        assert!(l.validate().is_err());
    }

    proptest! {
        #[test]
        fn references_respect_current_limit(p in -2.0f64..2.0, q in -2.0f64..2.0, v in 0.2f64..1.3) {
            let l = CurrentLimits { i_max: 1.0, p_max: 1.0, q_max: 0.4 };
            let (id, iq) = current_references(p, q, v, &l).unwrap();
            prop_assert!(id.hypot(iq) <= 1.0 + 1e-12);
        }
    }
}
