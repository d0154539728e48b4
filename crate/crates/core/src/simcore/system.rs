use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::init::OperatingPoint;
use super::SystemModel;
use crate::dynamics::{coi_frequency, machine_derivatives, MachineState, MACHINE_STATES};
use crate::error::{Error, Result};
use crate::grid::build_admittance;
use crate::hvdc::{
    ac_dc_power_coupling, current_references, dc_grid_dynamics, vdc_pi_controller, vsc_dynamics, ControlMode,
};
use crate::smallsignal::DaeSystem;
use crate::suppctrl::{fc_reference, pade_delay, podq_output, podq_setpoint, PodVariant};
use crate::C64;

/// Offsets of one station's controller states.
#[derive(Clone, Debug, Default)]
struct StationSlots {
    fc: Option<usize>,
    pod: Option<usize>,
    pade: Option<usize>,
}

#[derive(Clone, Debug)]
struct Layout {
    n_x: usize,
    machines: Vec<usize>,
    /// `[id1, iq1, id2, iq2, vdc1, vdc2, i_dc, x_pi]` per link.
    links: Vec<usize>,
    /// One filtered-angle state per bus.
    bus_freq: usize,
    stations: Vec<[StationSlots; 2]>,
    labels: Vec<String>,
}

pub(crate) const LINK_STATES: [&str; 8] = ["i_d1", "i_q1", "i_d2", "i_q2", "vdc1", "vdc2", "i_dc", "vdc_pi"];

/// Wrap an angle into (-π, π].
pub(crate) fn wrap(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Signals derived from a state, used for recording.
#[derive(Clone, Debug, Default)]
pub struct Observation {
    pub channels: Vec<(String, f64)>,
}

impl Observation {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Assembled differential-algebraic model of one system state.
///
/// Differential states `x` are machine, converter, DC-grid, bus-frequency
/// filter and controller states. Algebraic states `y` are the real and
/// imaginary parts of every bus voltage.
#[derive(Clone, Debug)]
pub struct DynamicSystem {
    pub model: SystemModel,
    pub op: OperatingPoint,
    layout: Layout,
    ybus: DMatrix<C64>,
    bus_idx: HashMap<u32, usize>,
    regions: Vec<String>,
}

#[derive(Default)]
struct Aux {
    pe: Vec<f64>,
    bus_freq: Vec<f64>,
    coi: Vec<f64>,
    /// Per link and side: `[p_ac, q_ac, i_mag, dp_fc, dq_pod]`.
    vsc: Vec<[[f64; 5]; 2]>,
}

impl DynamicSystem {
    pub fn new(model: SystemModel, op: OperatingPoint) -> Result<Self> {
        model.validate()?;
        let n_bus = model.network.buses.len();
        if op.load_admittance.len() != n_bus
            || op.fixed_voltage.len() != n_bus
            || op.machine_setpoints.len() != model.machines.len()
        {
            return Err(Error::InvalidModel("operating point does not match the model".into()));
        }
        let mut ybus = build_admittance(&model.network)?;
        for (k, yl) in op.load_admittance.iter().enumerate() {
            ybus[(k, k)] += yl;
        }
        let bus_idx = model.network.bus_index();
        let mut regions: Vec<String> = model.machines.iter().map(|m| m.region.clone()).collect();
        regions.sort();
        regions.dedup();

        let mut labels = Vec::new();
        let mut machines = Vec::new();
        for m in &model.machines {
            machines.push(labels.len());
            for s in MACHINE_STATES {
                labels.push(format!("{}.{s}", m.name()));
            }
        }
        let mut links = Vec::new();
        for l in &model.hvdc_links {
            links.push(labels.len());
            for s in LINK_STATES {
                labels.push(format!("link.{}.{s}", l.name));
            }
        }
        let bus_freq = labels.len();
        for b in &model.network.buses {
            labels.push(format!("bus.{}.freq_filter", b.id));
        }
        let delay = model.controllers.delay();
        let mut stations = Vec::new();
        for l in &model.hvdc_links {
            let mut pair: [StationSlots; 2] = Default::default();
            for (side, st) in l.stations().iter().enumerate() {
                let Some(sc) = model.controllers.station(st.bus) else {
                    continue;
                };
                if sc.fc.is_some() {
                    pair[side].fc = Some(labels.len());
                    labels.push(format!("vsc.{}.fc", st.bus));
                }
                if let Some(p) = &sc.pod_q {
                    pair[side].pod = Some(labels.len());
                    labels.push(format!("vsc.{}.pod_lowpass", st.bus));
                    labels.push(format!("vsc.{}.pod_washout", st.bus));
                    if p.leadlag_active() {
                        for k in 1..=p.n_qs {
                            labels.push(format!("vsc.{}.pod_leadlag{k}", st.bus));
                        }
                    }
                    if p.variant == PodVariant::FCOI && delay.active() {
                        pair[side].pade = Some(labels.len());
                        labels.push(format!("vsc.{}.pade", st.bus));
                    }
                }
            }
            stations.push(pair);
        }
        let layout = Layout {
            n_x: labels.len(),
            machines,
            links,
            bus_freq,
            stations,
            labels,
        };
        Ok(Self {
            model,
            op,
            layout,
            ybus,
            bus_idx,
            regions,
        })
    }

    pub fn n_x(&self) -> usize {
        self.layout.n_x
    }

    pub fn n_y(&self) -> usize {
        2 * self.model.network.buses.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.layout.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.layout.labels.iter().position(|l| l == label)
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub(crate) fn machine_offset(&self, i: usize) -> usize {
        self.layout.machines[i]
    }

    pub(crate) fn link_offset(&self, i: usize) -> usize {
        self.layout.links[i]
    }

    pub(crate) fn bus_freq_offset(&self) -> usize {
        self.layout.bus_freq
    }

    pub fn voltages(&self, y: &[f64]) -> Vec<C64> {
        y.chunks(2).map(|c| C64::new(c[0], c[1])).collect()
    }

    pub fn machine_state(&self, x: &[f64], i: usize) -> MachineState {
        let o = self.layout.machines[i];
        MachineState::from_slice(&x[o..o + 6])
    }

    /// Differential rates `f` and network residual `g` at `(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64], f: &mut [f64], g: &mut [f64]) -> Result<()> {
        self.eval_full(x, y, f, g, None)
    }

    fn eval_full(&self, x: &[f64], y: &[f64], f: &mut [f64], g: &mut [f64], mut aux: Option<&mut Aux>) -> Result<()> {
        let model = &self.model;
        let base = model.network.system_base_mva;
        let omega_s = model.omega_s();
        let v = self.voltages(y);
        let mut inj = vec![C64::new(0.0, 0.0); v.len()];

        // Machines.
        let mut states = Vec::with_capacity(model.machines.len());
        for (i, m) in model.machines.iter().enumerate() {
            let o = self.layout.machines[i];
            let s = MachineState::from_slice(&x[o..o + 6]);
            let k = self.bus_idx[&m.bus];
            let d = machine_derivatives(m, &s, &self.op.machine_setpoints[i], v[k], omega_s, base);
            f[o..o + 6].copy_from_slice(&d.dx);
            inj[k] += d.stator.i_net;
            states.push(s);
            if let Some(a) = aux.as_deref_mut() {
                a.pe.push(d.stator.pe);
            }
        }

        // Bus-frequency estimators (filtered angle derivative).
        let tf = model.freq_filter_s;
        let mut bus_freq = vec![0.0; v.len()];
        for k in 0..v.len() {
            let o = self.layout.bus_freq + k;
            let rate = wrap(v[k].arg() - x[o]) / tf;
            f[o] = rate;
            bus_freq[k] = 1.0 + rate / omega_s;
        }

        let coi: Vec<Option<f64>> = self
            .regions
            .iter()
            .map(|r| coi_frequency(&states, &model.machines, r).ok())
            .collect();
        let coi_of_bus = |bus: u32| -> Option<f64> {
            let region = &model.network.bus(bus)?.region;
            let r = self.regions.iter().position(|x| x == region)?;
            coi[r]
        };

        // Converters, controllers and DC grid.
        let delay = model.controllers.delay();
        for (li, link) in model.hvdc_links.iter().enumerate() {
            let o = self.layout.links[li];
            let stations = link.stations();
            let mut p_dc = [0.0; 2];
            let mut aux_link = [[0.0; 5]; 2];
            for side in 0..2 {
                let st = stations[side];
                let slots = &self.layout.stations[li][side];
                let k = self.bus_idx[&st.bus];
                let k_other = self.bus_idx[&stations[1 - side].bus];
                let omega_i = bus_freq[k];

                let mut dp_fc = 0.0;
                if let (Some(so), Some(sc)) = (slots.fc, model.controllers.station(st.bus)) {
                    let (out, dx) = fc_reference(omega_i, bus_freq[k_other], sc.fc.as_ref().unwrap(), x[so]);
                    f[so] = dx;
                    dp_fc = out;
                }
                let mut dq_pod = 0.0;
                if let Some(so) = slots.pod {
                    let p = model.controllers.station(st.bus).unwrap().pod_q.as_ref().unwrap();
                    let target = podq_setpoint(p.variant, coi_of_bus(st.bus))?;
                    let mut err = target - omega_i;
                    if let Some(po) = slots.pade {
                        let (out, dx) = pade_delay(err, &delay, x[po]);
                        f[po] = dx;
                        err = out;
                    }
                    let n = p.n_states();
                    dq_pod = podq_output(err, p, &x[so..so + n], &mut f[so..so + n]);
                }

                let v_dc = x[o + 4 + side];
                let p_ref = match st.mode {
                    ControlMode::PControl => st.p_set0 + dp_fc,
                    ControlMode::VdcControl => {
                        let pi = vdc_pi_controller(st, v_dc, x[o + 7]);
                        f[o + 7] = pi.dx;
                        st.p_set0 + pi.dp
                    }
                };
                let q_ref = st.q_set0 + dq_pod;
                let refs = current_references(p_ref, q_ref, v[k].norm(), &st.limits()).map_err(|e| match e {
                    Error::VoltageCollapse { v, .. } => Error::VoltageCollapse { bus: st.bus, v },
                    e => e,
                })?;
                let (i_d, i_q) = (x[o + 2 * side], x[o + 2 * side + 1]);
                let out = vsc_dynamics(st, i_d, i_q, refs, v[k], base);
                f[o + 2 * side] = out.d_id;
                f[o + 2 * side + 1] = out.d_iq;
                inj[k] += out.i_net;
                p_dc[side] = ac_dc_power_coupling(-out.p_conv, out.i_mag, &st.losses());
                aux_link[side] = [out.p_ac, out.q_ac, out.i_mag, dp_fc, dq_pod];
            }
            let d = dc_grid_dynamics(link, x[o + 4], x[o + 5], x[o + 6], p_dc[0], p_dc[1])?;
            f[o + 4..o + 7].copy_from_slice(&d);
            if let Some(a) = aux.as_deref_mut() {
                a.vsc.push(aux_link);
            }
        }

        // Network: Y·V − I_injected = 0, or fixed voltage at infinite buses.
        for k in 0..v.len() {
            let r = match self.op.fixed_voltage[k] {
                Some(vf) => v[k] - vf,
                None => {
                    let mut yv = C64::new(0.0, 0.0);
                    for j in 0..v.len() {
                        yv += self.ybus[(k, j)] * v[j];
                    }
                    yv - inj[k]
                }
            };
            g[2 * k] = r.re;
            g[2 * k + 1] = r.im;
        }

        if let Some(a) = aux {
            a.bus_freq = bus_freq;
            a.coi = coi.iter().map(|c| c.unwrap_or(f64::NAN)).collect();
        }
        Ok(())
    }

    /// Named signals at `(x, y)`.
    pub fn observe(&self, x: &[f64], y: &[f64]) -> Result<Observation> {
        let mut f = vec![0.0; self.n_x()];
        let mut g = vec![0.0; self.n_y()];
        let mut aux = Aux::default();
        self.eval_full(x, y, &mut f, &mut g, Some(&mut aux))?;
        let v = self.voltages(y);
        let mut ch = Vec::new();
        for (i, m) in self.model.machines.iter().enumerate() {
            let s = self.machine_state(x, i);
            let n = m.name();
            ch.push((format!("{n}.freq_pu"), s.omega));
            ch.push((format!("{n}.delta_rad"), s.delta));
            ch.push((format!("{n}.pe_pu"), aux.pe[i]));
            ch.push((format!("{n}.pm_pu"), s.pm));
            ch.push((format!("{n}.efd_pu"), s.efd));
        }
        for (k, b) in self.model.network.buses.iter().enumerate() {
            ch.push((format!("bus.{}.freq_pu", b.id), aux.bus_freq[k]));
            ch.push((format!("bus.{}.vmag_pu", b.id), v[k].norm()));
            ch.push((format!("bus.{}.vang_rad", b.id), v[k].arg()));
        }
        for (li, l) in self.model.hvdc_links.iter().enumerate() {
            let o = self.layout.links[li];
            for (side, st) in l.stations().iter().enumerate() {
                let a = aux.vsc[li][side];
                let b = st.bus;
                ch.push((format!("vsc.{b}.p_pu"), a[0]));
                ch.push((format!("vsc.{b}.q_pu"), a[1]));
                ch.push((format!("vsc.{b}.imag_pu"), a[2]));
                ch.push((format!("vsc.{b}.vdc_pu"), x[o + 4 + side]));
                ch.push((format!("vsc.{b}.dp_fc_pu"), a[3]));
                ch.push((format!("vsc.{b}.dq_pod_pu"), a[4]));
            }
            ch.push((format!("link.{}.p_pu", l.name), x[o + 4] * x[o + 6]));
            ch.push((format!("link.{}.i_dc_pu", l.name), x[o + 6]));
        }
        for (r, region) in self.regions.iter().enumerate() {
            ch.push((format!("coi.{region}.freq_pu"), aux.coi[r]));
        }
        Ok(Observation { channels: ch })
    }

    /// Solve the network equations for `y` with `x` frozen.
    pub fn solve_algebraic(&self, x: &[f64], y0: &[f64], tol: f64) -> Result<Vec<f64>> {
        let n = self.n_y();
        let mut y = y0.to_vec();
        let mut f = vec![0.0; self.n_x()];
        let mut g = vec![0.0; n];
        let mut gp = vec![0.0; n];
        let mut jac: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = None;
        let mut residual = f64::INFINITY;
        for it in 0..50 {
            self.eval(x, &y, &mut f, &mut g)?;
            residual = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if residual <= tol {
                return Ok(y);
            }
            if jac.is_none() || it % 5 == 4 {
                let mut j = DMatrix::<f64>::zeros(n, n);
                for c in 0..n {
                    let h = 1e-7 * y[c].abs().max(1.0);
                    let keep = y[c];
                    y[c] = keep + h;
                    self.eval(x, &y, &mut f, &mut gp)?;
                    y[c] = keep;
                    for r in 0..n {
                        j[(r, c)] = (gp[r] - g[r]) / h;
                    }
                }
                jac = Some(j.lu());
            }
            let rhs = nalgebra::DVector::from_iterator(n, g.iter().map(|v| -v));
            let dy = jac.as_ref().unwrap().solve(&rhs).ok_or(Error::SingularJacobian {
                context: "network solution",
            })?;
            for (yi, d) in y.iter_mut().zip(dy.iter()) {
                *yi += d;
            }
        }
        Err(Error::AlgebraicSolveFailed { residual })
    }
}

impl DaeSystem for DynamicSystem {
    fn n_x(&self) -> usize {
        self.layout.n_x
    }

    fn n_y(&self) -> usize {
        DynamicSystem::n_y(self)
    }

    fn residuals(&self, x: &[f64], y: &[f64], f: &mut [f64], g: &mut [f64]) -> Result<()> {
        self.eval(x, y, f, g)
    }

    fn state_labels(&self) -> Vec<String> {
        self.layout.labels.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::wrap;
    use std::f64::consts::PI;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap(0.3), 0.3);
        assert!((wrap(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
        assert!((wrap(-PI - 0.1) - (PI - 0.1)).abs() < 1e-12);
        assert_eq!(wrap(PI), PI);
    }
}
