use serde::{Deserialize, Serialize};

use super::system::DynamicSystem;
use super::SystemModel;
use crate::dynamics::{init_machine, MachineSetpoints};
use crate::error::{Error, Result};
use crate::grid::{solve_power_flow, BusKind, Injection, PowerFlowOptions, PowerFlowSolution};
use crate::hvdc::{ac_dc_power_coupling, ControlMode, HvdcLink};
use crate::smallsignal::DaeSystem;
use crate::C64;

/// Quantities fixed at initialisation and held through a simulation.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct OperatingPoint {
    /// Constant-impedance load admittance per bus, system base.
    pub load_admittance: Vec<C64>,
    /// Voltage held at slack buses that carry no machine (infinite buses).
    pub fixed_voltage: Vec<Option<C64>>,
    pub machine_setpoints: Vec<MachineSetpoints>,
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub system: DynamicSystem,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pf: PowerFlowSolution,
    pub max_residual: f64,
}

/// Residual bound for an accepted equilibrium.
pub const INIT_TOL: f64 = 1e-7;

/// Steady DC-side solution of one link for the P-control set point.
struct DcSteady {
    /// AC injection of the DC-voltage station, station base.
    p_vdc: f64,
    v_dc: [f64; 2],
    i_line: f64,
}

fn station_current(p: f64, q: f64, vm: f64) -> f64 {
    (p / vm).hypot(q / vm)
}

fn dc_steady(link: &HvdcLink, vm: [f64; 2], p_vdc_guess: f64) -> DcSteady {
    let iv = link.vdc_station();
    let ip = 1 - iv;
    let st = link.stations();
    let (sp, sv) = (st[ip], st[iv]);
    let r = link.per_unit().r;
    let i_p = station_current(sp.p_set0, sp.q_set0, vm[ip]);
    let p_dc_p = ac_dc_power_coupling(-(sp.p_set0 + sp.rs * i_p * i_p), i_p, &sp.losses());
    let v_v = sv.vdc_ref;
    // v_p² − v_v·v_p − R·p_dc_p = 0 for the P-station DC voltage.
    let v_p = 0.5 * (v_v + (v_v * v_v + 4.0 * r * p_dc_p).sqrt());
    let i_pv = p_dc_p / v_p;
    let p_arrive = v_v * i_pv;
    let mut p_v = p_vdc_guess;
    for _ in 0..50 {
        let i_v = station_current(p_v, sv.q_set0, vm[iv]);
        // Converter power balance: p_conv = p_arrive − loss(i), P_ac = p_conv − rs·i².
        let p_conv = ac_dc_power_coupling(p_arrive, i_v, &sv.losses());
        let next = p_conv - sv.rs * i_v * i_v;
        if (next - p_v).abs() < 1e-15 {
            p_v = next;
            break;
        }
        p_v = next;
    }
    let mut v_dc = [0.0; 2];
    v_dc[ip] = v_p;
    v_dc[iv] = v_v;
    let i_line = if ip == 0 { i_pv } else { -i_pv };
    DcSteady {
        p_vdc: p_v,
        v_dc,
        i_line,
    }
}

fn vsc_injections(model: &SystemModel, p_vdc: &[f64]) -> Vec<Injection> {
    let base = model.network.system_base_mva;
    let mut out = Vec::new();
    for (l, link) in model.hvdc_links.iter().enumerate() {
        for st in link.stations() {
            let p = match st.mode {
                ControlMode::PControl => st.p_set0,
                ControlMode::VdcControl => p_vdc[l],
            };
            out.push(Injection {
                bus: st.bus,
                s: C64::new(p, st.q_set0) * (st.s_rated / base),
            });
        }
    }
    out
}

/// Solve the power flow (with converter set points and DC losses) and build
/// the matching equilibrium of the full dynamic model.
pub fn initialize(model: &SystemModel) -> Result<Equilibrium> {
    initialize_with(model, PF_TOL)
}

/// Power-flow mismatch tolerance used by [`initialize`].
pub const PF_TOL: f64 = 1e-11;

/// [`initialize`] with an explicit power-flow tolerance.
pub fn initialize_with(model: &SystemModel, pf_tol: f64) -> Result<Equilibrium> {
    model.validate()?;
    let net = &model.network;
    let mut p_vdc: Vec<f64> = model
        .hvdc_links
        .iter()
        .map(|l| -l.stations()[1 - l.vdc_station()].p_set0)
        .collect();
    let mut opts = PowerFlowOptions {
        tol: pf_tol,
        ..Default::default()
    };
    let mut pf;
    let mut steady: Vec<DcSteady>;
    let mut sweeps = 0;
    loop {
        opts.injections = vsc_injections(model, &p_vdc);
        pf = solve_power_flow(net, &opts)?;
        opts.warm_start = Some(pf.voltages());
        steady = model
            .hvdc_links
            .iter()
            .zip(&p_vdc)
            .map(|(l, &guess)| {
                let vm = l.stations().map(|s| pf.voltage(s.bus).unwrap().norm());
                dc_steady(l, vm, guess)
            })
            .collect();
        let change = steady
            .iter()
            .zip(&p_vdc)
            .fold(0.0f64, |a, (s, p)| a.max((s.p_vdc - p).abs()));
        p_vdc = steady.iter().map(|s| s.p_vdc).collect();
        sweeps += 1;
        if change < 1e-13 || sweeps > 30 {
            opts.injections = vsc_injections(model, &p_vdc);
            pf = solve_power_flow(net, &opts)?;
            break;
        }
    }

    let mut dyn_model = model.clone();
    for (l, link) in dyn_model.hvdc_links.iter_mut().enumerate() {
        match link.vdc_station() {
            0 => link.station_1.p_set0 = p_vdc[l],
            _ => link.station_2.p_set0 = p_vdc[l],
        }
    }

    let base = net.system_base_mva;
    let v: Vec<C64> = pf.voltages();
    let load_admittance: Vec<C64> = net
        .buses
        .iter()
        .zip(&v)
        .map(|(b, vk)| C64::new(b.p_load, -b.q_load) / vk.norm_sqr())
        .collect();
    let fixed_voltage: Vec<Option<C64>> = net
        .buses
        .iter()
        .zip(&v)
        .map(|(b, vk)| (b.kind == BusKind::Slack && !model.machines.iter().any(|m| m.bus == b.id)).then_some(*vk))
        .collect();

    let mut machine_states = Vec::new();
    let mut machine_setpoints = Vec::new();
    for m in &model.machines {
        let bus = net.bus(m.bus).unwrap();
        let mut s_gen = pf.injection(m.bus).unwrap() + C64::new(bus.p_load, bus.q_load);
        for inj in &opts.injections {
            if inj.bus == m.bus {
                s_gen -= inj.s;
            }
        }
        let share: f64 = model
            .machines
            .iter()
            .filter(|o| o.bus == m.bus)
            .map(|o| o.s_rated)
            .sum();
        let (s, sp) = init_machine(m, pf.voltage(m.bus).unwrap(), s_gen * (m.s_rated / share), base)?;
        machine_states.push(s);
        machine_setpoints.push(sp);
    }

    let op = OperatingPoint {
        load_admittance,
        fixed_voltage,
        machine_setpoints,
    };
    let system = DynamicSystem::new(dyn_model, op)?;
    let mut x = vec![0.0; system.n_x()];
    for (i, s) in machine_states.iter().enumerate() {
        let o = system.machine_offset(i);
        x[o..o + 6].copy_from_slice(&s.to_array());
    }
    for (l, link) in system.model.hvdc_links.iter().enumerate() {
        let o = system.link_offset(l);
        for (side, st) in link.stations().iter().enumerate() {
            let vm = pf.voltage(st.bus).unwrap().norm();
            x[o + 2 * side] = st.p_set0 / vm;
            x[o + 2 * side + 1] = -st.q_set0 / vm;
        }
        x[o + 4] = steady[l].v_dc[0];
        x[o + 5] = steady[l].v_dc[1];
        x[o + 6] = steady[l].i_line;
    }
    let bf = system.bus_freq_offset();
    for (k, vk) in v.iter().enumerate() {
        x[bf + k] = vk.arg();
    }
    let y: Vec<f64> = v.iter().flat_map(|c| [c.re, c.im]).collect();

    let mut f = vec![0.0; system.n_x()];
    let mut g = vec![0.0; system.n_y()];
    system.residuals(&x, &y, &mut f, &mut g)?;
    let (mut worst, mut max_residual) = (String::new(), 0.0f64);
    for (k, r) in f.iter().enumerate() {
        if !(r.abs() <= max_residual) {
            max_residual = r.abs();
            worst = system.labels()[k].clone();
        }
    }
    for (k, r) in g.iter().enumerate() {
        if !(r.abs() <= max_residual) {
            max_residual = r.abs();
            worst = format!("bus.{}.current", net.buses[k / 2].id);
        }
    }
    if !(max_residual < INIT_TOL) {
        return Err(Error::InitResidualTooLarge {
            max_residual,
            state: worst,
        });
    }
    Ok(Equilibrium {
        system,
        x,
        y,
        pf,
        max_residual,
    })
}
