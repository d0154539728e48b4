//! Static network: buses, pi-model branches, bus admittance matrix and a
//! Newton-Raphson power flow used to initialise every dynamic study.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// Voltage magnitude set point (Slack/PV) or initial guess, pu.
    pub v_mag: f64,
    /// Voltage angle, rad. Fixed for the slack bus.
    pub v_ang: f64,
    pub p_load: f64,
    pub q_load: f64,
    /// Scheduled generation, pu on system base. `q_gen` is an output for PV buses.
    #[serde(default)]
    pub p_gen: f64,
    #[serde(default)]
    pub q_gen: f64,
    pub region: String,
}

fn default_circuit() -> u32 {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Distinguishes parallel circuits between the same pair of buses.
    #[serde(default = "default_circuit")]
    pub circuit: u32,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance; half is placed at each end.
    pub b_sh: f64,
    #[serde(default = "default_true")]
    pub status: bool,
}

impl Branch {
    pub fn label(&self) -> String {
        format!("{}-{}#{}", self.from, self.to, self.circuit)
    }

    pub fn series_admittance(&self) -> Result<C64> {
        let z = C64::new(self.r, self.x);
        if z.norm() == 0.0 {
            return Err(Error::ZeroImpedanceBranch {
                from: self.from,
                to: self.to,
                circuit: self.circuit,
            });
        }
        Ok(z.inv())
    }

    /// 2x2 nodal stamp `[[y_ff, y_ft], [y_tf, y_tt]]`.
    pub fn stamp(&self) -> Result<[[C64; 2]; 2]> {
        let ys = self.series_admittance()?;
        let half = C64::new(0.0, self.b_sh / 2.0);
        Ok([[ys + half, -ys], [-ys, ys + half]])
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub system_base_mva: f64,
}

impl NetworkModel {
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn bus_mut(&mut self, id: u32) -> Option<&mut Bus> {
        self.buses.iter_mut().find(|b| b.id == id)
    }

    /// Region labels in order of first appearance.
    pub fn regions(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for b in &self.buses {
            if !out.contains(&b.region) {
                out.push(b.region.clone());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let idx = self.bus_index();
        if idx.len() != self.buses.len() {
            return Err(Error::InvalidModel("duplicate bus id".into()));
        }
        if self.system_base_mva <= 0.0 {
            return Err(Error::InvalidModel("system base must be positive".into()));
        }
        for br in &self.branches {
            if br.from == br.to {
                return Err(Error::InvalidModel(format!("branch {} is a self loop", br.label())));
            }
            if !idx.contains_key(&br.from) || !idx.contains_key(&br.to) {
                return Err(Error::InvalidModel(format!(
                    "branch {} references unknown bus",
                    br.label()
                )));
            }
        }
        Ok(())
    }

    /// Connected components over in-service branches, as lists of bus positions.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let idx = self.bus_index();
        let n = self.buses.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for br in self.branches.iter().filter(|b| b.status) {
            if let (Some(&a), Some(&b)) = (idx.get(&br.from), idx.get(&br.to)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_pos: HashMap<usize, usize> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            let g = *root_pos.entry(r).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }
        groups
    }
}

/// Bus admittance matrix as the sum of per-branch stamps. Rows follow `network.buses`.
pub fn build_admittance(network: &NetworkModel) -> Result<DMatrix<C64>> {
    network.validate()?;
    let idx = network.bus_index();
    let n = network.buses.len();
    let mut y = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for br in network.branches.iter().filter(|b| b.status) {
        let s = br.stamp()?;
        let (f, t) = (idx[&br.from], idx[&br.to]);
        y[(f, f)] += s[0][0];
        y[(f, t)] += s[0][1];
        y[(t, f)] += s[1][0];
        y[(t, t)] += s[1][1];
    }
    Ok(y)
}

/// Fixed complex injection (pu, system base, generator convention) at a bus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Injection {
    pub bus: u32,
    pub s: C64,
}

#[derive(Clone, Debug)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial voltages in bus order; flat start when `None`.
    pub warm_start: Option<Vec<C64>>,
    /// Extra fixed injections, e.g. HVDC terminals.
    pub injections: Vec<Injection>,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 30,
            warm_start: None,
            injections: Vec::new(),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct PowerFlowSolution {
    pub bus_ids: Vec<u32>,
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    /// Net injections (generation - load + extra), pu on system base.
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn index_of(&self, bus: u32) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == bus)
    }

    pub fn voltage(&self, bus: u32) -> Option<C64> {
        self.index_of(bus)
            .map(|i| C64::from_polar(self.v_mag[i], self.v_ang[i]))
    }

    pub fn voltages(&self) -> Vec<C64> {
        self.v_mag
            .iter()
            .zip(&self.v_ang)
            .map(|(&m, &a)| C64::from_polar(m, a))
            .collect()
    }

    pub fn injection(&self, bus: u32) -> Option<C64> {
        self.index_of(bus).map(|i| C64::new(self.p_inj[i], self.q_inj[i]))
    }
}

/// Scheduled net injection per bus (generation - load + extra injections).
pub fn scheduled_injections(network: &NetworkModel, extra: &[Injection]) -> Result<Vec<C64>> {
    let idx = network.bus_index();
    let mut s: Vec<C64> = network
        .buses
        .iter()
        .map(|b| C64::new(b.p_gen - b.p_load, b.q_gen - b.q_load))
        .collect();
    for inj in extra {
        let i = *idx
            .get(&inj.bus)
            .ok_or_else(|| Error::InvalidModel(format!("injection at unknown bus {}", inj.bus)))?;
        s[i] += inj.s;
    }
    Ok(s)
}

fn calc_power(y: &DMatrix<C64>, v: &DVector<C64>) -> DVector<C64> {
    let i = y * v;
    v.zip_map(&i, |vk, ik| vk * ik.conj())
}

/// Newton-Raphson power flow in polar coordinates.
pub fn solve_power_flow(network: &NetworkModel, opts: &PowerFlowOptions) -> Result<PowerFlowSolution> {
    let y = build_admittance(network)?;
    let n = network.buses.len();

    // One slack per island.
    for comp in network.components() {
        let slacks = comp
            .iter()
            .filter(|&&i| network.buses[i].kind == BusKind::Slack)
            .count();
        if slacks != 1 {
            let ids: Vec<u32> = comp.iter().map(|&i| network.buses[i].id).collect();
            return Err(Error::InvalidModel(format!(
                "island {ids:?} has {slacks} slack buses (need exactly one)"
            )));
        }
    }

    let sched = scheduled_injections(network, &opts.injections)?;
    let mut v: DVector<C64> = match &opts.warm_start {
        Some(w) if w.len() == n => DVector::from_vec(w.clone()),
        Some(_) => return Err(Error::InvalidConfig("warm start length mismatch".into())),
        None => DVector::from_iterator(
            n,
            network.buses.iter().map(|b| match b.kind {
                BusKind::Slack => C64::from_polar(b.v_mag, b.v_ang),
                BusKind::PV => C64::new(b.v_mag, 0.0),
                BusKind::PQ => C64::new(1.0, 0.0),
            }),
        ),
    };
    // Slack and PV magnitudes are always enforced, even on a warm start.
    for (i, b) in network.buses.iter().enumerate() {
        match b.kind {
            BusKind::Slack => v[i] = C64::from_polar(b.v_mag, b.v_ang),
            BusKind::PV => v[i] = C64::from_polar(b.v_mag, v[i].arg()),
            BusKind::PQ => {}
        }
    }

    let pvpq: Vec<usize> = (0..n).filter(|&i| network.buses[i].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| network.buses[i].kind == BusKind::PQ).collect();
    let (npvpq, npq) = (pvpq.len(), pq.len());

    let mismatch = |v: &DVector<C64>| -> (DVector<f64>, f64) {
        let s = calc_power(&y, v);
        let mut f = DVector::zeros(npvpq + npq);
        for (r, &i) in pvpq.iter().enumerate() {
            f[r] = s[i].re - sched[i].re;
        }
        for (r, &i) in pq.iter().enumerate() {
            f[npvpq + r] = s[i].im - sched[i].im;
        }
        let m = f.amax();
        (f, m)
    };

    let (mut f, mut max_mis) = mismatch(&v);
    let mut iterations = 0;
    while max_mis > opts.tol {
        if iterations >= opts.max_iter || !max_mis.is_finite() {
            return Err(Error::NoConvergence {
                iterations,
                mismatch: max_mis,
            });
        }
        // dS/dVa and dS/dVm, dense.
        let ibus = &y * &v;
        let vnorm = v.map(|vk| vk / vk.norm());
        let mut ds_dva = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        let mut ds_dvm = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for r in 0..n {
            for c in 0..n {
                let diag_i = if r == c { ibus[r] } else { C64::new(0.0, 0.0) };
                ds_dva[(r, c)] = C64::new(0.0, 1.0) * v[r] * (diag_i - y[(r, c)] * v[c]).conj();
                ds_dvm[(r, c)] = v[r] * (y[(r, c)] * vnorm[c]).conj();
            }
            ds_dvm[(r, r)] += ibus[r].conj() * vnorm[r];
        }
        let dim = npvpq + npq;
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for (rr, &i) in pvpq.iter().enumerate() {
            for (cc, &k) in pvpq.iter().enumerate() {
                jac[(rr, cc)] = ds_dva[(i, k)].re;
            }
            for (cc, &k) in pq.iter().enumerate() {
                jac[(rr, npvpq + cc)] = ds_dvm[(i, k)].re;
            }
        }
        for (rr, &i) in pq.iter().enumerate() {
            for (cc, &k) in pvpq.iter().enumerate() {
                jac[(npvpq + rr, cc)] = ds_dva[(i, k)].im;
            }
            for (cc, &k) in pq.iter().enumerate() {
                jac[(npvpq + rr, npvpq + cc)] = ds_dvm[(i, k)].im;
            }
        }
        let dx = match jac.lu().solve(&(-&f)) {
            Some(dx) if dx.iter().all(|d| d.is_finite()) => dx,
            _ if iterations == 0 => return Err(Error::SingularJacobian { context: "power flow" }),
            _ => {
                return Err(Error::NoConvergence {
                    iterations,
                    mismatch: max_mis,
                })
            }
        };
        for (rr, &i) in pvpq.iter().enumerate() {
            let (m, a) = (v[i].norm(), v[i].arg() + dx[rr]);
            v[i] = C64::from_polar(m, a);
        }
        for (rr, &i) in pq.iter().enumerate() {
            let (m, a) = (v[i].norm() + dx[npvpq + rr], v[i].arg());
            v[i] = C64::from_polar(m, a);
        }
        iterations += 1;
        (f, max_mis) = mismatch(&v);
        if v.iter().any(|vk| !(vk.norm() > 1e-3)) {
            return Err(Error::NoConvergence {
                iterations,
                mismatch: f64::INFINITY,
            });
        }
    }

    let s = calc_power(&y, &v);
    Ok(PowerFlowSolution {
        bus_ids: network.buses.iter().map(|b| b.id).collect(),
        v_mag: v.iter().map(|c| c.norm()).collect(),
        v_ang: v.iter().map(|c| c.arg()).collect(),
        p_inj: s.iter().map(|c| c.re).collect(),
        q_inj: s.iter().map(|c| c.im).collect(),
        iterations,
        max_mismatch: max_mis,
    })
}

/// Complex power mismatch (calculated - scheduled) at every bus of a solution.
pub fn power_mismatch(network: &NetworkModel, pf: &PowerFlowSolution, extra: &[Injection]) -> Result<Vec<C64>> {
    let y = build_admittance(network)?;
    let v = DVector::from_vec(pf.voltages());
    let s = calc_power(&y, &v);
    let sched = scheduled_injections(network, extra)?;
    Ok(s.iter().zip(&sched).map(|(a, b)| a - b).collect())
}

/// Complex power leaving each end of a branch into the branch, pu.
pub fn branch_flow(branch: &Branch, v_from: C64, v_to: C64) -> Result<(C64, C64)> {
    let s = branch.stamp()?;
    let i_f = s[0][0] * v_from + s[0][1] * v_to;
    let i_t = s[1][0] * v_from + s[1][1] * v_to;
    Ok((v_from * i_f.conj(), v_to * i_t.conj()))
}
