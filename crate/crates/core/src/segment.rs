//! DC segmentation: replace AC corridors by point-to-point VSC-HVDC links whose
//! set points reproduce the pre-segmentation AC flows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{branch_flow, BusKind};
use crate::hvdc::{ControlMode, DcLine, HvdcLink, VscStation};
use crate::simcore::{initialize, SystemModel};
use crate::C64;

/// One corridor to replace. Every in-service circuit between `from` and `to`
/// becomes a single aggregate link; the `from` end controls P, the `to` end
/// controls the DC voltage.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LinkTemplate {
    pub name: String,
    pub from: u32,
    pub to: u32,
    pub s_rated: f64,
    /// DC capacitance per station, farads.
    pub c_dc: f64,
    pub line: DcLine,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SetPointRule {
    #[default]
    MatchAcFlow,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SegmentationPlan {
    pub links: Vec<LinkTemplate>,
    #[serde(default)]
    pub rule: SetPointRule,
}

/// Flow carried by a corridor before segmentation, MVA, measured leaving each end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorridorFlow {
    pub s_from: C64,
    pub s_to: C64,
}

/// Machine bus chosen as the new angle reference of a region: largest stored
/// energy `H·S`, ties broken by the lowest bus id.
pub fn region_reference_bus(model: &SystemModel, region: &str) -> Option<u32> {
    model
        .machines
        .iter()
        .filter(|m| m.region == region)
        .min_by(|a, b| (b.h * b.s_rated).total_cmp(&(a.h * a.s_rated)).then(a.bus.cmp(&b.bus)))
        .map(|m| m.bus)
}

/// Replace the planned corridors by HVDC links (see the module docs).
pub fn segment(model: &SystemModel, plan: &SegmentationPlan) -> Result<SystemModel> {
    let eq = initialize(model)?;
    let pf = &eq.pf;
    let base = model.network.system_base_mva;
    let mut out = model.clone();

    let mut replaced = vec![false; model.network.branches.len()];
    let mut links = Vec::new();
    for t in &plan.links {
        let mut flow = CorridorFlow {
            s_from: C64::new(0.0, 0.0),
            s_to: C64::new(0.0, 0.0),
        };
        let mut found = false;
        for (k, br) in model.network.branches.iter().enumerate() {
            if !br.status {
                continue;
            }
            let forward = br.from == t.from && br.to == t.to;
            let reverse = br.from == t.to && br.to == t.from;
            if !(forward || reverse) {
                continue;
            }
            found = true;
            replaced[k] = true;
            let (sf, st) = branch_flow(br, pf.voltage(br.from).unwrap(), pf.voltage(br.to).unwrap())?;
            let (a, b) = if forward { (sf, st) } else { (st, sf) };
            flow.s_from += a * base;
            flow.s_to += b * base;
        }
        if !found {
            return Err(Error::TargetNotFound(format!("corridor {}-{}", t.from, t.to)));
        }
        let worst = flow.s_from.norm().max(flow.s_to.norm());
        if worst > t.s_rated {
            return Err(Error::RatingExceeded {
                link: t.name.clone(),
                flow_mva: worst,
                rating_mva: t.s_rated,
            });
        }
        // The stations take over what the corridor drew from each bus.
        let mut p_station = VscStation::new(t.from, t.s_rated, ControlMode::PControl, t.c_dc);
        p_station.p_set0 = -flow.s_from.re / t.s_rated;
        p_station.q_set0 = -flow.s_from.im / t.s_rated;
        let mut v_station = VscStation::new(t.to, t.s_rated, ControlMode::VdcControl, t.c_dc);
        v_station.p_set0 = -flow.s_to.re / t.s_rated;
        v_station.q_set0 = -flow.s_to.im / t.s_rated;
        links.push(HvdcLink {
            name: t.name.clone(),
            station_1: p_station,
            station_2: v_station,
            line: t.line.clone(),
        });
    }

    out.network.branches = model
        .network
        .branches
        .iter()
        .zip(&replaced)
        .filter(|(_, r)| !**r)
        .map(|(b, _)| b.clone())
        .collect();
    out.hvdc_links.extend(links);

    // The cut must leave exactly one island per region.
    let regions = out.network.regions();
    let comps = out.network.components();
    let pure = comps.iter().all(|c| {
        let r = &out.network.buses[c[0]].region;
        c.iter().all(|&k| &out.network.buses[k].region == r)
    });
    if !pure || comps.len() != regions.len() {
        return Err(Error::NotASeparator(format!(
            "{} islands for {} regions after removing the planned corridors",
            comps.len(),
            regions.len()
        )));
    }

    for region in &regions {
        let has_slack = out
            .network
            .buses
            .iter()
            .any(|b| &b.region == region && b.kind == BusKind::Slack);
        if has_slack {
            continue;
        }
        let bus = region_reference_bus(&out, region)
            .ok_or_else(|| Error::InvalidModel(format!("region {region} has no machine for a slack")))?;
        let v = pf.voltage(bus).unwrap();
        let b = out.network.bus_mut(bus).unwrap();
        b.kind = BusKind::Slack;
        b.v_mag = v.norm();
        b.v_ang = v.arg();
    }
    // Warm-start friendly initial guesses for every bus.
    for b in out.network.buses.iter_mut() {
        if b.kind == BusKind::PQ {
            let v = pf.voltage(b.id).unwrap();
            b.v_mag = v.norm();
            b.v_ang = v.arg();
        }
    }
    out.validate()?;
    Ok(out)
}

/// Flows of every in-service circuit between two buses, summed.
pub fn corridor_flow(model: &SystemModel, from: u32, to: u32) -> Result<CorridorFlow> {
    let eq = initialize(model)?;
    let base = model.network.system_base_mva;
    let mut flow = CorridorFlow {
        s_from: C64::new(0.0, 0.0),
        s_to: C64::new(0.0, 0.0),
    };
    for br in model.network.branches.iter().filter(|b| b.status) {
        let forward = br.from == from && br.to == to;
        let reverse = br.from == to && br.to == from;
        if forward || reverse {
            let (sf, st) = branch_flow(br, eq.pf.voltage(br.from).unwrap(), eq.pf.voltage(br.to).unwrap())?;
            let (a, b) = if forward { (sf, st) } else { (st, sf) };
            flow.s_from += a * base;
            flow.s_to += b * base;
        }
    }
    Ok(flow)
}
