use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use super::init::{initialize, Equilibrium, OperatingPoint};
use super::system::DynamicSystem;
use super::{apply_event, channel_matches, Event, EventKind, SimConfig, SystemModel};
use crate::dynamics::{clamp_machine_state, MachineState};
use crate::error::{Error, Result};

/// Recorded channels on a uniform time grid.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub time: Vec<f64>,
    pub names: Vec<String>,
    /// One column per channel.
    pub data: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
    }

    /// Names matching a `*` pattern.
    pub fn matching(&self, pattern: &str) -> Vec<&str> {
        self.names
            .iter()
            .filter(|n| channel_matches(pattern, n))
            .map(|s| s.as_str())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "time_s")?;
        for n in &self.names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (r, t) in self.time.iter().enumerate() {
            write!(w, "{}", fmt_sig9(*t))?;
            for col in &self.data {
                write!(w, ",{}", fmt_sig9(col[r]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Nine significant digits, `%.9g` style.
pub fn fmt_sig9(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", v);
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-5..9).contains(&exp) {
        let mant = trim_zeros(mant);
        return format!("{mant}e{exp}");
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, v)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Implicit trapezoidal stepper with a reused finite-difference Jacobian.
struct Stepper {
    tol: f64,
    lu: Option<(f64, LU<f64, Dyn, Dyn>)>,
    stale: bool,
}

impl Stepper {
    fn residual(
        sys: &DynamicSystem,
        x0: &[f64],
        f0: &[f64],
        h: f64,
        z: &[f64],
        f: &mut [f64],
        g: &mut [f64],
        r: &mut [f64],
    ) -> Result<()> {
        let nx = sys.n_x();
        sys.eval(&z[..nx], &z[nx..], f, g)?;
        for i in 0..nx {
            r[i] = z[i] - x0[i] - 0.5 * h * (f[i] + f0[i]);
        }
        r[nx..].copy_from_slice(g);
        Ok(())
    }

    fn jacobian(&mut self, sys: &DynamicSystem, x0: &[f64], f0: &[f64], h: f64, z: &[f64]) -> Result<()> {
        let n = z.len();
        let mut zp = z.to_vec();
        let mut f = vec![0.0; sys.n_x()];
        let mut g = vec![0.0; sys.n_y()];
        let mut r0 = vec![0.0; n];
        let mut r1 = vec![0.0; n];
        Self::residual(sys, x0, f0, h, z, &mut f, &mut g, &mut r0)?;
        let mut j = DMatrix::<f64>::zeros(n, n);
        for c in 0..n {
            let dz = 1e-7 * z[c].abs().max(1.0);
            zp[c] = z[c] + dz;
            Self::residual(sys, x0, f0, h, &zp, &mut f, &mut g, &mut r1)?;
            zp[c] = z[c];
            for r in 0..n {
                j[(r, c)] = (r1[r] - r0[r]) / dz;
            }
        }
        self.lu = Some((h, j.lu()));
        self.stale = false;
        Ok(())
    }

    /// Advance `(x0, y0)` by `h`; `f0` are the rates at the start.
    fn step(&mut self, sys: &DynamicSystem, x0: &[f64], y0: &[f64], f0: &[f64], h: f64, t: f64) -> Result<Vec<f64>> {
        let nx = sys.n_x();
        let n = nx + sys.n_y();
        let start: Vec<f64> = x0.iter().chain(y0).copied().collect();
        let mut f = vec![0.0; nx];
        let mut g = vec![0.0; sys.n_y()];
        let mut r = vec![0.0; n];
        let mut fresh = false;
        loop {
            let need = match &self.lu {
                Some((hj, _)) => *hj != h || self.stale,
                None => true,
            };
            if need {
                self.jacobian(sys, x0, f0, h, &start)?;
                fresh = true;
            }
            let mut z = start.clone();
            let mut residual = f64::INFINITY;
            let mut converged = false;
            for it in 0..12 {
                match Self::residual(sys, x0, f0, h, &z, &mut f, &mut g, &mut r) {
                    Ok(()) => {}
                    Err(e) if fresh => return Err(e),
                    Err(_) => break,
                }
                residual = r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                if residual <= self.tol {
                    converged = true;
                    if it > 4 {
                        self.stale = true;
                    }
                    break;
                }
                if !residual.is_finite() {
                    break;
                }
                let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
                let Some(dz) = self.lu.as_ref().unwrap().1.solve(&rhs) else {
                    break;
                };
                for (zi, d) in z.iter_mut().zip(dz.iter()) {
                    *zi += d;
                }
            }
            if converged {
                return Ok(z);
            }
            if fresh {
                return Err(Error::StepNonConvergence { t, residual });
            }
            self.stale = true;
        }
    }
}

/// Keep converter currents and limited machine states inside their bounds.
fn project(sys: &DynamicSystem, x: &mut [f64]) {
    for (i, m) in sys.model.machines.iter().enumerate() {
        let o = sys.machine_offset(i);
        let mut s = MachineState::from_slice(&x[o..o + 6]);
        clamp_machine_state(m, &mut s);
        x[o..o + 6].copy_from_slice(&s.to_array());
    }
    for (l, link) in sys.model.hvdc_links.iter().enumerate() {
        let o = sys.link_offset(l);
        for (side, st) in link.stations().iter().enumerate() {
            let (id, iq) = (x[o + 2 * side], x[o + 2 * side + 1]);
            let mag = id.hypot(iq);
            if mag > st.i_max {
                x[o + 2 * side] = id * st.i_max / mag;
                x[o + 2 * side + 1] = iq * st.i_max / mag;
            }
        }
    }
}

fn rebuild(sys: &DynamicSystem, x: &[f64], event: &Event) -> Result<(DynamicSystem, Vec<f64>)> {
    let model = apply_event(&sys.model, event)?;
    let mut op: OperatingPoint = sys.op.clone();
    if let EventKind::TripMachine { bus, unit } = &event.kind {
        let i = sys.model.machine_index(*bus, *unit).unwrap();
        op.machine_setpoints.remove(i);
    }
    let new = DynamicSystem::new(model, op)?;
    let old_idx: HashMap<&str, usize> = sys.labels().iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let x_new = new.labels().iter().map(|l| x[old_idx[l.as_str()]]).collect();
    Ok((new, x_new))
}

/// Halvings allowed when a step fails to converge (a limiter switching
/// inside the step is the usual cause).
const MAX_HALVINGS: usize = 6;

/// One accepted step of length `h`, retried as two half steps on failure.
#[allow(clippy::too_many_arguments)]
fn advance(
    stepper: &mut Stepper,
    sys: &DynamicSystem,
    x: &mut [f64],
    y: &mut [f64],
    f0: &mut [f64],
    g0: &mut [f64],
    h: f64,
    t: f64,
    depth: usize,
) -> Result<()> {
    match stepper.step(sys, x, y, f0, h, t) {
        Ok(z) => {
            let nx = sys.n_x();
            x.copy_from_slice(&z[..nx]);
            y.copy_from_slice(&z[nx..]);
            project(sys, x);
            sys.eval(x, y, f0, g0)
        }
        Err(Error::StepNonConvergence { .. }) if depth < MAX_HALVINGS => {
            advance(stepper, sys, x, y, f0, g0, 0.5 * h, t, depth + 1)?;
            advance(stepper, sys, x, y, f0, g0, 0.5 * h, t + 0.5 * h, depth + 1)
        }
        Err(e) => Err(e),
    }
}

/// Grid steps after an event that are integrated with sub-steps.
const EVENT_SUBSTEP_WINDOW: usize = 4;
const EVENT_SUBSTEPS: usize = 10;

/// Initialise and simulate a model.
pub fn simulate(model: &SystemModel, events: &[Event], cfg: &SimConfig) -> Result<TimeSeries> {
    let eq = initialize(model)?;
    simulate_from(&eq, events, cfg)
}

/// Simulate from an equilibrium (or any consistent state) with timed events.
pub fn simulate_from(eq: &Equilibrium, events: &[Event], cfg: &SimConfig) -> Result<TimeSeries> {
    cfg.validate()?;
    let dt = cfg.dt;
    let n_steps = (cfg.t_stop / dt).round() as usize;
    let mut scheduled: Vec<(usize, &Event)> = Vec::new();
    for (i, ev) in events.iter().enumerate() {
        let k = (ev.time / dt).round();
        if ev.time < 0.0 || (k * dt - ev.time).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "event at t = {} s is not on the dt = {} s grid",
                ev.time, dt
            )));
        }
        if i > 0 && ev.time < events[i - 1].time {
            return Err(Error::InvalidConfig("events must be sorted by time".into()));
        }
        scheduled.push((k as usize, ev));
    }

    let mut sys = eq.system.clone();
    let mut x = eq.x.clone();
    let mut y = eq.y.clone();
    let obs0 = sys.observe(&x, &y)?;
    let names: Vec<String> = obs0
        .channels
        .iter()
        .map(|(n, _)| n.clone())
        .filter(|n| cfg.record.is_empty() || cfg.record.iter().any(|p| channel_matches(p, n)))
        .collect();
    let mut ts = TimeSeries {
        time: Vec::new(),
        names: names.clone(),
        data: vec![Vec::new(); names.len()],
    };
    let record =
        |ts: &mut TimeSeries, sys: &DynamicSystem, x: &[f64], y: &[f64], t: f64, replace: bool| -> Result<()> {
            let obs = sys.observe(x, y)?;
            let map: HashMap<&str, f64> = obs.channels.iter().map(|(n, v)| (n.as_str(), *v)).collect();
            if replace {
                ts.time.pop();
                for col in ts.data.iter_mut() {
                    col.pop();
                }
            }
            ts.time.push(t);
            for (col, n) in ts.data.iter_mut().zip(&ts.names) {
                col.push(map.get(n.as_str()).copied().unwrap_or(f64::NAN));
            }
            Ok(())
        };
    record(&mut ts, &sys, &x, &y, 0.0, false)?;

    let mut stepper = Stepper {
        tol: cfg.newton_tol,
        lu: None,
        stale: true,
    };
    let mut f0 = vec![0.0; sys.n_x()];
    let mut g0 = vec![0.0; sys.n_y()];
    sys.eval(&x, &y, &mut f0, &mut g0)?;
    let mut substep_left = 0;
    let mut next_event = 0;
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let mut fired = false;
        while next_event < scheduled.len() && scheduled[next_event].0 == k {
            let (s, xn) = rebuild(&sys, &x, scheduled[next_event].1)?;
            sys = s;
            x = xn;
            next_event += 1;
            fired = true;
        }
        if fired {
            y = sys.solve_algebraic(&x, &y, cfg.newton_tol * 1e-2)?;
            f0 = vec![0.0; sys.n_x()];
            g0 = vec![0.0; sys.n_y()];
            sys.eval(&x, &y, &mut f0, &mut g0)?;
            stepper.lu = None;
            substep_left = EVENT_SUBSTEP_WINDOW;
            if k % cfg.decimation == 0 {
                record(&mut ts, &sys, &x, &y, t, true)?;
            }
        }
        let (nsub, h) = if substep_left > 0 {
            substep_left -= 1;
            (EVENT_SUBSTEPS, dt / EVENT_SUBSTEPS as f64)
        } else {
            (1, dt)
        };
        for s in 0..nsub {
            let ts_now = t + s as f64 * h;
            advance(&mut stepper, &sys, &mut x, &mut y, &mut f0, &mut g0, h, ts_now, 0)?;
        }
        if (k + 1) % cfg.decimation == 0 {
            record(&mut ts, &sys, &x, &y, (k + 1) as f64 * dt, false)?;
        }
    }
    Ok(ts)
}
