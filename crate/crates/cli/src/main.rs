use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dcseg::io::{
    electromechanical_rows, format_comparison_table, format_delay_table, format_design_table, format_mode_table,
    format_nadir_table, format_power_flow, save_json, LoadedScenario,
};
use dcseg::poddesign::{compare_modes, design_selected, install, ModeSelector};
use dcseg::segment::segment;
use dcseg::simcore::{initialize_with, simulate, TimeSeries, PF_TOL};
use dcseg::smallsignal::{eigensolve, linearize_model};
use dcseg::study::run_case_study;
use dcseg::suppctrl::PodVariant;
use dcseg::{Error, Result};

/// DC segmentation, small-signal analysis and POD-Q design for hybrid AC/HVDC grids.
#[derive(Parser, Debug)]
#[command(name = "dcseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (defaults to the scenario's `out`, then its directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Power-flow mismatch tolerance (powerflow) or Newton tolerance (simulate).
    #[arg(long)]
    tol: Option<f64>,
    /// Integration step, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Simulation end time, seconds.
    #[arg(long)]
    tstop: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variant {
    Lf,
    Fcoi,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the power flow of the scenario's case.
    Powerflow(Common),
    /// Linearise and list the oscillatory modes.
    Modes {
        #[command(flatten)]
        common: Common,
        /// List every oscillatory mode, not only the electromechanical ones.
        #[arg(long)]
        all: bool,
    },
    /// Time-domain simulation with the scenario's events; writes a CSV.
    Simulate(Common),
    /// Apply the segmentation plan and write the segmented system.
    Segment(Common),
    /// Design POD-Q controllers for one target mode.
    DesignPod {
        #[command(flatten)]
        common: Common,
        /// Region of the target mode (overrides the scenario selector).
        #[arg(long)]
        region: Option<String>,
        #[arg(long)]
        fmin: Option<f64>,
        #[arg(long)]
        fmax: Option<f64>,
        /// Desired damping ratio of the target mode.
        #[arg(long)]
        zeta_d: Option<f64>,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
    },
    /// Run the four-case comparison and write all tables and time series.
    CaseStudy(Common),
}

fn exit_code(e: &Error) -> u8 {
    if e.is_convergence_failure() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load(c: &Common) -> Result<(LoadedScenario, PathBuf)> {
    let mut sc = LoadedScenario::load(&c.scenario)?;
    if let Some(dt) = c.dt {
        sc.scenario.sim.dt = dt;
    }
    if let Some(t) = c.tstop {
        sc.scenario.sim.t_stop = t;
    }
    sc.scenario.sim.validate()?;
    let out = sc.out_dir(c.out.as_deref());
    fs::create_dir_all(&out)?;
    Ok((sc, out))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_csv(dir: &Path, name: &str, ts: &TimeSeries) -> Result<()> {
    let f = fs::File::create(dir.join(name))?;
    ts.write_csv(std::io::BufWriter::new(f))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Powerflow(c) => {
            let (sc, out) = load(&c)?;
            let cm = sc.resolve()?;
            let eq = initialize_with(&cm.model, c.tol.unwrap_or(PF_TOL))?;
            let table = format_power_flow(&eq.pf);
            print!("{table}");
            write_text(&out, "powerflow.txt", &table)?;
            save_json(&eq.pf, &out.join("powerflow.json"))?;
        }
        Command::Modes { common: c, all } => {
            let (sc, out) = load(&c)?;
            let cm = sc.resolve()?;
            let (lin, _) = linearize_model(&cm.model, sc.scenario.design.h_rel)?;
            let modes = eigensolve(&lin)?;
            let rows = if all { modes } else { electromechanical_rows(&modes) };
            let table = format_mode_table(&rows);
            print!("{table}");
            write_text(&out, "modes.txt", &table)?;
            save_json(&rows, &out.join("modes.json"))?;
        }
        Command::Simulate(c) => {
            let (mut sc, out) = load(&c)?;
            if let Some(tol) = c.tol {
                sc.scenario.sim.newton_tol = tol;
            }
            let cm = sc.resolve()?;
            let cfg = sc.study_config().sim;
            let ts = simulate(&cm.model, &sc.scenario.events, &cfg)?;
            write_csv(&out, "timeseries.csv", &ts)?;
            println!(
                "{} samples x {} channels -> {}",
                ts.time.len(),
                ts.names.len(),
                out.join("timeseries.csv").display()
            );
        }
        Command::Segment(c) => {
            let (sc, out) = load(&c)?;
            let seg = segment(&sc.base, sc.plan()?)?;
            println!(
                "{:<10} {:>6} {:>6} {:>10} {:>10} {:>10}",
                "link", "P bus", "V bus", "P pu", "Q_P pu", "Q_V pu"
            );
            for l in &seg.hvdc_links {
                println!(
                    "{:<10} {:>6} {:>6} {:>10.5} {:>10.5} {:>10.5}",
                    l.name,
                    l.station_1.bus,
                    l.station_2.bus,
                    l.station_1.p_set0,
                    l.station_1.q_set0,
                    l.station_2.q_set0
                );
            }
            save_json(&seg, &out.join("segmented.json"))?;
        }
        Command::DesignPod {
            common: c,
            region,
            fmin,
            fmax,
            zeta_d,
            variant,
        } => {
            let (sc, out) = load(&c)?;
            let cm = sc.resolve()?;
            let mut selector = sc.scenario.target.clone().unwrap_or_else(|| ModeSelector::region("R1"));
            if let Some(r) = region {
                selector.region = r;
            }
            if fmin.is_some() || fmax.is_some() {
                selector.freq_window_hz = Some((fmin.unwrap_or(0.0), fmax.unwrap_or(f64::INFINITY)));
            }
            let mut cfg = sc.scenario.design.clone();
            if let Some(z) = zeta_d {
                cfg.zeta_d = z;
            }
            let variant = match variant {
                Some(Variant::Lf) => PodVariant::LF,
                Some(Variant::Fcoi) => PodVariant::FCOI,
                None => sc.scenario.pod_variant.unwrap_or(PodVariant::LF),
            };
            let (target, designs) = design_selected(&cm.model, &selector, variant, &cfg)?;
            let designed = install(&cm.model, &designs);
            let (lin0, _) = linearize_model(&cm.model, cfg.h_rel)?;
            let (lin1, _) = linearize_model(&designed, cfg.h_rel)?;
            let cmp = compare_modes(&lin0, &eigensolve(&lin0)?, &lin1, &eigensolve(&lin1)?)?;
            let mut report = format!(
                "target {} mode {:.4}{:+.4}j, zeta {:.2} %, f {:.4} Hz\n",
                target.region_class,
                target.lambda.re,
                target.lambda.im,
                100.0 * target.zeta,
                target.freq
            );
            report += &format_design_table(&designs);
            report += "\n";
            report += &format_comparison_table(&cmp);
            print!("{report}");
            write_text(&out, "design.txt", &report)?;
            save_json(&designs, &out.join("design.json"))?;
            save_json(&cmp, &out.join("design_verification.json"))?;
            save_json(&designed.controllers, &out.join("controllers.json"))?;
        }
        Command::CaseStudy(c) => {
            let (sc, out) = load(&c)?;
            let report = run_case_study(&sc.base, sc.plan()?, &sc.study_config())?;
            let mut nadir = Vec::new();
            for case in &report.cases {
                let tag = format!("{:?}", case.case);
                let rows = electromechanical_rows(&case.modes);
                let table = format_mode_table(&rows);
                println!("== {}\n{table}", case.case);
                write_text(&out, &format!("modes_{tag}.txt"), &table)?;
                save_json(&rows, &out.join(format!("modes_{tag}.json")))?;
                if !case.designs.is_empty() {
                    write_text(&out, &format!("design_{tag}.txt"), &format_design_table(&case.designs))?;
                }
                if let Some(ts) = &case.gen_trip {
                    write_csv(&out, &format!("gen_trip_{tag}.csv"), ts)?;
                }
                if let Some(ts) = &case.line_trip {
                    write_csv(&out, &format!("line_trip_{tag}.csv"), ts)?;
                }
                nadir.extend(case.nadir.iter().cloned());
            }
            if !nadir.is_empty() {
                let table = format_nadir_table(&nadir);
                println!("{table}");
                write_text(&out, "nadir.txt", &table)?;
                save_json(&nadir, &out.join("nadir.json"))?;
            }
            let mut delay = String::new();
            for (region, rows) in &report.delay {
                delay += &format_delay_table(region, rows);
            }
            if !delay.is_empty() {
                println!("{delay}");
                write_text(&out, "delay.txt", &delay)?;
            }
            save_json(&report, &out.join("report.json"))?;
        }
    }
    Ok(())
}
