use dcseg::fixtures::{two_area, two_area_plan, two_area_study};
use dcseg::poddesign::{
    design_region, install, numerical_sensitivity, station_sensitivity, verify_design, with_uncompensated_pod,
    DesignConfig, ModeSelector,
};
use dcseg::segment::segment;
use dcseg::simcore::SystemModel;
use dcseg::smallsignal::{
    eigensolve, electromechanical, linearize, linearize_model, LinearModel, OdeSystem, RegionClass,
};
use dcseg::study::with_frequency_support;
use dcseg::suppctrl::{PodQParams, PodVariant};
use dcseg::C64;

const OMEGA: f64 = 2.0 * std::f64::consts::PI * 0.7;
const ZETA: f64 = 0.05;
const C: f64 = 1e-3;

/// Oscillator whose damping term grows with the gain `k`.
fn oscillator(k: f64) -> LinearModel {
    let sys = OdeSystem {
        n: 2,
        rhs: move |x: &[f64], f: &mut [f64]| {
            f[0] = x[1];
            f[1] = -OMEGA * OMEGA * x[0] - (2.0 * ZETA * OMEGA + k * C) * x[1];
        },
    };
    linearize(&sys, &[0.0, 0.0], &[], 1e-5).unwrap()
}

fn oscillator_lambda() -> C64 {
    C64::new(-ZETA * OMEGA, OMEGA * (1.0 - ZETA * ZETA).sqrt())
}

fn exact_sensitivity() -> C64 {
    let wd = OMEGA * (1.0 - ZETA * ZETA).sqrt();
    C64::new(-C / 2.0, -ZETA * OMEGA * C / (2.0 * wd))
}

fn fc_baseline() -> SystemModel {
    let seg = segment(&two_area(), &two_area_plan()).unwrap();
    with_frequency_support(&seg, &two_area_study().fc)
}

#[test]
fn gain_linear_scalar_system_gives_exact_sensitivity() {
    let (a, b) = (0.8, 0.013);
    for dk in [0.5, 5.0, 50.0] {
        let est = numerical_sensitivity(
            |k| {
                let sys = OdeSystem {
                    n: 1,
                    rhs: move |x: &[f64], f: &mut [f64]| f[0] = (-a + k * b) * x[0],
                };
                linearize(&sys, &[0.0], &[], 1e-5)
            },
            C64::new(-a, 0.0),
            dk,
        )
        .unwrap();
        assert!((est.s_nc - C64::new(b, 0.0)).norm() < 1e-9, "dk {dk}: {}", est.s_nc);
    }
}

#[test]
fn oscillator_sensitivity_converges_to_the_residue() {
    let exact = exact_sensitivity();
    let rel = |dk: f64| {
        let est = numerical_sensitivity(|k| Ok(oscillator(k)), oscillator_lambda(), dk).unwrap();
        (est.s_nc - exact).norm() / exact.norm()
    };
    assert!(rel(20.0) < 0.02, "{}", rel(20.0));
    assert!(rel(2.0) < 0.002, "{}", rel(2.0));
}

#[test]
fn decoupled_gain_has_no_sensitivity() {
    let est = numerical_sensitivity(
        |k| {
            let sys = OdeSystem {
                n: 3,
                rhs: move |x: &[f64], f: &mut [f64]| {
                    f[0] = x[1];
                    f[1] = -OMEGA * OMEGA * x[0] - 2.0 * ZETA * OMEGA * x[1];
                    f[2] = -(1.0 + k) * x[2];
                },
            };
            linearize(&sys, &[0.0; 3], &[], 1e-5)
        },
        oscillator_lambda(),
        10.0,
    )
    .unwrap();
    assert!(est.s_nc.norm() < 1e-10, "{}", est.s_nc);
}

#[test]
fn zero_gain_controllers_leave_the_modes_unchanged() {
    let base = fc_baseline();
    let mut zero = base.clone();
    for st in base.hvdc_links.iter().flat_map(|l| l.stations()) {
        let mut p = PodQParams::uncompensated(PodVariant::FCOI, 0.0);
        p.t_q1 = 0.3;
        p.a_q = 0.2;
        zero.controllers.station_mut(st.bus).pod_q = Some(p);
    }
    let modes = |m: &SystemModel| {
        let (lin, _) = linearize_model(m, 1e-5).unwrap();
        let all = eigensolve(&lin).unwrap();
        electromechanical(&all).iter().map(|m| m.lambda).collect::<Vec<_>>()
    };
    let (a, b) = (modes(&base), modes(&zero));
    assert_eq!(a.len(), b.len());
    for l in &a {
        let d = b.iter().map(|o| (o - l).norm()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-6, "{l}: {d:e}");
    }
}

#[test]
fn station_sensitivity_is_step_robust_and_predicts_small_gains() {
    let base = fc_baseline();
    let (lin, _) = linearize_model(&base, 1e-5).unwrap();
    let modes = eigensolve(&lin).unwrap();
    let target = ModeSelector::region("R1").select(&modes).unwrap().lambda;
    let h = DesignConfig::default().h_rel;

    let s20 = station_sensitivity(&base, 7, PodVariant::LF, target, 20.0, h).unwrap();
    let s2 = station_sensitivity(&base, 7, PodVariant::LF, target, 2.0, h).unwrap();
    assert!((s20.s_nc - s2.s_nc).norm() / s2.s_nc.norm() < 0.05);

    // First-order prediction at a moderate gain.
    let k = 50.0;
    let lambda0 = s2.lambda_nc - s2.s_nc * 2.0;
    let (lin_k, _) = linearize_model(&with_uncompensated_pod(&base, 7, PodVariant::LF, k), h).unwrap();
    let actual = eigensolve(&lin_k)
        .unwrap()
        .into_iter()
        .map(|m| m.lambda)
        .min_by(|a, b| (a - lambda0).norm().total_cmp(&(b - lambda0).norm()))
        .unwrap();
    let predicted = lambda0 + s2.s_nc * k;
    let err = (actual - predicted).norm() / (predicted - lambda0).norm();
    assert!(err < 0.2, "actual {actual}, predicted {predicted}");
}

#[test]
fn designed_controllers_damp_the_target_and_spare_the_rest() {
    let base = fc_baseline();
    let cfg = DesignConfig::default();
    let (target, designs) = design_region(&base, "R1", PodVariant::LF, &cfg).unwrap();
    assert_eq!(designs.len(), 2);
    for d in &designs {
        assert!(d.gain.k_q.abs() <= cfg.k_max);
        assert!(d.leadlag.a_q > 0.0 && d.leadlag.t_q1 > 0.0);
    }
    let rows = verify_design(&base, &install(&base, &designs), cfg.h_rel).unwrap();
    let hit = rows
        .iter()
        .find(|r| r.region_class == RegionClass::Intra("R1".into()) && (r.baseline - target.lambda).norm() < 1e-9)
        .unwrap();
    assert!(
        hit.achieved_zeta > hit.baseline_zeta + 0.02,
        "{} -> {}",
        hit.baseline_zeta,
        hit.achieved_zeta
    );
    // The inter-area mode created by frequency support is heavily damped and
    // moves by a few points; the local modes must stay put.
    let others = rows
        .iter()
        .filter(|r| matches!(r.region_class, RegionClass::Intra(_)) && (r.baseline - target.lambda).norm() > 1e-9);
    for r in others {
        assert!(r.delta_zeta().abs() < 0.05, "{:?}: {}", r.region_class, r.delta_zeta());
    }
}

#[test]
fn frequency_window_narrows_the_target() {
    let (lin, _) = linearize_model(&two_area(), 1e-5).unwrap();
    let modes = eigensolve(&lin).unwrap();
    let any = ModeSelector::region("R1").select(&modes).unwrap();
    let mut sel = ModeSelector::region("R1");
    sel.freq_window_hz = Some((any.freq - 0.01, any.freq + 0.01));
    assert_eq!(sel.select(&modes).unwrap().lambda, any.lambda);
    sel.freq_window_hz = Some((5.0, 6.0));
    assert!(sel.select(&modes).is_none());
}
