//! Acceptance criteria C1-C11. Each test prints one PASS/FAIL line.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use weldlab::conformal::{green_function, ConfMap, DomainId, GridSpec, Pt};
use weldlab::gff::{FreeSampler, Normalization};
use weldlab::ig::{self, ComponentClass, Given, Interaction};
use weldlab::liouville::{check_conformal_covariance, scaling_case, strip_exp_case, Probe};
use weldlab::qsurface::{cut_chain, ChainMode, ThinChainConfig, ThinChainSampler};
use weldlab::rng::Streams;
use weldlab::sle::{
    drive_chordal, drive_radial, extract_driving, extract_driving_with, probe_log_derivative, sup_driving_error, trace,
    CurveTrace, ExtractMode, ForceLoc, SleParams, Stop, TraceMode,
};
use weldlab::stats::{ks_two_sample_weighted, mean_se, Summary};
use weldlab::welding::{experiment_w2w, experiment_zipper, W2wConfig, ZipperConfig};
use weldlab::C64;

/// Written to the stderr handle directly so the line survives test capture.
fn verdict(id: &str, pass: bool, detail: &str, t0: Instant) -> bool {
    let line = format!(
        "{id}: {} ({detail}; {:.1}s)\n",
        if pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
fn c01_gff_covariance() {
    let t0 = Instant::now();
    let grid = GridSpec::h_box(64, 64, 3.0, 3.0).unwrap();
    let sampler = FreeSampler::new(&grid, Normalization::ZeroAvgUnitSemicircle).unwrap();
    let pairs = [
        (c(0.0, 2.0), c(0.0, 1.0)),
        (c(0.5, 0.5), c(-0.5, 1.0)),
        (c(1.0, 1.0), c(1.5, 2.0)),
        (c(-1.2, 0.3), c(-2.0, 1.5)),
        (c(0.3, 0.2), c(0.3, 2.5)),
        (c(2.0, 0.5), c(-2.0, 0.5)),
        (c(0.0, 0.5), c(0.0, 2.5)),
        (c(1.5, 1.5), c(-1.5, 1.5)),
        (c(0.8, 0.1), c(1.2, 0.1)),
        (c(-0.7, 0.7), c(0.7, 0.7)),
        (c(2.5, 2.5), c(0.2, 0.4)),
        (c(-2.5, 0.2), c(-2.2, 2.8)),
        (c(0.1, 1.1), c(0.9, 1.3)),
        (c(1.8, 0.9), c(2.6, 1.7)),
        (c(-1.0, 2.0), c(1.0, 2.0)),
        (c(0.4, 2.9), c(-0.4, 0.6)),
        (c(-1.6, 1.1), c(-0.9, 0.25)),
        (c(2.2, 0.15), c(0.05, 0.15)),
        (c(0.6, 1.6), c(0.6, 0.8)),
        (c(-2.8, 2.8), c(2.8, 2.8)),
    ];
    let exact = green_function(DomainId::H, Pt::Finite(c(0.0, 2.0)), Pt::Finite(c(0.0, 1.0))).unwrap();
    assert!((exact - (2.0 * 2f64.ln() - 3f64.ln())).abs() < 1e-12);

    let n = 20_000;
    let streams = Streams::new(2024, "acceptance:c1");
    let mut sums = vec![Summary::default(); pairs.len()];
    for k in 0..n {
        let f = sampler.sample_with(&mut streams.rng(k), k).unwrap();
        for (s, (z, w)) in sums.iter_mut().zip(&pairs) {
            s.push(f.interp(*z).unwrap() * f.interp(*w).unwrap());
        }
    }
    let mut worst = 0.0f64;
    for (s, (z, w)) in sums.iter().zip(&pairs) {
        let g = green_function(DomainId::H, Pt::Finite(*z), Pt::Finite(*w)).unwrap();
        worst = worst.max((s.mean - g).abs() / s.se());
    }
    let head = &sums[0];
    let detail = format!(
        "max |emp - G_H|/SE = {worst:.2} over 20 pairs, (2i,i): {:.4} vs {exact:.4}",
        head.mean
    );
    assert!(verdict("C1 gff_covariance", worst < 4.0, &detail, t0));
}

#[test]
fn c02_radial_capacity() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let rec = drive_radial(&SleParams::radial(2.0, 1.0, 1e-4, seed)).unwrap();
        let lg = probe_log_derivative(&rec, 1e-3).unwrap();
        for (t, l) in rec.times.iter().zip(&lg) {
            worst = worst.max((l - t).abs());
        }
    }
    let detail = format!("max |log g_t'(0) - t| = {worst:.2e} over 100 runs");
    assert!(verdict("C2 radial_capacity", worst < 1e-3, &detail, t0));
}

/// Through-origin slope of the mean quadratic variation curve.
fn qv_slope(radial: bool, kappa: f64, n: u64) -> f64 {
    let mut acc: Vec<f64> = Vec::new();
    let mut times = Vec::new();
    for seed in 0..n {
        let p = if radial {
            SleParams::radial(kappa, 1.0, 1e-3, seed)
        } else {
            SleParams::chordal(kappa, 1.0, 1e-3, seed)
        };
        let rec = if radial { drive_radial(&p) } else { drive_chordal(&p) }.unwrap();
        let (t, q) = rec.quadratic_variation();
        if acc.is_empty() {
            acc = vec![0.0; q.len()];
            times = t;
        }
        for (a, v) in acc.iter_mut().zip(&q) {
            *a += v / n as f64;
        }
    }
    let num: f64 = times.iter().zip(&acc).map(|(t, q)| t * q).sum();
    let den: f64 = times.iter().map(|t| t * t).sum();
    num / den
}

#[test]
fn c03_driving_quadratic_variation() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for radial in [false, true] {
        for kappa in [1.0, 2.0, 3.0] {
            let s = qv_slope(radial, kappa, 2000);
            worst = worst.max((s / kappa - 1.0).abs());
            parts.push(format!("{}{kappa}:{s:.3}", if radial { "r" } else { "c" }));
        }
    }
    let detail = format!("max rel err {worst:.4}; {}", parts.join(" "));
    assert!(verdict("C3 driving_qv", worst < 0.05, &detail, t0));
}

#[test]
fn c04_girsanov_tilt() {
    let t0 = Instant::now();
    let (kappa, mu, horizon, n) = (2.0, 0.3, 1.0, 10_000u64);
    let funcs: [fn(f64) -> f64; 3] = [|x| x.cos(), |x| x.sin(), |x| (2.0 * x).cos()];
    let mut weighted = vec![Vec::with_capacity(n as usize); 3];
    let mut direct = vec![Vec::with_capacity(n as usize); 3];
    for k in 0..n {
        let p = SleParams::radial(kappa, horizon, 1e-3, k).with_force(1.0, ForceLoc::Plus);
        let r0 = drive_radial(&p).unwrap();
        assert_eq!(r0.stop, Stop::Horizon);
        let w = (mu * kappa.sqrt() * r0.b_final - mu * mu * kappa * horizon / 2.0).exp();
        let r1 = drive_radial(&SleParams { seed: k + n, ..p.clone() }.with_mu(mu)).unwrap();
        for (i, f) in funcs.iter().enumerate() {
            weighted[i].push(w * f(r0.final_value()));
            direct[i].push(f(r1.final_value()));
        }
    }
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for i in 0..3 {
        let (a, sa) = mean_se(&weighted[i]);
        let (b, sb) = mean_se(&direct[i]);
        let z = (a - b) / (sa * sa + sb * sb).sqrt();
        worst = worst.max(z.abs());
        parts.push(format!("{a:.4}/{b:.4}"));
    }
    let detail = format!("max |z| = {worst:.2}; weighted/direct {}", parts.join(" "));
    assert!(verdict("C4 girsanov_tilt", worst < 4.0, &detail, t0));
}

#[test]
fn c05_trace_extract_roundtrip() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let rec = drive_chordal(&SleParams::chordal(2.0, 0.25, 1e-4, seed)).unwrap();
        let curve = trace(&rec, 1, TraceMode::Tilted).unwrap();
        let back = extract_driving(&curve).unwrap();
        worst = worst.max(sup_driving_error(&rec, &back));
    }
    // slit [x0, x0 + 2i√t]: constant driving x0
    let x0 = 0.3;
    let ts: Vec<f64> = (0..=250).map(|k| k as f64 * 1e-3).collect();
    let slit = CurveTrace {
        points: ts.iter().map(|t| c(x0, 2.0 * t.sqrt())).collect(),
        cap_times: ts.clone(),
        domain: DomainId::H,
    };
    let mut analytic = 0.0f64;
    for mode in [ExtractMode::Vertical, ExtractMode::Tilted] {
        let ex = extract_driving_with(&slit, mode).unwrap();
        analytic = ex.driving.iter().fold(analytic, |m, w| m.max((w - x0).abs()));
    }
    let detail = format!("SLE_2 sup error {worst:.2e} (50 paths), vertical slit {analytic:.2e}");
    assert!(verdict("C5 trace_extract_roundtrip", worst < 0.05 && analytic < 0.02, &detail, t0));
}

#[test]
fn c06_continuation_threshold() {
    let t0 = Instant::now();
    let count = |rho: f64| {
        (0..500)
            .filter(|&s| {
                let p = SleParams::chordal(2.0, 10.0, 1e-3, s).with_force(rho, ForceLoc::Plus);
                drive_chordal(&p).unwrap().stop == Stop::ContinuationThreshold
            })
            .count()
    };
    let (hit, miss) = (count(-2.5), count(-1.0));
    let detail = format!("rho=-2.5: {hit}/500, rho=-1: {miss}/500");
    assert!(verdict("C6 continuation_threshold", hit == 500 && miss == 0, &detail, t0));
}

#[test]
fn c07_ig_dictionaries() {
    let t0 = Instant::now();
    let streams = Streams::new(7, "acceptance:c7");
    let mut rng = streams.rng(0);
    use rand::Rng;
    let mut violations = 0usize;
    let mut tuples = 0usize;
    let mut check = |ok: bool| {
        tuples += 1;
        if !ok {
            violations += 1;
        }
    };
    for _ in 0..10_000 {
        let kappa: f64 = rng.random_range(0.05..3.95);
        let gamma = kappa.sqrt();
        let w: f64 = rng.random_range(0.01..6.0);
        let k = ig::constants(kappa);
        let alpha = (4.0 - kappa + w) / (2.0 * gamma);
        let rho = ig::radial_rho(&k, alpha);
        let lo = 2.0 * PI * (1.0 - alpha / k.chi);
        let hi = 2.0 * k.lambda / k.chi;
        let theta: f64 = rng.random_range((lo - 1.0)..(hi + 1.0));

        // sum rule and interval
        let inside = theta > lo && theta < hi;
        match ig::angle_to_radial_weights(theta, alpha, kappa) {
            Ok(r) => check(inside && (r.rho_minus + r.rho_plus - r.rho).abs() < 1e-12 && (r.rho - rho).abs() < 1e-12),
            Err(_) => check(!inside),
        }
        // θ = 0 reduces to radial SLE_κ(W - 2)
        let r0 = ig::angle_to_radial_weights(0.0, alpha, kappa);
        check(matches!(r0, Ok(r) if r.rho_minus == 0.0 && (r.rho_plus - (w - 2.0)).abs() < 1e-12));
        check((ig::alpha_of_rho(&k, rho) - alpha).abs() < 1e-12);

        // height-difference intervals
        let d: f64 = rng.random_range((-PI * k.chi - 1.0)..(2.0 * k.lambda - PI * k.chi + 1.0));
        let class = ig::classify_height_difference(d, &k).class;
        let expect = if d == 0.0 {
            Interaction::Merge
        } else if d > -PI * k.chi && d < 0.0 {
            Interaction::Cross
        } else if d > 0.0 && d < 2.0 * k.lambda - PI * k.chi {
            Interaction::Bounce
        } else {
            Interaction::Invalid
        };
        check(class == expect);
        for edge in [-PI * k.chi, 2.0 * k.lambda - PI * k.chi] {
            check(ig::classify_height_difference(edge, &k).class == Interaction::Invalid);
        }
        check(ig::classify_height_difference(0.0, &k).class == Interaction::Merge);

        // conditional laws: total weight per component class
        let t1: f64 = rng.random_range(lo.max(-20.0)..hi);
        let t2: f64 = rng.random_range(lo.max(-20.0)..hi);
        let (t1, t2) = if t1 >= t2 { (t1, t2) } else { (t2, t1) };
        let r = k.chi / k.lambda;
        let admissible = t1 - t2 < 2.0 * PI * (alpha / k.chi - 1.0);
        for class in [ComponentClass::Distinguished, ComponentClass::BoundaryTouching, ComponentClass::Interior] {
            for given in [Given::Eta1, Given::Eta2] {
                match ig::conditional_law_weights(&k, t1, t2, rho, class, given) {
                    Ok(cw) => {
                        let total: f64 = cw.left.iter().chain(&cw.right).sum();
                        let want = match class {
                            ComponentClass::Distinguished | ComponentClass::Interior => rho - 2.0,
                            ComponentClass::BoundaryTouching => match given {
                                Given::Eta1 => rho - 2.0 + t1 * r,
                                Given::Eta2 => -2.0 - t2 * r,
                            },
                        };
                        let near = match given {
                            Given::Eta1 => cw.left == vec![(t1 - t2) * r - 2.0],
                            Given::Eta2 => cw.right == vec![(t1 - t2) * r - 2.0],
                        };
                        check(admissible && near && (total - want).abs() < 1e-9);
                    }
                    Err(_) => check(!admissible),
                }
            }
        }
    }
    let detail = format!("{violations} violations in {tuples} checks over 10^4 tuples");
    assert!(verdict("C7 ig_dictionaries", violations == 0, &detail, t0));
}

#[test]
fn c08_liouville_covariance() {
    let t0 = Instant::now();
    let gamma = 1.0;
    let h = GridSpec::h_box(65, 33, 2.0, 2.0).unwrap();
    // probe radii stay at least four cells wide after pulling back by 1/k;
    // powers above -θ/γ keep the additive-constant integral inside the window
    let probes = vec![
        Probe { z: c(0.4, 0.9), eps: 0.45, power: 3.0 },
        Probe { z: c(-0.6, 0.8), eps: 0.4, power: 4.0 },
        Probe { z: c(0.0, 1.3), eps: 0.5, power: 3.0 },
    ];
    let scaling = scaling_case(1.0, 1.5, gamma, &h, probes.clone()).unwrap();
    let strip = GridSpec::strip(97, 33, -4.0, 2.0).unwrap();
    let exp = strip_exp_case([1.0, 1.0, 0.5], c(0.3, 0.0), gamma, &strip, &h, probes).unwrap();
    assert_eq!(exp.map, ConfMap::Exp);
    let mut all = true;
    let mut parts = Vec::new();
    for (name, case) in [("scaling", &scaling), ("exp", &exp)] {
        let rep = check_conformal_covariance(case, 20_000, 11).unwrap();
        all &= rep.pass;
        let zmax = rep.probes.iter().map(|p| p.z_score.abs()).fold(0.0, f64::max);
        parts.push(format!("{name} max |z| = {zmax:.2}"));
    }
    assert!(verdict("C8 liouville_covariance", all, &parts.join(", "), t0));
}

#[test]
fn c09_thin_disk_factorization() {
    let t0 = Instant::now();
    let gamma = 1.0;
    let w = gamma * gamma / 4.0;
    let h = 1.0;
    let n = 2000u64;
    let cfg = ThinChainConfig::new(w, gamma, ChainMode::Disk, h).unwrap();
    let sampler = ThinChainSampler::new(cfg, 99).unwrap();
    let f = 1.0 - 2.0 * w / (gamma * gamma);
    let streams = Streams::new(5, "acceptance:c9");
    use rand::Rng;

    // one disk cut at a uniform label point: weight T
    let (mut a_stats, mut a_w) = (vec![Vec::new(); 3], Vec::new());
    for k in 0..n {
        let s = sampler.sample(streams.seed(k)).unwrap();
        let t = s.diagnostic("T").unwrap();
        let x = t * streams.rng(k).random::<f64>();
        let (l, r) = cut_chain(&s, x).unwrap();
        let (a, b) = (l.arc_lengths[0] + l.arc_lengths[1], r.arc_lengths[0] + r.arc_lengths[1]);
        a_stats[0].push(a);
        a_stats[1].push(b);
        a_stats[2].push(a / (a + b).max(1e-300));
        a_w.push(s.log_weight.exp() * t);
    }
    // two independent disks, restricted to T1 + T2 < h, times (1 - 2W/γ²)²
    let (mut b_stats, mut b_w) = (vec![Vec::new(); 3], Vec::new());
    let second = Streams::new(6, "acceptance:c9:pair");
    let mut kept = 0;
    for k in 0..n {
        let s1 = sampler.sample(second.seed(2 * k)).unwrap();
        let s2 = sampler.sample(second.seed(2 * k + 1)).unwrap();
        let w12 = f * f * (s1.log_weight + s2.log_weight).exp();
        if s1.diagnostic("T").unwrap() + s2.diagnostic("T").unwrap() >= h {
            b_w.push(0.0);
            continue;
        }
        kept += 1;
        let (a, b) = (s1.arc_lengths[0] + s1.arc_lengths[1], s2.arc_lengths[0] + s2.arc_lengths[1]);
        b_stats[0].push(a);
        b_stats[1].push(b);
        b_stats[2].push(a / (a + b).max(1e-300));
        b_w.push(w12);
    }
    let mass_a = mean_se(&a_w);
    let mass_b = mean_se(&b_w);
    let z_mass = (mass_a.0 - mass_b.0) / (mass_a.1.powi(2) + mass_b.1.powi(2)).sqrt();
    let bw: Vec<f64> = b_w.iter().copied().filter(|v| *v > 0.0).collect();
    let mut pmin = 1.0f64;
    for i in 0..3 {
        let (_, p) = ks_two_sample_weighted(&a_stats[i], &a_w, &b_stats[i], &bw);
        pmin = pmin.min(p);
    }
    let detail = format!(
        "min KS p = {pmin:.3} (kept {kept}/{n} pairs), mass {:.4} vs {:.4} (z = {z_mass:.2})",
        mass_a.0, mass_b.0
    );
    assert!(verdict("C9 thin_disk_factorization", pmin > 0.01 && z_mass.abs() < 4.0, &detail, t0));
}

#[test]
fn c10_welding_headline() {
    let t0 = Instant::now();
    let cfg = W2wConfig::desk(2.0, 2f64.sqrt(), 200, 2026).unwrap();
    let rep = experiment_w2w(&cfg).unwrap();
    for t in &rep.tests {
        println!("  {}", t.line());
    }
    let gate = |name: &str| rep.test(name).map(|t| t.pass).unwrap_or(false);
    let parts = ["reverse_qv_ratio", "reverse_drift", "forward_cut_length_equality"];
    let pass = parts.iter().all(|p| gate(p));
    let detail = parts
        .iter()
        .map(|p| format!("{p}={}", rep.test(p).map(|t| format!("{:.4}", t.statistic)).unwrap_or("missing".into())))
        .collect::<Vec<_>>()
        .join(", ");
    assert!(verdict("C10 welding_headline", pass, &detail, t0));
}

#[test]
fn c11_quantum_zipper() {
    let t0 = Instant::now();
    let cfg = ZipperConfig::desk(1.0, 1.0, 5000, 2026).unwrap();
    let rep = experiment_zipper(&cfg).unwrap();
    for t in &rep.tests {
        println!("  {}", t.line());
    }
    let m = rep.test("zipper_length_match").unwrap();
    let s = rep.test("zipper_bulk_slope").unwrap();
    let detail = format!(
        "max mismatch {:.2e} (δ = {:.1e}), slope {:.4} vs {:.4} ± {:.4}",
        m.statistic, m.tolerance, s.statistic, s.target, 4.0 * s.se
    );
    assert!(verdict("C11 quantum_zipper", m.pass && s.pass, &detail, t0));
}
