//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::collections::HashSet;
use std::time::Instant;

use plaquette::dynamics::{seeded_rng, RateModel};
use plaquette::exact::{
    build_generator, dirichlet_form, ground_mass, spectral_gap, tabulate, test_function_plus, variance,
};
use plaquette::experiments::{cmd_arrhenius, cmd_flow, default_arrhenius_grid, path_suite, BcSpec, ModeSpec};
use plaquette::lattice::{defect_map, enumerate_by_defect_count, invert_defects, parity_check, DEFAULT_BUDGET};
use plaquette::paths::{classify_occupancy, compute_split, occupancy_vector, PathParams, DEFAULT_SPLIT_THRESHOLD};
use plaquette::periodic::{
    all_ground_states, encode_ground, estimate_trace_kernel, excursion_statistics, test_function_g, GroundCode,
};
use plaquette::{DefectConfig, Lattice, SpinConfig};
use rand::Rng;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn counting_bound(k: usize, l: f64) -> f64 {
    let kf = k as f64;
    (((std::f64::consts::E * kf).powi(2) * l * l).powf(kf)).min(l.powf(3.0 * kf))
}

fn parity_bijection() -> Outcome {
    let lat = Lattice::plus(3);
    let mut images = HashSet::new();
    let mut inverse_ok = true;
    for w in 0..512u64 {
        let s = SpinConfig::from_word(&lat, w);
        let d = defect_map(&s);
        inverse_ok &= parity_check(&d) && invert_defects(&d).map(|t| t == s).unwrap_or(false);
        images.insert(d);
    }
    let valid: Vec<DefectConfig> = (0..1u64 << 16)
        .map(|m| {
            let mut d = DefectConfig::empty(&lat);
            (0..16).filter(|p| m >> p & 1 == 1).for_each(|p| d.toggle_index(p));
            d
        })
        .filter(parity_check)
        .collect();
    let onto = valid.len() == 512 && valid.iter().all(|d| images.contains(d));
    (
        inverse_ok && images.len() == 512 && onto,
        format!("{} distinct images, {} parity-valid sets, inverse identity {}", images.len(), valid.len(), inverse_ok),
    )
}

fn counting() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for l in [3, 4] {
        let counts = enumerate_by_defect_count(&Lattice::plus(l), DEFAULT_BUDGET).unwrap();
        ok &= !counts.contains_key(&2);
        ok &= counts.iter().filter(|(&n, _)| n > 0).all(|(&n, &c)| c as f64 <= counting_bound(n / 2, l as f64));
        notes.push(format!("L={l} levels {}", counts.len()));
    }
    let counts = enumerate_by_defect_count(&Lattice::periodic(3), DEFAULT_BUDGET).unwrap();
    ok &= !counts.contains_key(&2);
    ok &= counts.iter().filter(|(&n, _)| n > 0).all(|(&n, &c)| c as f64 <= 2f64.powi(5) * counting_bound(n / 2, 2.0));
    notes.push(format!("torus {counts:?}"));
    (ok, notes.join("; "))
}

fn ground_mass_decay() -> Outcome {
    let (lo, hi) = (0.5 * (-2.0f64).exp(), 2.0 * (-2.0f64).exp());
    let mut ok = true;
    let mut notes = Vec::new();
    for lat in [Lattice::plus(3), Lattice::periodic(3)] {
        let excess: Vec<f64> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&b| 1.0 - ground_mass(&build_generator(&lat, RateModel::metropolis(b), DEFAULT_BUDGET).unwrap()))
            .collect();
        let ratios: Vec<f64> = excess.windows(2).map(|w| w[1] / w[0]).collect();
        ok &= ratios.iter().all(|r| (lo..=hi).contains(r));
        notes.push(format!(
            "{} ratios {}",
            lat.boundary().label(),
            ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(", ")
        ));
    }
    (ok, format!("{} (band [{lo:.4}, {hi:.4}])", notes.join("; ")))
}

fn flow_bound() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (l, beta) in [(2, 1.0), (2, 2.0), (3, 1.0)] {
        let row = cmd_flow(beta, l, 1, ModeSpec::Exhaustive, 0, 0, DEFAULT_SPLIT_THRESHOLD).unwrap();
        ok &= row.holds();
        notes.push(format!("L={l} beta={beta}: {:.4} >= {:.5}", row.lambda, row.inv_cost()));
    }
    (ok, notes.join("; "))
}

fn paths() -> Outcome {
    let st = path_suite(6, &PathParams::new(3.0), 10_000, 1).unwrap();
    let split = path_suite(8, &PathParams::new(3.0).with_split_threshold(1.0), 2_000, 2).unwrap();
    (
        st.clean(8) && split.clean(8),
        format!(
            "L=6: {st}; L=8 c=1 split {}/{} recovered",
            split.split_checked - split.split_missed,
            split.split_checked
        ),
    )
}

fn partition() -> Outcome {
    let mut rng = seeded_rng(6, 0);
    let mut ok = true;
    for _ in 0..100_000 {
        let v: Vec<usize> = (0..=20).map(|_| rng.random_range(0..=21)).collect();
        let a = classify_occupancy(&v, 6.0);
        ok &= a.is_ok() && a == classify_occupancy(&v, 6.0);
    }
    let lat = Lattice::plus(8);
    let mut vectors = 0usize;
    for _ in 0..10_000 {
        let mut s = SpinConfig::all_plus(&lat);
        for i in 0..lat.n_sites() {
            if rng.random::<bool>() {
                s.flip_index(i);
            }
        }
        let d = defect_map(&s);
        for c in [1.0, DEFAULT_SPLIT_THRESHOLD] {
            let split = compute_split(&d, c);
            for i in 1..=split.m() {
                let v = occupancy_vector(&d, &split, i).unwrap();
                let a = classify_occupancy(&v, 6.0);
                ok &= a.is_ok() && a == classify_occupancy(&v, 6.0);
                vectors += 1;
            }
        }
    }
    (ok, format!("100000 random vectors and {vectors} lattice occupancy vectors classified"))
}

fn periodic_ground() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for n in 2..=4 {
        let lat = Lattice::periodic(n);
        let zero = enumerate_by_defect_count(&lat, DEFAULT_BUDGET).unwrap().get(&0).copied().unwrap_or(0);
        ok &= zero == 1 << (2 * n - 1);
        for (b, s) in all_ground_states(&lat).unwrap().iter().enumerate() {
            ok &= encode_ground(s).map(|c| c == GroundCode::from_bits(n, b as u64)).unwrap_or(false);
        }
        notes.push(format!("side {n}: {zero}"));
    }
    (ok, notes.join(", "))
}

fn test_functions() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (lat, periodic) in [(Lattice::plus(3), false), (Lattice::periodic(3), true)] {
        for beta in [1.0, 2.0, 3.0] {
            let g = build_generator(&lat, RateModel::metropolis(beta), DEFAULT_BUDGET).unwrap();
            let f = if periodic {
                tabulate(&g, |s| test_function_g(s).unwrap())
            } else {
                tabulate(&g, |s| test_function_plus(s).unwrap())
            };
            let ratio = variance(&g, &f).unwrap() / dirichlet_form(&g, &f).unwrap();
            let trel = 1.0 / spectral_gap(&g).unwrap();
            ok &= ratio <= trel * (1.0 + 1e-12);
            notes.push(format!("{} b={beta}: {ratio:.3} <= {trel:.3}", lat.boundary().label()));
        }
    }
    (ok, notes.join("; "))
}

fn trace_kernel() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for side in [3, 4] {
        let k = estimate_trace_kernel(3.0, side, 10_000, 16, 9, 1 << 34).unwrap();
        let m = k.mass();
        let near = m.hamming_one + m.antipode;
        ok &= near >= 0.95;
        notes.push(format!("side {side} hamming-1+antipode mass {near:.3}"));
    }
    for side in [3, 4, 5] {
        let e = excursion_statistics(3.0, side, 10_000, 9, 1 << 34).unwrap();
        let scaled = e.p_noreturn * side as f64;
        ok &= (0.2..=5.0).contains(&scaled);
        notes.push(format!("side {side} P[noreturn]*L {scaled:.3}"));
    }
    (ok, notes.join("; "))
}

fn arrhenius() -> Outcome {
    let grid = default_arrhenius_grid();
    let plus = cmd_arrhenius(&BcSpec::Plus, &grid, 400, 10, 1 << 34).unwrap();
    let per = cmd_arrhenius(&BcSpec::Periodic, &grid, 400, 10, 1 << 34).unwrap();
    let ok = (3.0..=4.0).contains(&plus.slope) && per.slope >= plus.slope;
    (
        ok,
        format!(
            "plus slope {:.3} +- {:.3} (band [3, 4]), periodic slope {:.3} +- {:.3}",
            plus.slope, plus.slope_se, per.slope, per.slope_se
        ),
    )
}

fn exact_references() -> Outcome {
    let mut worst: f64 = 0.0;
    for beta in [0.0, 0.5, 1.0, 2.0, 3.0] {
        let g = build_generator(&Lattice::plus(1), RateModel::metropolis(beta), DEFAULT_BUDGET).unwrap();
        worst = worst.max((spectral_gap(&g).unwrap() - (1.0 + (-4.0 * beta).exp())).abs());
    }
    for lat in [Lattice::plus(2), Lattice::plus(3), Lattice::periodic(3)] {
        let g = build_generator(&lat, RateModel::metropolis(0.0), DEFAULT_BUDGET).unwrap();
        worst = worst.max((spectral_gap(&g).unwrap() - 2.0).abs());
    }
    (worst < 1e-10, format!("max deviation {worst:.2e}"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("parity bijection at L=3", parity_bijection),
        ("defect counting bounds", counting),
        ("ground-state mass decay per unit beta", ground_mass_decay),
        ("flow cost bounds the spectral profile", flow_bound),
        ("sampled path suite", paths),
        ("occupancy partition totality", partition),
        ("periodic ground-state structure", periodic_ground),
        ("test-function relaxation lower bounds", test_functions),
        ("trace kernel structure", trace_kernel),
        ("Arrhenius slopes", arrhenius),
        ("exact spectral references", exact_references),
    ];
    let mut failed = Vec::new();
    for (n, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = run();
        println!(
            "criterion {:>2} {} {name} ({:.1}s): {detail}",
            n + 1,
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(n + 1);
        }
    }
    if failed.is_empty() {
        println!("all acceptance criteria passed");
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
