use plaquette::dynamics::seeded_rng;
use plaquette::lattice::{defect_count, defect_map};
use plaquette::paths::{
    classify_occupancy, compute_split, edge_type, extended_rectangles, flow_cost, identify_split, naive_path,
    occupancy_vector, partial_options, rectangle_removal_path, removal_order, sample_full_path, sample_partial_path,
    truncate, CanonicalPath, EdgeType, FlowMode, PathParams, RemovalOrder, SegmentKind, ThetaClass,
};
use plaquette::{DefectConfig, Lattice, Rectangle, Site, SpinConfig};
use proptest::prelude::*;

fn block(side: usize, x1: i32, x2: i32, y1: i32, y2: i32) -> SpinConfig {
    let lat = Lattice::plus(side);
    let sites: Vec<Site> = (y1..=y2).flat_map(|y| (x1..=x2).map(move |x| Site::new(x, y))).collect();
    SpinConfig::from_minus_sites(&lat, &sites).unwrap()
}

fn random(side: usize, seed: u64) -> SpinConfig {
    use rand::Rng;
    let lat = Lattice::plus(side);
    let mut rng = seeded_rng(seed, 0);
    let mut s = SpinConfig::all_plus(&lat);
    for i in 0..lat.n_sites() {
        if rng.random::<bool>() {
            s.flip_index(i);
        }
    }
    s
}

#[test]
fn removal_order_cases() {
    let lat = Lattice::plus(4);
    let r = Rectangle::new(0, 2, 0, 2).unwrap();
    let corners = r.corners();
    let with = |skip: Option<usize>| {
        let sites: Vec<Site> = (0..4).filter(|&i| Some(i) != skip).map(|i| corners[i]).collect();
        removal_order(&DefectConfig::from_sites(&lat, &sites).unwrap(), &r)
    };
    assert_eq!(with(None), RemovalOrder::Lex);
    assert_eq!(with(Some(3)), RemovalOrder::Lex);
    assert_eq!(with(Some(0)), RemovalOrder::AntiLex);
    assert_eq!(with(Some(1)), RemovalOrder::MirroredAntiLex);
    assert_eq!(with(Some(2)), RemovalOrder::MirroredLex);
}

#[test]
fn removal_of_three_corner_rectangle_leaves_one_defect_moved() {
    // an L-shaped minus region: removing the rectangle spanned by three corners
    let s = block(5, 1, 3, 1, 2);
    let d = defect_map(&s);
    assert_eq!(d.count(), 4);
    let r = Rectangle::new(0, 3, 0, 2).unwrap();
    let p = rectangle_removal_path(&s, &r).unwrap();
    assert!(p.terminal().is_all_plus());
    assert_eq!(p.len(), 6);
    assert!(p.states().iter().all(|x| defect_count(x) <= 6));
}

#[test]
fn extended_rectangles_of_blocks() {
    let s = block(6, 2, 4, 2, 5);
    let rs = extended_rectangles(&defect_map(&s), None);
    assert_eq!(rs, vec![Rectangle::new(1, 4, 1, 5).unwrap()]);
    let s = block(6, 1, 1, 1, 1);
    let rs = extended_rectangles(&defect_map(&s), Some(1));
    assert_eq!(rs, vec![Rectangle::new(0, 1, 0, 1).unwrap()]);
}

#[test]
fn split_parts_cover_columns() {
    let s = random(8, 4);
    let d = defect_map(&s);
    let split = compute_split(&d, 1.0);
    let mut cols = Vec::new();
    for i in 1..=split.m() {
        let (a, b) = split.part_columns(i).unwrap();
        cols.extend(a..=b);
        assert_eq!(occupancy_vector(&d, &split, i).unwrap().len(), 9);
    }
    assert_eq!(cols, (0..=8).collect::<Vec<_>>());
    assert!(split.part_columns(0).is_err());
}

#[test]
fn occupancy_classes() {
    assert_eq!(classify_occupancy(&[1, 2, 3], 2.0).unwrap(), ThetaClass::Sparse);
    assert_eq!(classify_occupancy(&[10, 0, 0], 2.0).unwrap(), ThetaClass::Dense(0));
    assert!(classify_occupancy(&[10, 0, 0, 0], 2.0).is_err());
    assert_eq!(classify_occupancy(&[10, 9, 9, 9, 9, 9, 1], 3.0).unwrap(), ThetaClass::Dense(1));
}

#[test]
fn edge_types_along_two_row_block() {
    let s = block(5, 2, 3, 2, 3);
    let r = Rectangle::new(1, 3, 1, 3).unwrap();
    let p = rectangle_removal_path(&s, &r).unwrap();
    let types: Vec<EdgeType> = p.edges().iter().map(|e| edge_type(e, &r, &s).unwrap()).collect();
    assert_eq!(types, vec![EdgeType::Init, EdgeType::Init, EdgeType::Fin, EdgeType::Fin]);
    let stray = plaquette::paths::EdgeRef { e_minus: s.clone(), site: Site::new(5, 5) };
    assert_eq!(edge_type(&stray, &r, &s).unwrap(), EdgeType::None);
}

#[test]
fn truncation_stops_at_level() {
    let s = random(5, 21);
    let mut p = sample_full_path(&s, &PathParams::new(2.0), &mut seeded_rng(1, 1), None).unwrap();
    truncate(&mut p, 4);
    let states = p.states();
    assert!(defect_count(states.last().unwrap()) <= 4);
    assert!(states[..states.len() - 1].iter().all(|x| defect_count(x) > 4));
}

#[test]
fn empty_defect_set_has_no_options() {
    let d = DefectConfig::empty(&Lattice::plus(3));
    assert!(partial_options(&d, &PathParams::new(1.0)).is_err());
}

#[test]
fn flow_modes_agree_roughly() {
    let lat = Lattice::plus(2);
    let params = PathParams::new(1.0);
    let ex = flow_cost(&lat, &params, 1, FlowMode::Exhaustive, 1 << 20).unwrap();
    let mc = flow_cost(&lat, &params, 1, FlowMode::MonteCarlo { samples: 200_000, seed: 3 }, 1 << 20).unwrap();
    let se = mc.argmax().unwrap().std_err;
    assert!((ex.cost - mc.cost).abs() <= 5.0 * se + 0.05 * ex.cost, "{} vs {}", ex.cost, mc.cost);
    assert!(ex.to_csv().starts_with("# schema=1\n"));
}

#[test]
fn flow_rejects_large_exhaustive_runs() {
    let lat = Lattice::plus(5);
    assert!(flow_cost(&lat, &PathParams::new(1.0), 1, FlowMode::Exhaustive, 1 << 20).is_err());
}

#[test]
fn naive_flips_minus_sites_in_reading_order() {
    let s = block(3, 1, 2, 2, 3);
    let p = naive_path(&s);
    assert_eq!(p.flips, vec![Site::new(1, 3), Site::new(2, 3), Site::new(1, 2), Site::new(2, 2)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn full_paths_reach_all_plus(seed: u64, side in 2usize..=6, beta in 0.5f64..4.0) {
        let s = random(side, seed);
        let d0 = defect_count(&s) as f64;
        let l = side as f64;
        let p = sample_full_path(&s, &PathParams::new(beta), &mut seeded_rng(seed, 1), None).unwrap();
        prop_assert!(p.terminal().is_all_plus());
        if d0 > 0.0 {
            prop_assert!(p.len() as f64 <= l * l * (beta * l + 1.0).min(d0 / 2.0));
        }
        let states = p.states();
        for seg in &p.segments {
            if let SegmentKind::Rectangle { .. } = seg.kind {
                let a = defect_count(&states[seg.start]);
                let b = defect_count(&states[seg.start + seg.len]);
                prop_assert!(a - b == 2 || a - b == 4);
                prop_assert!(states[seg.start..=seg.start + seg.len].iter().all(|x| defect_count(x) <= a + 2));
            }
        }
    }

    #[test]
    fn split_index_recovered(seed: u64) {
        let s = random(8, seed);
        let params = PathParams::new(3.0).with_split_threshold(1.0);
        let p = sample_partial_path(&s, &params, &mut seeded_rng(seed, 2)).unwrap();
        if let SegmentKind::Rectangle { part, .. } = p.segments[0].kind {
            if part > 0 {
                for e in p.edges() {
                    prop_assert_eq!(identify_split(&e, 1.0), part);
                }
            }
        }
    }

    #[test]
    fn classification_total_at_large_beta(v in prop::collection::vec(0usize..=21, 21)) {
        prop_assert!(classify_occupancy(&v, 6.0).is_ok());
    }

    #[test]
    fn path_text_round_trip(seed: u64) {
        let s = random(5, seed);
        let p = sample_full_path(&s, &PathParams::new(2.0), &mut seeded_rng(seed, 3), None).unwrap();
        let back = CanonicalPath::from_text(s.lattice(), &p.to_text()).unwrap();
        prop_assert_eq!(back.initial, p.initial);
        prop_assert_eq!(back.flips, p.flips);
    }
}
