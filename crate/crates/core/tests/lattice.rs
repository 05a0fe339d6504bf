use plaquette::lattice::{
    defect_count, defect_map, enumerate_by_defect_count, flip_spins, ground_states, hamiltonian, invert_defects,
    invert_defects_with_frame, log_relative_weight, parity_check, plaquette_value, DEFAULT_BUDGET,
};
use plaquette::{DefectConfig, FixedBoundary, Lattice, LatticeSpec, Rectangle, Site, SpinConfig};
use proptest::prelude::*;

fn random_config(side: usize, periodic: bool, word: u64) -> SpinConfig {
    let lat = if periodic { Lattice::periodic(side) } else { Lattice::plus(side) };
    let mask = if lat.n_sites() == 64 { u64::MAX } else { (1u64 << lat.n_sites()) - 1 };
    SpinConfig::from_word(&lat, word & mask)
}

#[test]
fn single_minus_site_makes_four_corner_defects() {
    let lat = Lattice::plus(4);
    let s = SpinConfig::from_minus_sites(&lat, &[Site::new(2, 3)]).unwrap();
    let d = defect_map(&s);
    let mut got = d.sites();
    got.sort();
    let mut want = vec![Site::new(1, 2), Site::new(2, 2), Site::new(1, 3), Site::new(2, 3)];
    want.sort();
    assert_eq!(got, want);
    assert_eq!(hamiltonian(&s) - hamiltonian(&SpinConfig::all_plus(&lat)), 4.0);
}

#[test]
fn minus_block_has_defects_at_its_corners() {
    let lat = Lattice::plus(5);
    let sites: Vec<Site> = (2..=4).flat_map(|y| (1..=3).map(move |x| Site::new(x, y))).collect();
    let d = defect_map(&SpinConfig::from_minus_sites(&lat, &sites).unwrap());
    let r = Rectangle::new(0, 3, 1, 4).unwrap();
    let mut got = d.sites();
    got.sort();
    let mut want = r.corners().to_vec();
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn fixed_boundary_frame_shifts_the_ground_state() {
    let frame = FixedBoundary::from_fn(2, |s| if s.x == 0 && s.y == 1 { -1 } else { 1 });
    let lat = Lattice::new(LatticeSpec::fixed(frame)).unwrap();
    let all_plus = SpinConfig::all_plus(&lat);
    assert_eq!(defect_count(&all_plus), 2);
    let g = ground_states(&lat, DEFAULT_BUDGET).unwrap();
    assert!(!g.is_empty());
    assert!(g.iter().all(|s| defect_count(s) == defect_count(&g[0])));
}

#[test]
fn plaquette_values_off_lattice_are_rejected() {
    let s = SpinConfig::all_plus(&Lattice::plus(3));
    assert!(plaquette_value(&s, Site::new(0, 0)).is_ok());
    assert!(plaquette_value(&s, Site::new(4, 0)).is_err());
}

#[test]
fn odd_defect_sets_are_not_images() {
    let lat = Lattice::plus(3);
    let d = DefectConfig::from_sites(&lat, &[Site::new(0, 0)]).unwrap();
    assert!(!parity_check(&d));
    assert!(invert_defects(&d).is_err());
}

#[test]
fn counts_sum_to_state_space() {
    for lat in [Lattice::plus(3), Lattice::plus(4), Lattice::periodic(3), Lattice::periodic(4)] {
        let counts = enumerate_by_defect_count(&lat, DEFAULT_BUDGET).unwrap();
        assert_eq!(counts.values().sum::<u64>(), 1 << lat.n_sites());
        assert!(!counts.contains_key(&2));
    }
    assert!(enumerate_by_defect_count(&Lattice::plus(5), 1 << 10).is_err());
}

#[test]
fn weights_follow_defect_counts() {
    let s = SpinConfig::from_minus_sites(&Lattice::plus(3), &[Site::new(1, 1)]).unwrap();
    assert_eq!(log_relative_weight(&s, 2.0).unwrap(), -8.0);
}

proptest! {
    #[test]
    fn plus_defect_map_inverts(side in 1usize..=8, word: u64) {
        let s = random_config(side, false, word);
        let d = defect_map(&s);
        prop_assert!(parity_check(&d));
        prop_assert_eq!(d.count() % 2, 0);
        prop_assert_eq!(invert_defects(&d).unwrap(), s);
    }

    #[test]
    fn torus_defect_map_inverts_with_frame(side in 2usize..=8, word: u64) {
        let s = random_config(side, true, word);
        let d = defect_map(&s);
        prop_assert!(parity_check(&d));
        let n = side as i32;
        let col0: Vec<i8> = (0..n).map(|y| s.spin(Site::new(0, y)).unwrap()).collect();
        let row0: Vec<i8> = (0..n).map(|x| s.spin(Site::new(x, 0)).unwrap()).collect();
        prop_assert_eq!(invert_defects_with_frame(&d, &col0, &row0).unwrap(), s);
    }

    #[test]
    fn single_flip_toggles_four_plaquettes(side in 2usize..=8, word: u64, pick: usize) {
        let s = random_config(side, false, word);
        let x = s.lattice().site_at(pick % s.lattice().n_sites());
        let t = flip_spins(&s, &[x]).unwrap();
        let (a, b) = (defect_map(&s), defect_map(&t));
        let changed = s.lattice().plaquettes().filter(|&p| a.contains(p) != b.contains(p)).count();
        prop_assert_eq!(changed, 4);
    }

    #[test]
    fn text_round_trips(side in 1usize..=8, word: u64, periodic: bool) {
        let s = random_config(side.max(if periodic { 2 } else { 1 }), periodic, word);
        prop_assert_eq!(SpinConfig::from_text(s.lattice(), &s.to_text()).unwrap(), s.clone());
        let d = defect_map(&s);
        prop_assert_eq!(DefectConfig::from_text(s.lattice(), &d.to_text()).unwrap(), d);
    }

    #[test]
    fn word_defect_count_matches(side in 1usize..=8, word: u64) {
        let s = random_config(side, false, word);
        prop_assert_eq!(s.lattice().defect_count_word(s.word().unwrap()), defect_count(&s));
    }
}
