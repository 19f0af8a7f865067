//! Partition geometry, arrival ordering and window alignment.

use proptest::prelude::*;
use std::sync::OnceLock;
use wavesal::pipeline::{simulate_scenario, Detector};
use wavesal::platesim::ExcitationSpec;
use wavesal::scenario::{parse_scenario, ScenarioConfig};
use wavesal::wavecube::{DataCube, GridPoint};
use wavesal::windowing::{extract_windows, make_partition, RegionIndex};

fn excitation(source: GridPoint) -> ExcitationSpec {
    ExcitationSpec {
        carrier_frequency: 500e3,
        cycle_count: 5,
        amplitude: 1.0,
        source,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn partition_covers_every_node(rx in 1usize..9, ry in 1usize..9, px in 2usize..8, py in 2usize..8) {
        let (n1, n2) = (rx * (px - 1) + 1, ry * (py - 1) + 1);
        let p = make_partition(n1, n2, rx, ry).unwrap();
        prop_assert_eq!((p.p1(), p.p2()), (px, py));
        prop_assert_eq!(p.region_count(), rx * ry);
        for k in 0..p.region_count() {
            prop_assert_eq!(p.flat(p.unflat(k)), k);
        }
        let mut covered = vec![0usize; n1 * n2];
        for r in p.regions() {
            let o = p.origin(r);
            prop_assert!(o.l + px <= n1 && o.m + py <= n2);
            for m in o.m..o.m + py {
                for l in o.l..o.l + px {
                    covered[m * n1 + l] += 1;
                }
            }
        }
        for m in 0..n2 {
            for l in 0..n1 {
                let c = covered[m * n1 + l];
                prop_assert!(c >= 1);
                // Nodes on a shared side belong to two regions per axis.
                let shared = |v: usize, span: usize, n: usize| v.is_multiple_of(span) && v != 0 && v != n - 1;
                let expect = (1 + usize::from(shared(l, px - 1, n1))) * (1 + usize::from(shared(m, py - 1, n2)));
                prop_assert_eq!(c, expect);
                let r = p.region_of_node(GridPoint::new(l, m));
                let o = p.origin(r);
                prop_assert!(o.l <= l && l < o.l + px && o.m <= m && m < o.m + py);
            }
        }
    }

    #[test]
    fn indivisible_grids_are_rejected(regions in 2usize..17, n in 3usize..300) {
        let ok = (n - 1) % regions == 0;
        prop_assert_eq!(make_partition(n, n, regions, regions).is_ok(), ok);
    }

    #[test]
    fn arrivals_grow_with_distance_and_extraction_is_deterministic(
        speed in 500.0f64..20e3,
        sl in 0usize..33,
        sm in 0usize..33,
        window_len in 1usize..8,
    ) {
        let p = make_partition(33, 33, 4, 8).unwrap();
        let cube = DataCube::from_fn(33, 33, 400, 1e-3, 1e-7, |l, m, t| 1.0 + (l + 2 * m + t) as f64).unwrap();
        let e = excitation(GridPoint::new(sl, sm));
        let w = extract_windows(&cube, &p, speed, &e, window_len);
        let w2 = extract_windows(&cube, &p, speed, &e, window_len);
        prop_assert_eq!(&w.as_ref().ok(), &w2.as_ref().ok());
        let Ok(w) = w else { return Ok(()); };
        let src = e.loaded_node(33, 33);
        let mut pairs: Vec<(f64, usize, RegionIndex)> = p
            .regions()
            .map(|r| {
                let (cx, cy) = p.region_centroid(r, 1e-3).unwrap();
                ((cx - src.l as f64 * 1e-3).hypot(cy - src.m as f64 * 1e-3), w.arrival_index(r), r)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        prop_assert!(pairs.windows(2).all(|q| q[0].1 <= q[1].1));
        for &(_, start, r) in &pairs {
            prop_assert_eq!(w.is_active(r), start + window_len <= cube.t_len());
        }
    }
}

fn pristine() -> &'static (ScenarioConfig, DataCube) {
    static CUBE: OnceLock<(ScenarioConfig, DataCube)> = OnceLock::new();
    CUBE.get_or_init(|| {
        let config = parse_scenario(include_str!("../scenarios/pristine_ci.cfg")).unwrap();
        let (cube, _) = simulate_scenario(&config).unwrap();
        (config, cube)
    })
}

/// The loudest instant of each region falls inside its window.
#[test]
fn pristine_windows_catch_the_packet() {
    let (config, cube) = pristine();
    let detector = Detector::new(cube, config).unwrap();
    let windows = detector.windows();
    let p = detector.partition();
    let tw = windows.window_len();
    let mut aligned = 0;
    let mut active = 0;
    for r in windows.active_regions() {
        active += 1;
        let o = p.origin(r);
        let rms: Vec<f64> = (0..cube.t_len())
            .map(|t| {
                let mut s = 0.0;
                for m in o.m..o.m + p.p2() {
                    for l in o.l..o.l + p.p1() {
                        s += cube.get(l, m, t).powi(2);
                    }
                }
                s
            })
            .collect();
        let peak = (0..rms.len()).max_by(|&a, &b| rms[a].total_cmp(&rms[b])).unwrap();
        let start = windows.arrival_index(r);
        // One sample of slack for the rounded window start.
        if peak + 1 >= start && peak <= start + tw {
            aligned += 1;
        }
    }
    let fraction = aligned as f64 / active as f64;
    assert!(fraction >= 0.9, "{aligned}/{active}");
}
