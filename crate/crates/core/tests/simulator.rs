//! Physical properties of the plate simulator on small grids.

use wavesal::platesim::*;
use wavesal::wavecube::{DataCube, GridPoint};

const N: usize = 65;

/// Aluminium plate with the benchmark node spacing (0.25 m / 256).
fn material() -> MaterialSpec {
    MaterialSpec {
        side_length: 0.25 * (N - 1) as f64 / 256.0,
        ..MaterialSpec::aluminum_plate()
    }
}

fn excitation(source: GridPoint, amplitude: f64) -> ExcitationSpec {
    ExcitationSpec {
        carrier_frequency: 500e3,
        cycle_count: 5,
        amplitude,
        source,
    }
}

fn grid(steps: usize, stencil: Stencil) -> GridSpec {
    GridSpec {
        n1: N,
        n2: N,
        steps,
        safety: 0.9,
        record_every: 1,
        refine: 1,
        stencil,
        timestep: None,
    }
}

fn max_abs(c: &DataCube) -> f64 {
    c.max_abs()
}

#[test]
fn amplitude_linearity() {
    let m = material();
    let src = GridPoint::new(0, 0);
    for stencil in [Stencil::Compact, Stencil::Wide] {
        let g = grid(400, stencil);
        let a = simulate(&m, &[], &excitation(src, 1.0), &g).unwrap();
        let b = simulate(&m, &[], &excitation(src, 2.0), &g).unwrap();
        let scale = max_abs(&b);
        assert!(scale > 0.0);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((y - 2.0 * x).abs() <= 1e-12 * scale);
        }
    }
}

#[test]
fn centre_source_is_diagonally_symmetric() {
    let m = material();
    let c = (N - 1) / 2;
    let cube = simulate(
        &m,
        &[],
        &excitation(GridPoint::new(c, c), 1.0),
        &grid(500, Stencil::Wide),
    )
    .unwrap();
    let scale = max_abs(&cube);
    for t in (0..cube.t_len()).step_by(25) {
        for mm in 0..N {
            for l in 0..N {
                assert!((cube.get(l, mm, t) - cube.get(mm, l, t)).abs() <= 1e-9 * scale);
            }
        }
    }
}

#[test]
fn boundary_nodes_stay_zero() {
    let m = material();
    let defects = [DefectSpec::point(0.02, 0.5, 100.0, 100.0)];
    let cube = simulate(
        &m,
        &defects,
        &excitation(GridPoint::new(3, 30), 1.0),
        &grid(800, Stencil::Wide),
    )
    .unwrap();
    for t in 0..cube.t_len() {
        for k in 0..N {
            for (l, mm) in [(k, 0), (k, N - 1), (0, k), (N - 1, k)] {
                assert_eq!(cube.get(l, mm, t), 0.0);
            }
        }
    }
}

/// Largest `|w|` seen before `factor · distance / c_g` at any node, relative to
/// the largest `|w|` in the run.
fn early_arrival_ratio(stencil: Stencil, factor: f64) -> f64 {
    let m = material();
    let src = GridPoint::new(1, 1);
    let cube = simulate(&m, &[], &excitation(src, 1.0), &grid(1500, stencil)).unwrap();
    let cg = analytic_group_velocity(&m, 500e3);
    let mut early = 0.0_f64;
    for mm in 0..N {
        for l in 0..N {
            let d = cube.dx() * ((l as f64 - 1.0).hypot(mm as f64 - 1.0));
            let cutoff = factor * d / cg;
            let last = ((cutoff / cube.dt()).ceil() as usize).min(cube.t_len());
            for t in 0..last {
                early = early.max(cube.get(l, mm, t).abs());
            }
        }
    }
    early / max_abs(&cube)
}

#[test]
fn nothing_arrives_well_before_the_front() {
    // Kirchhoff plates are dispersive without bound and explicit stencils
    // have a wide numerical domain of dependence, so the precursor is small
    // but not exactly zero.
    for stencil in [Stencil::Compact, Stencil::Wide] {
        let r = early_arrival_ratio(stencil, 0.5);
        assert!(r < 1e-4, "{stencil:?}: {r:e}");
    }
}

#[test]
fn energy_is_conserved_after_forcing() {
    let m = material();
    let defects = [DefectSpec::point(0.5, 0.5, 100.0, 100.0)];
    for stencil in [Stencil::Compact, Stencil::Wide] {
        let mut solver =
            PlateSolver::new(&m, &defects, &excitation(GridPoint::new(1, 1), 1.0), &grid(1, stencil)).unwrap();
        let forcing_end = 5.0 / 500e3;
        while solver.time() <= forcing_end + solver.dt() {
            solver.advance();
        }
        let mut energies = Vec::new();
        for _ in 0..3000 {
            solver.advance();
            energies.push(solver.energy());
        }
        let e0 = energies[0];
        assert!(e0 > 0.0);
        for chunk in energies.chunks(1000) {
            let (first, last) = (chunk[0], chunk[chunk.len() - 1]);
            assert!(last <= first * 1.01, "{stencil:?}: {first:e} -> {last:e}");
        }
        let spread = energies.iter().map(|e| (e - e0).abs()).fold(0.0_f64, f64::max) / e0;
        assert!(spread < 1e-9, "{stencil:?}: relative drift {spread:e}");
    }
}

#[test]
fn inclusion_shows_in_the_difference_field() {
    let m = material();
    let (x, y) = (0.55, 0.45);
    let defects = [DefectSpec::point(x, y, 100.0, 100.0)];
    let src = excitation(GridPoint::new(1, 1), 1.0);
    // Both runs share the (smaller) step of the stiffened plate so that
    // samples line up in time.
    let mut g = grid(1, Stencil::Wide);
    let dt = PlateSolver::new(&m, &defects, &src, &g).unwrap().dt();
    g.timestep = Some(dt);

    // Stop shortly after the packet has passed the inclusion, before the
    // scattered field reaches far edges and echoes back.
    let cg = analytic_group_velocity(&m, 500e3);
    let dist = m.side_length * x.hypot(y);
    let t_end = (((dist / cg) + 10e-6) / dt).round() as usize;
    g.steps = t_end;
    let pristine = simulate(&m, &[], &src, &g).unwrap();
    let defective = simulate(&m, &defects, &src, &g).unwrap();
    assert!(t_end < pristine.t_len());

    let mut best = (0usize, 0usize, 0.0_f64);
    for mm in 0..N {
        for l in 0..N {
            let e: f64 = (0..=t_end)
                .map(|t| (defective.get(l, mm, t) - pristine.get(l, mm, t)).powi(2))
                .sum();
            if e > best.2 {
                best = (l, mm, e);
            }
        }
    }
    let cell = ((x * (N - 1) as f64).floor(), (y * (N - 1) as f64).floor());
    // Nodes at distance ≤ 2 cells from the altered cell.
    let dl = (best.0 as f64 - cell.0 - 0.5).abs() - 0.5;
    let dm = (best.1 as f64 - cell.1 - 0.5).abs() - 0.5;
    assert!(dl.max(dm) <= 2.0, "max at ({}, {}), cell {cell:?}", best.0, best.1);
}

#[test]
fn zero_amplitude_gives_zero_cube() {
    let m = material();
    let cube = simulate(
        &m,
        &[],
        &excitation(GridPoint::new(0, 0), 0.0),
        &grid(100, Stencil::Wide),
    )
    .unwrap();
    assert!(cube.values().iter().all(|&v| v == 0.0));
}
