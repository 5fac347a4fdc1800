use nalgebra::Vector3;
use proptest::prelude::*;
use reflector_core::reflector::energy_g1;
use reflector_core::sphere::{cap_area, ConicalCylinder, Direction, Radiance, Region, SphericalSampler};
use reflector_core::synthesis::{
    carve_single_target, check_cone_disjointness, compose_multi_target, projection_identity_disagreement,
    rot_sym_cells, target_polygon, CarveParams, Cell, Ring,
};
use reflector_core::Error;

fn cell(base: Region, a: f64, b: f64, target: Vector3<f64>, energy: f64) -> Cell {
    Cell {
        base,
        a,
        b,
        target,
        energy,
    }
}

/// Inner cap in the lower slab, outer band above it; both beams head down
/// the axis without crossing the other cell.
fn stacked_cells() -> Vec<Cell> {
    vec![
        cell(
            Region::z_cap(0.9),
            1.0,
            0.5,
            Vector3::new(0.0, 0.0, -2.0),
            cap_area(0.9),
        ),
        cell(
            Region::z_band(0.7, 0.9),
            1.5,
            0.5,
            Vector3::new(0.0, 0.0, -3.0),
            cap_area(0.7) - cap_area(0.9),
        ),
    ]
}

fn whole() -> ConicalCylinder {
    ConicalCylinder::new(Region::z_cap(0.7), 1.0, 1.0)
}

#[test]
fn thin_slab_carving_converges_monotonically() {
    let g = Radiance::uniform(1.0, Region::z_cap(0.9));
    let c = ConicalCylinder::new(Region::z_cap(0.9), 1.0, 0.05);
    let out = carve_single_target(&c, &Vector3::new(0.0, 0.0, -1.0), &g, &CarveParams::default()).unwrap();
    assert!(out.converged);
    assert!(out.trace.len() >= 2);
    for w in out.trace.windows(2) {
        assert!(w[1].residual < w[0].residual);
        assert!(w[1].measure <= w[0].measure);
    }
    assert!(out.residual.mean <= 1e-3 * cap_area(0.9));
    let dirs = SphericalSampler::cap(11, 4096, Direction::Z, 0.9).directions();
    for k in 0..out.carving.len() {
        assert!(projection_identity_disagreement(&out.carving, k, &dirs, 64) <= 1e-3);
    }
}

#[test]
fn thick_slab_needs_one_patch() {
    let g = Radiance::uniform(1.0, Region::z_cap(0.9));
    let c = ConicalCylinder::new(Region::z_cap(0.9), 1.0, 10.0);
    let out = carve_single_target(&c, &Vector3::new(0.0, 0.0, -1.0), &g, &CarveParams::default()).unwrap();
    assert_eq!(out.reflector.patches().len(), 1);
    assert_eq!(out.residual.mean, 0.0);
}

#[test]
fn carved_reflector_sends_everything_to_its_target() {
    let g = Radiance::uniform(1.0, Region::z_cap(0.9));
    let c = ConicalCylinder::new(Region::z_cap(0.9), 1.0, 0.2);
    let x = Vector3::new(0.2, 0.1, -1.5);
    let out = carve_single_target(&c, &x, &g, &CarveParams::default()).unwrap();
    let t = energy_g1(
        &out.reflector,
        &g,
        &SphericalSampler::cap(2, 1 << 16, Direction::Z, 0.9),
    );
    assert_eq!(t.blocked.count, 0);
    let mu = cap_area(0.9);
    assert!(t.lost_energy().mean <= 2e-3 * mu);
    assert!((t.target(0).mean - mu).abs() <= 2e-3 * mu);
}

#[test]
fn patch_limit_reports_non_convergence() {
    let g = Radiance::uniform(1.0, Region::z_cap(0.9));
    let c = ConicalCylinder::new(Region::z_cap(0.9), 1.0, 0.05);
    let params = CarveParams {
        max_patches: 1,
        ..CarveParams::default()
    };
    let out = carve_single_target(&c, &Vector3::new(0.0, 0.0, -1.0), &g, &params).unwrap();
    assert_eq!(out.reflector.patches().len(), 1);
    assert!(!out.converged);
}

#[test]
fn stacked_cells_compose() {
    let g = Radiance::uniform(1.0, Region::z_cap(0.7));
    let c = compose_multi_target(&stacked_cells(), &whole(), &g, &CarveParams::default()).unwrap();
    assert!(c.converged);
    assert_eq!(c.reflector.targets().len(), 2);
    let priorities: Vec<u32> = c.reflector.patches().iter().map(|p| p.priority).collect();
    let mut unique = priorities.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), priorities.len());
}

#[test]
fn overlapping_bases_are_rejected() {
    let mut cells = stacked_cells();
    cells[1].base = Region::z_band(0.7, 0.95);
    let g = Radiance::uniform(1.0, Region::z_cap(0.7));
    let err = compose_multi_target(&cells, &whole(), &g, &CarveParams::default()).unwrap_err();
    assert!(matches!(err, Error::OverlappingCells { i: 0, j: 1 }), "{err:?}");
}

#[test]
fn wrong_cell_energy_is_rejected() {
    let mut cells = stacked_cells();
    cells[1].energy *= 1.01;
    let g = Radiance::uniform(1.0, Region::z_cap(0.7));
    let err = compose_multi_target(&cells, &whole(), &g, &CarveParams::default()).unwrap_err();
    assert!(matches!(err, Error::EnergyMismatch { index: 1, .. }), "{err:?}");
}

#[test]
fn crossing_chords_violate_disjointness() {
    // side-by-side slabs; the cap's target lies off to the side, so its
    // chords run through the band
    let cells = vec![
        cell(Region::z_cap(0.9), 1.0, 0.5, Vector3::new(6.0, 0.0, 1.2), cap_area(0.9)),
        cell(
            Region::z_band(0.7, 0.9),
            1.0,
            0.5,
            Vector3::new(0.0, 0.0, -3.0),
            cap_area(0.7) - cap_area(0.9),
        ),
    ];
    let err = check_cone_disjointness(&cells, 1).unwrap_err();
    let Error::HypothesisViolated { i, j, witness } = err else {
        panic!("{err:?}");
    };
    assert_eq!((i, j), (1, 0));
    assert!(cells[1].cylinder().contains(&witness));
    assert!(check_cone_disjointness(&stacked_cells(), 1).is_ok());
}

#[test]
fn ring_energies_must_add_up() {
    let g = Radiance::uniform(1.0, Region::z_cap(0.7));
    let mass = cap_area(0.7);
    let ring = |k, f| Ring {
        k,
        d: 2.0,
        xi: -0.6,
        t: 0.0,
        f,
    };
    let ok = rot_sym_cells(0.7, 1.0, 1.0, &[ring(1, 0.6 * mass), ring(4, 0.4 * mass)], &g).unwrap();
    assert_eq!(ok.0.len(), 5);
    let err = rot_sym_cells(0.7, 1.0, 1.0, &[ring(1, 0.6 * mass), ring(4, 0.5 * mass)], &g).unwrap_err();
    assert!(matches!(err, Error::ConservationViolated { .. }), "{err:?}");
}

#[test]
fn polygon_vertices_sit_on_the_ring() {
    for k in 1..6 {
        let pts = target_polygon(k, 2.5, -0.4, 0.3);
        assert_eq!(pts.len(), k as usize);
        for p in &pts {
            assert!((p.norm() - 2.5).abs() <= 1e-12);
            if k > 1 {
                assert!((p.z - 2.5 * -0.4).abs() <= 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn carving_trace_is_monotone(
        cap in 0.75f64..0.95,
        delta in 0.03f64..0.3,
        tx in -0.5f64..0.5,
        tz in -3.0f64..-0.8,
    ) {
        let g = Radiance::uniform(1.0, Region::z_cap(cap));
        let c = ConicalCylinder::new(Region::z_cap(cap), 1.0, delta);
        let params = CarveParams {
            measure_samples: 1 << 13,
            ..CarveParams::default()
        };
        let out = carve_single_target(&c, &Vector3::new(tx, 0.0, tz), &g, &params).unwrap();
        for w in out.trace.windows(2) {
            prop_assert!(w[1].residual < w[0].residual);
            prop_assert!(w[1].measure <= w[0].measure);
        }
        for (i, p) in out.reflector.patches().iter().enumerate() {
            prop_assert_eq!(p.priority, i as u32);
        }
    }
}
