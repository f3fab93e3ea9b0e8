use moldflow::geometry::{
    build_cavity, generate_mesh, inlet_velocity, point_in_domain, BoundaryLabel, DesignParams, RE_LIMIT,
};
use moldflow::solver::FluidProps;
use moldflow::Error;
use proptest::prelude::*;

const MM: f64 = 1e-3;

fn close(a: [f64; 2], b: [f64; 2]) -> bool {
    (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12
}

#[test]
fn vertical_pipe_sits_on_the_rectangle() {
    let d = build_cavity(&DesignParams::new(10.0, 50.0, 90.0, 0.5)).unwrap();
    let poly = d.polygon();
    for corner in [[0.0, 0.0], [100.0, 0.0], [100.0, 50.0], [0.0, 50.0]] {
        assert!(poly.iter().any(|&p| close(p, [corner[0] * MM, corner[1] * MM])), "{corner:?}");
    }
    let inlet: Vec<_> = d.segments.iter().filter(|s| s.label == BoundaryLabel::Inlet).collect();
    assert_eq!(inlet.len(), 1);
    let mouth = inlet[0];
    assert!((mouth.start[1] - 80.0 * MM).abs() < 1e-12);
    assert!((mouth.start[0] - 55.0 * MM).abs() < 1e-12);
    assert!((mouth.end[0] - 45.0 * MM).abs() < 1e-12);
    // outward normal of the mouth points up
    assert!((mouth.normal[1] - 1.0).abs() < 1e-12);
    let outlets = d.segments.iter().filter(|s| s.label == BoundaryLabel::Outlet).count();
    assert_eq!(outlets, 2);
}

#[test]
fn footprint_outside_the_top_wall_is_invalid() {
    let err = build_cavity(&DesignParams::new(25.0, 10.0, 90.0, 0.5)).unwrap_err();
    assert!(matches!(err, Error::InvalidDesign(_)));
}

#[test]
fn inclined_pipe_tip_is_displaced_by_the_cotangent() {
    let d = build_cavity(&DesignParams::new(10.0, 50.0, 45.0, 0.5)).unwrap();
    let mouth = d.segments.iter().find(|s| s.label == BoundaryLabel::Inlet).unwrap();
    let centre = 0.5 * (mouth.start[0] + mouth.end[0]);
    let displacement = (centre - 50.0 * MM).abs();
    let oracle = 30.0 * MM / 45f64.to_radians().tan();
    assert!((displacement - oracle).abs() < 1e-12);
    assert!((displacement - 30.0 * MM).abs() < 1e-12);
}

#[test]
fn containment_examples() {
    let d = build_cavity(&DesignParams::new(10.0, 50.0, 90.0, 0.5)).unwrap();
    assert!(point_in_domain(&d, [50.0 * MM, 25.0 * MM]));
    assert!(!point_in_domain(&d, [-MM, 25.0 * MM]));
    assert!(point_in_domain(&d, [5.0 * MM, 50.0 * MM]));
    // inside the pipe, outside the rectangle
    assert!(point_in_domain(&d, [50.0 * MM, 70.0 * MM]));
    assert!(!point_in_domain(&d, [30.0 * MM, 70.0 * MM]));
}

#[test]
fn inlet_speed_follows_the_reynolds_cap() {
    let props = FluidProps::default();
    let full = inlet_velocity(&DesignParams::new(10.0, 50.0, 90.0, 1.0), &props);
    let oracle = 2300.0 * 2.82e-4 / (958.4 * 0.01);
    assert!((full - oracle).abs() < 1e-15);
    assert!((full - 0.0677).abs() < 5e-5);
    let re = props.rho1 * full * 0.01 / props.mu1;
    assert!((re - RE_LIMIT).abs() < 1e-9 * RE_LIMIT);
    let half = inlet_velocity(&DesignParams::new(10.0, 50.0, 90.0, 0.5), &props);
    assert!((half - 0.5 * full).abs() < 1e-15);
}

#[test]
fn default_mesh_size_is_near_two_thousand() {
    let d = build_cavity(&DesignParams::new(10.0, 50.0, 90.0, 0.5)).unwrap();
    let mesh = generate_mesh(&d, 1.6 * MM, 3).unwrap();
    assert!((1500..=3000).contains(&mesh.len()), "{}", mesh.len());
    assert!(mesh.vertices.iter().all(|&v| point_in_domain(&d, v)));
    let again = generate_mesh(&d, 1.6 * MM, 3).unwrap();
    assert_eq!(mesh, again);
    for (v, &m) in mesh.vertices.iter().zip(&mesh.inlet_mask) {
        assert_eq!(m, d.distance_to_label(*v, BoundaryLabel::Inlet) <= mesh.spacing);
    }
    assert!(mesh.inlet_mask.iter().any(|&m| m));
    assert!(mesh.boundary_label.contains(&Some(BoundaryLabel::Outlet)));
}

#[test]
fn huge_spacing_is_degenerate() {
    let d = build_cavity(&DesignParams::new(10.0, 50.0, 90.0, 0.5)).unwrap();
    assert!(matches!(generate_mesh(&d, 0.05, 0), Err(Error::DegenerateSpacing { .. })));
}

#[test]
fn unit_map_round_trips() {
    let d = build_cavity(&DesignParams::new(20.0, 45.0, 70.0, 0.5)).unwrap();
    let x = [0.0123, 0.0456];
    let back = d.from_unit(d.to_unit(x));
    assert!(close(back, x));
    assert!(close(d.to_unit(d.bbox_min), [0.0, 0.0]));
    assert!(close(d.to_unit(d.bbox_max), [1.0, 1.0]));
}

fn valid_designs() -> impl Strategy<Value = DesignParams> {
    (10.0..=25.0f64, 10.0..=90.0f64, 10.0..=90.0f64, 0.01..=1.0f64)
        .prop_map(|(a, b, c, v)| DesignParams::new(a, b, c, v))
        .prop_filter("valid", |p| p.validate().is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boundary_loop_closes_and_is_counter_clockwise(p in valid_designs()) {
        let d = build_cavity(&p).unwrap();
        let sum = d.segments.iter().fold([0.0, 0.0], |acc, s| {
            [acc[0] + s.end[0] - s.start[0], acc[1] + s.end[1] - s.start[1]]
        });
        prop_assert!(sum[0].abs() < 1e-12 && sum[1].abs() < 1e-12);
        for w in d.segments.windows(2) {
            prop_assert!(close(w[0].end, w[1].start));
        }
        prop_assert!(d.area() > 0.0);
        // outward normals: a point just outside each segment midpoint is outside
        for s in &d.segments {
            let m = s.point_at(0.5);
            let out = [m[0] + 1e-5 * s.normal[0], m[1] + 1e-5 * s.normal[1]];
            let inn = [m[0] - 1e-5 * s.normal[0], m[1] - 1e-5 * s.normal[1]];
            prop_assert!(!d.contains(out));
            prop_assert!(d.contains(inn));
        }
        let inlets = d.segments.iter().filter(|s| s.label == BoundaryLabel::Inlet).count();
        prop_assert_eq!(inlets, 1);
    }

    #[test]
    fn reynolds_cap_holds(p in valid_designs()) {
        let props = FluidProps::default();
        let re = props.rho1 * inlet_velocity(&p, &props) * p.a * MM / props.mu1;
        prop_assert!(re <= RE_LIMIT * (1.0 + 1e-9));
    }

    #[test]
    fn meshes_stay_inside(p in valid_designs(), seed in 0u64..1000) {
        let d = build_cavity(&p).unwrap();
        let mesh = generate_mesh(&d, 4.0 * MM, seed).unwrap();
        prop_assert!(mesh.vertices.iter().all(|&v| point_in_domain(&d, v)));
    }
}
