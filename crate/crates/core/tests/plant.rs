use proptest::prelude::*;

use scg_core::config::RunConfig;
use scg_core::control::mpc::linearize_along;
use scg_core::control::{build_envelope, mpc_solve, EnvelopeGeometry};
use scg_core::dynamics::{
    build_error_subsystems, discretize_mode, linearize_discretize, step_kinematic, ControlInput, PlantParams,
    ScalarErrorSystem, VehicleState,
};

proptest! {
    #[test]
    fn linear_model_reproduces_step_at_expansion_point(
        px in -50.0f64..200.0, py in -8.0f64..8.0, theta in -1.0f64..1.0, v in 0.5f64..30.0,
        t in -5.0f64..5.0, delta in -0.5f64..0.5,
    ) {
        let plant = PlantParams::default();
        let x = VehicleState::new(px, py, theta, v);
        let u = ControlInput::new(t, delta);
        let model = linearize_discretize(&x, &u, &plant).unwrap();
        let lin = model.propagate(&x.to_vector(), &u.to_vector());
        let exact = step_kinematic(&x, &u, &plant).unwrap().to_vector();
        let scale = exact.amax().max(1.0);
        prop_assert!((lin - exact).amax() <= 1e-12 * scale);
    }

    #[test]
    fn closed_loop_mode_decreases_with_gain(a in -0.5f64..0.5, b in 0.01f64..10.0, k1 in -2.0f64..2.0, dk in 1e-3f64..2.0) {
        let sys = ScalarErrorSystem { a, b, lambda: a, ts: 0.02 };
        prop_assert!(discretize_mode(&sys, k1 + dk) < discretize_mode(&sys, k1));
        prop_assert!((discretize_mode(&sys, 0.0) - (a * 0.02).exp()).abs() < 1e-15);
    }
}

#[test]
fn constant_steering_traces_circle_of_wheelbase_radius() {
    let plant = PlantParams::default();
    let delta: f64 = 0.1;
    let radius = plant.length / delta.tan();
    let mut x = VehicleState::new(0.0, 0.0, 0.0, 10.0);
    let u = ControlInput::new(plant.drag / plant.alpha, delta);
    let (cx, cy) = (0.0, radius);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        x = step_kinematic(&x, &u, &plant).unwrap();
        let r = (x.px - cx).hypot(x.py - cy);
        worst = worst.max((r - radius).abs() / radius);
    }
    assert!(worst < 0.01, "relative radius deviation {worst}");
}

#[test]
fn error_subsystem_gains() {
    let plant = PlantParams::default();
    let (throttle, steering) = build_error_subsystems(15.0, &plant, 0.084).unwrap();
    assert_eq!(throttle.b, plant.alpha);
    assert_eq!(steering.b, 15.0 / plant.length);
}

#[test]
fn first_mpc_step_respects_rates_and_envelope() {
    let cfg = RunConfig::default();
    let mut problem = cfg.mpc_problem().unwrap();
    problem.np = 40;
    problem.nc = 10;
    let plant = cfg.plant;
    let scenario = cfg.scenario();
    let geometry = EnvelopeGeometry::new(scenario.road, scenario.margins, &plant);
    let starts = [
        VehicleState::new(30.0, 0.0, 0.0, 15.0),
        VehicleState::new(60.0, 1.0, 0.05, 14.0),
        VehicleState::new(75.0, 3.0, 0.1, 15.5),
        VehicleState::new(40.0, -4.0, -0.05, 12.0),
    ];
    let u_prev = ControlInput::new(0.5, 0.01);
    let mut feasible = 0;
    for x0 in starts {
        let (_, models) = linearize_along(&x0, &vec![u_prev; problem.np], &plant).unwrap();
        let obstacle = Some(scenario.obstacle).filter(|o| o.visible_from(x0.px));
        let env = build_envelope(&x0, obstacle.as_ref(), &geometry, problem.np, plant.ts);
        let sol = mpc_solve(&x0, &u_prev, &problem, &env, &models).unwrap();
        assert!((sol.input.t - u_prev.t).abs() <= problem.du_max[0] + 1e-9);
        assert!((sol.input.delta - u_prev.delta).abs() <= problem.du_max[1] + 1e-9);
        if sol.feasible {
            feasible += 1;
            let x1 = models[0].propagate(&x0.to_vector(), &sol.input.to_vector());
            let x1 = VehicleState::from_vector(&x1);
            for row in env.rows_at(1) {
                assert!(row.slack(&x1) >= -1e-7, "row {row:?} violated by {}", -row.slack(&x1));
            }
        }
    }
    assert!(feasible >= 3);
}
