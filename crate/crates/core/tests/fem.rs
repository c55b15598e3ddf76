use rafem::fem::{
    corrector_step, predictor, run_simulation, Assembler, Constraints, CorrectorOutcome, MaterialParams, RunOptions,
    SimConfig, SimState,
};
use rafem::mesh::{generate_box_mesh, Extent};
use rafem::solver::{SolverConfig, SolverSession};

fn converged(solver: SolverConfig) -> (Vec<f64>, Vec<f64>, usize) {
    let mesh = generate_box_mesh(5, 5, 5, Extent::default()).unwrap();
    let params = MaterialParams::default();
    let config = SimConfig {
        solver,
        ..SimConfig::default()
    };
    let asm = Assembler::new(&mesh, &params).unwrap();
    let c = Constraints::from_mesh(&mesh, config.applied_voltage, config.boundary_temp);
    let state = SimState::initial(mesh.node_count(), &config);
    let out = corrector_step(
        &asm,
        &c,
        &state,
        predictor(&state),
        config.dt_init,
        &config,
        &mut SolverSession::default(),
    )
    .unwrap();
    match out {
        CorrectorOutcome::Converged {
            temperature,
            voltage,
            iterations,
        } => (temperature, voltage, iterations),
        other => panic!("{other:?}"),
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn corrector_agrees_across_backends() {
    let (tq, vq, iq) = converged(SolverConfig::sparse_qr());
    let (td, vd, _) = converged(SolverConfig::dense_lu());
    assert!(iq > 1);
    assert!(max_diff(&tq, &td) <= 1e-9 && max_diff(&vq, &vd) <= 1e-9);
    let (tg, vg, _) = converged(SolverConfig::gmres(30, 1e-12));
    assert!(max_diff(&tq, &tg) <= 1e-9 && max_diff(&vq, &vg) <= 1e-9);
    // At 1e-10 the Laplace block's conditioning leaves V about 6e-8 off.
    let (tg, vg, _) = converged(SolverConfig::gmres(30, 1e-10));
    assert!(max_diff(&tq, &tg) <= 1e-8 && max_diff(&vq, &vg) <= 1e-7);
}

#[test]
fn peak_temperature_rises_during_heating() {
    let mesh = generate_box_mesh(6, 6, 6, Extent::default()).unwrap();
    let config = SimConfig {
        total_time: 300.0,
        ..SimConfig::default()
    };
    let mut peaks = Vec::new();
    run_simulation(
        &mesh,
        &MaterialParams::default(),
        &config,
        &RunOptions::default(),
        |r| {
            peaks.push(r.temperature.iter().copied().fold(f64::MIN, f64::max));
            Ok(())
        },
    )
    .unwrap();
    assert!(peaks.len() > 5);
    for w in peaks.windows(2) {
        if (w[1] - w[0]).abs() < 1e-6 {
            break;
        }
        assert!(w[1] >= w[0], "{peaks:?}");
    }
    assert!(peaks.last().unwrap() > &(config.boundary_temp + 1.0));
}
