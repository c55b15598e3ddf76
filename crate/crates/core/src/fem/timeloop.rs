//! Predictor-corrector time loop with adaptive step size.

use std::collections::BTreeSet;
use std::time::Instant;

use super::assembly::{Assembler, Constraints};
use super::{FemError, MaterialParams, SimConfig, SimState};
use crate::mesh::TetMesh;
use crate::results::StepRecord;
use crate::solver::{solve, SolverSession};
use crate::trace::{Region, Tracer};

/// Accepted steps with at most this many corrector iterations grow dt.
const FAST_ITERS: usize = 5;
/// Accepted steps with at least this many corrector iterations shrink dt.
const SLOW_ITERS: usize = 20;
const DT_GROW: f64 = 1.5;
const DT_SHRINK: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub enum FailCause {
    MaxIterations,
    Solver(String),
    Injected,
}

impl std::fmt::Display for FailCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailCause::MaxIterations => f.write_str("corrector iteration cap reached"),
            FailCause::Solver(e) => write!(f, "solver failed: {e}"),
            FailCause::Injected => f.write_str("injected failure"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorrectorOutcome {
    Converged {
        temperature: Vec<f64>,
        voltage: Vec<f64>,
        iterations: usize,
    },
    Failed {
        iterations: usize,
        cause: FailCause,
    },
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub tracer: Tracer,
    /// Step numbers (1-based) whose first attempt is forced to fail.
    pub fail_first_attempt: BTreeSet<usize>,
}

/// One attempted step: (step number, dt tried, accepted).
pub type Attempt = (usize, f64, bool);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub corrector_iterations: usize,
    pub solves: usize,
    /// Sum of GMRES inner iterations over all solves.
    pub solver_iterations: usize,
    pub ordering_computations: usize,
    pub attempts: Vec<Attempt>,
    pub wall_ns: u64,
}

#[derive(Debug, Clone)]
pub struct SimSummary {
    pub final_state: SimState,
    pub stats: RunStats,
}

fn extrapolate(state: &SimState, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let temperature = if state.step >= 1 {
        let ratio = dt / state.dt_prev;
        state
            .temperature
            .iter()
            .zip(&state.temperature_prev)
            .map(|(t, tp)| t + ratio * (t - tp))
            .collect()
    } else {
        state.temperature.clone()
    };
    (temperature, state.voltage.clone())
}

/// Linear extrapolation of T over the next step; V is carried over unchanged.
pub fn predictor(state: &SimState) -> (Vec<f64>, Vec<f64>) {
    extrapolate(state, state.dt)
}

/// Picard iterations for one step of size `dt`, starting from `guess`
/// (temperature, voltage) and using `state.temperature` as the old time level.
///
/// Converges when the largest relative change over all dofs,
/// `|x_new - x_old| / max(1, |x_old|)`, drops below `config.corrector_tol`.
/// Solver errors end the step as `Failed`; physics-range violations are hard
/// errors.
pub fn corrector_step(
    assembler: &Assembler<'_>,
    constraints: &Constraints,
    state: &SimState,
    guess: (Vec<f64>, Vec<f64>),
    dt: f64,
    config: &SimConfig,
    session: &mut SolverSession,
) -> Result<CorrectorOutcome, FemError> {
    let tracer = session.tracer.clone();
    let step = state.step as u64 + 1;
    let (mut temperature, mut voltage) = guess;
    let n = temperature.len();
    let mut x = vec![0.0; 2 * n];
    let mut b = vec![0.0; 2 * n];
    let mut x0 = vec![0.0; 2 * n];

    for it in 0..config.max_corrector_iters {
        let iter = it as i64;
        let system = {
            let _s = tracer.scope(Region::Assembly, step, iter);
            assembler.assemble(&temperature, &voltage, &state.temperature, dt, constraints)?
        };
        {
            let _s = tracer.scope(Region::StageIn, step, iter);
            b.copy_from_slice(&system.rhs);
            for i in 0..n {
                x0[2 * i] = voltage[i];
                x0[2 * i + 1] = temperature[i];
            }
        }
        session.step = step;
        session.corrector_iter = iter;
        match solve(&system.matrix, &b, &x0, &config.solver, session) {
            Ok((sol, _)) => x = sol,
            Err(e) => {
                return Ok(CorrectorOutcome::Failed {
                    iterations: it + 1,
                    cause: FailCause::Solver(e.to_string()),
                })
            }
        }
        let delta = {
            let _s = tracer.scope(Region::Converge, step, iter);
            x.iter()
                .zip(&x0)
                .map(|(new, old)| (new - old).abs() / old.abs().max(1.0))
                .fold(0.0f64, f64::max)
        };
        {
            let _s = tracer.scope(Region::StageOut, step, iter);
            for i in 0..n {
                voltage[i] = x[2 * i];
                temperature[i] = x[2 * i + 1];
            }
        }
        if delta < config.corrector_tol {
            return Ok(CorrectorOutcome::Converged {
                temperature,
                voltage,
                iterations: it + 1,
            });
        }
    }
    Ok(CorrectorOutcome::Failed {
        iterations: config.max_corrector_iters,
        cause: FailCause::MaxIterations,
    })
}

/// Runs the time loop to `config.total_time`, handing every accepted step to
/// `sink`.
///
/// After an accepted step dt grows ×1.5 (≤ 5 corrector iterations) or shrinks
/// ×0.75 (≥ 20), within [dt_min, dt_max]. A failed step is retried with dt
/// halved; failing at dt_min aborts. The last step is clamped so the final
/// time equals `total_time` exactly.
pub fn run_simulation<F>(
    mesh: &TetMesh,
    params: &MaterialParams,
    config: &SimConfig,
    options: &RunOptions,
    mut sink: F,
) -> Result<SimSummary, FemError>
where
    F: FnMut(&StepRecord) -> Result<(), FemError>,
{
    config.validate()?;
    let start = Instant::now();
    let assembler = Assembler::new(mesh, params)?;
    let constraints = Constraints::from_mesh(mesh, config.applied_voltage, config.boundary_temp);
    let tracer = options.tracer.clone();
    let mut session = SolverSession::new(tracer.clone());
    let mut state = SimState::initial(mesh.node_count(), config);
    let mut stats = RunStats::default();
    let mut injected = BTreeSet::new();

    while state.t < config.total_time {
        let remaining = config.total_time - state.t;
        let last = state.dt >= remaining || remaining - state.dt <= 1e-9 * config.total_time;
        let dt = if last { remaining } else { state.dt };
        let step_no = state.step + 1;

        let guess = {
            let _s = tracer.scope(Region::Predictor, step_no as u64, -1);
            extrapolate(&state, dt)
        };
        let outcome = if options.fail_first_attempt.contains(&step_no) && injected.insert(step_no) {
            CorrectorOutcome::Failed {
                iterations: 0,
                cause: FailCause::Injected,
            }
        } else {
            corrector_step(&assembler, &constraints, &state, guess, dt, config, &mut session)?
        };

        match outcome {
            CorrectorOutcome::Converged {
                temperature,
                voltage,
                iterations,
            } => {
                stats.attempts.push((step_no, dt, true));
                stats.accepted_steps += 1;
                stats.corrector_iterations += iterations;
                state.temperature_prev = std::mem::replace(&mut state.temperature, temperature);
                state.voltage = voltage;
                state.t = if last { config.total_time } else { state.t + dt };
                state.step = step_no;
                state.dt_prev = dt;
                state.corrector_iters_last = iterations;
                state.converged_last = true;

                {
                    let _s = tracer.scope(Region::IO, step_no as u64, -1);
                    sink(&StepRecord {
                        step: step_no as u32,
                        time: state.t,
                        dt,
                        corrector_iters: iterations as u32,
                        converged: true,
                        temperature: state.temperature.clone(),
                        voltage: state.voltage.clone(),
                    })?;
                }

                if iterations <= FAST_ITERS {
                    state.dt = (state.dt * DT_GROW).min(config.dt_max);
                } else if iterations >= SLOW_ITERS {
                    state.dt = (state.dt * DT_SHRINK).max(config.dt_min);
                }
            }
            CorrectorOutcome::Failed { iterations, cause } => {
                stats.attempts.push((step_no, dt, false));
                stats.rejected_steps += 1;
                stats.corrector_iterations += iterations;
                state.converged_last = false;
                state.corrector_iters_last = iterations;
                if state.dt <= config.dt_min {
                    return Err(FemError::StepFailure {
                        step: step_no,
                        t: state.t,
                        dt_min: config.dt_min,
                        cause: cause.to_string(),
                    });
                }
                state.dt = (state.dt / 2.0).max(config.dt_min);
            }
        }
    }

    stats.solves = session.solves();
    stats.solver_iterations = session.total_iterations();
    stats.ordering_computations = session.ordering_computations();
    stats.wall_ns = start.elapsed().as_nanos() as u64;
    Ok(SimSummary {
        final_state: state,
        stats,
    })
}
