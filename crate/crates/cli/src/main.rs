use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use rafem::fem::{parse_settings, run_simulation, FemError, MaterialParams, RunOptions, RunStats, SimConfig};
use rafem::mesh::{generate_box_mesh, Extent, MeshError, TetMesh};
use rafem::metrics::{fmt_f64, parse_grid, psnr_series, slice_diff, slice_field, Plane};
use rafem::results::{ResultFile, ResultWriter};
use rafem::solver::{Backend, SolverError};
use rafem::trace::{summarize, write_trace_csv, Region, Tracer};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "rafem", version, about = "Coupled voltage/temperature FEM simulator")]
struct Cli {
    /// Worker threads for assembly and matrix-vector products.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a structured box mesh.
    Genmesh(GenmeshArgs),
    /// Run the time loop and write a binary result file.
    Simulate(SimulateArgs),
    /// Per-step PSNR between two result files.
    Compare(CompareArgs),
    /// Sample one field (or the difference of two runs) on a plane.
    Slice(SliceArgs),
    /// Time solver configurations on one mesh.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenmeshArgs {
    #[arg(long)]
    nx: usize,
    #[arg(long)]
    ny: usize,
    #[arg(long)]
    nz: usize,
    /// xmin,xmax,ymin,ymax,zmin,zmax in mm.
    #[arg(long)]
    extent: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Settings shared by `simulate` and `bench`; flags override `--config`.
#[derive(Args, Default)]
struct SettingArgs {
    /// key=value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// qr, gmres or dense.
    #[arg(long)]
    solver: Option<String>,
    /// GMRES restart length.
    #[arg(long)]
    m: Option<usize>,
    /// Solver relative residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    total_time: Option<f64>,
    /// none or jacobi.
    #[arg(long)]
    precond: Option<String>,
    /// none or rcm.
    #[arg(long)]
    ordering: Option<String>,
    /// Keep the QR ordering while the sparsity pattern is unchanged.
    #[arg(long)]
    reuse_ordering: bool,
    #[arg(long)]
    dt_init: Option<f64>,
    #[arg(long)]
    dt_min: Option<f64>,
    #[arg(long)]
    dt_max: Option<f64>,
    #[arg(long)]
    applied_voltage: Option<f64>,
    #[arg(long)]
    corrector_tol: Option<f64>,
    #[arg(long)]
    max_corrector_iters: Option<usize>,
    /// Extra key=value setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write region timings as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    settings: SettingArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated noise amplitudes, e.g. 1e-5,1e-12.
    #[arg(long, value_delimiter = ',')]
    noise_controls: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SliceArgs {
    #[arg(long)]
    results: PathBuf,
    /// Mesh the results were computed on.
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    step: u32,
    #[arg(long, default_value = "y=0")]
    plane: String,
    #[arg(long, default_value = "200x200")]
    grid: String,
    /// Second result file; writes |this - other|.
    #[arg(long)]
    diff: Option<PathBuf>,
    /// T or V.
    #[arg(long, default_value = "T")]
    field: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "qr,gmres,dense")]
    backends: Vec<String>,
    /// GMRES restart lengths to sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_m: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    settings: SettingArgs,
}

/// Error carrying its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

trait Classify<T> {
    fn code(self, code: u8) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn code(self, code: u8) -> CliResult<T> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn fem_code(e: &FemError) -> u8 {
    match e {
        FemError::InvalidConfig(_) | FemError::Solver(SolverError::InvalidConfig(_)) => EXIT_USAGE,
        FemError::Mesh(_) | FemError::FieldLength { .. } | FemError::Output(_) => EXIT_INPUT,
        FemError::PhysicsRange { .. } | FemError::StepFailure { .. } | FemError::Solver(_) => EXIT_NUMERICAL,
    }
}

fn fem<T>(r: Result<T, FemError>) -> CliResult<T> {
    r.map_err(|e| Failure {
        code: fem_code(&e),
        error: e.into(),
    })
}

fn load_mesh(path: &Path) -> CliResult<TetMesh> {
    TetMesh::load(path)
        .with_context(|| format!("reading mesh {}", path.display()))
        .code(EXIT_INPUT)
}

fn load_results(path: &Path) -> CliResult<ResultFile> {
    ResultFile::read(path)
        .with_context(|| format!("reading results {}", path.display()))
        .code(EXIT_INPUT)
}

fn build_config(s: &SettingArgs) -> CliResult<(SimConfig, MaterialParams)> {
    let mut config = SimConfig::default();
    let mut params = MaterialParams::default();
    if let Some(path) = &s.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .code(EXIT_INPUT)?;
        for (k, v) in parse_settings(&text).code(EXIT_INPUT)? {
            config.apply_setting(&mut params, &k, &v).code(EXIT_INPUT)?;
        }
    }
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    put("solver", s.solver.clone());
    put("m", s.m.map(|x| x.to_string()));
    put("tol", s.tol.map(|x| x.to_string()));
    put("total_time", s.total_time.map(|x| x.to_string()));
    put("precond", s.precond.clone());
    put("ordering", s.ordering.clone());
    put("reuse_ordering", s.reuse_ordering.then(|| "true".to_string()));
    put("dt_init", s.dt_init.map(|x| x.to_string()));
    put("dt_min", s.dt_min.map(|x| x.to_string()));
    put("dt_max", s.dt_max.map(|x| x.to_string()));
    put("applied_voltage", s.applied_voltage.map(|x| x.to_string()));
    put("corrector_tol", s.corrector_tol.map(|x| x.to_string()));
    put("max_corrector_iters", s.max_corrector_iters.map(|x| x.to_string()));
    for kv in &s.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{kv}'"))
            .code(EXIT_USAGE)?;
        flags.push((k.to_string(), v.to_string()));
    }
    for (k, v) in flags {
        config.apply_setting(&mut params, &k, &v).code(EXIT_USAGE)?;
    }
    fem(config.validate())?;
    fem(params.validate())?;
    Ok((config, params))
}

fn cmd_genmesh(a: GenmeshArgs) -> CliResult<()> {
    let extent = match &a.extent {
        Some(s) => Extent::parse(s).code(EXIT_USAGE)?,
        None => Extent::default(),
    };
    let mesh = generate_box_mesh(a.nx, a.ny, a.nz, extent).map_err(|e| {
        let code = match e {
            MeshError::BadDimension { .. } | MeshError::BadExtent(_) => EXIT_USAGE,
            _ => EXIT_INPUT,
        };
        Failure { code, error: e.into() }
    })?;
    mesh.save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))
        .code(EXIT_INPUT)?;
    println!(
        "wrote {}: {} nodes, {} tets",
        a.out.display(),
        mesh.node_count(),
        mesh.tets.len()
    );
    Ok(())
}

/// Runs one simulation, optionally streaming results to `out`.
fn simulate(
    mesh: &TetMesh,
    params: &MaterialParams,
    config: &SimConfig,
    tracer: &Tracer,
    out: Option<&Path>,
) -> CliResult<RunStats> {
    let mut writer = match out {
        Some(path) => {
            let f = File::create(path)
                .with_context(|| format!("creating {}", path.display()))
                .code(EXIT_INPUT)?;
            Some(ResultWriter::new(BufWriter::new(f), mesh.node_count()).code(EXIT_INPUT)?)
        }
        None => None,
    };
    let options = RunOptions {
        tracer: tracer.clone(),
        ..RunOptions::default()
    };
    let summary = fem(run_simulation(mesh, params, config, &options, |rec| {
        match writer.as_mut() {
            Some(w) => w.write_step(rec).map_err(|e| FemError::Output(e.to_string())),
            None => Ok(()),
        }
    }))?;
    if let Some(w) = writer {
        w.finish().code(EXIT_INPUT)?;
    }
    Ok(summary.stats)
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let (config, params) = build_config(&a.settings)?;
    let mesh = load_mesh(&a.mesh)?;
    let tracer = if a.trace.is_some() {
        Tracer::enabled()
    } else {
        Tracer::disabled()
    };
    let stats = simulate(&mesh, &params, &config, &tracer, Some(&a.out))?;
    if let Some(path) = &a.trace {
        write_trace_csv(&tracer.events(), path)
            .with_context(|| format!("writing trace {}", path.display()))
            .code(EXIT_INPUT)?;
        if tracer.dropped() > 0 {
            eprintln!(
                "warning: trace buffer overflowed, {} oldest events dropped",
                tracer.dropped()
            );
        }
    }
    println!(
        "solver {}: {} steps ({} rejected) to t = {} s, {} corrector iterations, {} solves, {} solver iterations, {} orderings, wall {:.3} s",
        config.solver.backend.name(),
        stats.accepted_steps,
        stats.rejected_steps,
        config.total_time,
        stats.corrector_iterations,
        stats.solves,
        stats.solver_iterations,
        stats.ordering_computations,
        stats.wall_ns as f64 * 1e-9
    );
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> CliResult<()> {
    let reference = load_results(&a.reference)?;
    let test = load_results(&a.test)?;
    let series = psnr_series(&reference, &test, &a.noise_controls).code(EXIT_INPUT)?;
    if series.step_count_mismatch() {
        eprintln!(
            "warning: step counts differ ({} vs {}), comparing the first {}",
            series.reference_steps,
            series.test_steps,
            series.points.len()
        );
    }
    if !series.time_mismatches.is_empty() {
        eprintln!("warning: step times differ at steps {:?}", series.time_mismatches);
    }
    series
        .write_csv(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))
        .code(EXIT_INPUT)?;
    Ok(())
}

fn cmd_slice(a: SliceArgs) -> CliResult<()> {
    let plane: Plane = a.plane.parse().code(EXIT_USAGE)?;
    let grid = parse_grid(&a.grid).code(EXIT_USAGE)?;
    let pick = |f: &ResultFile, path: &Path| -> CliResult<Vec<f64>> {
        let rec = f
            .step_by_number(a.step)
            .ok_or_else(|| anyhow!("step {} not found in {}", a.step, path.display()))
            .code(EXIT_INPUT)?;
        match a.field.as_str() {
            "T" | "t" => Ok(rec.temperature.clone()),
            "V" | "v" => Ok(rec.voltage.clone()),
            other => Err(anyhow!("--field must be T or V, got '{other}'")).code(EXIT_USAGE),
        }
    };
    let mesh = load_mesh(&a.mesh)?;
    let field = pick(&load_results(&a.results)?, &a.results)?;
    let slice = match &a.diff {
        Some(other) => {
            let other_field = pick(&load_results(other)?, other)?;
            slice_diff(&mesh, &field, &other_field, plane, grid)
        }
        None => slice_field(&mesh, &field, plane, grid),
    }
    .code(EXIT_INPUT)?;
    slice
        .write_csv(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))
        .code(EXIT_INPUT)?;
    Ok(())
}

struct BenchRow {
    backend: Backend,
    m: usize,
    tol: f64,
    rep: usize,
    stats: RunStats,
    region_means: Vec<(Region, f64)>,
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let (base, params) = build_config(&a.settings)?;
    if a.reps == 0 {
        return Err(anyhow!("--reps must be at least 1")).code(EXIT_USAGE);
    }
    let mesh = load_mesh(&a.mesh)?;
    let mut configs = Vec::new();
    for name in &a.backends {
        let backend: Backend = name.parse().map_err(|e: String| anyhow!(e)).code(EXIT_USAGE)?;
        let ms = if backend == Backend::Gmres && !a.sweep_m.is_empty() {
            a.sweep_m.clone()
        } else {
            vec![base.solver.restart_m]
        };
        for m in ms {
            let mut c = base.clone();
            c.solver.backend = backend;
            c.solver.restart_m = m;
            fem(c.validate())?;
            configs.push(c);
        }
    }

    let mut rows = Vec::new();
    for c in &configs {
        for rep in 0..a.reps {
            let tracer = Tracer::enabled();
            let stats = simulate(&mesh, &params, c, &tracer, None)?;
            let region_means = summarize(&tracer.events())
                .into_iter()
                .map(|s| (s.region, s.mean_ns))
                .collect();
            rows.push(BenchRow {
                backend: c.solver.backend,
                m: c.solver.restart_m,
                tol: c.solver.tolerance,
                rep,
                stats,
                region_means,
            });
        }
    }

    let dense: Vec<f64> = rows
        .iter()
        .filter(|r| r.backend == Backend::DenseLu)
        .map(|r| r.stats.wall_ns as f64)
        .collect();
    let baseline = (!dense.is_empty()).then(|| dense.iter().sum::<f64>() / dense.len() as f64);

    let mut csv = String::from("backend,m,tol,rep,makespan_ns,steps,corrector_iterations,solves,solver_iterations");
    for r in Region::ALL {
        let _ = write!(csv, ",mean_{r}_ns");
    }
    csv.push_str(",speedup\n");
    for r in &rows {
        let _ = write!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.backend.name(),
            r.m,
            fmt_f64(r.tol),
            r.rep,
            r.stats.wall_ns,
            r.stats.accepted_steps,
            r.stats.corrector_iterations,
            r.stats.solves,
            r.stats.solver_iterations
        );
        for region in Region::ALL {
            let mean = r.region_means.iter().find(|(g, _)| *g == region).map(|(_, m)| *m);
            let _ = write!(csv, ",{}", mean.map(fmt_f64).unwrap_or_default());
        }
        let speedup = baseline.map(|b| fmt_f64(b / r.stats.wall_ns.max(1) as f64));
        let _ = writeln!(csv, ",{}", speedup.unwrap_or_default());
    }
    std::fs::write(&a.out, csv)
        .with_context(|| format!("writing {}", a.out.display()))
        .code(EXIT_INPUT)?;
    if let Some(best) = rows
        .iter()
        .filter(|r| r.backend == Backend::Gmres)
        .min_by_key(|r| r.stats.wall_ns)
        .filter(|_| a.sweep_m.len() > 1)
    {
        println!("fastest GMRES restart length: m = {}", best.m);
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(anyhow!("--threads must be at least 1")).code(EXIT_USAGE);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .code(EXIT_USAGE)?;
    }
    match cli.command {
        Command::Genmesh(a) => cmd_genmesh(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Slice(a) => cmd_slice(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
