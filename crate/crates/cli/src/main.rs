//! Command-line front end: offline generating-function computation,
//! batch boundary value solving, and plot-data emission for the
//! application studies.
//!
//! Exit codes: 0 on success, 1 on numerical failure, 2 on usage or
//! configuration errors.

mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gfbvp::applications::{
    self, formation_cost_map, hyperbolic_modes, lq_solve, manifold_propagate,
    periodic_f2_solve, periodic_position_scan, periodic_time_scan, FormationOptions, GridSpec,
    LqBoundary, LqProblem, ScanOptions,
};
use gfbvp::dynamics::units;
use gfbvp::hj::{solve_gf, GeneratingFunction, GfArtifact};
use gfbvp::lineargf;
use gfbvp::partition::GfKind;
use gfbvp::tpbvp::{self, solve_bvp, solve_lambert, BvpSpec, SolveOptions};

use config::{load_toml, parse_kind, LqConfig, ScenarioConfig};
use output::{fmt as num, parse_floats, CsvWriter};

#[derive(Debug)]
pub struct CliError {
    message: String,
    usage: bool,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> CliError {
        CliError {
            message: message.into(),
            usage: true,
        }
    }

    pub fn numerical(message: impl Into<String>) -> CliError {
        CliError {
            message: message.into(),
            usage: false,
        }
    }

    pub fn numerical_from(err: impl fmt::Display) -> CliError {
        CliError::numerical(err.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

#[derive(Parser)]
#[command(
    name = "gfbvp",
    about = "Boundary value problems for Hamiltonian systems via phase-flow generating functions",
    version
)]
struct Cli {
    /// Worker threads for grid scans (also via GFBVP_JOBS).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a generating-function artifact from a scenario config.
    Gf(GfArgs),
    /// Solve a batch of boundary value problems from a CSV file.
    Bvp(BvpArgs),
    /// Position-to-position transfer: momenta at both endpoints.
    Lambert(LambertArgs),
    /// Periodic-orbit searches (time scan, position scan, phase solve).
    Periodic(PeriodicArgs),
    /// Linear-quadratic optimal control.
    Lq(LqArgs),
    /// Hyperbolic-manifold trajectory of an equilibrium.
    Manifold(ManifoldArgs),
    /// Formation reconfiguration cost map.
    Formation(FormationArgs),
    /// Report singular times of the classical kinds.
    Singular(SingularArgs),
}

#[derive(Args)]
struct GfArgs {
    /// Scenario TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the artifact JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also export the quadratic block path as CSV.
    #[arg(long)]
    blocks_csv: Option<PathBuf>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Override the integration tolerance (also via GFBVP_TOL).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct BvpArgs {
    /// Generating-function artifact (JSON).
    #[arg(long)]
    gf: PathBuf,
    /// Boundary partition the batch rows are stated in.
    #[arg(long, default_value = "F2")]
    kind: String,
    /// Input CSV: one row per problem, `2n` independent values then the
    /// transfer time.
    #[arg(long)]
    batch: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Verify each solution by integrating the flow.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct LambertArgs {
    #[arg(long)]
    gf: PathBuf,
    /// Initial relative position, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    q0: String,
    /// Final relative position, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    q1: String,
    #[arg(long, allow_hyphen_values = true)]
    time: f64,
    #[arg(long)]
    verify: bool,
    /// Write the solution JSON here (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PeriodicArgs {
    #[arg(long)]
    gf: PathBuf,
    /// `time-scan`, `position-scan` or `f2-solve`.
    #[arg(long)]
    mode: String,
    /// Fixed relative position for the time scan, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    q0: Option<String>,
    /// Scan window `start:end` (time scan).
    #[arg(long)]
    window: Option<String>,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Fixed period (position scan, phase solve).
    #[arg(long)]
    period: Option<f64>,
    /// Grid box `x_min:x_max:y_min:y_max` (position scan).
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Grid cells per axis (position scan).
    #[arg(long, default_value_t = 201)]
    cells: usize,
    /// Initial guess `q1,..,qn,p1,..,pn` (phase solve, repeatable).
    #[arg(long, allow_hyphen_values = true)]
    guess: Vec<String>,
    /// Output CSV path (scan curves / orbit curve).
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON summary (roots, orbits).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct LqArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV with `t, x.., p.., u..` rows.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional JSON summary (initial costate, cost).
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct ManifoldArgs {
    #[arg(long)]
    gf: PathBuf,
    /// `unstable` or `stable`.
    #[arg(long, default_value = "unstable")]
    direction: String,
    /// Seed amplitude along the eigenvector.
    #[arg(long, default_value_t = 1e-5)]
    alpha: f64,
    #[arg(long)]
    t_max: f64,
    #[arg(long, default_value_t = 33)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FormationArgs {
    #[arg(long)]
    gf: PathBuf,
    /// Circle radius in normalized length units.
    #[arg(long)]
    radius: f64,
    #[arg(long, default_value_t = 360)]
    angles: usize,
    /// Transfer times `start:end:count`.
    #[arg(long)]
    times: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SingularArgs {
    #[arg(long)]
    gf: PathBuf,
    /// Comma-separated kinds, e.g. `F1,F2`.
    #[arg(long, default_value = "F1,F2,F3,F4")]
    kinds: String,
    #[arg(long, default_value_t = 200.0)]
    samples_per_unit: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .or_else(|| std::env::var("GFBVP_JOBS").ok().and_then(|v| v.parse().ok()));
    if let Some(jobs) = jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.usage {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gf(args) => cmd_gf(args),
        Command::Bvp(args) => cmd_bvp(args),
        Command::Lambert(args) => cmd_lambert(args),
        Command::Periodic(args) => cmd_periodic(args),
        Command::Lq(args) => cmd_lq(args),
        Command::Manifold(args) => cmd_manifold(args),
        Command::Formation(args) => cmd_formation(args),
        Command::Singular(args) => cmd_singular(args),
    }
}

fn env_tol() -> Option<f64> {
    std::env::var("GFBVP_TOL").ok().and_then(|v| v.parse().ok())
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::usage(format!("cannot write `{}`: {e}", path.display())))
}

fn load_artifact(path: &PathBuf) -> Result<GeneratingFunction, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read artifact `{}`: {e}", path.display())))?;
    let artifact: GfArtifact = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("artifact `{}` is not valid JSON: {e}", path.display())))?;
    GeneratingFunction::from_artifact(&artifact)
        .map_err(|e| CliError::usage(format!("artifact rejected: {e}")))
}

fn parse_vec(text: &str, expect: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let v = parse_floats(text).map_err(CliError::usage)?;
    if v.len() != expect {
        return Err(CliError::usage(format!(
            "{what} needs {expect} comma-separated values, got {}",
            v.len()
        )));
    }
    Ok(v)
}

fn parse_range(text: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 2 {
        return Err(CliError::usage(format!("expected `start:end`, got `{text}`")));
    }
    let a = parts[0].parse().map_err(|e| CliError::usage(format!("{e}")))?;
    let b = parts[1].parse().map_err(|e| CliError::usage(format!("{e}")))?;
    Ok((a, b))
}

// ----- gf -------------------------------------------------------------

fn cmd_gf(args: GfArgs) -> Result<(), CliError> {
    if args.print_config {
        let default = toml::to_string_pretty(&ScenarioConfig::default())
            .expect("default config serializes");
        print!("{default}");
        return Ok(());
    }
    let Some(config_path) = &args.config else {
        return Err(CliError::usage("--config is required (or use --print-config)"));
    };
    let mut config: ScenarioConfig = load_toml(&config_path.display().to_string())?;
    if let Some(tol) = args.tol.or_else(env_tol) {
        config.gf.tol = tol;
    }
    let model = config.model()?;
    let reference = config.reference(&model)?;
    let partition = config.partition(model.n())?;
    let gf = solve_gf(
        &model,
        &reference,
        &partition,
        config.gf.order,
        config.gf.t_start,
        config.gf.t_end,
        config.gf.tol,
    )
    .map_err(CliError::numerical_from)?;

    if let Some(out) = &args.out {
        let artifact = gf.to_artifact().map_err(CliError::numerical_from)?;
        let json = serde_json::to_string(&artifact).expect("artifact serializes");
        write_file(out, &json)?;
    }
    if let Some(csv_path) = &args.blocks_csv {
        write_file(csv_path, &blocks_csv(&gf)?)?;
    }
    eprintln!(
        "solved {} order {} over [{}, {}]; trust radius {:.3e}; {} segment(s)",
        partition.label(),
        gf.order(),
        config.gf.t_start,
        config.gf.t_end,
        gf.trust_radius(),
        gf.segment_count()
    );
    Ok(())
}

/// Quadratic block path CSV: `t, F11.., F12.., F21.., F22..` row-major,
/// in the artifact's own partition.
fn blocks_csv(gf: &GeneratingFunction) -> Result<String, CliError> {
    let n = gf.n();
    let mut header: Vec<String> = vec!["t".into()];
    for (name, _) in [("F11", 0), ("F12", 0), ("F21", 0), ("F22", 0)] {
        for i in 1..=n {
            for j in 1..=n {
                header.push(format!("{name}_{i}{j}"));
            }
        }
    }
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = CsvWriter::new(&refs);
    for t in gf.node_times() {
        let poly = gf.poly_at(t).map_err(CliError::numerical_from)?;
        let g = gfbvp::hj::quadratic_form_matrix(&poly);
        let mut row = vec![t];
        for (r0, c0) in [(0, 0), (0, n), (n, 0), (n, n)] {
            for i in 0..n {
                for j in 0..n {
                    row.push(g[(r0 + i, c0 + j)]);
                }
            }
        }
        csv.numeric_row(&row);
    }
    Ok(csv.finish())
}

// ----- bvp ------------------------------------------------------------

fn cmd_bvp(args: BvpArgs) -> Result<(), CliError> {
    let gf = load_artifact(&args.gf)?;
    let n = gf.n();
    let partition = parse_kind(&args.kind, n)?;
    let text = std::fs::read_to_string(&args.batch)
        .map_err(|e| CliError::usage(format!("cannot read batch `{}`: {e}", args.batch.display())))?;
    let opts = if args.verify {
        SolveOptions::default()
    } else {
        SolveOptions::without_verification()
    };

    let mut header: Vec<String> = Vec::new();
    for i in 1..=n {
        header.push(format!("q0_{i}"));
    }
    for i in 1..=n {
        header.push(format!("p0_{i}"));
    }
    for i in 1..=n {
        header.push(format!("q_{i}"));
    }
    for i in 1..=n {
        header.push(format!("p_{i}"));
    }
    header.push("branch".into());
    header.push("residual".into());
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = CsvWriter::new(&refs);

    for (lineno, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values = parse_floats(line)
            .map_err(|e| CliError::usage(format!("batch line {}: {e}", lineno + 1)))?;
        if values.len() != 2 * n + 1 {
            return Err(CliError::usage(format!(
                "batch line {}: need {} independent values plus the transfer time",
                lineno + 1,
                2 * n
            )));
        }
        let spec = BvpSpec {
            partition: partition.clone(),
            endpoint1: values[..n].to_vec(),
            endpoint0: values[n..2 * n].to_vec(),
            transfer_time: values[2 * n],
        };
        let solution = solve_bvp(&gf, &spec, &opts).map_err(CliError::numerical_from)?;
        let mut row: Vec<String> = solution
            .state0
            .to_flat()
            .iter()
            .chain(solution.state1.to_flat().iter())
            .map(|v| num(*v))
            .collect();
        row.push(match solution.branch {
            tpbvp::BranchLabel::Unique => "unique".into(),
            tpbvp::BranchLabel::Branch(k) => format!("branch{k}"),
        });
        row.push(solution.flow_residual.map(num).unwrap_or_else(|| "".into()));
        csv.row(&row);
    }
    write_file(&args.out, &csv.finish())
}

// ----- lambert --------------------------------------------------------

#[derive(Serialize)]
struct LambertOut {
    p0: Vec<f64>,
    p1: Vec<f64>,
    state0: Vec<f64>,
    state1: Vec<f64>,
    flow_residual: Option<f64>,
    within_trust: bool,
}

fn cmd_lambert(args: LambertArgs) -> Result<(), CliError> {
    let gf = load_artifact(&args.gf)?;
    let n = gf.n();
    let q0 = parse_vec(&args.q0, n, "--q0")?;
    let q1 = parse_vec(&args.q1, n, "--q1")?;
    let opts = if args.verify {
        SolveOptions::default()
    } else {
        SolveOptions::without_verification()
    };
    let solution =
        solve_lambert(&gf, &q0, &q1, args.time, &opts).map_err(CliError::numerical_from)?;
    let out = LambertOut {
        p0: solution.p0.clone(),
        p1: solution.p1.clone(),
        state0: solution.solution.state0.to_flat(),
        state1: solution.solution.state1.to_flat(),
        flow_residual: solution.solution.flow_residual,
        within_trust: solution.solution.within_trust,
    };
    let json = serde_json::to_string_pretty(&out).expect("serializes");
    match &args.out {
        Some(path) => write_file(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

// ----- periodic -------------------------------------------------------

#[derive(Serialize)]
struct OrbitOut {
    period: f64,
    q0: Vec<f64>,
    p0: Vec<f64>,
    momentum_mismatch: f64,
    state0: Vec<f64>,
    flow_residual: Option<f64>,
}

fn orbit_out(orbit: &applications::PeriodicOrbit) -> OrbitOut {
    OrbitOut {
        period: orbit.period,
        q0: orbit.q0.clone(),
        p0: orbit.p0.clone(),
        momentum_mismatch: orbit.momentum_mismatch,
        state0: orbit.state0.to_flat(),
        flow_residual: orbit.flow_residual,
    }
}

fn cmd_periodic(args: PeriodicArgs) -> Result<(), CliError> {
    let gf = load_artifact(&args.gf)?;
    let n = gf.n();
    match args.mode.as_str() {
        "time-scan" => {
            let q0 = parse_vec(
                args.q0.as_deref().ok_or_else(|| CliError::usage("--q0 required"))?,
                n,
                "--q0",
            )?;
            let window = parse_range(
                args.window
                    .as_deref()
                    .ok_or_else(|| CliError::usage("--window required"))?,
            )?;
            let scan = periodic_time_scan(&gf, &q0, window, args.samples, &ScanOptions::default())
                .map_err(CliError::numerical_from)?;
            let mut csv = CsvWriter::new(&["t", "residual", "masked"]);
            for s in &scan.samples {
                csv.row(&[num(s.t), num(s.residual), (s.masked as u8).to_string()]);
            }
            write_file(&args.out, &csv.finish())?;
            if let Some(path) = &args.summary {
                let roots: Vec<OrbitOut> = scan.roots.iter().map(orbit_out).collect();
                write_file(path, &serde_json::to_string_pretty(&roots).unwrap())?;
            }
            eprintln!("{} roots, {} masked windows", scan.roots.len(), scan.masked_windows.len());
        }
        "position-scan" => {
            let period = args
                .period
                .ok_or_else(|| CliError::usage("--period required"))?;
            let grid = match &args.grid {
                Some(spec) => {
                    let parts: Vec<f64> = spec
                        .split(':')
                        .map(|p| p.parse::<f64>().map_err(|e| CliError::usage(format!("{e}"))))
                        .collect::<Result<_, _>>()?;
                    if parts.len() != 4 {
                        return Err(CliError::usage("--grid needs x_min:x_max:y_min:y_max"));
                    }
                    GridSpec {
                        x_min: parts[0],
                        x_max: parts[1],
                        y_min: parts[2],
                        y_max: parts[3],
                        nx: args.cells,
                        ny: args.cells,
                    }
                }
                None => GridSpec::centered(0.02, args.cells),
            };
            let scan = periodic_position_scan(&gf, period, &grid, &ScanOptions::default())
                .map_err(CliError::numerical_from)?;
            // Orbit curve (or empty) as the primary CSV output.
            let mut csv = CsvWriter::new(&["q0_x", "q0_y"]);
            if let Some(curve) = &scan.orbit_curve {
                for p in curve {
                    csv.numeric_row(&[p[0], p[1]]);
                }
            }
            write_file(&args.out, &csv.finish())?;
            // Contours as side files next to the main output.
            for (suffix, contours) in [("contours_x", &scan.contours_x), ("contours_y", &scan.contours_y)] {
                let mut ccsv = CsvWriter::new(&["polyline", "q0_x", "q0_y"]);
                for (k, polyline) in contours.iter().enumerate() {
                    for p in polyline {
                        ccsv.row(&[k.to_string(), num(p[0]), num(p[1])]);
                    }
                }
                let mut path = args.out.clone();
                path.set_extension(format!("{suffix}.csv"));
                write_file(&path, &ccsv.finish())?;
            }
            eprintln!(
                "curve points: {}, intersections: {}",
                scan.orbit_curve.as_ref().map(|c| c.len()).unwrap_or(0),
                scan.intersections.len()
            );
        }
        "f2-solve" => {
            let period = args
                .period
                .ok_or_else(|| CliError::usage("--period required"))?;
            if args.guess.is_empty() {
                return Err(CliError::usage("at least one --guess required"));
            }
            let mut guesses = Vec::new();
            for g in &args.guess {
                let v = parse_vec(g, 2 * n, "--guess")?;
                guesses.push((v[..n].to_vec(), v[n..].to_vec()));
            }
            let orbits = periodic_f2_solve(&gf, period, &guesses, &ScanOptions::default())
                .map_err(CliError::numerical_from)?;
            let outs: Vec<OrbitOut> = orbits.iter().map(orbit_out).collect();
            write_file(&args.out, &serde_json::to_string_pretty(&outs).unwrap())?;
            eprintln!("{} orbit(s) converged from {} guess(es)", orbits.len(), guesses.len());
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown mode `{other}` (time-scan, position-scan or f2-solve)"
            )))
        }
    }
    Ok(())
}

// ----- lq -------------------------------------------------------------

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<nalgebra::DMatrix<f64>, CliError> {
    let r = rows.len();
    if r == 0 {
        return Err(CliError::usage(format!("{what} must not be empty")));
    }
    let c = rows[0].len();
    if rows.iter().any(|row| row.len() != c) {
        return Err(CliError::usage(format!("{what} rows have uneven lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(nalgebra::DMatrix::from_row_slice(r, c, &flat))
}

#[derive(Serialize)]
struct LqOut {
    p0: Vec<f64>,
    cost: f64,
}

fn cmd_lq(args: LqArgs) -> Result<(), CliError> {
    if args.print_config {
        print!("{}", toml::to_string_pretty(&LqConfig::default()).unwrap());
        return Ok(());
    }
    let Some(config_path) = &args.config else {
        return Err(CliError::usage("--config is required (or use --print-config)"));
    };
    let config: LqConfig = load_toml(&config_path.display().to_string())?;
    let a = matrix(&config.dynamics.a, "dynamics.a")?;
    let b = matrix(&config.dynamics.b, "dynamics.b")?;
    let n = a.nrows();
    let m = b.ncols();
    let q = matrix(&config.cost.q, "cost.q")?;
    let n_cross = match &config.cost.n {
        Some(rows) => matrix(rows, "cost.n")?,
        None => nalgebra::DMatrix::zeros(n, m),
    };
    let r = matrix(&config.cost.r, "cost.r")?;
    let boundary = match config.boundary.mode.as_str() {
        "mixed" => LqBoundary::Mixed {
            fixed_states: config.boundary.fixed_states.clone().unwrap_or_default(),
            fixed_costates: config.boundary.fixed_costates.clone().unwrap_or_default(),
        },
        "transversality" => LqBoundary::Transversality,
        other => {
            return Err(CliError::usage(format!(
                "unknown boundary mode `{other}` (mixed or transversality)"
            )))
        }
    };
    let mut prob = LqProblem::lti(
        a,
        b,
        q,
        n_cross,
        r,
        nalgebra::DVector::from_column_slice(&config.problem.x0),
        config.problem.t_start,
        config.problem.t_end,
        boundary,
    );
    if let Some(rows) = &config.cost.qf {
        prob.qf = matrix(rows, "cost.qf")?;
    }
    if let Some(rows) = &config.cost.m {
        prob.m_sel = matrix(rows, "cost.m")?;
    }
    if let Some(mf) = &config.cost.mf {
        prob.m_f = nalgebra::DVector::from_column_slice(mf);
    }
    let tol = env_tol().or(config.problem.tol).unwrap_or(1e-11);
    let samples = config.problem.samples.unwrap_or(101);
    let solution = lq_solve(&prob, tol, samples).map_err(CliError::numerical_from)?;

    if let Some(out) = &args.out {
        let mut header: Vec<String> = vec!["t".into()];
        for i in 1..=n {
            header.push(format!("x_{i}"));
        }
        for i in 1..=n {
            header.push(format!("p_{i}"));
        }
        for j in 1..=m {
            header.push(format!("u_{j}"));
        }
        let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut csv = CsvWriter::new(&refs);
        for (i, t) in solution.times.iter().enumerate() {
            let mut row = vec![*t];
            row.extend(solution.states[i].iter());
            row.extend(solution.costates[i].iter());
            row.extend(solution.controls[i].iter());
            csv.numeric_row(&row);
        }
        write_file(out, &csv.finish())?;
    }
    let summary = LqOut {
        p0: solution.p0.iter().copied().collect(),
        cost: solution.cost,
    };
    let json = serde_json::to_string_pretty(&summary).unwrap();
    match &args.summary {
        Some(path) => write_file(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

// ----- manifold ---------------------------------------------------------

fn cmd_manifold(args: ManifoldArgs) -> Result<(), CliError> {
    let gf = load_artifact(&args.gf)?;
    let modes = hyperbolic_modes(&gf).map_err(CliError::numerical_from)?;
    let mode = match args.direction.as_str() {
        "unstable" => modes
            .iter()
            .find(|m| m.exponent > 0.0)
            .ok_or_else(|| CliError::numerical("no unstable mode"))?,
        "stable" => modes
            .iter()
            .find(|m| m.exponent < 0.0)
            .ok_or_else(|| CliError::numerical("no stable mode"))?,
        other => return Err(CliError::usage(format!("unknown direction `{other}`"))),
    };
    let count = args.samples.max(2);
    let grid: Vec<f64> = (0..count)
        .map(|i| args.t_max * i as f64 / (count - 1) as f64)
        .collect();
    let trajectory = manifold_propagate(&gf, mode, args.alpha, &grid, 1e-13)
        .map_err(CliError::numerical_from)?;
    let n = gf.n();
    let mut header: Vec<String> = vec!["t".into()];
    for i in 1..=n {
        header.push(format!("dq_{i}"));
    }
    for i in 1..=n {
        header.push(format!("dp_{i}"));
    }
    for i in 1..=n {
        header.push(format!("q_{i}"));
    }
    for i in 1..=n {
        header.push(format!("p_{i}"));
    }
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = CsvWriter::new(&refs);
    for ((t, rel), abs) in trajectory
        .times
        .iter()
        .zip(&trajectory.relative)
        .zip(&trajectory.absolute)
    {
        let mut row = vec![*t];
        row.extend(rel.iter());
        row.extend(abs.to_flat());
        csv.numeric_row(&row);
    }
    write_file(&args.out, &csv.finish())?;
    eprintln!(
        "exponent {:.6}; {} samples{}",
        mode.exponent,
        trajectory.times.len(),
        trajectory
            .truncated_at
            .map(|t| format!("; truncated at t = {t:.4}"))
            .unwrap_or_default()
    );
    Ok(())
}

// ----- formation --------------------------------------------------------

fn cmd_formation(args: FormationArgs) -> Result<(), CliError> {
    let gf = load_artifact(&args.gf)?;
    let parts: Vec<&str> = args.times.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::usage("--times needs start:end:count"));
    }
    let t0: f64 = parts[0].parse().map_err(|e| CliError::usage(format!("{e}")))?;
    let t1: f64 = parts[1].parse().map_err(|e| CliError::usage(format!("{e}")))?;
    let count: usize = parts[2].parse().map_err(|e| CliError::usage(format!("{e}")))?;
    if count < 1 {
        return Err(CliError::usage("--times count must be at least 1"));
    }
    let times: Vec<f64> = (0..count)
        .map(|i| {
            if count == 1 {
                t0
            } else {
                t0 + (t1 - t0) * i as f64 / (count - 1) as f64
            }
        })
        .collect();
    let map = formation_cost_map(&gf, args.radius, args.angles, &times, &FormationOptions::default())
        .map_err(CliError::numerical_from)?;
    let mut csv = CsvWriter::new(&[
        "t",
        "t_days",
        "angle_rad",
        "cost",
        "departure_norm",
        "arrival_norm",
        "cost_x",
        "cost_y",
    ]);
    for (ti, t) in map.times.iter().enumerate() {
        for (ai, angle) in map.angles.iter().enumerate() {
            let cost = map.cost[ti][ai];
            csv.numeric_row(&[
                *t,
                t * units::SUN_EARTH_DAYS_PER_TIME,
                *angle,
                cost,
                map.departure_norm[ti][ai],
                map.arrival_norm[ti][ai],
                cost * angle.cos(),
                cost * angle.sin(),
            ]);
        }
    }
    write_file(&args.out, &csv.finish())?;
    let masked = map.masked.iter().filter(|&&m| m).count();
    eprintln!("{} times x {} angles; {} masked times", map.times.len(), map.angles.len(), masked);
    Ok(())
}

// ----- singular ---------------------------------------------------------

fn cmd_singular(args: SingularArgs) -> Result<(), CliError> {
    let gf = load_artifact(&args.gf)?;
    let mut kinds = Vec::new();
    for part in args.kinds.split(',') {
        let kind = match part.trim() {
            "F1" | "f1" => GfKind::F1,
            "F2" | "f2" => GfKind::F2,
            "F3" | "f3" => GfKind::F3,
            "F4" | "f4" => GfKind::F4,
            other => return Err(CliError::usage(format!("unknown kind `{other}`"))),
        };
        kinds.push(kind);
    }
    let hits = gf
        .monitor_singularity(&kinds, args.samples_per_unit)
        .map_err(CliError::numerical_from)?;
    let mut csv = CsvWriter::new(&["kind", "t"]);
    for (kind, t) in &hits {
        csv.row(&[kind.name().to_string(), num(*t)]);
    }
    write_file(&args.out, &csv.finish())?;
    eprintln!("{} singular time(s) found", hits.len());
    let _ = lineargf::DEFAULT_SINGULARITY_SAMPLES_PER_UNIT;
    Ok(())
}
