//! `kacrice`: scalar Kac-Rice complexity solves, phase-diagram sweeps,
//! gradient-descent batches, and theory-vs-experiment comparison reports.
//!
//! Exit codes: 0 success, 2 not converged, 3 infeasible, 4 config error.

mod config;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use kacrice_core::critical::{self, TcOptions};
use kacrice_core::error::{MpError, QuadError, SolveError};
use kacrice_core::gd::{self, GdConfig};
use kacrice_core::loss::PhaseRetrievalLoss;
use kacrice_core::minima::{self, MinimaMode, SolverOptions};
use kacrice_core::mp::{self, fmt17, GridOptions};
use kacrice_core::report::{self, ExperimentRecord, TheoryRecord};
use kacrice_core::scan::{self, PhaseDiagramOptions, ScanOptions};

use config::{
    load_toml, CompareConfig, ComplexityConfig, PhaseDiagramConfig, SimulateConfig,
};

#[derive(Parser)]
#[command(name = "kacrice", version, about = "Kac-Rice landscape toolkit for Gaussian single-index models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one complexity formula (tilde0 / fin / tc) at a point.
    Complexity {
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// tilde0, fin, or tc.
        #[arg(long)]
        mode: Option<String>,
        /// Pin the energy to this value.
        #[arg(long, conflicts_with = "free_e")]
        e: Option<f64>,
        /// Maximize over the energy (the default).
        #[arg(long)]
        free_e: bool,
        /// Also compute the energy band.
        #[arg(long)]
        band: bool,
        /// Write the shifted Hessian density CSV here.
        #[arg(long)]
        rho_grid: Option<String>,
        /// Write the joint label density CSV here.
        #[arg(long)]
        nu_grid: Option<String>,
        /// Write the solution record (JSON) here.
        #[arg(long)]
        out: Option<String>,
    },
    /// Sweep (alpha, q): complexities, bands, BBP diagnostics, thresholds.
    PhaseDiagram {
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        a: Option<f64>,
        /// Comma-separated alpha values.
        #[arg(long)]
        alpha_grid: Option<String>,
        /// Comma-separated q values.
        #[arg(long)]
        q_grid: Option<String>,
        #[arg(long)]
        out_cells: Option<String>,
        #[arg(long)]
        out_thresholds: Option<String>,
        #[arg(long)]
        no_bbp: bool,
        #[arg(long)]
        no_tc: bool,
        #[arg(long)]
        no_band: bool,
    },
    /// Run gradient-descent batches over an (alpha, q0) grid.
    Simulate {
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        alpha_grid: Option<String>,
        #[arg(long)]
        q0_grid: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        t_burn: Option<usize>,
        #[arg(long)]
        t_free: Option<usize>,
        #[arg(long)]
        no_early_stop: bool,
        /// Dense Hessian analysis of trapped runs (slow).
        #[arg(long)]
        hessian: bool,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        runs_dir: Option<String>,
    },
    /// Compare theory records against experiment records.
    Compare {
        #[arg(long)]
        config: Option<String>,
        /// Theory record paths (JSON), comma-separated or repeated.
        #[arg(long, value_delimiter = ',')]
        theory: Vec<String>,
        /// Experiment record paths (JSON), comma-separated or repeated.
        #[arg(long, value_delimiter = ',')]
        experiment: Vec<String>,
        #[arg(long)]
        out: Option<String>,
    },
}

/// Error-to-exit-code mapping.
enum CliError {
    NotConverged(String),
    Infeasible(String),
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::NotConverged(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Config(_) => 4,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::NotConverged(m) | CliError::Infeasible(m) | CliError::Config(m) => m,
        }
    }
}

fn classify(e: SolveError) -> CliError {
    match &e {
        SolveError::NotConverged
        | SolveError::OuterStalled { .. }
        | SolveError::NoFixedPoint { .. } => CliError::NotConverged(e.to_string()),
        SolveError::InnerDiverged { .. }
        | SolveError::EmptyBand { .. }
        | SolveError::NoSignChange { .. }
        | SolveError::NoSolutionBelowEdge { .. }
        | SolveError::ImCollapse { .. } => CliError::Infeasible(e.to_string()),
        SolveError::Quad(QuadError::NonIntegrable { .. }) => CliError::Infeasible(e.to_string()),
        SolveError::Quad(QuadError::ToleranceNotMet { .. }) => {
            CliError::NotConverged(e.to_string())
        }
        SolveError::Mp(MpError::NoConvergence { .. }) => CliError::NotConverged(e.to_string()),
        SolveError::Mp(MpError::EdgeNotFound { .. }) => CliError::Infeasible(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

fn write_file(path: &str, content: &str) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::Config(format!("cannot create {path}: {e}")))?;
    f.write_all(content.as_bytes())
        .map_err(|e| CliError::Config(format!("cannot write {path}: {e}")))
}

fn csv_with_header<T: Serialize>(config: &T, body: &str) -> String {
    let cfg = serde_json::to_string(config).unwrap_or_else(|_| "{}".into());
    format!("# schema_version={}\n# config={}\n{}", report::SCHEMA_VERSION, cfg, body)
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad grid entry '{t}': {e}")))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Complexity {
            config,
            a,
            q,
            alpha,
            mode,
            e,
            free_e,
            band,
            rho_grid,
            nu_grid,
            out,
        } => {
            let mut cfg: ComplexityConfig = match config {
                Some(p) => load_toml(&p).map_err(CliError::Config)?,
                None => ComplexityConfig::default(),
            };
            if let Some(v) = a {
                cfg.a = v;
            }
            if let Some(v) = q {
                cfg.q = v;
            }
            if let Some(v) = alpha {
                cfg.alpha = v;
            }
            if let Some(v) = mode {
                cfg.mode = v;
            }
            if let Some(v) = e {
                cfg.e = Some(v);
            }
            if free_e {
                cfg.e = None;
            }
            cfg.band |= band;
            if rho_grid.is_some() {
                cfg.rho_grid = rho_grid;
            }
            if nu_grid.is_some() {
                cfg.nu_grid = nu_grid;
            }
            if out.is_some() {
                cfg.out = out;
            }
            cmd_complexity(cfg)
        }
        Cmd::PhaseDiagram {
            config,
            a,
            alpha_grid,
            q_grid,
            out_cells,
            out_thresholds,
            no_bbp,
            no_tc,
            no_band,
        } => {
            let mut cfg: PhaseDiagramConfig = match config {
                Some(p) => load_toml(&p).map_err(CliError::Config)?,
                None => PhaseDiagramConfig::default(),
            };
            if let Some(v) = a {
                cfg.a = v;
            }
            if let Some(s) = alpha_grid {
                cfg.alpha_grid = parse_grid(&s)?;
            }
            if let Some(s) = q_grid {
                cfg.q_grid = parse_grid(&s)?;
            }
            if let Some(v) = out_cells {
                cfg.out_cells = v;
            }
            if let Some(v) = out_thresholds {
                cfg.out_thresholds = v;
            }
            if no_bbp {
                cfg.with_bbp = false;
            }
            if no_tc {
                cfg.with_tc = false;
            }
            if no_band {
                cfg.with_band = false;
            }
            cmd_phase_diagram(cfg)
        }
        Cmd::Simulate {
            config,
            d,
            a,
            alpha_grid,
            q0_grid,
            replicates,
            seed,
            eta,
            t_burn,
            t_free,
            no_early_stop,
            hessian,
            out,
            runs_dir,
        } => {
            let mut cfg: SimulateConfig = match config {
                Some(p) => load_toml(&p).map_err(CliError::Config)?,
                None => SimulateConfig {
                    schema_version: 1,
                    d: 128,
                    a: 0.01,
                    alpha_grid: vec![4.0],
                    q0_grid: vec![0.0],
                    replicates: 4,
                    seed: 1,
                    eta: 2e-4,
                    t_burn: 60_000,
                    t_free: None,
                    early_stop: true,
                    normalize_signal: true,
                    hessian: false,
                    out: "batch.csv".into(),
                    runs_dir: None,
                },
            };
            if let Some(v) = d {
                cfg.d = v;
            }
            if let Some(v) = a {
                cfg.a = v;
            }
            if let Some(s) = alpha_grid {
                cfg.alpha_grid = parse_grid(&s)?;
            }
            if let Some(s) = q0_grid {
                cfg.q0_grid = parse_grid(&s)?;
            }
            if let Some(v) = replicates {
                cfg.replicates = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = eta {
                cfg.eta = v;
            }
            if let Some(v) = t_burn {
                cfg.t_burn = v;
            }
            if t_free.is_some() {
                cfg.t_free = t_free;
            }
            if no_early_stop {
                cfg.early_stop = false;
            }
            cfg.hessian |= hessian;
            if let Some(v) = out {
                cfg.out = v;
            }
            if runs_dir.is_some() {
                cfg.runs_dir = runs_dir;
            }
            cmd_simulate(cfg)
        }
        Cmd::Compare {
            config,
            theory,
            experiment,
            out,
        } => {
            let cfg: CompareConfig = match config {
                Some(p) => load_toml(&p).map_err(CliError::Config)?,
                None => CompareConfig {
                    schema_version: 1,
                    theory,
                    experiment,
                    out: out.clone().unwrap_or_else(|| "compare.csv".into()),
                },
            };
            cmd_compare(cfg)
        }
    }
}

fn validate_common(a: f64, q: f64, alpha: f64) -> Result<(), CliError> {
    if !(a > 0.0) {
        return Err(CliError::Config(format!("a = {a} must be positive")));
    }
    if !(q.abs() < 1.0) {
        return Err(CliError::Config(format!("q = {q} must satisfy |q| < 1")));
    }
    if !(alpha > 1.0) {
        return Err(CliError::Config(format!("alpha = {alpha} must exceed 1")));
    }
    Ok(())
}

#[derive(Serialize)]
struct ComplexityOutput<'a> {
    schema_version: u32,
    config: &'a ComplexityConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    solution: Option<minima::ComplexitySolution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tc_solution: Option<critical::TcSolution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band: Option<minima::EnergyBand>,
}

fn cmd_complexity(cfg: ComplexityConfig) -> Result<(), CliError> {
    validate_common(cfg.a, cfg.q, cfg.alpha)?;
    let loss = PhaseRetrievalLoss::new(cfg.a);
    let sopts = SolverOptions::default();

    let mut output = ComplexityOutput {
        schema_version: report::SCHEMA_VERSION,
        config: &cfg,
        solution: None,
        tc_solution: None,
        band: None,
    };
    let mut rho_csv = None;
    let mut nu_csv = None;

    match cfg.mode.as_str() {
        "tilde0" | "fin" => {
            let mode = if cfg.mode == "tilde0" {
                MinimaMode::Tilde0
            } else {
                MinimaMode::Fin
            };
            let sol = minima::complexity(&loss, cfg.q, cfg.alpha, cfg.e, mode, None, &sopts)
                .map_err(classify)?;
            if !sol.converged {
                return Err(CliError::NotConverged(format!(
                    "solve finished unconverged (sigma = {})",
                    sol.sigma
                )));
            }
            println!("sigma = {}", fmt17(sol.sigma));
            println!("e = {}", fmt17(sol.e_resolved));
            if cfg.band {
                let band = minima::energy_band(
                    &loss,
                    cfg.q,
                    cfg.alpha,
                    mode,
                    &sopts,
                    &minima::BandOptions::default(),
                )
                .map_err(classify)?;
                println!(
                    "band: e_min = {} e_star = {} e_max = {} (empty = {})",
                    fmt17(band.e_min),
                    fmt17(band.e_star),
                    fmt17(band.e_max),
                    band.empty
                );
                output.band = Some(band);
            }
            if let Some(path) = &cfg.rho_grid {
                let law = sol.frozen_law(&loss, &sopts.quad).map_err(classify)?;
                let (w_lo, w_hi) = mp::auto_range(&law, cfg.alpha, 2e-3)
                    .map_err(|e| classify(e.into()))?;
                let t = law.t_shift;
                let rho = mp::hessian_density(
                    &law,
                    cfg.alpha,
                    w_lo - t,
                    w_hi - t,
                    &GridOptions::default(),
                )
                .map_err(|e| classify(e.into()))?;
                rho_csv = Some((path.clone(), csv_with_header(&cfg, &rho.to_csv())));
            }
            if let Some(path) = &cfg.nu_grid {
                let law = sol.label_law(&loss).map_err(classify)?;
                let mut body = String::from("y,y_star,density\n");
                let n = 161;
                for i in 0..n {
                    let y = -4.0 + 8.0 * i as f64 / (n - 1) as f64;
                    for j in 0..n {
                        let ys = -4.0 + 8.0 * j as f64 / (n - 1) as f64;
                        let d = law.log_density(y, ys, sol.log_z).exp();
                        body.push_str(&format!("{},{},{}\n", fmt17(y), fmt17(ys), fmt17(d)));
                    }
                }
                nu_csv = Some((path.clone(), csv_with_header(&cfg, &body)));
            }
            output.solution = Some(sol);
        }
        "tc" => {
            let topts = TcOptions::default();
            let sol = critical::complexity_tc(&loss, cfg.q, cfg.alpha, cfg.e, None, &topts)
                .map_err(classify)?;
            println!("sigma = {}", fmt17(sol.sigma));
            println!("e = {}", fmt17(sol.e_resolved));
            if let Some(path) = &cfg.rho_grid {
                let law = sol.frozen_law(&loss, &topts.quad).map_err(classify)?;
                let (w_lo, w_hi) = mp::auto_range(&law, cfg.alpha, 2e-3)
                    .map_err(|e| classify(e.into()))?;
                let t = law.t_shift;
                let rho = mp::hessian_density(
                    &law,
                    cfg.alpha,
                    w_lo - t,
                    w_hi - t,
                    &GridOptions::default(),
                )
                .map_err(|e| classify(e.into()))?;
                rho_csv = Some((path.clone(), csv_with_header(&cfg, &rho.to_csv())));
            }
            if let Some(path) = &cfg.nu_grid {
                let m = sol.measure(&loss);
                let mut body = String::from("y,y_star,density\n");
                let n = 161;
                for i in 0..n {
                    let y = -4.0 + 8.0 * i as f64 / (n - 1) as f64;
                    for j in 0..n {
                        let ys = -4.0 + 8.0 * j as f64 / (n - 1) as f64;
                        let d = m.log_density(y, ys, sol.log_z).exp();
                        body.push_str(&format!("{},{},{}\n", fmt17(y), fmt17(ys), fmt17(d)));
                    }
                }
                nu_csv = Some((path.clone(), csv_with_header(&cfg, &body)));
            }
            output.tc_solution = Some(sol);
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown mode '{other}' (expected tilde0, fin, or tc)"
            )));
        }
    }

    if let Some(path) = &cfg.out {
        let json = serde_json::to_string_pretty(&output)
            .map_err(|e| CliError::Config(e.to_string()))?;
        write_file(path, &json)?;
    }
    if let Some((path, content)) = rho_csv {
        write_file(&path, &content)?;
    }
    if let Some((path, content)) = nu_csv {
        write_file(&path, &content)?;
    }
    Ok(())
}

fn cmd_phase_diagram(cfg: PhaseDiagramConfig) -> Result<(), CliError> {
    if cfg.alpha_grid.is_empty() || cfg.q_grid.is_empty() {
        return Err(CliError::Config("alpha_grid and q_grid must be non-empty".into()));
    }
    for &q in &cfg.q_grid {
        validate_common(cfg.a, q, cfg.alpha_grid[0].max(1.0 + 1e-9))?;
    }
    let mut sorted_alpha = cfg.alpha_grid.clone();
    sorted_alpha.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sorted_q = cfg.q_grid.clone();
    sorted_q.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let loss = PhaseRetrievalLoss::new(cfg.a);
    let opts = PhaseDiagramOptions {
        scan: ScanOptions::default(),
        with_bbp: cfg.with_bbp,
        with_band: cfg.with_band,
        with_tc: cfg.with_tc,
        bisect_tol: cfg.bisect_tol,
    };
    let (cells, thresholds) = scan::phase_diagram(&loss, cfg.a, &sorted_alpha, &sorted_q, &opts);
    write_file(
        &cfg.out_cells,
        &csv_with_header(&cfg, &scan::cells_to_csv(&cells)),
    )?;
    write_file(
        &cfg.out_thresholds,
        &csv_with_header(&cfg, &scan::thresholds_to_csv(&thresholds)),
    )?;
    println!(
        "phase diagram: {} cells, {} threshold rows -> {}, {}",
        cells.len(),
        thresholds.len(),
        cfg.out_cells,
        cfg.out_thresholds
    );
    Ok(())
}

fn cmd_simulate(cfg: SimulateConfig) -> Result<(), CliError> {
    if cfg.d < 2 {
        return Err(CliError::Config(format!("d = {} too small", cfg.d)));
    }
    if !(cfg.a > 0.0) {
        return Err(CliError::Config("a must be positive".into()));
    }
    for &alpha in &cfg.alpha_grid {
        if !(alpha > 1.0) {
            return Err(CliError::Config(format!("alpha = {alpha} must exceed 1")));
        }
    }
    for &q0 in &cfg.q0_grid {
        if !(0.0..=1.0).contains(&q0) {
            return Err(CliError::Config(format!("q0 = {q0} outside [0, 1]")));
        }
    }
    let loss = PhaseRetrievalLoss::new(cfg.a);
    let template = GdConfig {
        d: cfg.d,
        alpha: cfg.alpha_grid[0].max(1.0 + 1e-9),
        a: cfg.a,
        eta: cfg.eta,
        q0: 0.0,
        t_burn: cfg.t_burn,
        t_free: cfg
            .t_free
            .unwrap_or_else(|| (12_000.0 * (cfg.d as f64).log2()).round() as usize),
        seed: cfg.seed,
        success_threshold: 0.99,
        latitude_half_width: 0.05,
        normalize_signal: cfg.normalize_signal,
        early_stop: cfg.early_stop,
        record_every: 100,
    };
    let grid: Vec<(f64, f64)> = cfg
        .alpha_grid
        .iter()
        .flat_map(|&alpha| cfg.q0_grid.iter().map(move |&q0| (alpha, q0)))
        .collect();
    let table = gd::batch_experiment(&loss, &template, &grid, cfg.replicates, cfg.seed)
        .map_err(|e| CliError::Infeasible(e.to_string()))?;
    write_file(&cfg.out, &csv_with_header(&cfg, &gd::batch_to_csv(&table)))?;
    println!("simulate: {} rows -> {}", table.rows.len(), cfg.out);

    if let Some(dir) = &cfg.runs_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create {dir}: {e}")))?;
        for run in &table.runs {
            let mut hess = None;
            let mut labels = None;
            let mut f_values = None;
            if cfg.hessian && run.trapped_in_latitude {
                let rcfg = GdConfig {
                    alpha: run.alpha,
                    q0: run.q0,
                    seed: run.seed,
                    ..template
                };
                let inst =
                    gd::generate_instance(rcfg.d, rcfg.n(), run.seed, rcfg.normalize_signal);
                let rr = gd::run_gd(&loss, &rcfg, &inst)
                    .map_err(|e| CliError::Infeasible(e.to_string()))?;
                let theta = rr.terminal_theta.as_ref().unwrap();
                let h = gd::hessian_at(&loss, &inst, theta)
                    .map_err(|e| CliError::Infeasible(e.to_string()))?;
                let laws = gd::empirical_laws(&loss, &inst, theta, 4.0, 64, (-4.0, 100.0), 64);
                labels = Some(laws.labels);
                f_values = Some(laws.f_values);
                hess = Some(h);
            }
            let rec = report::experiment_record(
                cfg.a,
                run.alpha,
                run.q0,
                cfg.d,
                run.seed,
                run.success,
                run.final_overlap,
                run.final_energy,
                hess.as_ref(),
                labels,
                f_values,
            );
            let path = format!(
                "{dir}/run_a{}_alpha{}_q{}_seed{}.json",
                cfg.a, run.alpha, run.q0, run.seed
            );
            let json = serde_json::to_string(&rec).map_err(|e| CliError::Config(e.to_string()))?;
            write_file(&path, &json)?;
        }
        println!("wrote {} run records to {dir}", table.runs.len());
    }
    Ok(())
}

fn cmd_compare(cfg: CompareConfig) -> Result<(), CliError> {
    if cfg.theory.is_empty() || cfg.experiment.is_empty() {
        return Err(CliError::Config(
            "compare needs at least one theory and one experiment record".into(),
        ));
    }
    let mut theory = Vec::new();
    for p in &cfg.theory {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read {p}: {e}")))?;
        let rec: TheoryRecord = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid theory record {p}: {e}")))?;
        theory.push(rec);
    }
    let mut experiments = Vec::new();
    for p in &cfg.experiment {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read {p}: {e}")))?;
        let rec: ExperimentRecord = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid experiment record {p}: {e}")))?;
        experiments.push(rec);
    }
    let report = report::compare(&theory, &experiments)
        .map_err(|e| CliError::Infeasible(e.to_string()))?;
    print!("{}", report.to_text());
    write_file(&cfg.out, &csv_with_header(&cfg, &report.to_csv()))?;
    Ok(())
}
