//! Command line front end: certification, time-stepping runs with NDJSON
//! streaming, linear-theory probes, the mild-solution iteration, and
//! post-hoc report rendering from stored series.
//!
//! Exit codes: 0 success, 2 configuration error, 3 certificate FAIL without
//! an override, 4 blow-up abort, 5 numerical fault.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fragkin_core::certificate::{check_hypotheses, max_delta, CertificateReport};
use fragkin_core::checkpoint;
use fragkin_core::config::{self, RunConfiguration, SolverMode};
use fragkin_core::diagnostics::boundedness_report;
use fragkin_core::diffusion::{
    green_bound_check, hypercontractivity_probe, size_monotonicity_check,
    vector_contractivity_probe,
};
use fragkin_core::init::build_initial;
use fragkin_core::integrator::{
    picard_solve, PicardOptions, RunOptions, RunOutcome, Stepper,
};
use fragkin_core::moments::{
    moment_report, MomentReport, DEFAULT_ELL_GRID, DEFAULT_ETA_SAMPLES,
};
use fragkin_core::ndjson;
use fragkin_core::{FragkinError, Result};

#[derive(Parser)]
#[command(name = "fragkin", version, about = "Fragmentation-coagulation-diffusion solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every certificate hypothesis for a configuration
    Certify(CertifyArgs),
    /// Integrate the configured problem and stream diagnostics
    Run(RunArgs),
    /// Exercise the linear-theory probes (heat kernel bound, decay slopes,
    /// size monotonicity)
    Probe(ProbeArgs),
    /// Run the mild-solution fixed-point iteration on a short horizon
    Picard(PicardArgs),
    /// Render a trend report from a stored diagnostics series
    Report(ReportArgs),
}

#[derive(Args)]
struct SourceArgs {
    /// Configuration file (TOML)
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: pure-diffusion, pure-fragmentation-binary,
    /// constant-kernel-coagulation, full-power-rate-global,
    /// full-power-rate-violating
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Write the clause report here as well as to stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// NDJSON sink (stdout when omitted)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads inside operator applications
    #[arg(long, value_name = "N", default_value_t = 1)]
    threads: usize,
    /// Seed for randomized initial profiles
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Proceed even when certification fails (logged)
    #[arg(long)]
    override_certificate: bool,
    /// Also write a flattened CSV next to the NDJSON sink
    #[arg(long, requires = "out")]
    csv: bool,
    /// Write the final state here for later resumption
    #[arg(long, value_name = "PATH")]
    checkpoint_out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Write the probe summary here as well as to stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PicardArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Iteration horizon (defaults to solver.t_end)
    #[arg(long, value_name = "T")]
    horizon: Option<f64>,
    /// Seed for randomized initial profiles
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Stored NDJSON series
    series: PathBuf,
    /// Write the rendered report here as well as to stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Certify(args) => cmd_certify(args),
        Command::Run(args) => cmd_run(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Picard(args) => cmd_picard(args),
        Command::Report(args) => cmd_report(args),
    };
    match code {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_class(&e))
        }
    }
}

/// Setup problems are exit 2, numerical faults 5; the certificate verdict
/// exit (3) and the blow-up exit (4) are issued explicitly by the flows.
fn exit_class(e: &FragkinError) -> u8 {
    match e {
        FragkinError::Numerical(_) => 5,
        _ => 2,
    }
}

fn load_config(source: &SourceArgs) -> Result<RunConfiguration> {
    match (&source.config, &source.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)?;
            RunConfiguration::parse(&text)
        }
        (None, Some(name)) => config::preset(name),
        (None, None) => {
            Err(FragkinError::Config("pass --config PATH or --preset NAME".into()))
        }
    }
}

/// Evaluate the full certificate for a configuration: kernel moment scan
/// plus every hypothesis clause.
fn certify_config(cfg: &RunConfiguration) -> Result<(CertificateReport, Option<MomentReport>)> {
    let setup = cfg.build()?;
    let rates = setup.models.rates.clone();
    let frag = cfg.frag_kernel()?;
    let coag = cfg.coag_kernel()?;
    let moments = match &frag {
        Some(k) => Some(moment_report(k, &DEFAULT_ELL_GRID, &DEFAULT_ETA_SAMPLES)?),
        None => None,
    };
    let inputs = cfg.certify_inputs(
        &rates,
        frag.as_ref(),
        coag.as_ref(),
        &setup.sizes,
        Some(&setup.space),
    );
    let report = check_hypotheses(&inputs, moments.as_ref())?;
    Ok((report, moments))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn cmd_certify(args: CertifyArgs) -> Result<ExitCode> {
    let cfg = load_config(&args.source)?;
    let (report, moments) = certify_config(&cfg)?;
    let mut text = String::new();
    if let Some(m) = &moments {
        text.push_str(&format!("{m}"));
    }
    text.push_str(&format!("{report}"));
    print!("{text}");
    if let Some(out) = &args.out {
        write_text(out, &text)?;
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(FragkinError::Config("thread count must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| FragkinError::Config(format!("thread pool setup failed: {e}")))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let cfg = load_config(&args.source)?;
    if cfg.solver.mode == SolverMode::Picard {
        return Err(FragkinError::Config(
            "this configuration selects the fixed-point mode; use the picard subcommand".into(),
        ));
    }
    init_threads(args.threads)?;
    let (report, _) = certify_config(&cfg)?;
    eprint!("{report}");
    if !report.passed() {
        if !args.override_certificate {
            eprintln!("certificate FAIL; refusing to run (pass --override-certificate to force)");
            return Ok(ExitCode::from(3));
        }
        eprintln!("certificate FAIL; continuing under --override-certificate");
    }

    let setup = cfg.build()?;
    let alpha_max = setup
        .models
        .rates
        .alpha_values(&setup.sizes)
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b));
    let width = (4.0 * alpha_max * cfg.solver.t_end).sqrt();
    if width > setup.space.extent / 8.0 {
        eprintln!(
            "warning: diffusion width sqrt(4 alpha t_end) = {width:.3e} exceeds extent/8 = \
             {:.3e}; wraparound will touch the initial support",
            setup.space.extent / 8.0
        );
    }

    let hash = cfg.sha256_hex()?;
    let opts = RunOptions {
        t_end: cfg.solver.t_end,
        output_every: cfg.solver.output_every,
        blow_up_factor: cfg.solver.blow_up_factor,
        specs: setup.specs.clone(),
        certified: report.passed() || args.override_certificate,
    };
    let space = setup.space.clone();
    let sizes = setup.sizes.clone();
    let stepper = Stepper::new(
        &space,
        &sizes,
        setup.models,
        cfg.solver.dt,
        cfg.solver.safety,
        cfg.solver.positivity,
    )?;

    // All I/O happens on this thread, inside the observer.
    let stdout = std::io::stdout();
    let mut sink: BufWriter<Box<dyn Write>> = match &args.out {
        Some(path) => BufWriter::new(Box::new(fs::File::create(path)?)),
        None => BufWriter::new(Box::new(stdout.lock())),
    };
    ndjson::write_header(&mut sink, &hash)?;
    let observer = |_state: &fragkin_core::integrator::RunState,
                    series: &fragkin_core::diagnostics::DiagnosticsSeries|
     -> Result<()> { ndjson::write_row(&mut sink, series, series.len() - 1) };

    let outcome: RunOutcome = match &cfg.initial.checkpoint {
        Some(path) => {
            let state = checkpoint::read_state(Path::new(path))?;
            if !checkpoint::matches_grids(&state, &space, &sizes) {
                return Err(FragkinError::Checkpoint(
                    "checkpoint grids do not match the configuration".into(),
                ));
            }
            stepper.run_from(state, &opts, observer)?
        }
        None => {
            let u0 = build_initial(&space, &sizes, &cfg.initial, args.seed)?;
            stepper.run(u0, &opts, observer)?
        }
    };
    sink.flush()?;
    drop(sink);

    if let Some(path) = &args.checkpoint_out {
        checkpoint::write_state(&outcome.state, path)?;
    }
    if args.csv {
        let out = args.out.as_ref().expect("clap enforces --out with --csv");
        write_text(&out.with_extension("csv"), &ndjson::to_csv(&outcome.series))?;
    }
    if let Some(t) = outcome.aborted_at {
        eprintln!("blow-up abort at t = {t}: a tracked quantity exceeded its budget");
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn decade(lo: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo * 10.0_f64.powf(k as f64 / (n - 1) as f64)).collect()
}

fn cmd_probe(args: ProbeArgs) -> Result<ExitCode> {
    let cfg = load_config(&args.source)?;
    let setup = cfg.build()?;
    let sizes = &setup.sizes;
    let rates = &setup.models.rates;
    // Probes measure the continuum operator; run them on a refined copy of
    // the configured torus so the impulse is resolved.
    let probe_n = if setup.space.dim == 1 { setup.space.n.max(512) } else { setup.space.n.max(64) };
    let space = fragkin_core::grid::SpaceGrid::new(setup.space.dim, setup.space.extent, probe_n)?;
    let mut text = String::new();

    let alphas = rates.alpha_values(sizes);
    let alpha_ref = alphas.iter().fold(0.0_f64, |a, &b| a.max(b));
    for t in [1e-3, 3e-3, 1e-2] {
        let g = green_bound_check(alpha_ref, t, &space)?;
        text.push_str(&format!(
            "green-bound        t={t:.1e} min={:+.2e} mass={:.12} envelope={:.6}\n",
            g.min_value, g.mass, g.envelope_constant
        ));
    }

    let ts = decade(1e-3, 8);
    for (p, q, label) in [(1.0, f64::INFINITY, "1->inf"), (2.0, f64::INFINITY, "2->inf")] {
        let r = hypercontractivity_probe(&space, alpha_ref, p, q, &ts)?;
        text.push_str(&format!(
            "decay-slope        {label:<7} fitted={:+.4} target={:+.4} residual={:.2e}\n",
            r.slope, r.target, r.max_residual
        ));
    }
    if let Some(pw) = rates.power {
        let delta_star = max_delta(pw.theta_alpha, pw.theta_beta, space.dim);
        let r = vector_contractivity_probe(
            &space,
            sizes,
            rates,
            1.0,
            f64::INFINITY,
            delta_star,
            &decade(1.25e-2, 8),
        )?;
        text.push_str(&format!(
            "vector-decay       1->inf delta*={delta_star:.4} fitted={:+.4} target={:+.4}\n",
            r.slope, r.target
        ));
        let lo = sizes.xi_min();
        let hi = sizes.xi_max();
        let pairs: Vec<(f64, f64)> = (0..5)
            .map(|i| {
                let a = lo * (hi / lo).powf(i as f64 / 6.0);
                let b = lo * (hi / lo).powf((i + 1) as f64 / 6.0);
                (a, b)
            })
            .collect();
        let profile: Vec<f64> = (0..space.cells())
            .map(|c| {
                let x = space.position(c)[0] - 0.5 * space.extent;
                (-x * x / 0.02).exp()
            })
            .collect();
        let mono = size_monotonicity_check(&profile, rates, 0.05, &pairs, &space)?;
        for pc in &mono.pairs {
            text.push_str(&format!(
                "size-monotonicity  xi {:.3e} <= {:.3e}: {}\n",
                pc.xi_lo,
                pc.xi_hi,
                if pc.pass { "pass" } else { "FAIL" }
            ));
        }
        if !mono.passed() {
            print!("{text}");
            if let Some(out) = &args.out {
                write_text(out, &text)?;
            }
            return Ok(ExitCode::from(5));
        }
    } else {
        text.push_str("vector-decay       skipped: rates do not declare a power-law structure\n");
    }

    print!("{text}");
    if let Some(out) = &args.out {
        write_text(out, &text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_picard(args: PicardArgs) -> Result<ExitCode> {
    let cfg = load_config(&args.source)?;
    let setup = cfg.build()?;
    let u0 = build_initial(&setup.space, &setup.sizes, &cfg.initial, args.seed)?;
    let opts = PicardOptions {
        t_horizon: args.horizon.unwrap_or(cfg.solver.t_end),
        n_quad: cfg.solver.picard_nodes,
        kmax: cfg.solver.picard_kmax,
        tol: cfg.solver.picard_tol,
        norm: fragkin_core::diagnostics::NormSpec::new(1.0, cfg.analysis.ell, 0.0),
    };
    let report = picard_solve(&setup.space, &setup.sizes, &setup.models, &u0, &opts)?;
    println!(
        "horizon={} nodes={} substeps/node={}",
        opts.t_horizon, opts.n_quad, report.substeps_per_node
    );
    for (k, d) in report.distances.iter().enumerate() {
        match report.ratios.get(k) {
            Some(r) => println!("sweep {:>2}: distance {d:.6e} ratio {r:.4}", k + 1),
            None => println!("sweep {:>2}: distance {d:.6e}", k + 1),
        }
    }
    if report.converged {
        println!("converged after {} sweeps", report.iterations);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("no convergence within {} sweeps", cfg.solver.picard_kmax);
        Ok(ExitCode::from(5))
    }
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.series)?;
    let (hash, series) = ndjson::read_series(&text)?;
    let report = boundedness_report(&series, None, None);
    let mut out = format!("series config sha256: {hash}\nsamples: {}\n", series.len());
    out.push_str(&format!("{report}"));
    print!("{out}");
    if let Some(path) = &args.out {
        write_text(path, &out)?;
    }
    Ok(ExitCode::SUCCESS)
}
