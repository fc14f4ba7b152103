//! `tldpinn`: solve, ablate, verify and oracle commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use tldpinn::metrics::ErrorReport;
use tldpinn::oracle::{self, load_or_compute, OracleConfig, ReferenceTrajectory};
use tldpinn::pdes::PdeProblem;
use tldpinn::presets::{preset, Preset};
use tldpinn::report::{self, RunWriter};
use tldpinn::schemes::ButcherTableau;
use tldpinn::training::{run, TrainConfig, Transfer};
use tldpinn::verify::{self, Check};
use tldpinn::Error;

#[derive(Parser)]
#[command(name = "tldpinn", version, about = "Transfer-learning discrete PINNs for evolutionary PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// Benchmark problem (heat_test, rd, ac, ks_regular, ks_chaotic, ns2d).
    #[arg(long)]
    problem: Option<String>,
    /// Preset overlay: paper or desk.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// TOML run configuration; replaces the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Time-differencing scheme.
    #[arg(long)]
    scheme: Option<String>,
    /// Parameter transfer between timestamps: all, none, last_k:K.
    #[arg(long)]
    transfer: Option<String>,
    /// Reference solution cache directory.
    #[arg(long, default_value = ".oracle-cache")]
    cache: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Scheme,
    Transfer,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Schemes,
    Autodiff,
    Theorem,
}

#[derive(Subcommand)]
enum Command {
    /// Train a trajectory and compare it with the reference solution.
    Solve(RunArgs),
    /// Sweep one axis at a fixed budget and tabulate errors and epochs.
    Ablate {
        #[arg(value_enum)]
        axis: Axis,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Run a property suite and print a pass/fail table.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        /// Where the theorem suite writes its table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate or load a reference trajectory and report its self-convergence.
    Oracle {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value = "desk")]
        preset: String,
        /// Timestamps to sample; defaults to the preset's N_t.
        #[arg(long)]
        n_t: Option<usize>,
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        substeps: Option<usize>,
        /// Skip the refinement check.
        #[arg(long)]
        no_refine: bool,
        #[arg(long, default_value = ".oracle-cache")]
        cache: PathBuf,
        /// Write the trajectory as a gnuplot data file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure carrying the process exit code.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NumericalOverflow(_) | Error::OracleDiverged { .. } | Error::DegenerateReference => 3,
            _ => 2,
        };
        Fail(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => solve(&args),
        Command::Ablate { axis, args } => ablate(axis, &args),
        Command::Verify { suite, out } => verify_suite(suite, out.as_deref()),
        Command::Oracle { problem, preset, n_t, modes, grid, substeps, no_refine, cache, out } => {
            oracle_cmd(&problem, &preset, n_t, [modes, grid, substeps], !no_refine, &cache, out.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn load_config(args: &RunArgs) -> Result<TrainConfig, Fail> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Fail(2, format!("{}: {e}", path.display())))?;
            TrainConfig::from_toml(&text)?
        }
        None => {
            let problem = args.problem.as_deref().ok_or_else(|| Fail(2, "--problem or --config is required".into()))?;
            preset(problem, args.preset.parse::<Preset>()?)?
        }
    };
    if let Some(p) = &args.problem {
        cfg.problem = p.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = &args.scheme {
        ButcherTableau::builtin(s)?;
        cfg.scheme = s.clone();
    }
    if let Some(t) = &args.transfer {
        cfg.transfer = t.parse::<Transfer>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &TrainConfig, kind: &str) -> PathBuf {
    args.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{kind}-{}-{}", cfg.problem, args.preset)))
}

fn reference_for(p: &PdeProblem, cfg: &TrainConfig, cache: &Path) -> Result<ReferenceTrajectory, Fail> {
    let (r, hit) = load_or_compute(Some(cache), p, cfg.n_t, &cfg.oracle)?;
    eprintln!("reference: {} ({})", p.name, if hit { "cache hit" } else { "computed" });
    Ok(r)
}

/// Trains one configuration into `dir`, keeping partial outputs on failure.
fn solve_into(p: &PdeProblem, cfg: &TrainConfig, dir: &Path, reference: Option<&ReferenceTrajectory>) -> Result<Option<ErrorReport>, Fail> {
    let mut w = RunWriter::create(dir)?;
    let mut write_err = None;
    let mut partial = Vec::new();
    let clock = Instant::now();
    let result = run(p, cfg, |rec, theta| {
        eprintln!(
            "t[{:>4}] loss {:.3e} residual {:.3e} epochs {:>5} {} ({:.1}s)",
            rec.n,
            rec.loss,
            rec.residual,
            rec.epochs,
            rec.stop,
            clock.elapsed().as_secs_f64()
        );
        partial.push(rec.clone());
        if let Err(e) = report::write_checkpoint(&mut w, rec.n, theta) {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    match result {
        Ok(sol) => {
            let rep = report::write_solution(&mut w, &sol, reference)?;
            w.finish(cfg)?;
            Ok(rep)
        }
        Err(e) => {
            w.write("config.toml", cfg.to_toml().as_bytes())?;
            w.write("diagnostics.jsonl", report::diagnostics_jsonl(&partial).as_bytes())?;
            w.finish(cfg)?;
            Err(e.into())
        }
    }
}

fn solve(args: &RunArgs) -> Result<(), Fail> {
    let cfg = load_config(args)?;
    let p = cfg.problem()?;
    if p.name == "ks_chaotic" {
        eprintln!("note: ks_chaotic is experimental; accuracy is expected to degrade late in the run");
    }
    let reference = reference_for(&p, &cfg, &args.cache)?;
    let dir = out_dir(args, &cfg, "solve");
    let rep = solve_into(&p, &cfg, &dir, Some(&reference))?.expect("reference given");
    println!("problem {} scheme {} transfer {}", cfg.problem, cfg.scheme, cfg.transfer);
    println!("relative_l2 {:.6e}", rep.relative_l2);
    println!("mean_epochs {:.2}", rep.mean_epochs());
    println!("residual_ratio {:.3}", rep.residual_ratio());
    println!("outputs {}", dir.display());
    Ok(())
}

/// Rows of the scheme or transfer sweep.
fn ablation_values(axis: Axis) -> Vec<String> {
    match axis {
        Axis::Scheme => ["forward_euler", "backward_euler", "rk2", "rk4", "crank_nicolson", "gauss_legendre2"]
            .map(String::from)
            .to_vec(),
        Axis::Transfer => ["none", "last_k:1", "last_k:2", "last_k:3", "all"].map(String::from).to_vec(),
    }
}

fn ablate(axis: Axis, args: &RunArgs) -> Result<(), Fail> {
    let base = load_config(args)?;
    let p = base.problem()?;
    let reference = reference_for(&p, &base, &args.cache)?;
    let dir = out_dir(args, &base, "ablate");
    let mut table = String::from("value,rel_l2,mean_epochs,total_epochs,status\n");
    let mut timing = String::new();
    for value in ablation_values(axis) {
        let mut cfg = base.clone();
        match axis {
            Axis::Scheme => cfg.scheme = value.clone(),
            Axis::Transfer => cfg.transfer = value.parse()?,
        }
        let clock = Instant::now();
        let cell = dir.join(value.replace(':', "_"));
        match solve_into(&p, &cfg, &cell, Some(&reference)) {
            Ok(Some(rep)) => {
                let total: usize = rep.epochs.iter().sum();
                table.push_str(&format!("{value},{:.6e},{:.2},{total},ok\n", rep.relative_l2, rep.mean_epochs()));
                println!("{value:<16} rel_l2 {:.3e} mean_epochs {:.1}", rep.relative_l2, rep.mean_epochs());
            }
            Ok(None) => unreachable!("reference given"),
            Err(Fail(_, msg)) => {
                table.push_str(&format!("{value},,,,failed: {}\n", msg.replace(',', ";")));
                println!("{value:<16} failed: {msg}");
            }
        }
        timing.push_str(&format!("{{\"value\":\"{value}\",\"seconds\":{:.3}}}\n", clock.elapsed().as_secs_f64()));
    }
    let name = match axis {
        Axis::Scheme => "ablation_scheme.csv",
        Axis::Transfer => "ablation_transfer.csv",
    };
    let mut w = RunWriter::create(&dir)?;
    w.write(name, table.as_bytes())?;
    w.write("ablation_timing.jsonl", timing.as_bytes())?;
    w.finish(&base)?;
    print!("{table}");
    Ok(())
}

fn print_checks(checks: &[Check]) -> Result<(), Fail> {
    for c in checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(Fail(1, format!("{failed} checks failed")))
    }
}

fn verify_suite(suite: Suite, out: Option<&Path>) -> Result<(), Fail> {
    let checks = match suite {
        Suite::Schemes => {
            for name in tldpinn::schemes::SCHEMES {
                println!("{}", ButcherTableau::builtin(name)?);
            }
            verify::schemes_suite()
        }
        Suite::Autodiff => verify::autodiff_suite(20, 0, 1e-5)?,
        Suite::Theorem => {
            let study = verify::theorem_study(&verify::theorem_base(), &verify::HEAT_TAU_SWEEP, &[25, 100, 400])?;
            for (name, order, _) in &study.schemes {
                println!("{name:<16} order {order:.3}");
            }
            for b in &study.budgets {
                println!("budget {:>5} max sqrt(L) {:.3e} error {:.3e}", b.max_iters, b.max_sqrt_loss, b.error);
            }
            if let Some(dir) = out {
                fs::create_dir_all(dir).map_err(Error::from)?;
                fs::write(dir.join("theorem.csv"), study.to_csv()).map_err(Error::from)?;
            }
            study.checks()
        }
    };
    print_checks(&checks)
}

fn oracle_cmd(
    problem: &str,
    preset_name: &str,
    n_t: Option<usize>,
    [modes, grid, substeps]: [Option<usize>; 3],
    refine: bool,
    cache: &Path,
    out: Option<&Path>,
) -> Result<(), Fail> {
    let base = preset(problem, preset_name.parse()?)?;
    let p = base.problem()?;
    let n_t = n_t.unwrap_or(base.n_t);
    let mut cfg: OracleConfig = base.oracle.clone();
    if let Some(m) = modes {
        cfg.modes_1d = m;
        cfg.modes_2d = m;
    }
    if let Some(g) = grid {
        cfg.grid_fd = g;
    }
    if let Some(s) = substeps {
        cfg.substeps = s;
    }
    let clock = Instant::now();
    let (traj, hit) = load_or_compute(Some(cache), &p, n_t, &cfg)?;
    println!("{} n_t {n_t} points {} {} ({:.1}s)", p.name, traj.n_points(), if hit { "cache-hit" } else { "computed" }, clock.elapsed().as_secs_f64());
    let norms: Vec<String> = (0..traj.times.len()).map(|n| format!("{:.4e}", tldpinn::metrics::l2_norm(traj.snapshot(n, 0)))).collect();
    println!("l2 norm of field 0 per timestamp: {}", norms.join(" "));
    if p.name == "heat_test" {
        let fd = oracle::fd_solve_dirichlet(&p, cfg.grid_fd, p.end_time / n_t as f64 / cfg.substeps as f64, n_t)?;
        let err = tldpinn::metrics::relative_l2(&fd.trajectory(0), &traj.trajectory(0))?;
        println!("finite differences vs analytic: {err:.3e}");
    }
    if refine {
        let change = oracle::self_convergence(&p, n_t, &cfg)?;
        println!("self-convergence (relative change under doubling): {change:.3e}");
    }
    if let Some(path) = out {
        let mut s = String::from("# t x [y] fields...\n");
        for (n, t) in traj.times.iter().enumerate() {
            for i in 0..traj.n_points() {
                s.push_str(&format!("{t:.6}"));
                for c in traj.point(i) {
                    s.push_str(&format!(" {c:.6}"));
                }
                for f in 0..traj.fields {
                    s.push_str(&format!(" {:.9e}", traj.snapshot(n, f)[i]));
                }
                s.push('\n');
            }
            s.push('\n');
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(Error::from)?;
        }
        fs::write(path, s).map_err(Error::from)?;
    }
    Ok(())
}
