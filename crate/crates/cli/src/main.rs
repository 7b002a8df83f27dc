//! `opext` command-line interface.
//!
//! Exit codes: 0 for success or a positive verdict, 1 for a negative verdict,
//! 2 for invalid input. Each subcommand's help text states its mapping.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use opext::cones::{check_c_positive, ConeKind, MappingCone};
use opext::experiments::{
    generate_instance, run_suite_with_instances, Instance, InstanceSpec, MapKind, Suite, SuiteOptions, SystemKind,
};
use opext::extend::{
    extend_c_positive, extend_cp, extend_positive, extension_criterion, CriterionOptions, CriterionVerdict,
    PositiveOptions, SolveOptions,
};
use opext::posmap::{check_positive, restricted_norm, unitalize, PositivityVerdict};
use opext::{ComplexMatrix, LinearMap};

/// Writes to standard output; a closed pipe (e.g. `| head`) ends the
/// process quietly instead of panicking.
macro_rules! emit {
    ($how:ident, $($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = $how!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

#[derive(Parser)]
#[command(name = "opext", version, about = "Positive and completely positive extensions of maps on operator systems")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Common {
    /// Seed for all randomized searches.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Iteration cap for the feasibility solver.
    #[arg(long, global = true, default_value_t = 100_000)]
    max_iter: usize,
    /// Termination tolerance of the feasibility solver.
    #[arg(long, global = true, default_value_t = 1e-10)]
    tol: f64,
    /// Restarts for multistart searches.
    #[arg(long, global = true, default_value_t = 64)]
    restarts: usize,
    /// Sample budget for sampled checks (command-specific default when absent).
    #[arg(long, global = true)]
    budget: Option<usize>,
}

impl Common {
    fn solve_options(&self) -> SolveOptions {
        SolveOptions { max_iterations: self.max_iter, tolerance: self.tol }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the Choi matrix of a full-domain map. Exit 0.
    Choi { map: PathBuf },
    /// Evaluate the dual functional at an element of the product span. Exit 0.
    Dual { map: PathBuf, element: PathBuf },
    /// Search for a positivity violation. Exit 0 if none is found, 1 on a witness.
    CheckPositive { map: PathBuf },
    /// Sampled C-positivity check. Exit 0 if no violation is found, 1 on a violation.
    CheckCpos {
        map: PathBuf,
        /// cp, cocp, dec, pos or kpos:<k>
        #[arg(long)]
        cone: String,
    },
    /// Lower bound on the norm of the map on its domain. Exit 0.
    Norm {
        map: PathBuf,
        /// Estimate the norm of the unitalized map instead.
        #[arg(long)]
        unitalize: bool,
    },
    /// Extension criterion. Exit 0 for "extension probably exists", 1 for
    /// NoExtension or (with --inconclusive) Inconclusive.
    Criterion {
        map: PathBuf,
        /// Further extension searches with doubled restarts after a failed one.
        #[arg(long, default_value_t = 1)]
        retries: usize,
        /// Report a failed search as Inconclusive rather than ProbablyExists.
        #[arg(long)]
        inconclusive: bool,
    },
    /// Search for an extension. Exit 0 when Feasible, 1 otherwise.
    Extend {
        map: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Mapping cone for --mode cone.
        #[arg(long, default_value = "cp")]
        cone: String,
    },
    /// Generate an instance and write its map as JSON. Exit 0.
    Gen {
        #[arg(long)]
        dim_h: usize,
        #[arg(long)]
        dim_k: usize,
        /// full, diagonal, z:<n> or random:<dim>
        #[arg(long, default_value = "full")]
        system: String,
        /// identity, transpose, reduction, zmap-scaled, zmap-unscaled,
        /// random-cp-restriction or random-positive-restriction
        #[arg(long)]
        map: String,
        /// Output file (standard output when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite. Exit 0 iff every trial passes, 1 otherwise.
    Verify {
        /// duality, arveson, thm1 or thm2
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Fixed dimensions as <dim_h>,<dim_k>.
        #[arg(long)]
        dims: Option<String>,
        /// Allow dimensions beyond the default guard.
        #[arg(long)]
        allow_large: bool,
        /// Record wall time in the report (makes reports run-dependent).
        #[arg(long)]
        timing: bool,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for the instances of failing trials.
        #[arg(long)]
        instances_dir: Option<PathBuf>,
    },
    /// Worked examples. Exit 0 once the demo completes.
    Demo {
        #[command(subcommand)]
        demo: Demo,
    },
}

#[derive(Subcommand)]
enum Demo {
    /// The z-map on span{1, z, z*} in M_n.
    Zmap {
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Use the factor 2 instead of 2cos(π/n) (not a positive map).
        #[arg(long)]
        unscaled: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cp,
    Positive,
    Cone,
}

/// Invalid input, reported with exit code 2.
struct InputError(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.into())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Accepts either a map file or an instance file from `gen`.
fn load_map(path: &Path) -> Result<LinearMap> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(map) = serde_json::from_str::<LinearMap>(&text) {
        return Ok(map);
    }
    serde_json::from_str::<Instance>(&text)
        .map(|i| i.map)
        .with_context(|| format!("parsing {} as a map", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    emit!(writeln, "{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_cone(name: &str, dim_h: usize, seed: u64) -> Result<MappingCone> {
    let kind: ConeKind = name.parse()?;
    let mut cone = MappingCone::new(dim_h, kind);
    cone.sampler.seed = seed;
    Ok(cone)
}

fn parse_system(s: &str) -> Result<SystemKind> {
    let value = |v: &str| v.parse::<usize>().map_err(|_| anyhow!("bad number in system kind {s:?}"));
    match s.split_once(':') {
        None if s == "full" => Ok(SystemKind::Full),
        None if s == "diagonal" => Ok(SystemKind::Diagonal),
        Some(("z", n)) => Ok(SystemKind::ZSystem(value(n)?)),
        Some(("random", d)) => Ok(SystemKind::Random(value(d)?)),
        _ => bail!("unknown system kind {s:?}"),
    }
}

fn parse_map_kind(s: &str) -> Result<MapKind> {
    Ok(match s {
        "identity" => MapKind::Identity,
        "transpose" => MapKind::Transpose,
        "reduction" => MapKind::Reduction,
        "zmap-scaled" => MapKind::ZmapScaled,
        "zmap-unscaled" => MapKind::ZmapUnscaled,
        "random-cp-restriction" => MapKind::RandomCpRestriction,
        "random-positive-restriction" => MapKind::RandomPositiveRestriction,
        _ => bail!("unknown map kind {s:?}"),
    })
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let (h, k) = s.split_once(',').ok_or_else(|| anyhow!("dims must look like 3,2"))?;
    Ok((h.trim().parse()?, k.trim().parse()?))
}

fn verdict_code(ok: bool) -> u8 {
    if ok {
        0
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<u8, InputError> {
    let c = cli.common;
    match cli.command {
        Command::Choi { map } => {
            let phi = load_map(&map)?;
            print_json(&phi.choi_matrix()?)?;
            Ok(0)
        }
        Command::Dual { map, element } => {
            let phi = load_map(&map)?;
            let x: ComplexMatrix = read_json(&element)?;
            let v = phi.dual_functional(&x)?;
            print_json(&json!({ "value": [v.re, v.im] }))?;
            Ok(0)
        }
        Command::CheckPositive { map } => {
            let phi = load_map(&map)?;
            let verdict = check_positive(&phi, c.budget.unwrap_or(1000), c.seed);
            print_json(&verdict)?;
            Ok(verdict_code(!verdict.is_violation()))
        }
        Command::CheckCpos { map, cone } => {
            let phi = load_map(&map)?;
            let cone = parse_cone(&cone, phi.dim_h(), c.seed)?;
            let verdict = check_c_positive(&phi, &cone, c.budget.unwrap_or(200), c.seed);
            print_json(&json!({ "cone": cone.kind.to_string(), "result": verdict }))?;
            Ok(verdict_code(!verdict.is_violation()))
        }
        Command::Norm { map, unitalize: unital } => {
            let mut phi = load_map(&map)?;
            if unital {
                phi = unitalize(&phi)?.0;
            }
            print_json(&restricted_norm(&phi, c.restarts, c.seed))?;
            Ok(0)
        }
        Command::Criterion { map, retries, inconclusive } => {
            let phi = load_map(&map)?;
            let opts = CriterionOptions {
                restarts: c.restarts,
                retries,
                report_inconclusive: inconclusive,
                positivity_budget: c.budget.unwrap_or(200),
            };
            let verdict = extension_criterion(&phi, opts, c.seed)?;
            print_json(&verdict)?;
            Ok(verdict_code(matches!(verdict, CriterionVerdict::ProbablyExists { .. })))
        }
        Command::Extend { map, mode, cone } => {
            let phi = load_map(&map)?;
            let result = match mode {
                Mode::Cp => extend_cp(&phi, c.solve_options())?,
                Mode::Positive => extend_positive(&phi, PositiveOptions::with_restarts(c.restarts), c.seed)?,
                Mode::Cone => {
                    let cone = parse_cone(&cone, phi.dim_h(), c.seed)?;
                    extend_c_positive(&phi, &cone, c.budget.unwrap_or(200), c.seed, c.solve_options())?
                }
            };
            print_json(&result)?;
            Ok(verdict_code(result.status.is_feasible()))
        }
        Command::Gen { dim_h, dim_k, system, map, out } => {
            let spec = InstanceSpec {
                dim_h,
                dim_k,
                system_kind: parse_system(&system)?,
                map_kind: parse_map_kind(&map)?,
                seed: c.seed,
            };
            let inst = generate_instance(&spec)?;
            let text = serde_json::to_string_pretty(&inst)?;
            match out {
                Some(path) => fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
                None => emit!(writeln, "{text}"),
            }
            Ok(0)
        }
        Command::Verify { suite, trials, dims, allow_large, timing, report, instances_dir } => {
            let suite: Suite = suite.parse()?;
            let dims = dims.as_deref().map(parse_dims).transpose()?;
            let start = std::time::Instant::now();
            let (mut rep, instances) =
                run_suite_with_instances(suite, trials, c.seed, SuiteOptions { dims, allow_large })?;
            if timing {
                rep.wall_time_seconds = Some(start.elapsed().as_secs_f64());
            }
            if let Some(dir) = instances_dir {
                fs::create_dir_all(&dir)?;
                for (name, inst) in &instances {
                    fs::write(dir.join(name), serde_json::to_string_pretty(inst)? + "\n")?;
                }
            }
            emit!(write, "{}", rep.table());
            let text = serde_json::to_string_pretty(&rep)?;
            match report {
                Some(path) => fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
                None => emit!(writeln, "\n{text}"),
            }
            Ok(verdict_code(rep.failures.is_empty()))
        }
        Command::Demo { demo: Demo::Zmap { n, unscaled } } => {
            let spec = InstanceSpec {
                dim_h: n,
                dim_k: 2,
                system_kind: SystemKind::ZSystem(n),
                map_kind: if unscaled { MapKind::ZmapUnscaled } else { MapKind::ZmapScaled },
                seed: c.seed,
            };
            let phi = generate_instance(&spec)?.map;
            emit!(writeln, "z-map on span{{1, z, z*}} in M_{n}, {}", if unscaled { "factor 2" } else { "factor 2cos(pi/n)" });
            let positivity = check_positive(&phi, c.budget.unwrap_or(2000), c.seed);
            match &positivity {
                PositivityVerdict::ViolationWitness { lambda_min, .. } => {
                    emit!(writeln, "positivity:  violated (lambda_min = {lambda_min:.6e})");
                    return Ok(0);
                }
                PositivityVerdict::NoViolationFound { best_lambda_min, samples_used } => {
                    emit!(writeln, "positivity:  no violation in {samples_used} samples (best lambda_min {best_lambda_min:.3e})")
                }
            }
            let (unital, _) = unitalize(&phi)?;
            let norm = restricted_norm(&unital, c.restarts, c.seed);
            emit!(writeln, "norm bound:  {:.12}", norm.lower_bound);
            let opts = CriterionOptions { restarts: c.restarts, ..CriterionOptions::default() };
            match extension_criterion(&phi, opts, c.seed)? {
                CriterionVerdict::NoExtension { norm_lower_bound, .. } => {
                    emit!(writeln, "criterion:   no positive extension (norm >= {norm_lower_bound:.9} > 1)")
                }
                CriterionVerdict::ProbablyExists { extension, .. } | CriterionVerdict::Inconclusive { extension, .. } => {
                    emit!(writeln, 
                        "criterion:   norm 1; extension search {}",
                        if extension.status.is_feasible() { "found an extension" } else { "found none" }
                    );
                    if let Some(err) = extension.agreement_error {
                        emit!(writeln, "agreement:   {err:.3e}");
                    }
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(InputError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
