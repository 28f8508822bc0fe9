//! Command-line front end. The binary is a thin wrapper around [`run`].
//!
//! Exit codes: 0 ok, 2 bad input, 3 interface maps infeasible, 4 synthesis
//! failed, 5 empirical bound violated, 6 verification failed.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::artifact::{design_to_json, load_design, parse_design, verify_design};
use crate::cases::{case_json, CASE_NAMES};
use crate::config::{load_config, parse_config};
use crate::error::{Error, Result};
use crate::model::{validate, ArchitectureSpec};
use crate::parallel::Exec;
use crate::simulation::{monte_carlo_with, plot_csv, summary_csv, traces_csv, McOutput};
use crate::synthesis::{design_pipeline, InterfaceDesign};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTERFACE: i32 = 3;
pub const EXIT_SYNTHESIS: i32 = 4;
pub const EXIT_EMPIRICAL: i32 = 5;
pub const EXIT_VERIFY: i32 = 6;

/// Number of individual trials written by `case` and `sim --traces`.
pub const TRACE_TRIALS: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "layersynth", version, about = "Interface-controller synthesis for two-layer stochastic systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize an interface controller and write the design JSON.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        synth: SynthOverrides,
    },
    /// Run the Monte Carlo validation of a design.
    Sim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory for the per-trial CSV.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[command(flatten)]
        sim: SimOverrides,
    },
    /// Re-verify a design against its configuration.
    Check {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a bundled case study end to end.
    Case {
        /// uav or hexacopter
        name: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        synth: SynthOverrides,
        #[command(flatten)]
        sim: SimOverrides,
    },
}

#[derive(Debug, Args, Default, Clone)]
pub struct SynthOverrides {
    /// Comma-separated λ values replacing the configured grid.
    #[arg(long = "lambda-grid")]
    pub lambda_grid: Option<String>,
    /// Minimize the spectral (not Frobenius) norm when computing R.
    #[arg(long = "spectral-R")]
    pub spectral_r: bool,
}

#[derive(Debug, Args, Default, Clone)]
pub struct SimOverrides {
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandResult {
    pub exit_code: i32,
    pub artifacts_written: Vec<PathBuf>,
    pub summary_line: String,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InterfaceInfeasible { .. } => EXIT_INTERFACE,
        Error::NotDetectable(_)
        | Error::NotStabilizable
        | Error::SynthesisInfeasible(_)
        | Error::NoConvergence { .. }
        | Error::Singular(_)
        | Error::NotSchurStable(_)
        | Error::MalformedSdp(_) => EXIT_SYNTHESIS,
        _ => EXIT_INPUT,
    }
}

fn apply_synth(mut arch: ArchitectureSpec, o: &SynthOverrides) -> Result<ArchitectureSpec> {
    if let Some(text) = &o.lambda_grid {
        arch.synth.lambda_grid = text
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("--lambda-grid: '{s}': {e}"))))
            .collect::<Result<_>>()?;
    }
    arch.synth.spectral_r |= o.spectral_r;
    validate(arch)
}

fn apply_sim(mut arch: ArchitectureSpec, o: &SimOverrides) -> Result<ArchitectureSpec> {
    if let Some(t) = o.trials {
        arch.sim.trials = t;
    }
    if let Some(h) = o.horizon {
        arch.sim.horizon = h;
    }
    if let Some(s) = o.seed {
        arch.sim.seed = s;
    }
    validate(arch)
}

fn write(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    written.push(path.to_path_buf());
    Ok(())
}

fn design_line(d: &InterfaceDesign) -> String {
    format!(
        "lambda={:.6} rho={:.6} alpha={:.6e} epsilon={:.6}{}",
        d.cert.lambda,
        d.cert.rho,
        d.cert.alpha,
        d.cert.epsilon,
        if d.meta.fallback_used { " (constructive fallback)" } else { "" }
    )
}

fn sim_line(mc: &McOutput) -> String {
    let s = &mc.summary;
    format!(
        "max_t mean_dist={:.6} max_t(mean_dist-ci95)={:.6} epsilon={:.6} trials={} horizon={} -> {}",
        s.max_over_t_mean_dist,
        s.max_lower_confidence(),
        s.epsilon,
        s.trials,
        s.horizon(),
        if s.bound_respected() { "bound respected" } else { "BOUND VIOLATED" }
    )
}

fn sim_exit(mc: &McOutput) -> i32 {
    if mc.summary.bound_respected() {
        EXIT_OK
    } else {
        EXIT_EMPIRICAL
    }
}

pub fn cmd_synth(config: &Path, out: &Path, o: &SynthOverrides) -> Result<CommandResult> {
    let arch = apply_synth(load_config(config)?, o)?;
    let design = design_pipeline(&arch)?;
    let mut written = Vec::new();
    write(out, &design_to_json(&design), &mut written)?;
    Ok(CommandResult { exit_code: EXIT_OK, artifacts_written: written, summary_line: design_line(&design) })
}

pub fn cmd_sim(config: &Path, design: &Path, out: &Path, traces: Option<&Path>, o: &SimOverrides) -> Result<CommandResult> {
    let arch = apply_sim(load_config(config)?, o)?;
    let design = load_design(design)?.to_design(&arch)?;
    let keep = if traces.is_some() { TRACE_TRIALS } else { 0 };
    let mc = monte_carlo_with(&arch, &design, &arch.sim, keep, Exec::default())?;
    let mut written = Vec::new();
    write(out, &summary_csv(&mc.summary), &mut written)?;
    if let Some(dir) = traces {
        write(&dir.join("trials.csv"), &traces_csv(&mc.traces), &mut written)?;
    }
    Ok(CommandResult { exit_code: sim_exit(&mc), artifacts_written: written, summary_line: sim_line(&mc) })
}

/// Verifies a design; one line per check goes to `report`.
pub fn cmd_check(design: &Path, config: &Path, report: &mut dyn Write) -> Result<CommandResult> {
    let arch = load_config(config)?;
    let items = verify_design(&arch, &load_design(design)?)?;
    for i in &items {
        writeln!(report, "{} {}: {:.3e} (limit {:.3e})", if i.pass { "PASS" } else { "FAIL" }, i.name, i.value, i.limit)?;
    }
    let failed = items.iter().filter(|i| !i.pass).count();
    Ok(CommandResult {
        exit_code: if failed == 0 { EXIT_OK } else { EXIT_VERIFY },
        artifacts_written: Vec::new(),
        summary_line: format!("{} of {} checks passed", items.len() - failed, items.len()),
    })
}

/// A bundled case study after synthesis and simulation.
#[derive(Debug, Clone)]
pub struct CaseRun {
    pub arch: ArchitectureSpec,
    pub design: InterfaceDesign,
    /// The design exactly as written to disk.
    pub design_json: String,
    pub mc: McOutput,
}

/// Synthesizes and simulates a bundled case without writing anything.
pub fn run_case(name: &str, so: &SynthOverrides, mo: &SimOverrides) -> Result<CaseRun> {
    let text = case_json(name)
        .ok_or_else(|| Error::Config(format!("unknown case '{name}' (expected one of {})", CASE_NAMES.join(", "))))?;
    let arch = apply_sim(apply_synth(parse_config(text)?, so)?, mo)?;
    let design_json = design_to_json(&design_pipeline(&arch)?);
    // simulate exactly what was written
    let design = parse_design(&design_json)?.to_design(&arch)?;
    let mc = monte_carlo_with(&arch, &design, &arch.sim, TRACE_TRIALS, Exec::default())?;
    Ok(CaseRun { arch, design, design_json, mc })
}

pub fn cmd_case(name: &str, out_dir: &Path, so: &SynthOverrides, mo: &SimOverrides) -> Result<CommandResult> {
    let run = run_case(name, so, mo)?;
    let mc = &run.mc;
    let mut written = Vec::new();
    write(&out_dir.join(format!("{name}_design.json")), &run.design_json, &mut written)?;
    write(&out_dir.join(format!("{name}_summary.csv")), &summary_csv(&mc.summary), &mut written)?;
    write(&out_dir.join(format!("{name}_trials.csv")), &traces_csv(&mc.traces), &mut written)?;
    write(&out_dir.join(format!("{name}_plot.csv")), &plot_csv(&mc.summary), &mut written)?;
    Ok(CommandResult {
        exit_code: sim_exit(mc),
        artifacts_written: written,
        summary_line: format!("{name}: {}; {}", design_line(&run.design), sim_line(mc)),
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let mut stdout = std::io::stdout();
    let result = match &cli.command {
        Command::Synth { config, out, synth } => cmd_synth(config, out, synth),
        Command::Sim { config, design, out, traces, sim } => cmd_sim(config, design, out, traces.as_deref(), sim),
        Command::Check { design, config } => cmd_check(design, config, &mut stdout),
        Command::Case { name, out, synth, sim } => cmd_case(name, out, synth, sim),
    };
    match result {
        Ok(r) => {
            println!("{}", r.summary_line);
            for p in &r.artifacts_written {
                println!("wrote {}", p.display());
            }
            r.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_INPUT);
        assert_eq!(exit_code(&Error::InterfaceInfeasible { residual_cp: 1.0, residual_paq: 0.0 }), EXIT_INTERFACE);
        assert_eq!(exit_code(&Error::SynthesisInfeasible("x".into())), EXIT_SYNTHESIS);
    }

    #[test]
    fn unknown_case_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_case("quadrotor", dir.path(), &SynthOverrides::default(), &SimOverrides::default()).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_INPUT);
    }

    #[test]
    fn lambda_grid_override() {
        let arch = crate::cases::load_case("uav").unwrap();
        let o = SynthOverrides { lambda_grid: Some("0.1, 0.2".into()), spectral_r: true };
        let arch = apply_synth(arch, &o).unwrap();
        assert_eq!(arch.synth.lambda_grid, vec![0.1, 0.2]);
        assert!(arch.synth.spectral_r);
        let bad = SynthOverrides { lambda_grid: Some("0.1,x".into()), spectral_r: false };
        assert!(apply_synth(crate::cases::load_case("uav").unwrap(), &bad).is_err());
    }
}
