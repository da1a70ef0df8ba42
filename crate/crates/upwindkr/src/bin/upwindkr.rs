//! Thin command-line front end over the library. Exit codes: 0 on success,
//! 2 on configuration or input errors, 3 on numerical failures.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use upwindkr::harness::{self, ExperimentConfig};
use upwindkr::mesh::Tessellation;
use upwindkr::transport::{self, DiscreteMeasure};

#[derive(Parser)]
#[command(name = "upwindkr", version, about = "Finite volume transport studies measured in Kantorovich-Rubinstein distances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence study from a TOML config file.
    Study {
        /// Path to the experiment configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Validate a mesh exchange file and print its regularity report.
    ValidateMesh {
        /// Path to a plain-text mesh file.
        file: PathBuf,
    },
    /// Compute the transport distance between two measures given as CSV.
    Kr {
        /// CSV of the first marginal: `x,mass` or `x,y,mass` per line.
        #[arg(long)]
        plus: PathBuf,
        /// CSV of the second marginal, same format.
        #[arg(long)]
        minus: PathBuf,
        /// Cost radius.
        #[arg(long)]
        r: f64,
        /// Also solve with the linear cost.
        #[arg(long)]
        w1: bool,
        /// Write the optimal plan to this CSV path.
        #[arg(long)]
        plan_out: Option<PathBuf>,
    },
    /// List the built-in test cases.
    Cases,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    match cli.command {
        Command::Study { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| (EXIT_CONFIG, format!("{}: {e}", config.display())))?;
            let cfg = ExperimentConfig::from_toml(&text)
                .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            let report = harness::run_study(&cfg).map_err(classify_study)?;
            let files = harness::emit_report(&report, &cfg.emit, &cfg.out_dir)
                .map_err(|e| (EXIT_NUMERICAL, format!("writing reports: {e}")))?;
            println!(
                "study {}: weak rate {:.4} (vs h), {:.4} (vs scale), strong rate {:.4}",
                report.test_case,
                report.weak_rate_h.slope,
                report.weak_rate_scale.slope,
                report.strong_rate_h.slope
            );
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::ValidateMesh { file } => {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| (EXIT_CONFIG, format!("{}: {e}", file.display())))?;
            let mesh = Tessellation::import_text(&text)
                .map_err(|e| (EXIT_NUMERICAL, e.to_string()))?;
            mesh.validate().map_err(|e| (EXIT_NUMERICAL, e.to_string()))?;
            let rep = mesh.regularity_report();
            println!(
                "mesh ok: dim={} cells={} faces={} h={:.6e}",
                mesh.dim,
                mesh.cell_count(),
                mesh.face_count(),
                mesh.h
            );
            println!(
                "regularity: iso_proxy={:.6e} volume_ratio={:.6e} face_area_ratio={:.6e}",
                rep.iso_proxy, rep.volume_ratio, rep.face_area_ratio
            );
            Ok(())
        }
        Command::Kr { plus, minus, r, w1, plan_out } => {
            let p = read_measure(&plus)?;
            let q = read_measure(&minus)?;
            let res = transport::kr_distance(&p, &q, r)
                .map_err(|e| (EXIT_NUMERICAL, e.to_string()))?;
            println!(
                "kr r={r}: value={:.12e} gap={:.3e} plan_arcs={} pivots={}",
                res.value,
                res.gap,
                res.plan.len(),
                res.stats.pivots
            );
            if w1 {
                let lin = transport::w1_distance(&p, &q)
                    .map_err(|e| (EXIT_NUMERICAL, e.to_string()))?;
                println!("w1: value={:.12e} gap={:.3e}", lin.value, lin.gap);
            }
            if let Some(path) = plan_out {
                std::fs::write(&path, res.plan_csv(&p, &q))
                    .map_err(|e| (EXIT_NUMERICAL, format!("{}: {e}", path.display())))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Cases => {
            for id in harness::TEST_CASE_IDS {
                let tc = harness::test_case(id).expect("registry id");
                println!("{id}: {}", tc.summary);
            }
            Ok(())
        }
    }
}

fn classify_study(e: harness::StudyError) -> (u8, String) {
    use harness::StudyError::*;
    let code = match &e {
        UnknownTestCase(_) | TooFewLevels(_) | BadEvalTime(..) => EXIT_CONFIG,
        Level { source, .. } => {
            return (classify_study_ref(source), e.to_string());
        }
        _ => EXIT_NUMERICAL,
    };
    (code, e.to_string())
}

fn classify_study_ref(e: &harness::StudyError) -> u8 {
    use harness::StudyError::*;
    match e {
        UnknownTestCase(_) | TooFewLevels(_) | BadEvalTime(..) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// Reads `x,mass` or `x,y,mass` rows, optional header.
fn read_measure(path: &PathBuf) -> Result<DiscreteMeasure, (u8, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| (EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    let mut atoms = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        let parsed: Option<Vec<f64>> = cols.iter().map(|c| c.parse().ok()).collect();
        let Some(vals) = parsed else {
            if ln == 0 {
                continue; // header row
            }
            return Err((EXIT_CONFIG, format!("{}:{}: bad number", path.display(), ln + 1)));
        };
        match vals.len() {
            2 => atoms.push(([vals[0], 0.0], vals[1])),
            3 => atoms.push(([vals[0], vals[1]], vals[2])),
            n => {
                return Err((
                    EXIT_CONFIG,
                    format!("{}:{}: expected 2 or 3 columns, got {n}", path.display(), ln + 1),
                ))
            }
        }
    }
    DiscreteMeasure::from_atoms(atoms).map_err(|e| (EXIT_CONFIG, e.to_string()))
}
