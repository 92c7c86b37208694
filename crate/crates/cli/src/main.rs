use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use c2f_core::config::ConfigError;
use c2f_core::data::{synth_generate, DatasetManifest, SynthParams};
use c2f_core::metrics::{evaluate_set, Scores};
use c2f_core::trainer;
use c2f_core::{Config, Error, Variant};
use c2f_verify::suites;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "c2f", version, about = "Camouflaged object segmentation with cross-level feature fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic low-contrast dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 352)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        contrast: f64,
        #[arg(long, default_value_t = 3)]
        max_objects: usize,
    },
    /// Train a network; writes checkpoint.c2fn and loss.log into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict a PGM map for every PPM image in a directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted maps against ground-truth masks and write a CSV report.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate all five architecture variants on DATA/train and DATA/test.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the numerical verification suites.
    Selfcheck {
        /// Run only the named suites (repeatable).
        #[arg(long = "suite")]
        suites: Vec<String>,
    },
}

/// Failure with its process exit code: 1 usage or config, 2 data, 3 numeric.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite(_) | Error::NonFiniteGradient(_) => 3,
            Error::Config(_) | Error::Param { .. } | Error::DegenerateStats { .. } => 1,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e.to_string())
    }
}

fn set_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("C2F_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("C2F_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot size thread pool: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure { code: 2, message: format!("{}: {e}", dir.display()) })?;
    }
    fs::write(path, text).map_err(|e| Failure { code: 2, message: format!("{}: {e}", path.display()) })
}

fn gen_data(out: &Path, p: SynthParams) -> Result<(), Failure> {
    let m = synth_generate(out, &p)?;
    println!("wrote {} image/mask pairs to {}", m.ids.len(), out.display());
    Ok(())
}

fn train(config: &Path, data: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = Config::load(config)?;
    let manifest = DatasetManifest::load(data)?;
    let start = Instant::now();
    let outcome = trainer::train(&manifest, &cfg, out)?;
    let last = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs ({} steps) in {:.1}s, final epoch loss {last:.6}",
        outcome.epoch_losses.len(),
        outcome.step_losses.len(),
        start.elapsed().as_secs_f64()
    );
    println!("checkpoint {}", outcome.checkpoint.display());
    println!("log {}", outcome.log.display());
    Ok(())
}

fn infer(ckpt: &Path, images: &Path, out: &Path) -> Result<(), Failure> {
    let params = trainer::load_params(ckpt)?;
    let written = trainer::infer_dir(&params, images, out)?;
    println!("wrote {} predictions to {}", written.len(), out.display());
    Ok(())
}

fn eval(pred: &Path, gt: &Path, out: &Path) -> Result<(), Failure> {
    let report = evaluate_set(pred, gt)?;
    write_file(out, &report.to_csv())?;
    print_scores("MEAN", &report.mean);
    Ok(())
}

fn print_scores(label: &str, s: &Scores) {
    println!(
        "{label}: mae {:.6}  s_alpha {:.6}  e_phi_mean {:.6}  e_phi_max {:.6}  f_w {:.6}",
        s.mae, s.s_alpha, s.e_phi_mean, s.e_phi_max, s.f_w
    );
}

const ABLATION_HEADER: &str = "variant,s_alpha,e_phi_mean,f_w,mae";

fn ablate(config: &Path, data: &Path, out: &Path) -> Result<(), Failure> {
    let base = Config::load(config)?;
    let train_set = DatasetManifest::load(&data.join("train"))?;
    let test_set = DatasetManifest::load(&data.join("test"))?;
    let mut csv = format!("{ABLATION_HEADER}\n");
    for variant in Variant::ALL {
        let cfg = Config { variant, ..base.clone() };
        let dir = out.join(dir_name(variant));
        let start = Instant::now();
        let outcome = trainer::train(&train_set, &cfg, &dir)?;
        let report = trainer::evaluate(&outcome.checkpoint, &test_set)?;
        report.write_csv(&dir.join("report.csv"))?;
        let m = &report.mean;
        csv.push_str(&format!("{},{:.6},{:.6},{:.6},{:.6}\n", variant.name(), m.s_alpha, m.e_phi_mean, m.f_w, m.mae));
        print_scores(&format!("{} ({:.1}s)", variant.name(), start.elapsed().as_secs_f64()), m);
    }
    let path = out.join("ablation.csv");
    write_file(&path, &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Filesystem-safe directory name for a variant.
fn dir_name(v: Variant) -> String {
    v.name().replace("->", "-to-").replace('+', "-")
}

fn selfcheck(selected: &[String]) -> Result<(), Failure> {
    let names: Vec<&str> = if selected.is_empty() {
        suites::SUITES.to_vec()
    } else {
        selected.iter().map(String::as_str).collect()
    };
    if let Some(bad) = names.iter().find(|n| !suites::SUITES.contains(n)) {
        return Err(Failure::usage(format!("unknown suite {bad:?}; available: {}", suites::SUITES.join(", "))));
    }
    let mut failed = Vec::new();
    for name in names {
        let start = Instant::now();
        let outcome = suites::run(name).expect("suite names checked above");
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{status} {name} ({:.1}s)", start.elapsed().as_secs_f64());
        if !outcome.passed {
            for line in outcome.detail.lines() {
                println!("    {line}");
            }
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: 3, message: format!("failed suites: {}", failed.join(", ")) })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    set_threads()?;
    match cli.command {
        Command::GenData { out, count, size, seed, contrast, max_objects } => {
            gen_data(&out, SynthParams { seed, count, size, contrast, max_objects })
        }
        Command::Train { config, data, out } => train(&config, &data, &out),
        Command::Infer { ckpt, images, out } => infer(&ckpt, &images, &out),
        Command::Eval { pred, gt, out } => eval(&pred, &gt, &out),
        Command::Ablate { config, data, out } => ablate(&config, &data, &out),
        Command::Selfcheck { suites } => selfcheck(&suites),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_dirs_are_plain_names() {
        let names: Vec<String> = Variant::ALL.iter().map(|&v| dir_name(v)).collect();
        for n in &names {
            assert!(n.chars().all(|c| c.is_ascii_alphanumeric() || c == '-'), "{n}");
        }
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 5);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(Failure::from(Error::NonFinite("x".into())).code, 3);
        assert_eq!(Failure::from(Error::EmptyDataset).code, 2);
        assert_eq!(Failure::from(Error::MissingFiles(vec![])).code, 2);
        assert_eq!(Failure::from(ConfigError::Syntax { line: 1, text: "x".into() }).code, 1);
    }

    #[test]
    fn interface_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
