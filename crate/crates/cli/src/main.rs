use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use filament_core::config::InteractMode;
use filament_core::gibbs::{
    energy_spectrum, gamma_thresholds, map_samples, partition_function_of, run_ensemble, EnergyKind,
    EnsembleRecord,
};
use filament_core::io::{self as fio, EnergyRow, Format, GibbsRow, InteractRow};
use filament_core::local_time::{pointlike_interaction, DeltaEstimator};
use filament_core::verify::{self, Status};
use filament_core::{Error, KGrid, RunConfig, SeedSpec};

const EXIT_CHECKS_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Monte Carlo ensembles of Brownian vortex filaments.
///
/// Every subcommand reads the same TOML configuration (all fields optional; see
/// `RunConfig` in the library docs). Exit codes: 0 success, 1 a verify check failed,
/// 2 configuration or input error, 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "filament-mc", version)]
struct Cli {
    /// TOML configuration file; defaults apply when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "FILAMENT_MC_THREADS", value_name = "INT")]
    workers: Option<usize>,

    /// Output file; stdout when absent.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Output format. Defaults to jsonl for `energy` and `sample-paths`, csv otherwise.
    #[arg(long, global = true, value_enum)]
    format: Option<OutFormat>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutFormat {
    Jsonl,
    Csv,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Jsonl => Format::Jsonl,
            OutFormat::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the ensemble and write one energy record per path.
    ///
    /// jsonl: sample_index, h, h_tilde, diff_spectral, diff_closed_form, displacement,
    /// d_bound, shells, shells_tilde. csv: the same without the shell arrays, with the
    /// displacement split into dx, dy, dz. A summary table (quantity, n, mean, se) goes
    /// to --summary, else next to --out as <out>.summary.csv, else to stderr.
    Energy {
        /// Where to write the summary table.
        #[arg(long, value_name = "PATH")]
        summary: Option<PathBuf>,
    },
    /// Partition functions over the beta ladder.
    ///
    /// Columns: beta, z, log_z, se, ess, flag_heavy_tail, z_tilde, log_z_tilde.
    Gibbs {
        /// Reuse records written by `energy` instead of sampling.
        #[arg(long, value_name = "PATH")]
        records: Option<PathBuf>,
        /// Inverse temperatures, overriding the configuration's ladder.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        betas: Option<Vec<f64>>,
    },
    /// Energy spectrum E(q) on the radial grid, one block per beta.
    ///
    /// Columns: beta, q, e, e_tilde, ess, unreliable.
    Spectrum {
        /// Reuse records written by `energy` instead of sampling.
        #[arg(long, value_name = "PATH")]
        records: Option<PathBuf>,
        /// Inverse temperatures, overriding the configuration's ladder.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        betas: Option<Vec<f64>>,
    },
    /// Interaction energy of independent pairs of point-like filaments.
    ///
    /// Columns: pair, estimator, ito_double, collision_local_time, boundary, total,
    /// excluded_pairs. With mode both, every pair has a tanaka_rosen and a mollified row.
    Interact {
        /// Collision local-time estimator; the configuration's mode when absent.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Number of independent pairs.
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Run the acceptance battery and print one line per check.
    Verify {
        /// Print the check inventory without running anything.
        #[arg(long)]
        list: bool,
    },
    /// Write the sampled core paths.
    ///
    /// jsonl: sample_index, points (one [x, y, z] per node). csv: sample_index, step,
    /// t, x, y, z.
    SamplePaths {
        /// Number of paths; the configuration's sample count when absent.
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    TanakaRosen,
    Mollified,
    Both,
}

impl From<ModeArg> for InteractMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TanakaRosen => InteractMode::TanakaRosen,
            ModeArg::Mollified => InteractMode::Mollified,
            ModeArg::Both => InteractMode::Both,
        }
    }
}

fn is_input_error(e: &Error) -> bool {
    match e {
        Error::Config(_)
        | Error::InvalidGrid(_)
        | Error::InvalidArgument(_)
        | Error::Unsupported { .. }
        | Error::GridMismatch
        | Error::Record { .. }
        | Error::Empty(_) => true,
        Error::Sample { source, .. } => is_input_error(source),
        _ => false,
    }
}

fn exit_code(e: &Error) -> u8 {
    if is_input_error(e) {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
            e => e,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_out(out: Option<&FsPath>) -> Result<Box<dyn Write>, Error> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn records_or_sample(cfg: &RunConfig, kgrid: &KGrid, path: Option<&FsPath>) -> Result<Vec<EnsembleRecord>, Error> {
    match path {
        Some(p) => {
            let recs = fio::read_records(p)?;
            if recs.iter().any(|r| r.shells.len() != kgrid.n_radial()) {
                return Err(Error::Config(format!(
                    "{}: records have {} shells but the configured grid has {}",
                    p.display(),
                    recs[0].shells.len(),
                    kgrid.n_radial()
                )));
            }
            Ok(recs)
        }
        None => run_ensemble(&cfg.ensemble()?, kgrid, cfg.workers),
    }
}

fn cmd_energy(cli: &Cli, cfg: &RunConfig, summary: Option<&FsPath>) -> Result<u8, Error> {
    let kgrid = cfg.kgrid()?;
    let records = run_ensemble(&cfg.ensemble()?, &kgrid, cfg.workers)?;
    let mut out = open_out(cli.out.as_deref())?;
    match cli.format.map(Format::from).unwrap_or(Format::Jsonl) {
        Format::Jsonl => fio::write_jsonl(&mut out, &records)?,
        Format::Csv => {
            let rows: Vec<EnergyRow> = records.iter().map(EnergyRow::from).collect();
            fio::write_table(&mut out, Format::Csv, &rows)?
        }
    }
    let table = fio::energy_summary(&records);
    let summary_path = summary.map(FsPath::to_path_buf).or_else(|| {
        cli.out.as_ref().map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".summary.csv");
            PathBuf::from(s)
        })
    });
    match summary_path {
        Some(p) => fio::write_table(BufWriter::new(File::create(p)?), Format::Csv, &table)?,
        None => fio::write_table(io::stderr().lock(), Format::Csv, &table)?,
    }
    Ok(0)
}

fn cmd_gibbs(cli: &Cli, cfg: &RunConfig, records: Option<&FsPath>, betas: Option<&[f64]>) -> Result<u8, Error> {
    let kgrid = cfg.kgrid()?;
    let recs = records_or_sample(cfg, &kgrid, records)?;
    let betas = betas.unwrap_or(&cfg.betas);
    let mut rows = Vec::with_capacity(betas.len());
    for &b in betas {
        let z = partition_function_of(&recs, b, EnergyKind::H)?;
        let zt = partition_function_of(&recs, b, EnergyKind::HTilde)?;
        rows.push(GibbsRow::new(&z, &zt));
    }
    if !cfg.cross_section.is_point() {
        let (lo, hi) = gamma_thresholds(&cfg.cross_section, &kgrid, cfg.horizon)?;
        eprintln!("gamma_lower = {lo}, gamma_upper = {hi}: finite for beta > -gamma_lower");
    }
    let format = cli.format.map(Format::from).unwrap_or(Format::Csv);
    fio::write_table(open_out(cli.out.as_deref())?, format, &rows)?;
    Ok(0)
}

fn cmd_spectrum(cli: &Cli, cfg: &RunConfig, records: Option<&FsPath>, betas: Option<&[f64]>) -> Result<u8, Error> {
    let kgrid = cfg.kgrid()?;
    let recs = records_or_sample(cfg, &kgrid, records)?;
    let betas = betas.unwrap_or(&cfg.betas);
    let mut rows = Vec::new();
    for &b in betas {
        let s = energy_spectrum(&recs, b, &kgrid, cfg.gibbs.ess_threshold)?;
        if s.unreliable {
            eprintln!("beta = {b}: effective sample size {:.1} is below the threshold", s.effective_sample_size);
        }
        rows.extend(fio::spectrum_rows(&s));
    }
    let format = cli.format.map(Format::from).unwrap_or(Format::Csv);
    fio::write_table(open_out(cli.out.as_deref())?, format, &rows)?;
    Ok(0)
}

fn cmd_interact(cli: &Cli, cfg: &RunConfig, mode: Option<ModeArg>, pairs: Option<usize>) -> Result<u8, Error> {
    let mode = mode.map(InteractMode::from).unwrap_or(cfg.interact.mode);
    let pairs = pairs.unwrap_or(cfg.interact.pairs);
    let grid = cfg.grid()?;
    let y0 = [cfg.x0[0] + cfg.interact.separation, cfg.x0[1], cfg.x0[2]];
    let estimators: Vec<(&str, DeltaEstimator)> = match mode {
        InteractMode::TanakaRosen => vec![("tanaka_rosen", DeltaEstimator::TanakaRosen)],
        InteractMode::Mollified => vec![("mollified", DeltaEstimator::DirectMollified { eps: cfg.interact.eps })],
        InteractMode::Both => vec![
            ("tanaka_rosen", DeltaEstimator::TanakaRosen),
            ("mollified", DeltaEstimator::DirectMollified { eps: cfg.interact.eps }),
        ],
    };
    let per_pair = map_samples(0, pairs, cfg.workers, |i| {
        let x = cfg.process.sample(grid, cfg.x0, SeedSpec::new(cfg.seed, 2 * i))?;
        let y = cfg.process.sample(grid, y0, SeedSpec::new(cfg.seed, 2 * i + 1))?;
        estimators
            .iter()
            .map(|(name, est)| Ok(InteractRow::new(i, name, &pointlike_interaction(&x, &y, *est)?)))
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let rows: Vec<InteractRow> = per_pair.into_iter().flatten().collect();
    let format = cli.format.map(Format::from).unwrap_or(Format::Csv);
    fio::write_table(open_out(cli.out.as_deref())?, format, &rows)?;
    Ok(0)
}

fn cmd_verify(cli: &Cli, cfg: &RunConfig) -> Result<u8, Error> {
    let t0 = std::time::Instant::now();
    let results = verify::run(cfg, cfg.workers, &|msg| {
        eprintln!("[{:7.1}s] {msg}", t0.elapsed().as_secs_f64())
    })?;
    let mut out = open_out(cli.out.as_deref())?;
    match cli.format {
        Some(OutFormat::Jsonl) => fio::write_jsonl(&mut out, &results)?,
        Some(OutFormat::Csv) => fio::write_table(&mut out, Format::Csv, &results)?,
        None => {
            for r in &results {
                writeln!(out, "{r}")?;
            }
            let failed = results.iter().filter(|r| r.status == Status::Fail).count();
            let skipped = results.iter().filter(|r| r.status == Status::Skip).count();
            writeln!(
                out,
                "{} passed, {failed} failed, {skipped} skipped in {:.1}s",
                results.len() - failed - skipped,
                t0.elapsed().as_secs_f64()
            )?;
        }
    }
    out.flush()?;
    Ok(if verify::all_passed(&results) { 0 } else { EXIT_CHECKS_FAILED })
}

fn cmd_list(cli: &Cli) -> Result<u8, Error> {
    let mut out = open_out(cli.out.as_deref())?;
    for c in verify::list() {
        let gate = if c.gated { " [gated]" } else { "" };
        writeln!(out, "AC{:02} {:<20} {}{gate}", c.id, c.name, c.summary)?;
    }
    out.flush()?;
    Ok(0)
}

#[derive(Serialize)]
struct PathRecord {
    sample_index: u64,
    points: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct PathRow {
    sample_index: u64,
    step: usize,
    t: f64,
    x: f64,
    y: f64,
    z: f64,
}

fn cmd_sample_paths(cli: &Cli, cfg: &RunConfig, samples: Option<usize>) -> Result<u8, Error> {
    let n = samples.unwrap_or(cfg.samples);
    let grid = cfg.grid()?;
    let paths = map_samples(0, n, cfg.workers, |i| {
        cfg.process.sample(grid, cfg.x0, SeedSpec::new(cfg.seed, i))
    })?;
    let mut out = open_out(cli.out.as_deref())?;
    match cli.format.map(Format::from).unwrap_or(Format::Jsonl) {
        Format::Jsonl => {
            let recs: Vec<PathRecord> = paths
                .iter()
                .enumerate()
                .map(|(i, p)| PathRecord {
                    sample_index: i as u64,
                    points: p.points().to_vec(),
                })
                .collect();
            fio::write_jsonl(&mut out, &recs)?
        }
        Format::Csv => {
            let rows: Vec<PathRow> = paths
                .iter()
                .enumerate()
                .flat_map(|(i, p)| {
                    p.points().iter().enumerate().map(move |(j, x)| PathRow {
                        sample_index: i as u64,
                        step: j,
                        t: p.grid().time(j),
                        x: x[0],
                        y: x[1],
                        z: x[2],
                    })
                })
                .collect();
            fio::write_table(&mut out, Format::Csv, &rows)?
        }
    }
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8, Error> {
    if let Command::Verify { list: true } = cli.command {
        return cmd_list(cli);
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Energy { summary } => cmd_energy(cli, &cfg, summary.as_deref()),
        Command::Gibbs { records, betas } => cmd_gibbs(cli, &cfg, records.as_deref(), betas.as_deref()),
        Command::Spectrum { records, betas } => cmd_spectrum(cli, &cfg, records.as_deref(), betas.as_deref()),
        Command::Interact { mode, pairs } => cmd_interact(cli, &cfg, *mode, *pairs),
        Command::Verify { .. } => cmd_verify(cli, &cfg),
        Command::SamplePaths { samples } => cmd_sample_paths(cli, &cfg, *samples),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_separate_input_from_numerics() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::NonFiniteDrift { step: 3, time: 0.1 }), EXIT_NUMERICAL);
        let wrapped = Error::Sample {
            index: 7,
            source: Box::new(Error::InvalidArgument("y".into())),
        };
        assert_eq!(exit_code(&wrapped), EXIT_CONFIG);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
