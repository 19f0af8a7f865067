//! `wavesal` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 configuration or usage
//! error, 3 simulation divergence, 4 empty windowing, 5 no signal.
//! `WAVESAL_THREADS` caps the worker thread count.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use wavesal::pipeline::{cross_sweep, flagged_csv, landau_report, monte_carlo_sweep, simulate_scenario, Detector};
use wavesal::sampling::{sweep_to_csv, Sharing};
use wavesal::scenario::{parse_rank, parse_scenario, ScenarioConfig};
use wavesal::spectrum::DEFAULT_FLOOR_DB;
use wavesal::wavecube::{load_cube, meta_path, save_cube};
use wavesal::windowing::RegionIndex;
use wavesal::{Error, Result};

#[derive(Parser)]
#[command(
    name = "wavesal",
    version,
    about = "Defect localization from simulated plate wavefields"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the cube plus its `.meta` sidecar.
    Simulate { config: PathBuf, output: PathBuf },
    /// Build the saliency map of a cube and flag salient regions.
    Detect {
        cube: PathBuf,
        config: PathBuf,
        /// Output prefix; writes `.saliency.csv`, `.saliency.pgm`,
        /// `.flagged.csv` and `.manifest.txt`.
        prefix: PathBuf,
        /// Subspace rank, or `auto` for the knee of the first window step.
        #[arg(long, value_parser = rank_arg)]
        rank: Option<wavesal::saliency::RankPolicy>,
        /// Window length in samples.
        #[arg(long)]
        tw: Option<usize>,
        /// Also write the window of region `i,j` as a cube.
        #[arg(long, value_parser = region_arg)]
        dump_window: Vec<RegionIndex>,
    },
    /// Average detection metrics over subsampling masks.
    Sweep {
        cube: PathBuf,
        config: PathBuf,
        output: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.33,0.2,0.1,0.07")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Base seed; defaults to the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Pattern::Random)]
        pattern: Pattern,
        /// Double-cross strides, used with `--pattern cross`.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        stride: Vec<usize>,
        #[arg(long, value_enum, default_value_t = SharingArg::Shared)]
        sharing: SharingArg,
    },
    /// Wavenumber spectrum of one snapshot and its occupied fraction.
    Spectrum {
        cube: PathBuf,
        /// Output prefix; writes `.spectrum.csv` and `.spectrum.pgm`.
        prefix: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FLOOR_DB, allow_negative_numbers = true)]
        floor_db: f64,
        /// Snapshot index; defaults to the last one.
        #[arg(long)]
        snapshot: Option<usize>,
        /// Dynamic range of the PGM image in dB.
        #[arg(long, default_value_t = 60.0)]
        range_db: f64,
        /// Sampling ratio to compare with the occupancy estimate.
        #[arg(long)]
        compare_ratio: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Pattern {
    Random,
    Cross,
}

#[derive(Clone, Copy, ValueEnum)]
enum SharingArg {
    Shared,
    PerRegion,
}

fn rank_arg(s: &str) -> std::result::Result<wavesal::saliency::RankPolicy, String> {
    parse_rank(s).ok_or_else(|| format!("expected `auto` or a positive integer, got `{s}`"))
}

fn region_arg(s: &str) -> std::result::Result<RegionIndex, String> {
    let bad = || format!("expected `i,j`, got `{s}`");
    let (i, j) = s.split_once(',').ok_or_else(bad)?;
    Ok(RegionIndex::new(
        i.trim().parse().map_err(|_| bad())?,
        j.trim().parse().map_err(|_| bad())?,
    ))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        Error::Divergence { .. } => 3,
        Error::EmptyWindowing => 4,
        Error::NoSignal(_) => 5,
        _ => 1,
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        offset: 0,
        source: std::io::Error::new(source.kind(), format!("{}: {source}", path.display())),
    }
}

fn read_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    parse_scenario(&text).map_err(|err| match err {
        Error::Config { line, column, message } => Error::Config {
            line,
            column,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn load(path: &Path) -> Result<wavesal::wavecube::DataCube> {
    if !path.is_file() {
        return Err(io_error(path)(std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    load_cube(path)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(io_error(path))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, output } => {
            let scenario = read_config(&config)?;
            let (cube, meta) = simulate_scenario(&scenario)?;
            let bytes = save_cube(&cube, &output)?;
            write(&meta_path(&output), meta.to_text())?;
            println!(
                "wrote {} ({} bytes, {}x{}x{}, dt {:e} s)",
                output.display(),
                bytes,
                cube.n1(),
                cube.n2(),
                cube.t_len(),
                cube.dt()
            );
        }
        Command::Detect {
            cube,
            config,
            prefix,
            rank,
            tw,
            dump_window,
        } => {
            let mut scenario = read_config(&config)?;
            if let Some(r) = rank {
                scenario.detection.rank = r;
            }
            if let Some(tw) = tw {
                if tw < 1 {
                    return Err(Error::Parameter("--tw must be at least 1".into()));
                }
                scenario.detection.window_len = tw;
            }
            let data = load(&cube)?;
            let detector = Detector::new(&data, &scenario)?;
            let detection = detector.run_configured()?;
            write(&with_suffix(&prefix, ".saliency.csv"), detection.map.to_csv())?;
            write(&with_suffix(&prefix, ".saliency.pgm"), detection.map.to_pgm())?;
            write(&with_suffix(&prefix, ".flagged.csv"), flagged_csv(&detection))?;
            write(
                &with_suffix(&prefix, ".manifest.txt"),
                detector.manifest(&detection).to_text(),
            )?;
            for r in dump_window {
                detector.partition().check(r)?;
                let block = detector
                    .windows()
                    .block_cube(r)
                    .ok_or_else(|| Error::Parameter(format!("region {},{} is inactive", r.i, r.j)))??;
                save_cube(&block, &with_suffix(&prefix, &format!(".window_{}_{}.wvc", r.i, r.j)))?;
            }
            let flagged: Vec<String> = detection.flagged.iter().map(|r| format!("({},{})", r.i, r.j)).collect();
            println!(
                "group speed {:.1} m/s, rank {}, {} active regions",
                detector.group_speed(),
                detection.map.rank_used(),
                detector.windows().active_count()
            );
            println!("flagged {}: {}", flagged.len(), flagged.join(" "));
        }
        Command::Sweep {
            cube,
            config,
            output,
            ratios,
            trials,
            seed,
            pattern,
            stride,
            sharing,
        } => {
            let scenario = read_config(&config)?;
            let data = load(&cube)?;
            let detector = Detector::new(&data, &scenario)?;
            let seed = seed.unwrap_or(scenario.seed);
            let rows = match pattern {
                Pattern::Random => {
                    let sharing = match sharing {
                        SharingArg::Shared => Sharing::SharedAcrossRegions,
                        SharingArg::PerRegion => Sharing::PerRegion,
                    };
                    monte_carlo_sweep(&detector, &ratios, trials, seed, sharing)?
                }
                Pattern::Cross => cross_sweep(&detector, &stride, seed)?,
            };
            let csv = sweep_to_csv(&rows);
            write(&output, &csv)?;
            print!("{csv}");
        }
        Command::Spectrum {
            cube,
            prefix,
            floor_db,
            snapshot,
            range_db,
            compare_ratio,
        } => {
            let data = load(&cube)?;
            let (spectrum, estimate) = landau_report(&data, snapshot, floor_db)?;
            write(&with_suffix(&prefix, ".spectrum.csv"), spectrum.to_csv())?;
            write(&with_suffix(&prefix, ".spectrum.pgm"), spectrum.to_pgm(range_db)?)?;
            println!("{estimate}");
            if let Some(nz) = compare_ratio {
                let relation = if nz < estimate.fraction { "below" } else { "at or above" };
                println!(
                    "sampling ratio {nz} is {relation} the occupancy estimate {:.4} ({:.2}x)",
                    estimate.fraction,
                    nz / estimate.fraction
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("WAVESAL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
