use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tenso::decomposition::{closed_form_report, solenoidal_projection};
use tenso::forward::{multistatic_sinogram, sinogram, MultistaticOptions, ReflectivityModel, Sinogram};
use tenso::geometry::{flat_validity_ratio, SceneGeometry};
use tenso::io::{
    component_labels, parse_scene, read_tfld, read_tsino, render_plane, write_tfld, write_tsino, Mode,
    PhantomSource, RunConfig, TruncationChoice,
};
use tenso::phantoms::{
    add_noise, deviatoric_delta, deviatoric_delta_reflectivity, hemisphere_mask, scene_to_field,
    scene_to_reflectivity, AngularResponse, MaskSpec, SceneSpec,
};
use tenso::sve::{build_system, reconstruct, system_fingerprint, SveSystem, Truncation};
use tenso::tensor::{Grid, TensorField};
use tenso::Error;

/// Multistatic travel-time tensor tomography.
#[derive(Parser)]
#[command(name = "tenso", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory; defaults to the config's `out`, then the current directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat-validity threshold for validate-flat and simulate; relative
    /// singular value cutoff for reconstruct.
    #[arg(long, global = true)]
    threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check every antenna pair against the flat-isochrone criterion.
    ValidateFlat,
    /// Generate a sinogram from the configured phantom.
    Simulate,
    /// Split a tensor field into solenoidal and potential parts.
    Decompose { field: PathBuf },
    /// Invert a sinogram by truncated singular value expansion.
    Reconstruct { sinogram: PathBuf },
    /// Write one 16-bit PGM per component of a tensor field.
    Render { field: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Multistatic,
    Normal,
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_GRID: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::GridMismatch(_) | Error::Rank { .. } => EXIT_GRID,
            Error::Numerical(_) | Error::InsufficientPadding(_) | Error::GridTooSmall(_) | Error::Inconsistent { .. } => {
                EXIT_NUMERICAL
            }
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.into() }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tenso: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(mode) = cli.mode {
        cfg.mode = match mode {
            ModeArg::Multistatic => Mode::Multistatic,
            ModeArg::Normal => Mode::Normal,
        };
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.threshold {
        if !(t > 0.0 && t.is_finite()) {
            return Err(config_error(format!("--threshold must be positive, got {t}")));
        }
        match cli.command {
            Command::Reconstruct { .. } => cfg.truncation = TruncationChoice::Threshold(t),
            _ => cfg.flat_threshold = t,
        }
    }
    cfg.validate()?;
    let out = cli.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::ValidateFlat => validate_flat(&cfg),
        Command::Simulate => simulate(&cfg, &out),
        Command::Decompose { field } => decompose(&cfg, field, &out),
        Command::Reconstruct { sinogram } => reconstruct_cmd(&cfg, sinogram, &out),
        Command::Render { field } => render(field, &out),
    }
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| config_error(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn validate_flat(cfg: &RunConfig) -> CliResult<()> {
    let constellation = cfg.constellation()?;
    let mut all_pass = true;
    for (k, &(tx, rx)) in constellation.pairs.iter().enumerate() {
        let geom = SceneGeometry::new(tx, rx, constellation.wave_speed, constellation.scene_radius, constellation.times.clone())?;
        let mut worst = 0.0f64;
        for &t in &constellation.times {
            worst = worst.max(flat_validity_ratio(&geom, t)?);
        }
        let pass = worst <= cfg.flat_threshold;
        all_pass &= pass;
        println!("pair {k}: flat_validity_ratio {worst:.6e} {}", if pass { "PASS" } else { "FAIL" });
    }
    println!("threshold {:e}: {}", cfg.flat_threshold, if all_pass { "all pairs pass" } else { "failures reported" });
    if all_pass {
        Ok(())
    } else {
        Err(Failure { code: EXIT_VALIDATION, message: "flat-isochrone validation failed".into() })
    }
}

fn load_scene(cfg: &RunConfig) -> CliResult<Option<SceneSpec>> {
    match &cfg.phantom {
        PhantomSource::DeviatoricDelta => Ok(None),
        PhantomSource::Scene(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            Ok(Some(parse_scene(&text)?))
        }
    }
}

fn simulate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let scene = load_scene(cfg)?;
    let mut report = String::new();
    let (mut g, field) = match cfg.mode {
        Mode::Normal => {
            let grid = Grid::new(cfg.grid_nodes, 1.0)?;
            let field = match &scene {
                None => deviatoric_delta(cfg.epsilon, grid)?,
                Some(spec) => scene_to_field(spec, grid)?,
            };
            (sinogram(&field, cfg.s_count, cfg.phi_count)?, Some(field))
        }
        Mode::Multistatic => {
            let (model, rank): (ReflectivityModel, usize) = match &scene {
                None => (deviatoric_delta_reflectivity(cfg.epsilon)?, 2),
                Some(spec) => {
                    let (model, warnings) = scene_to_reflectivity(spec)?;
                    for w in warnings {
                        let _ = writeln!(report, "warning {w}");
                    }
                    let anisotropic =
                        spec.inclusions.iter().any(|i| matches!(i.response, AngularResponse::Deviatoric { .. }));
                    (model, if anisotropic { 2 } else { 0 })
                }
            };
            let options = MultistaticOptions {
                nominal_bistatic_angle: cfg.bistatic_angle,
                bistatic_tolerance: cfg.bistatic_tolerance,
                flat_threshold: cfg.flat_threshold,
                s_count: cfg.s_count,
                phi_count: cfg.phi_count,
            };
            let (mut g, r) = multistatic_sinogram(&model, &cfg.constellation()?, &options)?;
            g.rank = rank;
            let _ = writeln!(
                report,
                "samples {}\nbinned {}\nflat_failures {}\nmissed_scene {}\noutside_grid {}\ncollisions {}",
                r.samples, r.binned, r.flat_failures, r.missed_scene, r.outside_grid, r.collisions
            );
            for w in r.warnings {
                let _ = writeln!(report, "warning {w}");
            }
            (g, None)
        }
    };
    let mask = cfg.mask.or(scene.as_ref().map(|s| s.mask)).unwrap_or(MaskSpec::Full);
    if let MaskSpec::HalfCircle { axis } = mask {
        g = hemisphere_mask(&g, axis);
    }
    let sigma = cfg.noise_sigma.or(scene.as_ref().map(|s| s.noise_sigma)).unwrap_or(0.0);
    g = add_noise(&g, sigma, cfg.seed)?;
    let _ = writeln!(
        report,
        "rank {}\ncoverage {:.6}\nnoise_sigma {sigma:?}\nseed {}",
        g.rank,
        g.coverage(),
        cfg.seed
    );
    let path = write_file(out, "sinogram.tsino", &write_tsino(&g)?)?;
    write_file(out, "sinogram.report.txt", report.as_bytes())?;
    if let Some(field) = field {
        write_file(out, "phantom.tfld", &write_tfld(&field)?)?;
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn decompose(cfg: &RunConfig, field_path: &Path, out: &Path) -> CliResult<()> {
    let f = read_tfld(&read_file(field_path)?)?;
    let d = solenoidal_projection(&f)?;
    let norm = f.norm();
    let relative = |x: f64| if norm == 0.0 { 0.0 } else { x / norm };
    let mut report = format!(
        "input_norm {norm:e}\nsolenoidal_fraction {:e}\npotential_fraction {:e}\ndivergence_residual {:e}\n",
        relative(d.solenoidal.norm()),
        relative(d.potential_gradient.norm()),
        d.divergence_residual()?
    );
    if f.rank() == 2 && cfg.phantom == PhantomSource::DeviatoricDelta {
        report.push_str(&closed_form_report(f.grid(), cfg.epsilon)?.to_text());
    }
    write_file(out, "solenoidal.tfld", &write_tfld(&d.solenoidal)?)?;
    write_file(out, "potential_gradient.tfld", &write_tfld(&d.potential_gradient)?)?;
    write_file(out, "potential.tfld", &write_tfld(&d.potential)?)?;
    write_file(out, "decomposition.report.txt", report.as_bytes())?;
    print!("{report}");
    Ok(())
}

fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("TENSO_CACHE_DIR") {
        return PathBuf::from(dir);
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(dir).join("tenso");
    }
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".cache").join("tenso"),
        None => std::env::temp_dir().join("tenso-cache"),
    }
}

/// Loads the system for `fingerprint` from the cache or builds and stores it.
fn cached_system(cfg: &RunConfig, rank: usize, grid: Grid, report: &mut String) -> CliResult<SveSystem> {
    let fingerprint = system_fingerprint(rank, cfg.n_rad, cfg.k_ang, grid, cfg.s_count, -1.0, 1.0, cfg.phi_count);
    let path = cache_dir().join(format!("{fingerprint}.tsve"));
    if let Ok(bytes) = std::fs::read(&path) {
        match SveSystem::from_bytes(&bytes) {
            Ok(sys) if sys.fingerprint() == fingerprint => {
                let _ = writeln!(report, "cache hit {}", path.display());
                return Ok(sys);
            }
            _ => eprintln!("tenso: ignoring unreadable cache entry {}", path.display()),
        }
    }
    let sys = build_system(rank, cfg.n_rad, cfg.k_ang, grid, cfg.s_count, cfg.phi_count)?;
    let stored = std::fs::create_dir_all(cache_dir()).and_then(|_| std::fs::write(&path, sys.to_bytes()));
    match stored {
        Ok(()) => {
            let _ = writeln!(report, "cache miss, stored {}", path.display());
        }
        Err(e) => eprintln!("tenso: could not write cache entry {}: {e}", path.display()),
    }
    Ok(sys)
}

fn reconstruct_cmd(cfg: &RunConfig, sinogram_path: &Path, out: &Path) -> CliResult<()> {
    let g: Sinogram = read_tsino(&read_file(sinogram_path)?)?;
    let grid = Grid::new(cfg.output_nodes, 1.0)?;
    if g.rank != 0 && g.rank != 2 {
        return Err(Error::Rank { expected: 2, found: g.rank }.into());
    }
    let mut report = String::new();
    let sys = cached_system(cfg, g.rank, grid, &mut report)?;
    sys.check_grid(&g)?;
    let truncation = match cfg.truncation {
        TruncationChoice::Threshold(t) => Truncation::Relative(t),
        TruncationChoice::Terms(m) => Truncation::Count(m),
    };
    let r = reconstruct(&g, &sys, truncation)?;
    let _ = writeln!(
        report,
        "fingerprint {}\nkept {}\ncoverage {:.6}\nlow_coverage {}\ndata_residual {:e}\ntriples {}",
        sys.fingerprint(),
        r.kept,
        r.coverage,
        r.low_coverage,
        r.data_residual,
        sys.triples.len()
    );
    for (k, t) in sys.triples.iter().enumerate() {
        let _ = writeln!(report, "sigma {k} {:e}", t.sigma);
    }
    let path = write_file(out, "reconstruction.tfld", &write_tfld(&r.field)?)?;
    write_file(out, "reconstruction.report.txt", report.as_bytes())?;
    println!("wrote {} (kept {}, residual {:.3e})", path.display(), r.kept, r.data_residual);
    Ok(())
}

fn render(field_path: &Path, out: &Path) -> CliResult<()> {
    let f: TensorField = read_tfld(&read_file(field_path)?)?;
    let stem = field_path.file_stem().and_then(|s| s.to_str()).unwrap_or("field");
    for (c, label) in component_labels(f.rank()).iter().enumerate() {
        let image = render_plane(f.plane(c), f.grid(), label)?;
        let mut sidecar = image.sidecar;
        if !f.atoms.is_empty() {
            let _ = writeln!(sidecar, "atoms {} (not drawn)", f.atoms.len());
        }
        let path = write_file(out, &format!("{stem}_{label}.pgm"), &image.pgm)?;
        write_file(out, &format!("{stem}_{label}.txt"), sidecar.as_bytes())?;
        println!("wrote {}{}", path.display(), if image.degenerate { " (constant: degenerate range)" } else { "" });
    }
    Ok(())
}
