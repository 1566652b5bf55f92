use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tenso::decomposition::make_solenoidal;
use tenso::forward::Sinogram;
use tenso::io::{read_pgm16, read_tfld, read_tsino, write_tfld, write_tsino};
use tenso::sve::{build_system, Truncation};
use tenso::tensor::{Grid, TensorField};

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, contents: &[u8]) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_tenso"))
            .args(args)
            .current_dir(self.dir.path())
            .env("TENSO_CACHE_DIR", self.path("cache"))
            .output()
            .unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn text(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn validate_flat_thresholds_and_exit_codes() {
    let ws = Workspace::new();
    ws.write("far.cfg", b"ring = 12 100\ns_count = 41\n");
    let out = ws.run(&["validate-flat", "--config", "far.cfg", "--threshold", "0.02"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let report = stdout(&out);
    assert_eq!(report.matches("PASS").count(), 12);
    // Worst ratio is 2R / (c t_min) = 1/99.
    assert!(report.contains("1.010101e-2"), "{report}");

    ws.write("near.cfg", b"ring = 12 2\ns_count = 41\n");
    let out = ws.run(&["validate-flat", "--config", "near.cfg", "--threshold", "0.02"]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout(&out).matches("FAIL").count(), 12);

    ws.write("empty.cfg", b"# no antennas\n");
    assert_eq!(code(&ws.run(&["validate-flat", "--config", "empty.cfg"])), 2);
    ws.write("typo.cfg", b"rign = 12 100\n");
    assert_eq!(code(&ws.run(&["validate-flat", "--config", "typo.cfg"])), 2);
    assert_eq!(code(&ws.run(&["validate-flat", "--config", "missing.cfg"])), 2);
}

#[test]
fn simulate_isotropic_disk_gives_chord_lengths() {
    let ws = Workspace::new();
    ws.write("disk.scene", b"background = 1\n");
    ws.write("run.cfg", b"scene = disk.scene\ngrid_nodes = 65\ns_count = 33\nphi_count = 8\nout = sim\n");
    let out = ws.run(&["simulate", "--config", "run.cfg"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let g = read_tsino(&std::fs::read(ws.path("sim/sinogram.tsino")).unwrap()).unwrap();
    assert_eq!((g.rank, g.s_count, g.phi_count), (0, 33, 8));
    for p in 0..g.phi_count {
        for i in 0..g.s_count {
            let s = g.s(i);
            let want = 2.0 * (1.0 - s * s).max(0.0).sqrt();
            assert!((g.get(i, p) - want).abs() < 1e-6, "s {s}: {} vs {want}", g.get(i, p));
        }
    }
    assert!(ws.path("sim/phantom.tfld").is_file());
    assert!(text(&ws.path("sim/sinogram.report.txt")).contains("coverage 1.0"));
}

#[test]
fn simulate_worked_example_has_even_parity_and_fixed_noise() {
    let ws = Workspace::new();
    let cfg = "epsilon = 0.1\ngrid_nodes = 129\ns_count = 33\nphi_count = 16\nnoise_sigma = 0.01\nseed = 7\n";
    ws.write("run.cfg", cfg.as_bytes());
    assert_eq!(code(&ws.run(&["simulate", "--config", "run.cfg", "--out", "a"])), 0);
    assert_eq!(code(&ws.run(&["simulate", "--config", "run.cfg", "--out", "b"])), 0);
    assert_eq!(code(&ws.run(&["simulate", "--config", "run.cfg", "--out", "c", "--seed", "8"])), 0);
    let a = std::fs::read(ws.path("a/sinogram.tsino")).unwrap();
    assert_eq!(a, std::fs::read(ws.path("b/sinogram.tsino")).unwrap());
    assert_ne!(a, std::fs::read(ws.path("c/sinogram.tsino")).unwrap());

    ws.write("clean.cfg", b"epsilon = 0.1\ngrid_nodes = 129\ns_count = 33\nphi_count = 16\n");
    assert_eq!(code(&ws.run(&["simulate", "--config", "clean.cfg", "--out", "d"])), 0);
    let g = read_tsino(&std::fs::read(ws.path("d/sinogram.tsino")).unwrap()).unwrap();
    assert_eq!(g.rank, 2);
    let peak = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for p in 0..8 {
        for i in 0..33 {
            let mirrored = g.get(32 - i, p + 8);
            assert!((g.get(i, p) - mirrored).abs() <= 1e-6 * peak);
        }
    }
}

fn small_config() -> &'static str {
    "n_rad = 10\nk_ang = 6\noutput_nodes = 33\ns_count = 33\nphi_count = 32\n"
}

#[test]
fn reconstruct_zero_and_basis_data() {
    let ws = Workspace::new();
    ws.write("run.cfg", small_config().as_bytes());
    let zero = Sinogram::zeros(2, 33, -1.0, 1.0, 32).unwrap();
    ws.write("zero.tsino", &write_tsino(&zero).unwrap());
    let out = ws.run(&["reconstruct", "zero.tsino", "--config", "run.cfg", "--out", "z"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let f = read_tfld(&std::fs::read(ws.path("z/reconstruction.tfld")).unwrap()).unwrap();
    assert!(f.planes().iter().flatten().all(|v| *v == 0.0));
    let report = text(&ws.path("z/reconstruction.report.txt"));
    assert!(report.contains("cache miss") && report.contains("sigma 0 "));

    // Data of a right singular vector comes back as that vector's field.
    let sys = build_system(2, 10, 6, Grid::new(33, 1.0).unwrap(), 33, 32).unwrap();
    let k = sys.truncation_count(Truncation::default()).unwrap() / 2;
    let coefs = sys.right_vector(k).unwrap();
    ws.write("basis.tsino", &write_tsino(&sys.apply(&coefs).unwrap()).unwrap());
    let out = ws.run(&["reconstruct", "basis.tsino", "--config", "run.cfg", "--out", "b"]);
    assert_eq!(code(&out), 0);
    assert!(text(&ws.path("b/reconstruction.report.txt")).contains("cache hit"));
    let got = read_tfld(&std::fs::read(ws.path("b/reconstruction.tfld")).unwrap()).unwrap();
    let want = sys.basis.evaluate(&coefs).unwrap();
    let err = got.sub(&want).unwrap().norm() / want.norm();
    // The file stores single precision.
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn reconstruct_grid_mismatch_exits_3() {
    let ws = Workspace::new();
    ws.write("run.cfg", small_config().as_bytes());
    let other = Sinogram::zeros(2, 35, -1.0, 1.0, 32).unwrap();
    ws.write("other.tsino", &write_tsino(&other).unwrap());
    assert_eq!(code(&ws.run(&["reconstruct", "other.tsino", "--config", "run.cfg"])), 3);
    let rank1 = Sinogram::zeros(1, 33, -1.0, 1.0, 32).unwrap();
    ws.write("rank1.tsino", &write_tsino(&rank1).unwrap());
    assert_eq!(code(&ws.run(&["reconstruct", "rank1.tsino", "--config", "run.cfg"])), 3);
    ws.write("junk.tsino", b"TSINO 1\nrank 2\n");
    assert_eq!(code(&ws.run(&["reconstruct", "junk.tsino", "--config", "run.cfg"])), 2);
}

#[test]
fn cached_system_is_at_least_ten_times_faster() {
    let ws = Workspace::new();
    // Smooth data with every angular frequency present, so no coefficient is skipped.
    let mut g = Sinogram::zeros(2, 257, -1.0, 1.0, 360).unwrap();
    for p in 0..360 {
        for i in 0..257 {
            let (s, phi) = (g.s(i), g.phi(p));
            let k = g.index(i, p);
            g.values[k] = ((1.0 - s * s) * (-4.0 * s * s).exp() * (1.0 + 0.5 * (2.0 * phi).cos() + 0.3 * (7.0 * phi + s).sin())) as f32 as f64;
        }
    }
    ws.write("data.tsino", &write_tsino(&g).unwrap());
    let timed = |out: &str| {
        let start = Instant::now();
        let o = ws.run(&["reconstruct", "data.tsino", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        start.elapsed()
    };
    let cold = timed("cold");
    let warm = (0..3).map(|k| timed(&format!("warm{k}"))).min().unwrap_or(Duration::MAX);
    println!("cold {cold:?}, warm {warm:?}, ratio {:.1}", cold.as_secs_f64() / warm.as_secs_f64());
    assert!(text(&ws.path("warm0/reconstruction.report.txt")).contains("cache hit"));
    assert!(cold >= warm * 10, "cold {cold:?} vs warm {warm:?}");
}

#[test]
fn render_constant_and_idempotent() {
    let ws = Workspace::new();
    let grid = Grid::new(9, 1.0).unwrap();
    let flat = TensorField::from_fn(2, grid, |_, _, o| o.copy_from_slice(&[0.5, 0.5, 0.5]));
    ws.write("flat.tfld", &write_tfld(&flat).unwrap());
    assert_eq!(code(&ws.run(&["render", "flat.tfld", "--out", "img"])), 0);
    for label in ["11", "12", "22"] {
        let (w, h, px) = read_pgm16(&std::fs::read(ws.path(&format!("img/flat_{label}.pgm"))).unwrap()).unwrap();
        assert_eq!((w, h), (9, 9));
        assert!(px.iter().all(|p| *p == 32768));
        assert!(text(&ws.path(&format!("img/flat_{label}.txt"))).contains("degenerate true"));
    }

    let bumpy = TensorField::from_fn(0, grid, |x, y, o| o[0] = x * y + 0.25 * x);
    ws.write("bumpy.tfld", &write_tfld(&bumpy).unwrap());
    assert_eq!(code(&ws.run(&["render", "bumpy.tfld", "--out", "one"])), 0);
    assert_eq!(code(&ws.run(&["render", "bumpy.tfld", "--out", "two"])), 0);
    for f in ["bumpy_0.pgm", "bumpy_0.txt"] {
        assert_eq!(std::fs::read(ws.path(&format!("one/{f}"))).unwrap(), std::fs::read(ws.path(&format!("two/{f}"))).unwrap());
    }
    assert!(text(&ws.path("one/bumpy_0.txt")).contains("degenerate false"));
}

fn bump(x: f64, y: f64) -> f64 {
    let r2 = (x * x + (y - 0.1) * (y - 0.1)) / 0.25;
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

fn report_value(report: &str, key: &str) -> f64 {
    let line = report.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key} in {report}"));
    line[key.len()..].trim().parse().unwrap()
}

#[test]
fn decompose_outputs_and_reports() {
    let ws = Workspace::new();
    let grid = Grid::new(97, 1.0).unwrap();
    ws.write("zero.tfld", &write_tfld(&TensorField::zeros(2, grid)).unwrap());
    assert_eq!(code(&ws.run(&["decompose", "zero.tfld", "--out", "z"])), 0);
    for f in ["solenoidal", "potential_gradient", "potential"] {
        let field = read_tfld(&std::fs::read(ws.path(&format!("z/{f}.tfld"))).unwrap()).unwrap();
        assert!(field.planes().iter().flatten().all(|v| *v == 0.0), "{f}");
    }

    let psi = TensorField::scalar_from_fn(grid, bump);
    ws.write("sol.tfld", &write_tfld(&make_solenoidal(&psi).unwrap()).unwrap());
    assert_eq!(code(&ws.run(&["decompose", "sol.tfld", "--out", "s"])), 0);
    let report = text(&ws.path("s/decomposition.report.txt"));
    assert!(report_value(&report, "potential_fraction") < 1e-6, "{report}");

    // Mass near the edge of the grid cannot be decomposed without padding.
    let wall = TensorField::from_fn(2, grid, |_, _, o| o.copy_from_slice(&[1.0, 0.0, 1.0]));
    ws.write("wall.tfld", &write_tfld(&wall).unwrap());
    assert_eq!(code(&ws.run(&["decompose", "wall.tfld", "--out", "w"])), 4);
}

#[test]
fn decompose_worked_example_writes_comparison() {
    let ws = Workspace::new();
    ws.write("run.cfg", b"epsilon = 0.1\ngrid_nodes = 129\ns_count = 17\nphi_count = 8\nout = sim\n");
    assert_eq!(code(&ws.run(&["simulate", "--config", "run.cfg"])), 0);
    let out = ws.run(&["decompose", "sim/phantom.tfld", "--config", "run.cfg", "--out", "dec"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = text(&ws.path("dec/decomposition.report.txt"));
    assert!(report.contains("closed-form comparison"), "{report}");
    assert!(report_value(&report, "divergence_residual") < 1e-6);
    assert_eq!(code(&ws.run(&["render", "dec/solenoidal.tfld", "--out", "dec"])), 0);
    for label in ["11", "12", "22"] {
        assert!(ws.path(&format!("dec/solenoidal_{label}.pgm")).is_file());
    }
}

#[test]
fn multistatic_simulation_of_isotropic_disk() {
    let ws = Workspace::new();
    ws.write("disk.scene", b"background = 1\n");
    ws.write("run.cfg", b"mode = multistatic\nscene = disk.scene\nring = 90 100\ns_count = 33\nphi_count = 90\n");
    let out = ws.run(&["simulate", "--config", "run.cfg", "--threshold", "0.02", "--out", "m"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let g = read_tsino(&std::fs::read(ws.path("m/sinogram.tsino")).unwrap()).unwrap();
    assert!(g.coverage() > 0.9);
    let (mut num, mut den) = (0.0, 0.0);
    for p in 0..g.phi_count {
        for i in 0..g.s_count {
            if g.is_valid(g.index(i, p)) {
                let want = 2.0 * (1.0 - g.s(i).powi(2)).max(0.0).sqrt();
                num += (g.get(i, p) - want).powi(2);
                den += want * want;
            }
        }
    }
    assert!((num / den).sqrt() < 0.01, "relative error {}", (num / den).sqrt());
    assert!(text(&ws.path("m/sinogram.report.txt")).contains("flat_failures 0"));

    // The default threshold rejects the nearest isochrones (ratio 1/99).
    assert_eq!(code(&ws.run(&["simulate", "--config", "run.cfg", "--out", "strict"])), 0);
    let report = text(&ws.path("strict/sinogram.report.txt"));
    assert!(!report.contains("flat_failures 0"), "{report}");
}
