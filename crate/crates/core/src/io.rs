//! File formats: TSINO sinograms, TFLD tensor fields, `key = value`
//! configuration and scene files, and 16-bit PGM component images.
//!
//! Both binary formats start with a short ASCII header, one item per line,
//! followed by little-endian payload. Sample values are stored as `f32` and
//! must be finite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forward::{Constellation, Sinogram};
use crate::phantoms::{AngularResponse, Inclusion, MaskSpec, SceneSpec};
use crate::tensor::{DeltaAtom, Grid, SymTensor, TensorField};

/// Longest accepted header line, in bytes.
const MAX_HEADER_LINE: usize = 256;

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Splits `count` newline-terminated ASCII lines off the front of `data`.
fn header_lines(data: &[u8], count: usize) -> Result<(Vec<&str>, &[u8])> {
    let mut rest = data;
    let mut lines = Vec::with_capacity(count);
    for k in 0..count {
        let window = &rest[..rest.len().min(MAX_HEADER_LINE + 1)];
        let end = window.iter().position(|b| *b == b'\n').ok_or_else(|| parse_err(format!("header line {} is missing or too long", k + 1)))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| parse_err(format!("header line {} is not ASCII", k + 1)))?;
        lines.push(line);
        rest = &rest[end + 1..];
    }
    Ok((lines, rest))
}

/// Parses `keyword v1 v2 ...` with exactly `n` values.
fn fields<'a>(line: &'a str, keyword: &str, n: usize) -> Result<Vec<&'a str>> {
    let mut parts = line.split(' ');
    if parts.next() != Some(keyword) {
        return Err(parse_err(format!("expected `{keyword}` line, found {line:?}")));
    }
    let values: Vec<&str> = parts.collect();
    if values.len() != n || values.iter().any(|v| v.is_empty()) {
        return Err(parse_err(format!("`{keyword}` takes {n} value(s): {line:?}")));
    }
    Ok(values)
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.parse().map_err(|_| parse_err(format!("{what}: {s:?} is not a count")))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| parse_err(format!("{what}: {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(format!("{what} must be finite")));
    }
    Ok(v)
}

fn parse_flag(s: &str, what: &str) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(parse_err(format!("{what} must be 0 or 1, found {s:?}"))),
    }
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) -> Result<()> {
    for &v in values {
        let x = v as f32;
        if !x.is_finite() {
            return Err(Error::Domain(format!("value {v} is not representable as a finite f32")));
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

fn read_f32s(bytes: &[u8]) -> Result<Vec<f64>> {
    bytes
        .chunks_exact(4)
        .map(|c| {
            let x = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if x.is_finite() {
                Ok(x as f64)
            } else {
                Err(parse_err("non-finite sample"))
            }
        })
        .collect()
}

/// Payload size `a * b * width`, or a parse error on overflow.
fn payload_size(a: usize, b: usize, width: usize) -> Result<usize> {
    a.checked_mul(b).and_then(|n| n.checked_mul(width)).ok_or_else(|| parse_err("declared size overflows"))
}

/// Encodes a sinogram as TSINO version 1.
pub fn write_tsino(g: &Sinogram) -> Result<Vec<u8>> {
    if g.values.len() != g.s_count * g.phi_count {
        return Err(Error::Domain("sinogram value count does not match its grid".into()));
    }
    let mut out = format!(
        "TSINO 1\nrank {}\ns {} {:?} {:?}\nphi {}\nmask {}\n",
        g.rank,
        g.s_count,
        g.s_min,
        g.s_max,
        g.phi_count,
        u8::from(g.mask.is_some())
    )
    .into_bytes();
    push_f32s(&mut out, &g.values)?;
    if let Some(mask) = &g.mask {
        if mask.len() != g.values.len() {
            return Err(Error::Domain("mask length does not match the sinogram".into()));
        }
        out.extend(mask.iter().map(|&m| u8::from(m)));
    }
    Ok(out)
}

/// Decodes a TSINO version 1 file.
pub fn read_tsino(data: &[u8]) -> Result<Sinogram> {
    let (lines, payload) = header_lines(data, 5)?;
    if lines[0] != "TSINO 1" {
        return Err(parse_err("not a TSINO version 1 file"));
    }
    let rank = parse_usize(fields(lines[1], "rank", 1)?[0], "rank")?;
    let s = fields(lines[2], "s", 3)?;
    let s_count = parse_usize(s[0], "offset count")?;
    let (s_min, s_max) = (parse_f64(s[1], "s_min")?, parse_f64(s[2], "s_max")?);
    let phi_count = parse_usize(fields(lines[3], "phi", 1)?[0], "angle count")?;
    let masked = parse_flag(fields(lines[4], "mask", 1)?[0], "mask flag")?;
    let bins = payload_size(s_count, phi_count, 1)?;
    let expected = payload_size(bins, if masked { 5 } else { 4 }, 1)?;
    if payload.len() != expected {
        return Err(parse_err(format!("payload has {} bytes, header implies {expected}", payload.len())));
    }
    let mut g = Sinogram::zeros(rank, s_count, s_min, s_max, phi_count).map_err(|e| parse_err(e.to_string()))?;
    g.values = read_f32s(&payload[..4 * bins])?;
    if masked {
        g.mask = Some(
            payload[4 * bins..]
                .iter()
                .map(|b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(parse_err(format!("mask byte {b} is not 0 or 1"))),
                })
                .collect::<Result<_>>()?,
        );
    }
    Ok(g)
}

/// Encodes a tensor field as TFLD version 1.
pub fn write_tfld(f: &TensorField) -> Result<Vec<u8>> {
    let grid = f.grid();
    let mut out = format!(
        "TFLD 1\nrank {}\ngrid {} {}\nextent {:?}\natoms {}\n",
        f.rank(),
        grid.n,
        grid.n,
        grid.extent,
        f.atoms.len()
    )
    .into_bytes();
    for plane in f.planes() {
        push_f32s(&mut out, plane)?;
    }
    for atom in &f.atoms {
        if atom.coefficient.rank() != f.rank() {
            return Err(Error::Rank { expected: f.rank(), found: atom.coefficient.rank() });
        }
        for v in atom.location.iter().chain(atom.coefficient.components()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a TFLD version 1 file. Only square grids are accepted.
pub fn read_tfld(data: &[u8]) -> Result<TensorField> {
    let (lines, payload) = header_lines(data, 5)?;
    if lines[0] != "TFLD 1" {
        return Err(parse_err("not a TFLD version 1 file"));
    }
    let rank = parse_usize(fields(lines[1], "rank", 1)?[0], "rank")?;
    let dims = fields(lines[2], "grid", 2)?;
    let (nx, ny) = (parse_usize(dims[0], "nx")?, parse_usize(dims[1], "ny")?);
    if nx != ny {
        return Err(parse_err(format!("grid {nx}x{ny} is not square")));
    }
    let extent = parse_f64(fields(lines[3], "extent", 1)?[0], "extent")?;
    let atoms = parse_usize(fields(lines[4], "atoms", 1)?[0], "atom count")?;
    let comps = rank.checked_add(1).ok_or_else(|| parse_err("rank overflows"))?;
    let nodes = payload_size(nx, ny, 1)?;
    let plane_bytes = payload_size(nodes, comps, 4)?;
    let atom_bytes = payload_size(atoms, comps.checked_add(2).ok_or_else(|| parse_err("rank overflows"))?, 8)?;
    let expected = plane_bytes.checked_add(atom_bytes).ok_or_else(|| parse_err("declared size overflows"))?;
    if payload.len() != expected {
        return Err(parse_err(format!("payload has {} bytes, header implies {expected}", payload.len())));
    }
    let grid = Grid::new(nx, extent).map_err(|e| parse_err(e.to_string()))?;
    let planes: Vec<Vec<f64>> = payload[..plane_bytes].chunks_exact(4 * nodes).map(read_f32s).collect::<Result<_>>()?;
    let mut field = TensorField::from_planes(rank, grid, planes)?;
    for rec in payload[plane_bytes..].chunks_exact(8 * (comps + 2)) {
        let v: Vec<f64> = rec.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(parse_err("non-finite atom record"));
        }
        field.atoms.push(DeltaAtom { location: [v[0], v[1]], coefficient: SymTensor::new(rank, v[2..].to_vec())? });
    }
    Ok(field)
}

/// A parsed `key = value` file. Keys keep every occurrence, in order, with
/// the line they came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, Vec<(usize, String)>>,
}

impl KeyValues {
    /// Parses text with one `key = value` per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| parse_err(format!("line {}: expected `key = value`", k + 1)))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(parse_err(format!("line {}: invalid key {key:?}", k + 1)));
            }
            entries.entry(key.to_string()).or_default().push((k + 1, value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// The value of a key that may appear at most once.
    pub fn single(&self, key: &str) -> Result<Option<&str>> {
        match self.entries.get(key).map(Vec::as_slice) {
            None => Ok(None),
            Some([(_, v)]) => Ok(Some(v)),
            Some(all) => Err(parse_err(format!("`{key}` is given {} times (lines {:?})", all.len(), all.iter().map(|e| e.0).collect::<Vec<_>>()))),
        }
    }

    pub fn all(&self, key: &str) -> &[(usize, String)] {
        self.entries.get(key).map_or(&[], Vec::as_slice)
    }

    pub fn number(&self, key: &str) -> Result<Option<f64>> {
        self.single(key)?.map(|v| parse_f64(v, key)).transpose()
    }

    pub fn count(&self, key: &str) -> Result<Option<usize>> {
        self.single(key)?.map(|v| parse_usize(v, key)).transpose()
    }

    /// Fails on any key outside `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(parse_err(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn numbers(value: &str, what: &str) -> Result<Vec<f64>> {
    value.split_whitespace().map(|v| parse_f64(v, what)).collect()
}

fn mask_from(value: &str) -> Result<MaskSpec> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    match parts.as_slice() {
        ["full"] => Ok(MaskSpec::Full),
        ["half", axis] => Ok(MaskSpec::HalfCircle { axis: parse_f64(axis, "mask axis")? }),
        _ => Err(parse_err(format!("mask must be `full` or `half AXIS`, found {value:?}"))),
    }
}

fn mask_to_string(mask: MaskSpec) -> String {
    match mask {
        MaskSpec::Full => "full".into(),
        MaskSpec::HalfCircle { axis } => format!("half {axis:?}"),
    }
}

const SCENE_KEYS: &[&str] = &["background", "epsilon", "noise_sigma", "mask", "inclusion"];

/// Parses a scene file.
///
/// ```text
/// background = 1.0
/// epsilon = 0.05
/// noise_sigma = 0
/// mask = full                      # or: half AXIS
/// inclusion = X Y RADIUS AMPLITUDE isotropic
/// inclusion = X Y RADIUS AMPLITUDE corner SHARPNESS
/// inclusion = X Y RADIUS AMPLITUDE deviatoric ORIENTATION
/// ```
pub fn parse_scene(text: &str) -> Result<SceneSpec> {
    let kv = KeyValues::parse(text)?;
    kv.reject_unknown(SCENE_KEYS)?;
    let defaults = SceneSpec::default();
    let mut spec = SceneSpec {
        background: kv.number("background")?.unwrap_or(defaults.background),
        epsilon: kv.number("epsilon")?.unwrap_or(defaults.epsilon),
        noise_sigma: kv.number("noise_sigma")?.unwrap_or(defaults.noise_sigma),
        mask: kv.single("mask")?.map(mask_from).transpose()?.unwrap_or(defaults.mask),
        inclusions: Vec::new(),
    };
    for (line, value) in kv.all("inclusion") {
        let parts: Vec<&str> = value.split_whitespace().collect();
        let bad = || parse_err(format!("line {line}: inclusion needs `X Y RADIUS AMPLITUDE KIND [PARAM]`"));
        if parts.len() < 5 {
            return Err(bad());
        }
        let nums = numbers(&parts[..4].join(" "), "inclusion")?;
        let response = match (parts[4], &parts[5..]) {
            ("isotropic", []) => AngularResponse::Isotropic,
            ("corner", [s]) => AngularResponse::CornerReflector { sharpness: parse_f64(s, "sharpness")? },
            ("deviatoric", [o]) => AngularResponse::Deviatoric { orientation: parse_f64(o, "orientation")? },
            _ => return Err(bad()),
        };
        spec.inclusions.push(Inclusion { center: [nums[0], nums[1]], radius: nums[2], amplitude: nums[3], response });
    }
    spec.validate().map_err(|e| parse_err(e.to_string()))?;
    Ok(spec)
}

/// Writes a scene in the format read by [`parse_scene`].
pub fn scene_to_string(spec: &SceneSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "background = {:?}", spec.background);
    let _ = writeln!(out, "epsilon = {:?}", spec.epsilon);
    let _ = writeln!(out, "noise_sigma = {:?}", spec.noise_sigma);
    let _ = writeln!(out, "mask = {}", mask_to_string(spec.mask));
    for inc in &spec.inclusions {
        let kind = match inc.response {
            AngularResponse::Isotropic => "isotropic".to_string(),
            AngularResponse::CornerReflector { sharpness } => format!("corner {sharpness:?}"),
            AngularResponse::Deviatoric { orientation } => format!("deviatoric {orientation:?}"),
        };
        let _ = writeln!(out, "inclusion = {:?} {:?} {:?} {:?} {kind}", inc.center[0], inc.center[1], inc.radius, inc.amplitude);
    }
    out
}

/// What the simulator images.
#[derive(Debug, Clone, PartialEq)]
pub enum PhantomSource {
    /// A scene file, resolved relative to the configuration file.
    Scene(PathBuf),
    /// The mollified deviatoric delta at the origin.
    DeviatoricDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Normal,
    Multistatic,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Mode::Normal),
            "multistatic" => Ok(Mode::Multistatic),
            _ => Err(parse_err(format!("mode must be `normal` or `multistatic`, found {s:?}"))),
        }
    }
}

/// Transmitter/receiver layout for multistatic runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Antennas {
    /// Explicit `(transmitter, receiver)` pairs.
    Pairs(Vec<([f64; 2], [f64; 2])>),
    /// `count` co-located pairs evenly spaced on a circle of `radius`.
    MonostaticRing { count: usize, radius: f64 },
}

impl Antennas {
    pub fn pairs(&self) -> Vec<([f64; 2], [f64; 2])> {
        match self {
            Antennas::Pairs(p) => p.clone(),
            Antennas::MonostaticRing { count, radius } => (0..*count)
                .map(|k| {
                    let a = std::f64::consts::TAU * k as f64 / *count as f64;
                    let p = [radius * a.cos(), radius * a.sin()];
                    (p, p)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationChoice {
    Threshold(f64),
    Terms(usize),
}

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub phantom: PhantomSource,
    pub epsilon: f64,
    /// Nodes per axis of the simulation grid.
    pub grid_nodes: usize,
    pub s_count: usize,
    pub phi_count: usize,
    pub n_rad: usize,
    pub k_ang: usize,
    pub truncation: TruncationChoice,
    pub output_nodes: usize,
    /// Overrides the scene's noise level when set.
    pub noise_sigma: Option<f64>,
    pub seed: u64,
    /// Overrides the scene's mask when set.
    pub mask: Option<MaskSpec>,
    pub antennas: Antennas,
    pub wave_speed: f64,
    pub scene_radius: f64,
    /// Travel times sampled per pair.
    pub times: Vec<f64>,
    pub bistatic_angle: f64,
    pub bistatic_tolerance: f64,
    pub flat_threshold: f64,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Normal,
            phantom: PhantomSource::DeviatoricDelta,
            epsilon: 0.05,
            grid_nodes: 257,
            s_count: 257,
            phi_count: 360,
            n_rad: 50,
            k_ang: 40,
            truncation: TruncationChoice::Threshold(1e-6),
            output_nodes: 129,
            noise_sigma: None,
            seed: 0,
            mask: None,
            antennas: Antennas::Pairs(Vec::new()),
            wave_speed: 1.0,
            scene_radius: 1.0,
            times: Vec::new(),
            bistatic_angle: 0.0,
            bistatic_tolerance: 1e-6,
            flat_threshold: crate::geometry::FLAT_VALIDITY_THRESHOLD,
            out_dir: None,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "mode",
    "phantom",
    "scene",
    "epsilon",
    "grid_nodes",
    "s_count",
    "phi_count",
    "n_rad",
    "k_ang",
    "threshold",
    "terms",
    "output_nodes",
    "noise_sigma",
    "seed",
    "mask",
    "pair",
    "ring",
    "wave_speed",
    "scene_radius",
    "times",
    "bistatic_angle",
    "bistatic_tolerance",
    "flat_threshold",
    "out",
];

impl RunConfig {
    /// Parses configuration text. Relative paths resolve against `base`;
    /// referenced files are not opened.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(CONFIG_KEYS)?;
        let d = RunConfig::default();
        let phantom = match (kv.single("phantom")?, kv.single("scene")?) {
            (None | Some("scene"), Some(path)) => PhantomSource::Scene(base.join(path)),
            (Some("scene"), None) => return Err(parse_err("`phantom = scene` needs a `scene` path")),
            (None | Some("deviatoric_delta"), None) => PhantomSource::DeviatoricDelta,
            (Some("deviatoric_delta"), Some(_)) => return Err(parse_err("`scene` is only used with `phantom = scene`")),
            (Some(other), _) => return Err(parse_err(format!("unknown phantom {other:?}"))),
        };
        let truncation = match (kv.number("threshold")?, kv.count("terms")?) {
            (Some(_), Some(_)) => return Err(parse_err("give either `threshold` or `terms`, not both")),
            (Some(t), None) => TruncationChoice::Threshold(t),
            (None, Some(m)) => TruncationChoice::Terms(m),
            (None, None) => d.truncation,
        };
        let ring = kv.single("ring")?;
        let pairs = kv.all("pair");
        let antennas = match (ring, pairs.is_empty()) {
            (Some(_), false) => return Err(parse_err("give either `ring` or `pair` lines, not both")),
            (Some(v), true) => {
                let parts: Vec<&str> = v.split_whitespace().collect();
                match parts.as_slice() {
                    [count, radius] => Antennas::MonostaticRing { count: parse_usize(count, "ring count")?, radius: parse_f64(radius, "ring radius")? },
                    _ => return Err(parse_err("`ring` takes `COUNT RADIUS`")),
                }
            }
            (None, _) => Antennas::Pairs(
                pairs
                    .iter()
                    .map(|(line, v)| match numbers(v, "pair")?.as_slice() {
                        [a, b, c, e] => Ok(([*a, *b], [*c, *e])),
                        _ => Err(parse_err(format!("line {line}: `pair` takes `TX_X TX_Y RX_X RX_Y`"))),
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        let times = match kv.single("times")? {
            None => d.times.clone(),
            Some(v) => {
                let parts: Vec<&str> = v.split_whitespace().collect();
                match parts.as_slice() {
                    [a, b, n] => {
                        let (a, b, n) = (parse_f64(a, "times start")?, parse_f64(b, "times stop")?, parse_usize(n, "times count")?);
                        if n < 2 || n > 1 << 20 || !(b > a) {
                            return Err(parse_err("`times` needs START < STOP and 2 to 2^20 samples"));
                        }
                        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
                    }
                    _ => return Err(parse_err("`times` takes `START STOP COUNT`")),
                }
            }
        };
        let cfg = RunConfig {
            mode: kv.single("mode")?.map(str::parse).transpose()?.unwrap_or(d.mode),
            phantom,
            epsilon: kv.number("epsilon")?.unwrap_or(d.epsilon),
            grid_nodes: kv.count("grid_nodes")?.unwrap_or(d.grid_nodes),
            s_count: kv.count("s_count")?.unwrap_or(d.s_count),
            phi_count: kv.count("phi_count")?.unwrap_or(d.phi_count),
            n_rad: kv.count("n_rad")?.unwrap_or(d.n_rad),
            k_ang: kv.count("k_ang")?.unwrap_or(d.k_ang),
            truncation,
            output_nodes: kv.count("output_nodes")?.unwrap_or(d.output_nodes),
            noise_sigma: kv.number("noise_sigma")?,
            seed: kv.single("seed")?.map(|v| v.parse().map_err(|_| parse_err(format!("seed: {v:?} is not an unsigned integer")))).transpose()?.unwrap_or(d.seed),
            mask: kv.single("mask")?.map(mask_from).transpose()?,
            antennas,
            wave_speed: kv.number("wave_speed")?.unwrap_or(d.wave_speed),
            scene_radius: kv.number("scene_radius")?.unwrap_or(d.scene_radius),
            times,
            bistatic_angle: kv.number("bistatic_angle")?.unwrap_or(d.bistatic_angle),
            bistatic_tolerance: kv.number("bistatic_tolerance")?.unwrap_or(d.bistatic_tolerance),
            flat_threshold: kv.number("flat_threshold")?.unwrap_or(d.flat_threshold),
            out_dir: kv.single("out")?.map(|p| base.join(p)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration file and checks that referenced files exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base)?;
        if let PhantomSource::Scene(p) = &cfg.phantom {
            if !p.is_file() {
                return Err(parse_err(format!("scene file {} does not exist", p.display())));
            }
        }
        Ok(cfg)
    }

    /// Range checks against the preconditions of the operations a run uses.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(parse_err(m));
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.grid_nodes < 17 || self.grid_nodes > 8193 {
            return fail(format!("grid_nodes must be in 17..=8193, got {}", self.grid_nodes));
        }
        if self.output_nodes < 2 || self.output_nodes > 8193 {
            return fail(format!("output_nodes must be in 2..=8193, got {}", self.output_nodes));
        }
        if self.s_count < 2 || self.phi_count < 1 || self.s_count > 1 << 16 || self.phi_count > 1 << 16 {
            return fail(format!("sinogram size {}x{} is out of range", self.s_count, self.phi_count));
        }
        if self.k_ang >= self.n_rad && !(self.n_rad == 0 && self.k_ang == 0) {
            return fail(format!("k_ang ({}) must be below n_rad ({})", self.k_ang, self.n_rad));
        }
        if self.n_rad > 400 {
            return fail(format!("n_rad {} is out of range", self.n_rad));
        }
        match self.truncation {
            TruncationChoice::Threshold(t) if !(t > 0.0 && t < 1.0) => return fail(format!("threshold must be in (0, 1), got {t}")),
            TruncationChoice::Terms(0) => return fail("terms must be at least 1".into()),
            _ => {}
        }
        if self.noise_sigma.is_some_and(|s| !(s >= 0.0)) {
            return fail(format!("noise_sigma must be non-negative, got {:?}", self.noise_sigma));
        }
        if !(self.wave_speed > 0.0 && self.scene_radius > 0.0) {
            return fail("wave_speed and scene_radius must be positive".into());
        }
        if let Antennas::MonostaticRing { count, radius } = self.antennas {
            if count == 0 || count > 1 << 16 || !(radius > 1.0) {
                return fail("`ring` needs 1 to 65536 antennas outside the scene (radius > 1, in scene radii)".into());
            }
        }
        if !(self.bistatic_tolerance >= 0.0 && self.flat_threshold > 0.0) {
            return fail("bistatic_tolerance must be non-negative and flat_threshold positive".into());
        }
        Ok(())
    }

    /// The configured constellation. Without explicit `times`, `s_count`
    /// samples span every travel time whose isochrone can reach the scene.
    pub fn constellation(&self) -> Result<Constellation> {
        let pairs = self.antenna_pairs();
        if pairs.is_empty() {
            return Err(parse_err("the constellation is empty; add `ring` or `pair` lines"));
        }
        let times = if self.times.is_empty() {
            let r = self.scene_radius;
            let norm = |p: [f64; 2]| p[0].hypot(p[1]);
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for (tx, rx) in &pairs {
                let focal = (tx[0] - rx[0]).hypot(tx[1] - rx[1]);
                lo = lo.min(focal.max(norm(*tx) + norm(*rx) - 2.0 * r));
                hi = hi.max(norm(*tx) + norm(*rx) + 2.0 * r);
            }
            let n = self.s_count;
            (0..n).map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64) / self.wave_speed).collect()
        } else {
            self.times.clone()
        };
        Ok(Constellation { pairs, wave_speed: self.wave_speed, scene_radius: self.scene_radius, times })
    }

    /// Antenna pairs in absolute units; ring radii are given in scene radii.
    pub fn antenna_pairs(&self) -> Vec<([f64; 2], [f64; 2])> {
        match self.antennas {
            Antennas::MonostaticRing { count, radius } => {
                Antennas::MonostaticRing { count, radius: radius * self.scene_radius }.pairs()
            }
            ref explicit => explicit.pairs(),
        }
    }
}

/// A 16-bit grayscale image of one component and its sidecar text.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedComponent {
    pub pgm: Vec<u8>,
    pub sidecar: String,
    pub min: f64,
    pub max: f64,
    /// Set when the component is constant, in which case every pixel is mid-gray.
    pub degenerate: bool,
}

/// Mid-gray pixel used for constant images.
pub const MID_GRAY: u16 = 32768;

/// Maps `[min, max]` linearly onto `0..=65535` and writes binary PGM (P5)
/// with the top image row at the largest `y`.
pub fn render_plane(plane: &[f64], grid: Grid, label: &str) -> Result<RenderedComponent> {
    if plane.len() != grid.len() {
        return Err(Error::Domain("plane does not match grid".into()));
    }
    if plane.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("component {label} has non-finite values")));
    }
    let min = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let max = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = !(max > min);
    let n = grid.n;
    let mut pgm = format!("P5\n{n} {n}\n65535\n").into_bytes();
    for j in (0..n).rev() {
        for i in 0..n {
            let v = plane[grid.index(i, j)];
            let px = if degenerate { MID_GRAY } else { ((v - min) / (max - min) * 65535.0).round().clamp(0.0, 65535.0) as u16 };
            pgm.extend_from_slice(&px.to_be_bytes());
        }
    }
    let sidecar = format!(
        "component {label}\nmin {min:?}\nmax {max:?}\ndegenerate {degenerate}\ngrid {n} {n}\nextent {:?}\n",
        grid.extent
    );
    Ok(RenderedComponent { pgm, sidecar, min, max, degenerate })
}

/// Index labels of the stored components: `11`, `12`, `22` for rank 2.
pub fn component_labels(rank: usize) -> Vec<String> {
    (0..=rank).map(|j| if rank == 0 { "0".to_string() } else { format!("{}{}", "1".repeat(rank - j), "2".repeat(j)) }).collect()
}

/// Reads a PGM written by [`render_plane`] back into pixel values, top row first.
pub fn read_pgm16(data: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let (lines, payload) = header_lines(data, 3)?;
    if lines[0] != "P5" || lines[2] != "65535" {
        return Err(parse_err("not a 16-bit binary PGM"));
    }
    let dims: Vec<&str> = lines[1].split(' ').collect();
    let [w, h] = dims.as_slice() else { return Err(parse_err("bad PGM size line")) };
    let (w, h) = (parse_usize(w, "width")?, parse_usize(h, "height")?);
    if payload.len() != payload_size(w, h, 2)? {
        return Err(parse_err("PGM payload size does not match its header"));
    }
    Ok((w, h, payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}
