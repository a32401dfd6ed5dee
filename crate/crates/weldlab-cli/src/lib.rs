//! Command-line driver: key-value configuration, artifact naming and exit codes.
//!
//! Every command resolves its parameters (config file, then flags, then
//! defaults), writes its artifacts as `<command>-<seed>-<hash>.<ext>` into the
//! output directory and finishes with a `.manifest.json` echoing the resolved
//! parameters. Exit codes: 0 success, 2 configuration error, 3 numerical
//! abort (a `.diag.txt` file is written), 1 I/O failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};
use weldlab::conformal::{BoundaryKind, DomainId, GridSpec};
use weldlab::gff::{sample_dirichlet_gff, sample_free_gff, Normalization};
use weldlab::io;
use weldlab::liouville::{sample_liouville, Insertion, LiouvilleSpec, Loc};
use weldlab::qsurface::{
    sample_disk2_thick, sample_m11, sample_triangle, ChainMode, LengthFilter, ThinChainConfig, ThinChainSampler,
    TriangleSampler,
};
use weldlab::sle::{self, Engine, ExtractMode, ForcePoint, SleParams, TraceMode};
use weldlab::welding::{self, Report, W2wConfig, ZipperConfig};
use weldlab::C64;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "WELDLAB_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SampleGff,
    SampleLiouville,
    SampleSurface,
    Drive,
    Trace,
    Extract,
    Weld,
    ExperimentW2w,
    ExperimentZipper,
    Stats,
}

const COMMANDS: [Command; 10] = [
    Command::SampleGff,
    Command::SampleLiouville,
    Command::SampleSurface,
    Command::Drive,
    Command::Trace,
    Command::Extract,
    Command::Weld,
    Command::ExperimentW2w,
    Command::ExperimentZipper,
    Command::Stats,
];

impl Command {
    pub fn tag(&self) -> &'static str {
        match self {
            Command::SampleGff => "sample-gff",
            Command::SampleLiouville => "sample-liouville",
            Command::SampleSurface => "sample-surface",
            Command::Drive => "drive",
            Command::Trace => "trace",
            Command::Extract => "extract",
            Command::Weld => "weld",
            Command::ExperimentW2w => "experiment-w2w",
            Command::ExperimentZipper => "experiment-zipper",
            Command::Stats => "stats",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        COMMANDS.into_iter().find(|c| c.tag() == s)
    }

    /// Keys with their defaults; `None` marks a required key.
    fn keys(&self) -> &'static [(&'static str, Option<&'static str>)] {
        match self {
            Command::SampleGff => &[("grid", Some("h:65:33:2:2")), ("boundary", Some("free")), ("seed", None)],
            Command::SampleLiouville => &[
                ("gamma", None),
                ("grid", Some("h:65:33:2:2")),
                ("insertions", Some("")),
                ("c_window", Some("-5,5")),
                ("seed", None),
            ],
            Command::SampleSurface => &[
                ("gamma", None),
                ("kind", None),
                ("w", None),
                ("w_prime", Some("")),
                ("horizon", Some("1")),
                ("grid", Some("")),
                ("seed", None),
            ],
            Command::Drive => &[
                ("kappa", None),
                ("engine", Some("chordal")),
                ("rho", Some("")),
                ("mu", Some("0")),
                ("horizon", None),
                ("dt", Some("1e-3")),
                ("seed", None),
            ],
            Command::Trace => &[("input", None), ("stride", Some("1")), ("mode", Some("tilted")), ("seed", Some("0"))],
            Command::Extract => &[("input", None), ("mode", Some("tilted")), ("seed", Some("0"))],
            Command::Weld => &[
                ("gamma", None),
                ("w", None),
                ("grid", Some("s:181:91:-3:3")),
                ("n_steps", Some("512")),
                ("delta_weld", Some("")),
                ("max_proposals", Some("2000")),
                ("seed", None),
            ],
            Command::ExperimentW2w => &[
                ("gamma", None),
                ("w", None),
                ("n", Some("200")),
                ("grid", Some("")),
                ("h_grid", Some("")),
                ("n_steps", Some("")),
                ("seed", None),
            ],
            Command::ExperimentZipper => &[
                ("gamma", None),
                ("beta", Some("")),
                ("n", Some("5000")),
                ("grid", Some("")),
                ("n_steps", Some("")),
                ("seed", None),
            ],
            Command::Stats => &[("inputs", None), ("seed", Some("0"))],
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing configuration (exit 2).
    Config(String),
    /// A library failure.
    Lib(weldlab::Error),
}

impl From<weldlab::Error> for CliError {
    fn from(e: weldlab::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(weldlab::Error::Io(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn cfg_err(m: impl Into<String>) -> CliError {
    CliError::Config(m.into())
}

/// A command with its fully resolved parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub command: Command,
    pub params: BTreeMap<String, String>,
    pub out: PathBuf,
}

fn canonical_key(k: &str) -> String {
    let k = k.trim().trim_start_matches("--");
    match k {
        "T" | "t" => "horizon".into(),
        _ => k.to_lowercase().replace('-', "_"),
    }
}

/// `key = value` or `key value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .or_else(|| line.split_once(char::is_whitespace))
            .ok_or_else(|| cfg_err(format!("line {}: expected 'key = value'", n + 1)))?;
        out.insert(canonical_key(k), v.trim().to_string());
    }
    Ok(out)
}

/// Resolves `args` (without the program name); `default_out` is used when
/// neither `--out` nor the config names an output directory.
pub fn parse_args(args: &[String], default_out: Option<PathBuf>) -> CliResult<Config> {
    let (first, rest) = args.split_first().ok_or_else(|| cfg_err("missing command"))?;
    let command = Command::parse(first).ok_or_else(|| cfg_err(format!("unknown command '{first}'")))?;
    let mut flags = BTreeMap::new();
    let mut it = rest.iter();
    while let Some(a) = it.next() {
        if !a.starts_with("--") {
            return Err(cfg_err(format!("unexpected argument '{a}'")));
        }
        let (k, v) = match a.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => (a.clone(), it.next().ok_or_else(|| cfg_err(format!("flag '{a}' needs a value")))?.clone()),
        };
        flags.insert(canonical_key(&k), v);
    }
    let mut params = match flags.remove("config") {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| cfg_err(format!("cannot read config '{p}': {e}")))?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    params.extend(flags);
    let out = match params.remove("out") {
        Some(o) => PathBuf::from(o),
        None => default_out.unwrap_or_else(|| PathBuf::from(".")),
    };
    let keys = command.keys();
    if let Some(k) = params.keys().find(|k| !keys.iter().any(|(n, _)| n == k)) {
        return Err(cfg_err(format!("unknown key '{k}' for {}", command.tag())));
    }
    for (k, d) in keys {
        if !params.contains_key(*k) {
            match d {
                Some(v) => {
                    params.insert(k.to_string(), v.to_string());
                }
                None => return Err(cfg_err(format!("missing required key '{k}' for {}", command.tag()))),
            }
        }
    }
    let cfg = Config { command, params, out };
    cfg.validate()?;
    Ok(cfg)
}

impl Config {
    fn get(&self, k: &str) -> &str {
        self.params.get(k).map(|s| s.as_str()).unwrap_or("")
    }

    fn f64(&self, k: &str) -> CliResult<f64> {
        let v = self.get(k);
        v.parse().map_err(|_| cfg_err(format!("key '{k}': '{v}' is not a number")))
    }

    fn opt_f64(&self, k: &str) -> CliResult<Option<f64>> {
        if self.get(k).is_empty() {
            Ok(None)
        } else {
            self.f64(k).map(Some)
        }
    }

    fn usize(&self, k: &str) -> CliResult<usize> {
        let v = self.get(k);
        v.parse().map_err(|_| cfg_err(format!("key '{k}': '{v}' is not a nonnegative integer")))
    }

    fn opt_usize(&self, k: &str) -> CliResult<Option<usize>> {
        if self.get(k).is_empty() {
            Ok(None)
        } else {
            self.usize(k).map(Some)
        }
    }

    pub fn seed(&self) -> CliResult<u64> {
        let v = self.get("seed");
        v.parse().map_err(|_| cfg_err(format!("key 'seed': '{v}' is not a 64-bit unsigned integer")))
    }

    fn validate(&self) -> CliResult<()> {
        self.seed()?;
        if self.params.contains_key("gamma") {
            let g = self.f64("gamma")?;
            if !(g > 0.0 && g < 2.0) {
                return Err(cfg_err(format!("key 'gamma': {g} is outside (0, 2)")));
            }
        }
        Ok(())
    }

    /// First 12 hex digits of SHA-256 over the sorted `key=value` lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.tag().as_bytes());
        h.update(b"\n");
        for (k, v) in &self.params {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn stem(&self) -> CliResult<String> {
        Ok(format!("{}-{}-{}", self.command.tag(), self.seed()?, self.hash()))
    }
}

/// `h:nx:ny:half_width:height`, `s:nx:ny:x0:x1` or `c:nx:ny:x0:x1:y0:y1`
/// (free boundary), optionally overridden to Dirichlet by the caller.
pub fn parse_grid(s: &str) -> CliResult<GridSpec> {
    let bad = || cfg_err(format!("bad grid '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    let n = |i: usize| parts.get(i).and_then(|v| v.parse::<usize>().ok()).ok_or_else(bad);
    let x = |i: usize| parts.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad);
    let g = match parts.first().copied() {
        Some("h") if parts.len() == 5 => GridSpec::h_box(n(1)?, n(2)?, x(3)?, x(4)?),
        Some("s") if parts.len() == 5 => GridSpec::strip(n(1)?, n(2)?, x(3)?, x(4)?),
        Some("c") if parts.len() == 7 => GridSpec::uniform(
            DomainId::C,
            n(1)?,
            n(2)?,
            weldlab::conformal::BBox::new(x(3)?, x(4)?, x(5)?, x(6)?),
            BoundaryKind::Free,
        ),
        _ => return Err(bad()),
    };
    g.map_err(|e| cfg_err(format!("grid '{s}': {e}")))
}

fn parse_loc(s: &str) -> CliResult<Loc> {
    Ok(match s {
        "inf" => Loc::Inf,
        "+inf" => Loc::PosInf,
        "-inf" => Loc::NegInf,
        _ => Loc::At(C64::new(s.parse().map_err(|_| cfg_err(format!("bad location '{s}'")))?, 0.0)),
    })
}

/// `b:β:x` (boundary, `x` may be `inf`, `+inf`, `-inf`), `b:β:x:y` and
/// `a:α:x:y` (bulk), separated by `;`.
pub fn parse_insertions(s: &str) -> CliResult<Vec<Insertion>> {
    let mut out = Vec::new();
    for item in s.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let p: Vec<&str> = item.split(':').collect();
        let num = |i: usize| -> CliResult<f64> {
            p.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| cfg_err(format!("bad insertion '{item}'")))
        };
        out.push(match (p[0], p.len()) {
            ("b", 3) => Insertion::boundary_at(num(1)?, parse_loc(p[2])?),
            ("b", 4) => Insertion::boundary_at(num(1)?, Loc::At(C64::new(num(2)?, num(3)?))),
            ("a", 4) => Insertion::bulk(num(1)?, C64::new(num(2)?, num(3)?)),
            _ => return Err(cfg_err(format!("bad insertion '{item}'"))),
        });
    }
    Ok(out)
}

fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',').map(|v| v.trim().parse().map_err(|_| cfg_err(format!("bad number list '{s}'")))).collect()
}

struct Outputs<'a> {
    dir: &'a Path,
    stem: String,
    files: Vec<PathBuf>,
    summary: BTreeMap<String, serde_json::Value>,
}

impl Outputs<'_> {
    fn path(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("{}.{ext}", self.stem))
    }

    fn write(&mut self, ext: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.path(ext);
        std::fs::write(&p, bytes)?;
        self.files.push(p);
        Ok(())
    }

    fn write_with(&mut self, ext: &str, f: impl FnOnce(&mut Vec<u8>) -> weldlab::Result<()>) -> CliResult<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(ext, &buf)
    }

    fn note(&mut self, k: &str, v: serde_json::Value) {
        self.summary.insert(k.into(), v);
    }
}

fn json_bytes(v: &impl serde::Serialize) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Lib(weldlab::Error::Format(e.to_string())))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn report_table(r: &Report) -> String {
    let mut s = format!("experiment {}\n", r.experiment);
    for (k, v) in &r.params {
        let _ = writeln!(s, "param {k} {v}");
    }
    for t in &r.tests {
        let _ = writeln!(s, "{}", t.line());
    }
    for (k, v) in &r.counters {
        let _ = writeln!(s, "counter {k} {v}");
    }
    let _ = writeln!(s, "overall {}", if r.passed() { "PASS" } else { "FAIL" });
    s
}

fn write_report(o: &mut Outputs, r: &Report) -> CliResult<()> {
    o.write("report.json", &json_bytes(r)?)?;
    o.write("report.txt", report_table(r).as_bytes())?;
    o.note("passed", json!(r.passed()));
    Ok(())
}

fn execute(cfg: &Config, o: &mut Outputs) -> CliResult<()> {
    let seed = cfg.seed()?;
    match cfg.command {
        Command::SampleGff => {
            let g = parse_grid(cfg.get("grid"))?;
            let f = match cfg.get("boundary") {
                "free" => {
                    let n = Normalization::for_domain(g.domain)
                        .ok_or_else(|| cfg_err(format!("no free-field anchor on {}", g.domain.tag())))?;
                    sample_free_gff(&g, n, seed)?
                }
                "dirichlet" => {
                    let g = GridSpec::uniform(g.domain, g.nx, g.ny, g.bbox, BoundaryKind::Dirichlet)?;
                    sample_dirichlet_gff(&g, seed)?
                }
                b => return Err(cfg_err(format!("key 'boundary': unknown value '{b}' (free|dirichlet)"))),
            };
            o.write_with("field", |w| io::write_field(&f, w))?;
        }
        Command::SampleLiouville => {
            let g = parse_grid(cfg.get("grid"))?;
            let win = parse_list(cfg.get("c_window"))?;
            if win.len() != 2 {
                return Err(cfg_err("key 'c_window' needs 'lo,hi'"));
            }
            let spec = LiouvilleSpec::new(g.domain, parse_insertions(cfg.get("insertions"))?, cfg.f64("gamma")?)?
                .with_window(win[0], win[1])?;
            let f = sample_liouville(&spec, &g, seed)?;
            o.note("log_weight", json!(f.log_weight));
            o.write_with("field", |w| io::write_field(&f, w))?;
        }
        Command::SampleSurface => {
            let gamma = cfg.f64("gamma")?;
            let grid = |default: &str| -> CliResult<GridSpec> {
                parse_grid(if cfg.get("grid").is_empty() { default } else { cfg.get("grid") })
            };
            let s = match cfg.get("kind") {
                "disk2" => sample_disk2_thick(cfg.f64("w")?, gamma, &grid("s:129:33:-8:8")?, seed)?,
                "thin" => {
                    let mut c = ThinChainConfig::new(cfg.f64("w")?, gamma, ChainMode::Disk, cfg.f64("horizon")?)?;
                    if !cfg.get("grid").is_empty() {
                        c.bead_grid = grid("")?;
                    }
                    ThinChainSampler::new(c, seed)?.sample(seed)?
                }
                "triangle" => {
                    let ws = parse_list(cfg.get("w"))?;
                    let ws: [f64; 3] = ws.try_into().map_err(|_| cfg_err("key 'w' needs 'w1,w2,w3' for a triangle"))?;
                    sample_triangle(ws, gamma, &grid("s:129:65:-4:4")?, seed)?
                }
                "m11" => {
                    let wp = cfg.opt_f64("w_prime")?.ok_or_else(|| cfg_err("missing required key 'w_prime' for kind m11"))?;
                    sample_m11(cfg.f64("w")?, wp, gamma, &grid("h:129:65:2:2")?, seed)?
                }
                k => return Err(cfg_err(format!("key 'kind': unknown value '{k}' (disk2|thin|triangle|m11)"))),
            };
            o.note("arc_lengths", json!(s.arc_lengths));
            o.note("log_weight", json!(s.log_weight));
            let files = io::save_surface_bundle(&s, o.dir, &o.stem)?;
            o.files.extend(files);
        }
        Command::Drive => {
            let engine = Engine::parse(cfg.get("engine"))?;
            let mut p = SleParams::chordal(cfg.f64("kappa")?, cfg.f64("horizon")?, cfg.f64("dt")?, seed);
            if engine == Engine::Radial {
                p = SleParams::radial(p.kappa, p.horizon, p.dt, seed);
            }
            for item in cfg.get("rho").split(';').map(str::trim).filter(|s| !s.is_empty()) {
                p.forces.push(ForcePoint::parse(item)?);
            }
            p = p.with_mu(cfg.f64("mu")?);
            let rec = sle::drive(engine, &p)?;
            o.note("stop", json!(rec.stop.tag()));
            o.note("stop_time", json!(rec.stop_time));
            o.write_with("driving", |w| io::write_driving(&rec, w))?;
        }
        Command::Trace => {
            let rec = io::read_driving(std::fs::File::open(cfg.get("input"))?)?;
            let mode = match cfg.get("mode") {
                "tilted" => TraceMode::Tilted,
                "vertical" => TraceMode::Vertical,
                m => return Err(cfg_err(format!("key 'mode': unknown value '{m}' (tilted|vertical)"))),
            };
            let c = sle::trace(&rec, cfg.usize("stride")?, mode)?;
            o.note("points", json!(c.len()));
            o.write_with("curve", |w| io::write_curve(&c, w))?;
        }
        Command::Extract => {
            let c = io::read_curve(std::fs::File::open(cfg.get("input"))?)?;
            let mode = match cfg.get("mode") {
                "tilted" => ExtractMode::Tilted,
                "vertical" => ExtractMode::Vertical,
                m => return Err(cfg_err(format!("key 'mode': unknown value '{m}' (tilted|vertical)"))),
            };
            let rec = sle::extract_driving_with(&c, mode)?;
            o.write_with("driving", |w| io::write_driving(&rec, w))?;
        }
        Command::Weld => {
            let (gamma, w) = (cfg.f64("gamma")?, cfg.f64("w")?);
            let grid = parse_grid(cfg.get("grid"))?;
            let delta = cfg.opt_f64("delta_weld")?.unwrap_or_else(|| welding::delta_weld(&grid));
            let tri = TriangleSampler::new([w, 2.0, w], gamma, &grid, None)?;
            let mut filter = LengthFilter::new(
                |s| {
                    let q = tri.sample(s)?;
                    let (a, b) = (q.arc_lengths[1], q.arc_lengths[2]);
                    Ok((q, (a - b).abs() / a.max(b)))
                },
                0.0,
                delta,
                seed,
            )?;
            filter.max_proposals = cfg.usize("max_proposals")?;
            let q = filter.next_kept()?;
            o.note("proposals", json!(filter.proposals));
            let (weld, res) = welding::self_weld_triangle(&q, 2, cfg.usize("n_steps")?, delta)?;
            o.note("length_mismatch", json!(res.length_mismatch));
            o.note("residual", json!(res.residual));
            o.note("log_weight", json!(res.log_weight));
            o.note("refinements", json!(weld.refinements));
            o.write_with("curve", |wr| io::write_curve(&res.interface, wr))?;
        }
        Command::ExperimentW2w => {
            let mut c = W2wConfig::desk(cfg.f64("w")?, cfg.f64("gamma")?, cfg.usize("n")?, seed)?;
            if !cfg.get("grid").is_empty() {
                c.strip_grid = parse_grid(cfg.get("grid"))?;
            }
            if !cfg.get("h_grid").is_empty() {
                c.h_grid = parse_grid(cfg.get("h_grid"))?;
            }
            if let Some(n) = cfg.opt_usize("n_steps")? {
                c.n_steps = n;
            }
            write_report(o, &welding::experiment_w2w(&c)?)?;
        }
        Command::ExperimentZipper => {
            let gamma = cfg.f64("gamma")?;
            let beta = cfg.opt_f64("beta")?.unwrap_or(gamma);
            let mut c = ZipperConfig::desk(gamma, beta, cfg.usize("n")?, seed)?;
            if !cfg.get("grid").is_empty() {
                c.grid = parse_grid(cfg.get("grid"))?;
            }
            if let Some(n) = cfg.opt_usize("n_steps")? {
                c.n_steps = n;
            }
            write_report(o, &welding::experiment_zipper(&c)?)?;
        }
        Command::Stats => {
            let mut merged: Option<Report> = None;
            for p in cfg.get("inputs").split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let text = std::fs::read_to_string(p)?;
                let r: Report = serde_json::from_str(&text)
                    .map_err(|e| CliError::Lib(weldlab::Error::Format(format!("{p}: {e}"))))?;
                merged = Some(match merged {
                    None => r,
                    Some(m) => m.merge(&r)?,
                });
            }
            let r = merged.ok_or_else(|| cfg_err("key 'inputs' names no report"))?;
            write_report(o, &r)?;
        }
    }
    Ok(())
}

fn manifest(cfg: &Config, o: &Outputs, status: &str) -> CliResult<Vec<u8>> {
    let names: Vec<String> =
        o.files.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect();
    json_bytes(&json!({
        "command": cfg.command.tag(),
        "params": cfg.params,
        "out": cfg.out.to_string_lossy(),
        "hash": cfg.hash(),
        "status": status,
        "artifacts": names,
        "summary": o.summary,
    }))
}

/// Runs a resolved config; returns the exit code.
pub fn run_config(cfg: &Config) -> i32 {
    let stem = match cfg.stem() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cfg.out) {
        eprintln!("cannot create output directory {}: {e}", cfg.out.display());
        return 1;
    }
    let mut o = Outputs { dir: &cfg.out, stem, files: Vec::new(), summary: BTreeMap::new() };
    let (code, status) = match execute(cfg, &mut o) {
        Ok(()) => (0, "ok"),
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            return 2;
        }
        Err(CliError::Lib(e)) if e.is_numerical() => {
            eprintln!("numerical abort: {e}");
            let mut text = format!("command {}\nerror {e}\n", cfg.command.tag());
            for (k, v) in &cfg.params {
                let _ = writeln!(text, "param {k} {v}");
            }
            if let Err(e) = o.write("diag.txt", text.as_bytes()) {
                eprintln!("cannot write diagnostics: {e}");
            }
            (3, "numerical_abort")
        }
        Err(CliError::Lib(weldlab::Error::Io(e))) => {
            eprintln!("i/o error: {e}");
            return 1;
        }
        Err(CliError::Lib(e)) => {
            eprintln!("invalid configuration: {e}");
            return 2;
        }
    };
    let m = match manifest(cfg, &o, status) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return 1;
        }
    };
    let mp = o.path("manifest.json");
    if let Err(e) = std::fs::write(&mp, m) {
        eprintln!("cannot write manifest: {e}");
        return 1;
    }
    for f in &o.files {
        println!("{}", f.display());
    }
    println!("{}", mp.display());
    code
}

pub fn usage() -> String {
    let mut s = String::from("usage: weldlab <command> [--config FILE] [--key value ...]\n\ncommands:\n");
    for c in COMMANDS {
        let keys: Vec<String> = c
            .keys()
            .iter()
            .map(|(k, d)| match d {
                None => k.to_string(),
                Some(d) if d.is_empty() => format!("[{k}]"),
                Some(d) => format!("[{k}={d}]"),
            })
            .collect();
        let _ = writeln!(s, "  {:<18} {}", c.tag(), keys.join(" "));
    }
    let _ = writeln!(s, "\noutput directory: --out, else ${OUT_ENV}, else the current directory");
    s
}

/// Entry point; `args` excludes the program name.
pub fn run(args: &[String]) -> i32 {
    if args.is_empty() || matches!(args[0].as_str(), "-h" | "--help" | "help") {
        print!("{}", usage());
        return if args.is_empty() { 2 } else { 0 };
    }
    let default_out = std::env::var_os(OUT_ENV).map(PathBuf::from);
    match parse_args(args, default_out) {
        Ok(cfg) => run_config(&cfg),
        Err(e) => {
            eprintln!("{e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "# drive settings\nkappa = 3\nT 2\nseed = 4\n").unwrap();
        let cfg = parse_args(&args(&format!("drive --config {} --kappa 2", p.display())), None).unwrap();
        assert_eq!(cfg.params["kappa"], "2");
        assert_eq!(cfg.params["horizon"], "2");
        assert_eq!(cfg.params["dt"], "1e-3");
        assert_eq!(cfg.out, PathBuf::from("."));
    }

    #[test]
    fn missing_and_unknown_keys() {
        let e = parse_args(&args("sample-liouville --seed 1"), None).unwrap_err();
        assert!(matches!(&e, CliError::Config(m) if m.contains("'gamma'")));
        let e = parse_args(&args("drive --kappa 2 --T 1 --seed 1 --colour red"), None).unwrap_err();
        assert!(matches!(&e, CliError::Config(m) if m.contains("'colour'")));
        let e = parse_args(&args("sample-gff --seed -3"), None).unwrap_err();
        assert!(matches!(&e, CliError::Config(m) if m.contains("seed")));
        let e = parse_args(&args("weld --gamma 2.5 --w 2 --seed 1"), None).unwrap_err();
        assert!(matches!(&e, CliError::Config(m) if m.contains("gamma")));
    }

    #[test]
    fn hash_depends_on_params_only() {
        let a = parse_args(&args("drive --kappa 2 --T 1 --seed 1 --out /tmp/a"), None).unwrap();
        let b = parse_args(&args("drive --seed 1 --T=1 --kappa=2"), Some("/tmp/b".into())).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(b.out, PathBuf::from("/tmp/b"));
        let c = parse_args(&args("drive --kappa 2 --T 1 --seed 1 --dt 1e-4"), None).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.stem().unwrap(), format!("drive-1-{}", a.hash()));
        assert_eq!(a.hash().len(), 12);
    }

    #[test]
    fn grid_and_insertion_syntax() {
        let g = parse_grid("s:97:33:-4:2").unwrap();
        assert_eq!((g.domain, g.nx, g.ny), (DomainId::S, 97, 33));
        assert!(parse_grid("q:1:2").is_err());
        let ins = parse_insertions("b:1:0; b:0.5:inf; a:1:0.3:1").unwrap();
        assert_eq!(ins.len(), 3);
        assert_eq!(ins[1].loc, Loc::Inf);
        assert!(parse_insertions("z:1").is_err());
    }
}
