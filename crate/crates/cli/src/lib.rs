//! `makeup` command-line tool.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors. Runtime
//! errors print a single line `error: <kind>: <message>` on standard error.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use makeup_prior::apps::{bilerp_coeffs, fade_alpha, lerp_coeffs, mix_coeffs, transfer};
use makeup_prior::fit::{fit_coeffs, warm_start, FitConfig};
use makeup_prior::metrics::{evaluate_regions, regions_from_labels, RegionSet};
use makeup_prior::prior::{build_pca, load_model, save_model, DEFAULT_COMPONENTS};
use makeup_prior::synthetic::{alpha_file, bases_file, write_synthetic, SyntheticSpec};
use makeup_prior::uvtex::{
    compose_visual, load_texture, save_texture, BitDepth, FaceMask, MakeupLayer, UvMap,
};
use makeup_prior::{Coefficients, Error};

pub const COEFFS_FILE: &str = "coeffs.json";
pub const HISTORY_FILE: &str = "loss_history.csv";

#[derive(Debug, Parser)]
#[command(name = "makeup", version, about = "PCA makeup prior over UV textures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a parametric makeup corpus, bare-skin albedos and a face mask.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Build a prior from `makeup_NNN_{bases,alpha}.png` pairs.
    BuildPrior {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate coefficients for a makeup-applied albedo.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bare: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        /// Start from these coefficients instead of the warm start.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Output directory for coeffs.json and loss_history.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the makeup layer (bases, alpha, visual) for a coefficient file.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        coeffs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw coefficients from the prior.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply decoded makeup to a bare-skin albedo.
    Transfer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        coeffs: PathBuf,
        #[arg(long)]
        bare: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blend makeup styles.
    Interpolate {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long)]
        c: Option<PathBuf>,
        #[arg(long)]
        d: Option<PathBuf>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        u: Option<f64>,
        #[arg(long)]
        v: Option<f64>,
        /// Indices taken from B in mix mode, e.g. `0-3,7`.
        #[arg(long)]
        take: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an albedo against a reference over face / eye / lip regions.
    Eval {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// `(1 - t) * A + t * B`
    Coeff,
    /// indices listed in `--take` from B, the rest from A
    Mix,
    /// corners A=(0,0), B=(0,1), C=(1,0), D=(1,1) at `(u, v)`
    Bilerp,
    /// decode A and scale its alpha by `t`
    Fade,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (including the program name), runs the command, returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: usage: {}", one_line(&msg));
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {}: {}", e.kind(), one_line(&e.to_string()));
            1
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn require<T>(value: Option<T>, flag: &str, mode: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required for {mode}")))
}

fn unit_interval(value: f64, flag: &str) -> CliResult<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(CliError::Usage(format!("--{flag} must lie in [0, 1], got {value}")))
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| {
        CliError::Runtime(if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source: e,
            }
        })
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| {
        CliError::Runtime(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn load_layer(bases: &Path, alpha: &Path) -> CliResult<MakeupLayer> {
    Ok(MakeupLayer::new(load_texture(bases, 3)?, load_texture(alpha, 1)?)?)
}

fn save_layer(layer: &MakeupLayer, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    save_texture(layer.bases(), dir.join("bases.png"), BitDepth::Sixteen)?;
    save_texture(layer.alpha(), dir.join("alpha.png"), BitDepth::Sixteen)?;
    save_texture(&compose_visual(layer), dir.join("visual.png"), BitDepth::Sixteen)?;
    Ok(())
}

/// Parses `0-3,7` style index lists into a mask of length `k`.
fn parse_index_mask(spec: &str, k: usize) -> CliResult<Vec<bool>> {
    let mut mask = vec![false; k];
    let bad = |part: &str| CliError::Usage(format!("invalid index range '{part}' for k={k}"));
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((lo, hi)) => (lo.trim(), hi.trim()),
            None => (part, part),
        };
        let lo: usize = lo.parse().map_err(|_| bad(part))?;
        let hi: usize = hi.parse().map_err(|_| bad(part))?;
        if lo > hi || hi >= k {
            return Err(bad(part));
        }
        mask[lo..=hi].iter_mut().for_each(|m| *m = true);
    }
    Ok(mask)
}

fn corpus_files(dir: &Path) -> CliResult<Vec<(PathBuf, PathBuf)>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()).into());
    }
    let mut pairs = Vec::new();
    loop {
        let bases = dir.join(bases_file(pairs.len()));
        if !bases.exists() {
            break;
        }
        let alpha = dir.join(alpha_file(pairs.len()));
        if !alpha.exists() {
            return Err(Error::MissingFile(alpha).into());
        }
        pairs.push((bases, alpha));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    Ok(pairs)
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::GenSynthetic {
            out,
            seed,
            count,
            size,
        } => {
            let spec = SyntheticSpec {
                seed,
                count,
                size,
                ..SyntheticSpec::default()
            };
            if let Err(e) = spec.validate() {
                return Err(CliError::Usage(e.to_string()));
            }
            let manifest = write_synthetic(&spec, &out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&manifest).expect("manifest serializes")
            );
        }
        Command::BuildPrior { corpus, k, out } => {
            if k == 0 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            let layers = corpus_files(&corpus)?
                .iter()
                .map(|(b, a)| load_layer(b, a))
                .collect::<CliResult<Vec<_>>>()?;
            let (prior, report) = build_pca(&layers, k)?;
            save_model(&prior, &out)?;
            if report.was_truncated() {
                eprintln!(
                    "note: requested k={} exceeds corpus rank {}; using k={}",
                    report.requested_k, report.rank, report.k
                );
            }
            let summary = serde_json::json!({
                "samples": report.samples,
                "requested_k": report.requested_k,
                "rank": report.rank,
                "k": report.k,
                "dimension": prior.dim(),
            });
            println!("{summary}");
        }
        Command::Fit {
            model,
            bare,
            target,
            mask,
            config,
            iters,
            init,
            out,
        } => {
            let prior = load_model(&model)?;
            let bare = load_texture(&bare, 3)?;
            let target = load_texture(&target, 3)?;
            let face = FaceMask::load(&mask)?;
            let mut cfg = match config {
                Some(path) => FitConfig::load_json(path)?,
                None => FitConfig::default(),
            };
            if let Some(n) = iters {
                cfg.iterations = n;
            }
            let init = match init {
                Some(path) => Coefficients::load_json(path)?,
                None => warm_start(&prior, &bare, &target)?,
            };
            let result = fit_coeffs(&prior, &bare, &target, &face, &cfg, &init)?;
            create_dir(&out)?;
            result.coefficients.save_json(out.join(COEFFS_FILE))?;
            write_text(&out.join(HISTORY_FILE), &result.history_csv())?;
            let best = result.best_loss();
            let summary = serde_json::json!({
                "k": prior.k(),
                "iterations": cfg.iterations,
                "best_iteration": result.best_iteration,
                "converged": result.converged,
                "best_total": best.total,
            });
            println!("{summary}");
        }
        Command::Decode { model, coeffs, out } => {
            let prior = load_model(&model)?;
            let coeffs = Coefficients::load_json(&coeffs)?;
            save_layer(&prior.decode(&coeffs)?, &out)?;
        }
        Command::Sample {
            model,
            seed,
            scale,
            out,
        } => {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(CliError::Usage(format!("--scale must be >= 0, got {scale}")));
            }
            let prior = load_model(&model)?;
            prior.sample(seed, scale).save_json(&out)?;
        }
        Command::Transfer {
            model,
            coeffs,
            bare,
            out,
        } => {
            let prior = load_model(&model)?;
            let coeffs = Coefficients::load_json(&coeffs)?;
            let bare = load_texture(&bare, 3)?;
            save_texture(&transfer(&prior, &coeffs, &bare)?, &out, BitDepth::Sixteen)?;
        }
        Command::Interpolate {
            mode,
            a,
            b,
            c,
            d,
            t,
            u,
            v,
            take,
            model,
            out,
        } => interpolate(mode, a, [b, c, d], (t, u, v), take, model, out)?,
        Command::Eval {
            target,
            input,
            mask,
            labels,
            out,
        } => {
            let reference = load_texture(&target, 3)?;
            let pred = load_texture(&input, 3)?;
            let regions = match (labels, mask) {
                (Some(labels), mask) => {
                    let seg = regions_from_labels(&load_texture(&labels, 1)?)?;
                    if !seg.unknown_codes.is_empty() {
                        eprintln!("note: ignored unknown label codes {:?}", seg.unknown_codes);
                    }
                    let mut regions = seg.regions;
                    if let Some(mask) = mask {
                        regions.face = regions.face.intersect(&FaceMask::load(&mask)?)?;
                    }
                    regions
                }
                (None, Some(mask)) => RegionSet::face_only(FaceMask::load(&mask)?),
                (None, None) => {
                    return Err(CliError::Usage("eval needs --mask and/or --labels".into()))
                }
            };
            let records = evaluate_regions(&pred, &reference, &regions)?;
            let text = serde_json::to_string_pretty(&records).expect("records serialize");
            if let Some(out) = out {
                write_text(&out, &(text.clone() + "\n"))?;
            }
            println!("{text}");
        }
    }
    Ok(())
}

fn interpolate(
    mode: Mode,
    a: PathBuf,
    [b, c, d]: [Option<PathBuf>; 3],
    (t, u, v): (Option<f64>, Option<f64>, Option<f64>),
    take: Option<String>,
    model: Option<PathBuf>,
    out: PathBuf,
) -> CliResult<()> {
    let load = |p: &Path| Coefficients::load_json(p).map_err(CliError::from);
    let ca = load(&a)?;
    match mode {
        Mode::Coeff => {
            let cb = load(&require(b, "b", "coeff mode")?)?;
            let t = unit_interval(require(t, "t", "coeff mode")?, "t")?;
            lerp_coeffs(&ca, &cb, t)?.save_json(&out)?;
        }
        Mode::Mix => {
            let cb = load(&require(b, "b", "mix mode")?)?;
            let mask = parse_index_mask(&require(take, "take", "mix mode")?, ca.len())?;
            mix_coeffs(&ca, &cb, &mask)?.save_json(&out)?;
        }
        Mode::Bilerp => {
            let c01 = load(&require(b, "b", "bilerp mode")?)?;
            let c10 = load(&require(c, "c", "bilerp mode")?)?;
            let c11 = load(&require(d, "d", "bilerp mode")?)?;
            let u = unit_interval(require(u, "u", "bilerp mode")?, "u")?;
            let v = unit_interval(require(v, "v", "bilerp mode")?, "v")?;
            bilerp_coeffs(&ca, &c01, &c10, &c11, u, v)?.save_json(&out)?;
        }
        Mode::Fade => {
            let prior = load_model(require(model, "model", "fade mode")?)?;
            let t = unit_interval(require(t, "t", "fade mode")?, "t")?;
            save_layer(&fade_alpha(&prior.decode(&ca)?, t)?, &out)?;
        }
    }
    Ok(())
}

/// Loads an RGB albedo, for callers composing the commands in-process.
pub fn read_albedo(path: impl AsRef<Path>) -> makeup_prior::Result<UvMap> {
    load_texture(path, 3)
}
