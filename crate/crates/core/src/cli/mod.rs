//! The `surfseg` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
//! 3 malformed file or dimension mismatch, 4 infeasible problem.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use log::{info, warn};

use crate::baseline::{dp_report, segment_volume_dp};
use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::infer::{inference_report, plan_tiling, segment_volume};
use crate::metrics::{error_report, paired_t, seam_discontinuity, volume_means};
use crate::model::{build_net, load_model, save_model, train};
use crate::pipeline::{build_dataset, preprocess, read_dataset, write_dataset};
use crate::rng::RngState;
use crate::synthdata::{generate, read_surfaces, read_volume, write_surfaces, write_volume, SurfaceSet};

pub use config::{RunConfig, KEYS};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Format { .. } | Error::Decode(_) | Error::Shape(_) | Error::NonFinite(_) => EXIT_FORMAT,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Config(_) | Error::Invalid(_) => EXIT_USAGE,
    }
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn with_common(cmd: Command) -> Command {
    let cmd = cmd
        .arg(path_arg("config", "key = value file applied before flags"))
        .arg(path_arg("out", "output path").required(true));
    KEYS.iter().fold(cmd, |c, key| {
        c.arg(Arg::new(*key).long(key.replace('_', "-")).value_name("VALUE").help_heading("Parameters"))
    })
}

pub fn command() -> Command {
    Command::new("surfseg")
        .about("Multi-surface segmentation of volumetric images by CNN patch regression")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_common(
            Command::new("generate")
                .about("Generate a synthetic volume and its ground-truth surfaces")
                .arg(path_arg("surfaces-out", "ground-truth surfaces output").required(true)),
        ))
        .subcommand(with_common(
            Command::new("preprocess")
                .about("Median-filter and normalize a volume to [-1, 1]")
                .arg(path_arg("volume", "input volume").required(true)),
        ))
        .subcommand(with_common(
            Command::new("extract")
                .about("Extract (and augment) training patches from preprocessed volumes")
                .arg(path_arg("volume", "preprocessed volume (repeatable)").action(ArgAction::Append).required(true))
                .arg(
                    path_arg("surfaces", "surfaces for each volume, same order")
                        .action(ArgAction::Append)
                        .required(true),
                ),
        ))
        .subcommand(with_common(
            Command::new("train")
                .about("Train the regression network on a patch dataset")
                .arg(path_arg("dataset", "patch dataset").required(true)),
        ))
        .subcommand(with_common(
            Command::new("infer")
                .about("Segment a preprocessed volume with a trained model")
                .arg(path_arg("model", "trained model").required(true))
                .arg(path_arg("volume", "preprocessed volume").required(true))
                .arg(path_arg("report", "inference report output")),
        ))
        .subcommand(with_common(
            Command::new("baseline")
                .about("Segment a preprocessed volume with the exact DP baseline")
                .arg(path_arg("volume", "preprocessed volume").required(true))
                .arg(path_arg("report", "per-slice objective report output")),
        ))
        .subcommand(with_common(
            Command::new("eval")
                .about("Compare predicted surfaces with references; optionally pair two methods")
                .arg(path_arg("pred", "predicted surfaces (repeatable)").action(ArgAction::Append).required(true))
                .arg(path_arg("ref", "reference surfaces, same order").action(ArgAction::Append).required(true))
                .arg(path_arg("pred-b", "second method's predictions for a paired test").action(ArgAction::Append))
                .arg(
                    Arg::new("seams")
                        .long("seams")
                        .action(ArgAction::SetTrue)
                        .help("report discontinuities at the patch seams of an N-wide tiling"),
                ),
        ))
        .subcommand(with_common(
            Command::new("plot")
                .about("Render a slice with surface overlays as a PPM image")
                .arg(path_arg("volume", "volume").required(true))
                .arg(
                    path_arg("surfaces", "surface set, drawn red, green, blue in order (repeatable)")
                        .action(ArgAction::Append),
                ),
        ))
}

fn resolve(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = m.get_one::<PathBuf>("config") {
        cfg.apply_file(p)?;
    }
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> &'a Path {
    m.get_one::<PathBuf>(name).expect("required argument")
}

fn paths(m: &ArgMatches, name: &str) -> Vec<PathBuf> {
    m.get_many::<PathBuf>(name).map(|v| v.cloned().collect()).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn read_all_surfaces(list: &[PathBuf]) -> Result<Vec<SurfaceSet>> {
    list.iter().map(|p| read_surfaces(p)).collect()
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    let (name, m) = matches.subcommand().expect("subcommand required");
    let cfg = resolve(m)?;
    info!("{name}: resolved config\n{}", cfg.to_text());
    let out = path(m, "out");
    match name {
        "generate" => {
            let (vol, surf) = generate(&cfg.synth_config())?;
            write_volume(&vol, out)?;
            write_surfaces(&surf, path(m, "surfaces-out"))?;
        }
        "preprocess" => {
            let vol = read_volume(path(m, "volume"))?;
            write_volume(&preprocess(&vol), out)?;
        }
        "extract" => {
            let vols = paths(m, "volume");
            let surfs = paths(m, "surfaces");
            if vols.len() != surfs.len() {
                return Err(Error::Config(format!(
                    "{} volumes but {} surface files",
                    vols.len(),
                    surfs.len()
                )));
            }
            let vols = vols.iter().map(|p| read_volume(p)).collect::<Result<Vec<_>>>()?;
            let surfs = read_all_surfaces(&surfs)?;
            let sources: Vec<_> = vols.iter().zip(&surfs).collect();
            let mut rng = RngState::new(cfg.seed);
            let (ds, stats) = build_dataset(&sources, &cfg.dataset_config(), &mut rng)?;
            write_dataset(&ds, out)?;
            println!("records = {}", stats.total());
            println!("rejected = {}", stats.rejected);
        }
        "train" => {
            let ds = read_dataset(path(m, "dataset"))?;
            let mut mc = cfg.model_config();
            if (mc.n, mc.z, mc.lambda) != (ds.n, ds.z, ds.lambda) {
                info!(
                    "using dataset dims N={} Z={} lambda={} instead of configured {}/{}/{}",
                    ds.n, ds.z, ds.lambda, mc.n, mc.z, mc.lambda
                );
                mc.n = ds.n;
                mc.z = ds.z;
                mc.lambda = ds.lambda;
            }
            let root = RngState::new(cfg.seed);
            let mut net = build_net::<f32>(mc, &mut root.fork(0))?;
            let samples = ds.samples();
            let history = train(
                &mut net,
                &samples,
                &cfg.train_config(),
                cfg.train_stop(),
                &mut root.fork(1),
                |e| println!("epoch {} lr {:e} loss {:.6} umspe {:.6}", e.epoch, e.lr, e.loss, e.umspe),
            )?;
            save_model(&net, out)?;
            println!("iterations = {}", history.iterations);
        }
        "infer" => {
            let net = load_model(path(m, "model"))?;
            let vol = read_volume(path(m, "volume"))?;
            let result = segment_volume(&net, &vol)?;
            write_surfaces(&result.surfaces, out)?;
            let report = inference_report(&result);
            match m.get_one::<PathBuf>("report") {
                Some(p) => write_text(p, &report)?,
                None => print!("{report}"),
            }
        }
        "baseline" => {
            let vol = read_volume(path(m, "volume"))?;
            let dp = cfg.dp_config();
            let result = segment_volume_dp(&vol, &dp)?;
            write_surfaces(&result.surfaces, out)?;
            let report = dp_report(&result, &dp);
            match m.get_one::<PathBuf>("report") {
                Some(p) => write_text(p, &report)?,
                None => print!("{report}"),
            }
        }
        "eval" => {
            let preds = read_all_surfaces(&paths(m, "pred"))?;
            let refs = read_all_surfaces(&paths(m, "ref"))?;
            let mut report = error_report("a", &preds, &refs)?;
            if m.get_flag("seams") {
                let mut all = crate::metrics::SeamStats::default();
                let mut sum = 0.0;
                for p in &preds {
                    let s = seam_discontinuity(p, &plan_tiling(p.x, cfg.n)?);
                    all.max = all.max.max(s.max);
                    sum += s.mean * s.count as f64;
                    all.count += s.count;
                }
                if all.count > 0 {
                    all.mean = sum / all.count as f64;
                }
                report.seams = Some(all);
            }
            let mut text = String::new();
            let mut kv = String::new();
            let b_paths = paths(m, "pred-b");
            if !b_paths.is_empty() {
                let b = error_report("b", &read_all_surfaces(&b_paths)?, &refs)?;
                if preds.len() >= 2 {
                    report.paired = Some(paired_t(&volume_means(&report), &volume_means(&b))?);
                } else {
                    warn!("paired test skipped: needs at least 2 volumes");
                }
                text.push_str(&report.to_text());
                text.push_str(&b.to_text());
                kv.push_str(&report.to_key_values());
                kv.push_str(&b.to_key_values());
            } else {
                text.push_str(&report.to_text());
                kv.push_str(&report.to_key_values());
            }
            print!("{text}");
            write_text(out, &kv)?;
        }
        "plot" => {
            let vol = read_volume(path(m, "volume"))?;
            let sets = read_all_surfaces(&paths(m, "surfaces"))?;
            let refs: Vec<&SurfaceSet> = sets.iter().collect();
            let img = plot::render_overlay(&vol, &refs, cfg.slice)?;
            write_atomic(out, &img.to_ppm())?;
        }
        _ => unreachable!("unknown subcommand {name}"),
    }
    Ok(())
}
