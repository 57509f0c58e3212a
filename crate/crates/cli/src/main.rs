use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use minisched::annotate::lower_annotated;
use minisched::check::{check_backend, check_frontend, CheckReport, Valuation};
use minisched::corpus::{cap, entries, load_pipeline, load_schedule};
use minisched::emit::{annotation_metrics, emit_with, EmitOptions};
use minisched::frontend::{encode, print_program};
use minisched::lower::LoopNest;
use minisched::{rescale, Pipeline};

mod report;

#[derive(Parser)]
#[command(name = "minisched", version, about = "Annotated scheduling pipelines: encode, lower, emit and check")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode the algorithm as pure functions (.pvl).
    Encode {
        algorithm: PathBuf,
        #[command(flatten)]
        size: Size,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the scheduled loop nest.
    Lower {
        algorithm: PathBuf,
        schedule: PathBuf,
        #[command(flatten)]
        size: Size,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit annotated C.
    Emit {
        algorithm: PathBuf,
        schedule: PathBuf,
        #[command(flatten)]
        size: Size,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write `context P` as `requires P; ensures P`.
        #[arg(long)]
        expand_context: bool,
        /// Drop all user annotations before lowering.
        #[arg(long)]
        strip_annotations: bool,
        #[arg(long)]
        dump_loopnest: bool,
        /// Print the line metrics as JSON instead of the source.
        #[arg(long)]
        json: bool,
    },
    /// Check the pure-function encoding against the algorithm.
    CheckFrontend {
        algorithm: PathBuf,
        #[command(flatten)]
        size: Size,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Check generated annotations and outputs of scheduled loop nests.
    CheckBackend {
        algorithm: PathBuf,
        #[arg(required = true)]
        schedules: Vec<PathBuf>,
        #[command(flatten)]
        size: Size,
        #[command(flatten)]
        run: RunOpts,
        #[arg(long)]
        strip_annotations: bool,
        #[arg(long)]
        dump_loopnest: bool,
    },
    /// Table of line counts and checker times over a corpus directory.
    Report {
        corpus: PathBuf,
        #[command(flatten)]
        size: Size,
        #[command(flatten)]
        run: RunOpts,
        #[arg(long)]
        strip_annotations: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Size {
    /// Output extents, e.g. `x=64,y=64`.
    #[arg(long, value_parser = parse_scale)]
    scale: Option<Scale>,
    /// Caps every output extent.
    #[arg(long)]
    cap: Option<i64>,
}

#[derive(Args, Clone)]
struct RunOpts {
    /// Number of random input valuations (seeds 0..N).
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Debug)]
struct Scale(Vec<(String, i64)>);

fn parse_scale(s: &str) -> Result<Scale, String> {
    let dims = s
        .split(',')
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected dim=extent, got `{kv}`"))?;
            let v: i64 = v.trim().parse().map_err(|_| format!("bad extent `{v}`"))?;
            if v <= 0 {
                return Err(format!("extent of `{k}` must be positive"));
            }
            Ok((k.trim().to_string(), v))
        })
        .collect::<Result<_, String>>()?;
    Ok(Scale(dims))
}

/// Result of a successful command: whether any check reported a finding.
enum Outcome {
    Pass,
    Findings,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match threads().and_then(|()| run(cli.cmd)) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Findings) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn threads() -> Result<()> {
    let Ok(n) = std::env::var("MINI_SCHED_THREADS") else { return Ok(()) };
    let n: usize = n.parse().with_context(|| format!("MINI_SCHED_THREADS must be a number, got `{n}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn pipeline(path: &Path, size: &Size, strip: bool, lenient: bool) -> Result<Pipeline> {
    let mut p = load_pipeline(path)?;
    if let Some(Scale(dims)) = &size.scale {
        let known: Vec<String> = p.output_func().dims.iter().map(|d| d.name.clone()).collect();
        let dims: Vec<(String, i64)> = dims.iter().filter(|(d, _)| !lenient || known.contains(d)).cloned().collect();
        if let Some((d, _)) = dims.iter().find(|(d, _)| !known.contains(d)) {
            bail!("`{}` has no output dimension `{d}` (dimensions: {})", p.name, known.join(", "));
        }
        rescale(&mut p, &dims).map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    if let Some(c) = size.cap {
        cap(&mut p, c)?;
    }
    Ok(if strip { p.without_user_annotations() } else { p })
}

fn nest(p: &Pipeline, schedule: &Path) -> Result<LoopNest> {
    let ds = load_schedule(schedule, p)?;
    lower_annotated(p, &ds).with_context(|| format!("lowering {}", schedule.display()))
}

fn write_out(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn run(cmd: Cmd) -> Result<Outcome> {
    match cmd {
        Cmd::Encode { algorithm, size, out } => {
            let p = pipeline(&algorithm, &size, false, false)?;
            write_out(&out, &print_program(&encode(&p)?))?;
            Ok(Outcome::Pass)
        }
        Cmd::Lower { algorithm, schedule, size, out } => {
            let p = pipeline(&algorithm, &size, false, false)?;
            write_out(&out, &nest(&p, &schedule)?.to_string())?;
            Ok(Outcome::Pass)
        }
        Cmd::Emit { algorithm, schedule, size, out, expand_context, strip_annotations, dump_loopnest, json } => {
            let p = pipeline(&algorithm, &size, strip_annotations, false)?;
            let n = nest(&p, &schedule)?;
            if dump_loopnest {
                eprint!("{n}");
            }
            let u = emit_with(&n, EmitOptions { expand_context });
            if json {
                if let Some(path) = &out {
                    fs::write(path, &u.source).with_context(|| format!("writing {}", path.display()))?;
                }
                let m = annotation_metrics(&u, p.user_annotation_count());
                println!("{}", serde_json::to_string_pretty(&m)?);
            } else {
                write_out(&out, &u.source)?;
            }
            Ok(Outcome::Pass)
        }
        Cmd::CheckFrontend { algorithm, size, run } => {
            let p = pipeline(&algorithm, &size, false, false)?;
            let e = encode(&p)?;
            let reports: Vec<CheckReport> = (0..run.seeds)
                .into_par_iter()
                .map(|seed| check_frontend(&e, &p, &Valuation::random(&p, seed)))
                .collect();
            print_reports(&reports, run.json)
        }
        Cmd::CheckBackend { algorithm, schedules, size, run, strip_annotations, dump_loopnest } => {
            let p = pipeline(&algorithm, &size, strip_annotations, false)?;
            let mut nests = Vec::new();
            for s in &schedules {
                let n = nest(&p, s)?;
                if dump_loopnest {
                    eprint!("{n}");
                }
                nests.push((stem(s), n));
            }
            let reports = check_all(&p, &nests, run.seeds);
            print_reports(&reports, run.json)
        }
        Cmd::Report { corpus, size, run, strip_annotations, out } => {
            let mut rows = Vec::new();
            for e in entries(&corpus)? {
                let p = pipeline(&e.pipeline, &size, strip_annotations, true)?;
                let mut nests = Vec::new();
                for s in &e.schedules {
                    nests.push((stem(s), nest(&p, s)?));
                }
                let reports = check_all(&p, &nests, run.seeds);
                for (i, (sched, n)) in nests.iter().enumerate() {
                    let mine = &reports[i * run.seeds as usize..(i + 1) * run.seeds as usize];
                    let m = annotation_metrics(&emit_with(n, EmitOptions::default()), p.user_annotation_count());
                    rows.push(report::Row::new(&p.name, sched, m, mine));
                }
            }
            let failed = rows.iter().any(|r| !r.passed);
            let text = if run.json { serde_json::to_string_pretty(&rows)? + "\n" } else { report::markdown(&rows) };
            write_out(&out, &text)?;
            Ok(if failed { Outcome::Findings } else { Outcome::Pass })
        }
    }
}

/// Every (schedule, seed) pair, schedule-major.
fn check_all(p: &Pipeline, nests: &[(String, LoopNest)], seeds: u64) -> Vec<CheckReport> {
    let jobs: Vec<(usize, u64)> = (0..nests.len()).flat_map(|i| (0..seeds).map(move |s| (i, s))).collect();
    jobs.into_par_iter()
        .map(|(i, seed)| {
            let (name, n) = &nests[i];
            let mut r = check_backend(n, &Valuation::random(p, seed));
            r.schedule = Some(name.clone());
            r
        })
        .collect()
}

fn print_reports(reports: &[CheckReport], json: bool) -> Result<Outcome> {
    if json {
        println!("{}", serde_json::to_string_pretty(reports)?);
    } else {
        for r in reports {
            let sched = r.schedule.as_deref().map_or(String::new(), |s| format!(" {s}"));
            let seed = r.seed.map_or(String::new(), |s| format!(" seed {s}"));
            let verdict = if r.passed() { "pass" } else { "FAIL" };
            println!("{}{sched}{seed}: {verdict} ({} points, {} ms)", r.pipeline, r.stats.points, r.stats.millis);
            for f in &r.findings {
                println!("  {:?}: {}", f.kind, f.message);
            }
        }
    }
    Ok(if reports.iter().all(CheckReport::passed) { Outcome::Pass } else { Outcome::Findings })
}
