use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use demokit::demofile::{read_demo_file, write_demo_file};
use demokit::eval::{aggregate_by_task, evaluate_corpus, format_summary, write_metrics_csv, EvalConfig};
use demokit::filter::{downsample, smoothness, FilterConfig};
use demokit::ingest::{replay_client, Server, ServeConfig, SessionResult, SessionStatus};
use demokit::keypose::{detect_key_poses, DenseThreshold, DetectorConfig, KeyPoseReport};
use demokit::model::Demonstration;
use demokit::sim::{replay_demo, write_trace_csv};
use demokit::synth::{generate_corpus, CorpusManifest, MANIFEST_FILE};
use log::info;

use crate::config::PipelineConfig;
use crate::{
    Cli, Command, DataError, DetectArgs, DetectorArgs, EvalArgs, ExportArgs, FilterArgs, RecordArgs, Refused,
    ReplayArgs, SendArgs, SynthArgs, UsageError,
};

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match &cli.command {
        Command::Record(a) => record(&cfg, a),
        Command::Send(a) => send(&cfg, a),
        Command::Synth(a) => synth(cli, &cfg, a),
        Command::Detect(a) => detect(&cfg, a),
        Command::Filter(a) => filter(&cfg, a),
        Command::Replay(a) => replay(cli, &cfg, a),
        Command::Eval(a) => eval(cli, &cfg, a),
        Command::Export(a) => export(&cfg, a),
    }
}

fn detector_config(cfg: &PipelineConfig, a: &DetectorArgs) -> Result<DetectorConfig> {
    let mut d = match &a.detector_config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| DataError(format!("detector config {}: {e}", p.display())))?
        }
        None => cfg.detector,
    };
    if let Some(w) = a.window {
        d.window_length = w;
    }
    if let Some(s) = a.sharp {
        d.sharp_turn_threshold = s;
    }
    if let Some(f) = a.dense_factor {
        d.dense_region_threshold = DenseThreshold::SpacingRelative(f);
    }
    if let Some(m) = a.dense_meters {
        d.dense_region_threshold = DenseThreshold::Meters(m);
    }
    if a.no_gripper_events {
        d.gripper_events = false;
    }
    d.validate()?;
    Ok(d)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Runs `f` against the file at `path`, or standard output when `None`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock).and_then(|_| lock.flush()).context("writing to standard output")
        }
    }
}

fn output_dir(flag: &Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.paths.output_dir.clone())
        .ok_or_else(|| UsageError("no output directory: pass --out or set paths.output_dir".into()).into())
}

fn record(cfg: &PipelineConfig, a: &RecordArgs) -> Result<()> {
    let out = output_dir(&a.out, cfg)?;
    let mut pinch = cfg.server.pinch;
    if let Some(v) = a.close_threshold {
        pinch.close_threshold = v;
    }
    if let Some(v) = a.open_threshold {
        pinch.open_threshold = v;
    }
    if let Some(p) = a.polarity {
        pinch.polarity = p.into();
    }
    pinch.validate()?;
    let serve_cfg = ServeConfig {
        max_frame_len: a.max_frame_len.unwrap_or(cfg.server.max_frame_len),
        pinch,
        max_sessions: a.sessions.or(cfg.server.max_sessions),
        ..ServeConfig::default()
    };
    let addr = a.addr.clone().unwrap_or_else(|| cfg.server.addr.clone());

    let server = Server::bind(addr.as_str(), &out, serve_cfg)?;
    let local = server.local_addr()?;
    let flag = server.shutdown_flag();
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)).context("installing the interrupt handler")?;
    }
    println!("listening on {local}, writing to {}", out.display());
    io::stdout().flush()?;
    let watcher = std::thread::spawn(move || {
        while !stop.load(Ordering::SeqCst) && !flag.load(Ordering::SeqCst) {
            std::thread::sleep(std::time::Duration::from_millis(20));
        }
        flag.store(true, Ordering::SeqCst);
    });
    let outcomes = server.run();
    let _ = watcher.join();
    for o in outcomes? {
        let path = o.path.as_ref().map_or_else(|| "-".to_string(), |p| p.display().to_string());
        match o.status {
            SessionStatus::Completed => println!("completed {path} ({} frames)", o.frames),
            SessionStatus::Partial(why) => println!("partial {path} ({} frames): {why}", o.frames),
            SessionStatus::Rejected(why) => println!("rejected: {why}"),
        }
    }
    Ok(())
}

fn send(cfg: &PipelineConfig, a: &SendArgs) -> Result<()> {
    if a.rate.is_nan() || a.rate < 0.0 {
        bail!(UsageError(format!("--rate must be >= 0, got {}", a.rate)));
    }
    let rate = if a.rate == 0.0 { f64::INFINITY } else { a.rate };
    let addr = a.addr.clone().unwrap_or_else(|| cfg.server.addr.clone());
    match replay_client(&a.demo, addr.as_str(), rate)? {
        SessionResult::Acked { count, file } => {
            println!("server stored {count} frames as {file}");
            Ok(())
        }
        SessionResult::Rejected { code, message } => Err(Refused { code, message }.into()),
    }
}

fn synth(cli: &Cli, cfg: &PipelineConfig, a: &SynthArgs) -> Result<()> {
    let task = match (a.task, &cfg.task) {
        (Some(name), _) => cfg.task_for(name.tag()).expect("built-in task"),
        (None, Some(t)) => t.clone(),
        (None, None) => bail!(UsageError("no task: pass --task or set a [task] section".into())),
    };
    let out = output_dir(&a.out, cfg)?;
    let mut settings = cfg.synth.clone();
    if let Some(v) = a.count {
        settings.count = v;
    }
    if let Some(v) = a.tremor {
        settings.tremor_amplitude = v;
    }
    if let Some(v) = a.dwell {
        settings.dwell_frames = v;
    }
    if let Some(v) = a.hz {
        settings.frequency_hz = v;
    }
    if let Some(v) = a.speed {
        settings.mean_speed = v;
    }
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let arm = cfg.arm(cli.arm.as_deref())?;
    let manifest = generate_corpus(&settings.to_config(task, seed), settings.count, &out, &arm)?;
    let frames: usize = manifest.entries.iter().map(|e| e.frame_count).sum();
    println!(
        "wrote {} {} demonstrations ({frames} frames) and {}",
        manifest.count,
        manifest.base.task.tag(),
        out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn report_for(demo: &Demonstration, report: &Option<PathBuf>, cfg: &PipelineConfig, a: &DetectorArgs) -> Result<KeyPoseReport> {
    match report {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let r: KeyPoseReport =
                serde_json::from_str(&text).map_err(|e| DataError(format!("report {}: {e}", p.display())))?;
            if r.frame_count != demo.len() {
                bail!(DataError(format!(
                    "report {} covers {} frames but the demonstration has {}",
                    p.display(),
                    r.frame_count,
                    demo.len()
                )));
            }
            Ok(r)
        }
        None => Ok(detect_key_poses(demo, &detector_config(cfg, a)?)?),
    }
}

fn detect(cfg: &PipelineConfig, a: &DetectArgs) -> Result<()> {
    let demo = read_demo_file(&a.demo)?;
    let report = detect_key_poses(&demo, &detector_config(cfg, &a.detector)?)?;
    info!(
        "{}: {} key poses ({} sharp, {} dense, {} gripper events)",
        demo.id,
        report.key_indexes.len(),
        report.sharp_turn_indexes.len(),
        report.dense_region_indexes.len(),
        report.gripper_event_indexes.len()
    );
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    with_output(a.out.as_deref(), |w| writeln!(w, "{text}"))
}

fn filter(cfg: &PipelineConfig, a: &FilterArgs) -> Result<()> {
    let demo = read_demo_file(&a.demo)?;
    let report = report_for(&demo, &a.report, cfg, &a.detector)?;
    let fc = FilterConfig {
        stride: a.k.unwrap_or(cfg.filter.stride),
        always_keep_endpoints: a.keep_endpoints.unwrap_or(cfg.filter.always_keep_endpoints),
    };
    let out = downsample(&demo, &report, &fc)?;
    write_demo_file(&out, &a.out)?;
    let (before, after) = (smoothness(&demo)?, smoothness(&out)?);
    println!(
        "kept {} of {} frames ({} key); mean turning angle {:.4} -> {:.4} rad",
        out.len(),
        demo.len(),
        report.key_indexes.len(),
        before.mean_abs_turning_angle,
        after.mean_abs_turning_angle
    );
    Ok(())
}

fn replay(cli: &Cli, cfg: &PipelineConfig, a: &ReplayArgs) -> Result<()> {
    let demo = read_demo_file(&a.demo)?;
    let task = match (a.task, &cfg.task, &demo.task_tag) {
        (Some(name), _, _) => cfg.task_for(name.tag()).expect("built-in task"),
        (None, Some(t), _) => t.clone(),
        (None, None, Some(tag)) => cfg
            .task_for(tag)
            .ok_or_else(|| DataError(format!("unknown task tag {tag:?} in {}", a.demo.display())))?,
        (None, None, None) => bail!(UsageError(format!(
            "{} has no task tag: pass --task",
            a.demo.display()
        ))),
    };
    let arm = cfg.arm(cli.arm.as_deref())?;
    let result = replay_demo(&arm, &demo, &task)?;
    if let Some(p) = &a.trace {
        let ts: Vec<f64> = demo.frames.iter().map(|f| f.t).collect();
        let mut w = create(p)?;
        write_trace_csv(&result.trace, Some(&ts), &mut w)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", p.display()))?;
    }
    match &result.failure {
        None => println!("{}: {} succeeded in {} steps", demo.id, task.tag(), demo.len() - 1),
        Some(f) => println!("{}: {} failed: {f}", demo.id, task.tag()),
    }
    Ok(())
}

fn eval(cli: &Cli, cfg: &PipelineConfig, a: &EvalArgs) -> Result<()> {
    let path = a
        .manifest
        .clone()
        .or_else(|| cfg.paths.corpus_manifest.clone())
        .ok_or_else(|| UsageError("no manifest: pass one or set paths.corpus_manifest".into()))?;
    let manifest = CorpusManifest::read(&path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let ec = EvalConfig {
        detector: detector_config(cfg, &a.detector)?,
        filter: FilterConfig {
            stride: a.k.unwrap_or(cfg.filter.stride),
            ..cfg.filter
        },
        detector_disabled: a.disable_detector,
    };
    ec.filter.validate()?;
    let arm = cfg.arm(cli.arm.as_deref())?;
    let rows = evaluate_corpus(&manifest, dir, &arm, &ec)?;
    print!("{}", format_summary(&aggregate_by_task(&rows)));
    let failures: Vec<_> = rows
        .iter()
        .filter_map(|m| m.failure_filtered.as_ref().map(|f| (&m.id, f)))
        .collect();
    for (id, f) in &failures {
        println!("filtered replay failed: {id}: {f}");
    }
    if let Some(p) = &a.csv {
        let mut w = create(p)?;
        write_metrics_csv(&rows, &mut w)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub const EXPORT_CSV_HEADER: &str = "t,x,y,z,gripper,is_key";

/// One row per frame: timestamp, position, gripper (0 open, 1 closed) and
/// whether the frame is in the report's key set.
pub fn write_export_csv<W: Write + ?Sized>(demo: &Demonstration, report: &KeyPoseReport, out: &mut W) -> io::Result<()> {
    writeln!(out, "{EXPORT_CSV_HEADER}")?;
    for (i, f) in demo.frames.iter().enumerate() {
        let p = f.position;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            f.t,
            p.x,
            p.y,
            p.z,
            f.gripper.as_u8(),
            u8::from(report.is_key(i))
        )?;
    }
    Ok(())
}

fn export(cfg: &PipelineConfig, a: &ExportArgs) -> Result<()> {
    let demo = read_demo_file(&a.demo)?;
    let report = report_for(&demo, &a.report, cfg, &a.detector)?;
    with_output(a.out.as_deref(), |w| write_export_csv(&demo, &report, w))
}
