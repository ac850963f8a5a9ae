use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::{json, Value};

use tsqnet::config::RunConfig;
use tsqnet::data::{generate_synthetic_dataset, Dataset, Vocabulary};
use tsqnet::experiment::{
    ablate, desk_config, parse_grid, run_holdout, run_synthetic, tsq_flops, video_seed,
    AblationRow, Pipeline, Policy, PolicyReport,
};
use tsqnet::io::{read_manifest, read_vocabulary, write_manifest, write_vocabulary, TensorArchive};
use tsqnet::metrics::FlopsConfig;
use tsqnet::model::TsqNet;
use tsqnet::params::Parameterized;
use tsqnet::tqm::random_embedding_init;
use tsqnet::trainer::gradcheck;
use tsqnet::tsq::Modality;
use tsqnet::{Result, TsqError};

use crate::args::{
    AblateArgs, DataFlags, EvalArgs, FlopsArgs, GradcheckArgs, SampleArgs, Split, SynthGenArgs,
    TrainArgs,
};

// Status output. A closed stdout (`| head`) must not abort a command whose
// real output is the files it writes, so write errors are dropped.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! sayln {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// What a finished command reports back to `main`.
pub enum Status {
    Ok,
    /// The command ran but its check failed on the numbers.
    NumericFailure,
}

fn io_error(path: &Path, source: std::io::Error) -> TsqError {
    TsqError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values always serialize");
    s.push('\n');
    s
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| TsqError::InvalidConfig(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| TsqError::InvalidConfig(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields is utf-8"))
}

/// Reads a run configuration, or the configuration echoed by an earlier
/// artifact: a checkpoint manifest (`meta.config`), a report (`config`), or
/// the first line of a training log.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = read_text(path)?;
    let direct = RunConfig::from_json(&text);
    if direct.is_ok() {
        return direct;
    }
    let first_line = text.lines().next().unwrap_or("");
    for candidate in [text.as_str(), first_line] {
        if let Ok(v) = serde_json::from_str::<Value>(candidate) {
            if let Some(c) = v.pointer("/meta/config").or_else(|| v.get("config")) {
                return Ok(serde_json::from_value(c.clone())?);
            }
        }
    }
    Err(TsqError::InvalidConfig(format!(
        "{}: {}",
        path.display(),
        direct.err().map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn resolve(flag: &Option<PathBuf>, recorded: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| recorded.clone())
        .ok_or_else(|| TsqError::InvalidConfig(format!("no {what} given (--{what})")))
}

fn load_data(
    flags: &DataFlags,
    cfg: &RunConfig,
) -> Result<(PathBuf, Dataset, PathBuf, Vocabulary)> {
    let dp = resolve(&flags.dataset, &cfg.data.dataset, "dataset")?;
    let vp = resolve(&flags.vocab, &cfg.data.vocabulary, "vocab")?;
    let dataset = read_manifest(&dp)?;
    let vocab = read_vocabulary(&vp)?;
    Ok((dp, dataset, vp, vocab))
}

pub fn synth_gen(args: &SynthGenArgs) -> Result<Status> {
    let cfg = args.synth.config();
    let bench = generate_synthetic_dataset(&cfg, args.seed)?;
    let dataset = args.out.join("dataset.jsonl");
    let vocab = args.out.join("vocab.json");
    write_manifest(&bench.dataset, &dataset)?;
    write_vocabulary(&bench.vocabulary, &vocab)?;
    write_text(
        &args.out.join("synth.json"),
        &pretty(&json!({
            "config": cfg,
            "seed": args.seed,
            "class_objects": bench.class_objects,
            "class_directions": bench.class_directions,
        })),
    )?;
    sayln!(
        "wrote {} videos ({} classes) to {} and {}",
        bench.dataset.len(),
        cfg.classes,
        dataset.display(),
        vocab.display()
    );
    Ok(Status::Ok)
}

pub fn train(args: &TrainArgs) -> Result<Status> {
    let mut cfg = match &args.cfg.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    args.cfg.apply(&mut cfg)?;
    let (dp, dataset, vp, vocab) = load_data(&args.data, &cfg)?;
    cfg.data.dataset = Some(dp);
    cfg.data.vocabulary = Some(vp);
    let (train_set, _) = dataset.split_holdout(cfg.data.holdout_every);
    info!(
        "training on {} of {} videos",
        train_set.len(),
        dataset.len()
    );
    let pipeline = Pipeline::fit(&train_set, &vocab, cfg)?;
    pipeline.to_archive()?.write(&args.out)?;

    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.with_extension("log.jsonl"));
    let mut log = serde_json::to_string(&json!({ "config": pipeline.config }))?;
    log.push('\n');
    for e in &pipeline.log {
        log.push_str(&serde_json::to_string(e)?);
        log.push('\n');
    }
    write_text(&log_path, &log)?;
    for e in &pipeline.log {
        info!(
            "epoch {} lr {:.2e} loss {:.4} top1 {:.3}",
            e.epoch, e.lr, e.loss, e.train_top1
        );
    }
    match pipeline.log.last() {
        Some(e) => sayln!(
            "trained {} epoch{} on {} videos: loss {:.4}, train top-1 {:.3}",
            pipeline.log.len(),
            if pipeline.log.len() == 1 { "" } else { "s" },
            train_set.len(),
            e.loss,
            e.train_top1
        ),
        None => sayln!("no epochs requested; wrote the initialized model"),
    }
    sayln!(
        "checkpoint {}, log {}",
        args.out.display(),
        log_path.display()
    );
    Ok(Status::Ok)
}

fn load_pipeline(path: &Path) -> Result<Pipeline> {
    Pipeline::from_archive(&TensorArchive::read(path)?)
}

pub fn sample(args: &SampleArgs) -> Result<Status> {
    let mut pipeline = load_pipeline(&args.checkpoint)?;
    let overrides = [
        ("budget", args.budget.map(|v| v.to_string())),
        ("presample", args.presample.map(|v| v.to_string())),
        ("lambda_v", args.lambda_v.map(|v| v.to_string())),
        ("top_classes", args.top_classes.map(|v| v.to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            pipeline.config.set(k, &v)?;
        }
    }
    pipeline.config.validate()?;
    let (_, dataset, _, vocab) = load_data(&args.data, &pipeline.config)?;
    let seed = args.seed.unwrap_or(pipeline.config.train.seed);
    let picked: Vec<(usize, &tsqnet::data::VideoRecord)> = match &args.video {
        Some(id) => {
            let hit = dataset
                .videos
                .iter()
                .enumerate()
                .find(|(_, v)| v.id() == id)
                .ok_or_else(|| {
                    TsqError::InvalidConfig(format!("no video '{id}' in the dataset"))
                })?;
            vec![hit]
        }
        None => dataset.videos.iter().enumerate().collect(),
    };
    let mut selections = Vec::with_capacity(picked.len());
    for (i, v) in picked {
        selections.push(pipeline.select(args.policy, v, &vocab, video_seed(seed, i))?);
    }
    match &args.out {
        Some(path) => {
            write_text(
                path,
                &pretty(&json!({
                    "config": pipeline.config,
                    "policy": args.policy,
                    "seed": seed,
                    "selections": selections,
                })),
            )?;
            sayln!(
                "wrote {} selections to {}",
                selections.len(),
                path.display()
            );
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for s in &selections {
                let line = serde_json::to_string(s)?;
                match writeln!(out, "{line}") {
                    Ok(()) => {}
                    // A closed reader (`| head`) is not a failure.
                    Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
                    Err(e) => return Err(io_error(Path::new("<stdout>"), e)),
                }
            }
        }
    }
    Ok(Status::Ok)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn report_rows(reports: &[PolicyReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            vec![
                r.policy.to_string(),
                r.budget.to_string(),
                format!("{:.2}", r.flops),
                format!("{:.4}", r.map),
                format!("{:.4}", r.top1),
                fmt_opt(r.recall),
            ]
        })
        .collect()
}

pub fn eval(args: &EvalArgs) -> Result<Status> {
    let pipeline = load_pipeline(&args.checkpoint)?;
    let cfg = &pipeline.config;
    let (_, dataset, _, vocab) = load_data(&args.data, cfg)?;
    let videos = match args.split {
        Split::Holdout => dataset.split_holdout(cfg.data.holdout_every).1.videos,
        Split::All => dataset.videos,
    };
    if videos.is_empty() {
        return Err(TsqError::InvalidConfig(
            "the selected split is empty (try --split all)".into(),
        ));
    }
    let policies = if args.policies.is_empty() {
        Policy::ALL.to_vec()
    } else {
        args.policies.clone()
    };
    let budgets = if args.budgets.is_empty() {
        vec![pipeline.budget()]
    } else {
        args.budgets.clone()
    };
    let seed = args.seed.unwrap_or(cfg.train.seed);
    let mut reports = Vec::new();
    for &k in &budgets {
        if k == 0 || k > cfg.sampling.presample {
            return Err(TsqError::InvalidConfig(format!(
                "budget {k} must be in 1..={}",
                cfg.sampling.presample
            )));
        }
        info!(
            "evaluating {} policies at K={k} on {} videos",
            policies.len(),
            videos.len()
        );
        reports.extend(pipeline.evaluate(&videos, &vocab, &policies, k, seed)?);
    }
    let (coarse_map, coarse_top1) = pipeline.coarse_metrics(&videos, &vocab)?;

    sayln!(
        "{:<10} {:>3} {:>9} {:>7} {:>7} {:>7}",
        "policy",
        "K",
        "GFLOPs",
        "mAP",
        "top1",
        "recall"
    );
    for r in &reports {
        sayln!(
            "{:<10} {:>3} {:>9.2} {:>7.4} {:>7.4} {:>7}",
            r.policy.name(),
            r.budget,
            r.flops,
            r.map,
            r.top1,
            fmt_opt(r.recall)
        );
    }
    sayln!("coarse visual prediction: mAP {coarse_map:.4}, top1 {coarse_top1:.4}");

    let header = ["policy", "budget", "gflops", "map", "top1", "recall"];
    if let Some(path) = &args.out {
        let text = if is_csv(path) {
            csv_text(&header, &report_rows(&reports))?
        } else {
            pretty(&json!({
                "config": cfg,
                "checkpoint": args.checkpoint,
                "split": match args.split { Split::Holdout => "holdout", Split::All => "all" },
                "videos": videos.len(),
                "seed": seed,
                "coarse": { "map": coarse_map, "top1": coarse_top1 },
                "reports": reports,
            }))
        };
        write_text(path, &text)?;
    }
    if let Some(path) = &args.curve {
        let mut sorted = reports.clone();
        sorted.sort_by(|a, b| {
            a.policy
                .name()
                .cmp(b.policy.name())
                .then(a.flops.total_cmp(&b.flops))
                .then(a.budget.cmp(&b.budget))
        });
        write_text(path, &csv_text(&header, &report_rows(&sorted))?)?;
    }
    Ok(Status::Ok)
}

pub fn flops(args: &FlopsArgs) -> Result<Status> {
    let cfg: FlopsConfig = match &args.config {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| TsqError::InvalidConfig(format!("{}: {e}", p.display())))?,
        None => tsq_flops(args.presample, args.budget),
    };
    let b = cfg.breakdown()?;
    if args.json {
        say!("{}", pretty(&serde_json::to_value(&b)?));
    } else {
        say!("{}", b.render());
        if args.raw {
            sayln!("Raw total {}G", b.total_raw);
        }
    }
    Ok(Status::Ok)
}

pub fn gradcheck_cmd(args: &GradcheckArgs) -> Result<Status> {
    let mut cfg = RunConfig::default();
    let m = &mut cfg.model;
    m.classes = args.classes;
    m.feature_dim = args.dim;
    m.word_dim = args.embed_dim;
    m.object_count = args.objects;
    m.reduced_dim = args.reduced_dim;
    m.t_max = args.frames;
    m.top_objects = args.top_objects;
    if let Some(a) = args.alpha {
        cfg.set("alpha", &a.to_string())?;
    }
    if let Some(b) = args.beta {
        cfg.set("beta", &b.to_string())?;
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            TsqError::InvalidConfig(format!("--set expects KEY=VALUE, got '{kv}'"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if args.tolerance.is_nan() || args.tolerance <= 0.0 {
        return Err(TsqError::InvalidConfig(
            "--tolerance must be positive".into(),
        ));
    }
    let synth = tsqnet::data::SynthConfig {
        classes: args.classes,
        frames: args.frames,
        feature_dim: args.dim,
        objects: args.objects,
        embed_dim: args.embed_dim,
        per_class: 1,
        salient: args.frames.min(2),
        noise: 0.5,
    };
    let bench = generate_synthetic_dataset(&synth, args.seed)?;
    let q = cfg.model.queries();
    let visual = random_embedding_init(q, args.dim, Modality::Visual, args.seed ^ 0x5649_5355)?;
    let textual = random_embedding_init(
        q,
        args.embed_dim,
        Modality::Textual,
        args.seed ^ 0x5445_5854,
    )?;
    let model = TsqNet::new(cfg.model.clone(), visual, textual, args.seed)?;
    if let Some(name) = &args.corrupt {
        let names = model.parameter_names();
        if !names
            .iter()
            .any(|n| n == name || n.ends_with(&format!(".{name}")))
        {
            return Err(TsqError::InvalidConfig(format!(
                "no parameter tensor named '{name}'"
            )));
        }
    }
    let video = model.prepare(&bench.dataset.videos[0], &bench.vocabulary)?;
    let weights = cfg.train.loss_weights;
    let report = gradcheck(
        &model,
        &video,
        weights,
        args.tolerance,
        args.corrupt.as_deref(),
    )?;

    if args.json {
        say!(
            "{}",
            pretty(&json!({ "model": cfg.model, "loss_weights": weights, "report": report }))
        );
    } else {
        for t in &report.tensors {
            let verdict = if t.relative_error <= report.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            let kinks = if t.skipped > 0 {
                format!("  ({} entries at a kink)", t.skipped)
            } else {
                String::new()
            };
            sayln!(
                "{:<36} rel {:.3e}  abs {:.3e}  {verdict}{kinks}",
                t.name,
                t.relative_error,
                t.max_abs_error
            );
        }
        sayln!(
            "max relative error {:.3e} over {} tensors (tolerance {:.0e}): {}",
            report.max_relative_error,
            report.tensors.len(),
            report.tolerance,
            if report.passed { "PASS" } else { "FAIL" }
        );
        for t in report.failures() {
            sayln!("failed: {}", t.name);
        }
    }
    Ok(if report.passed {
        Status::Ok
    } else {
        Status::NumericFailure
    })
}

fn setting_label(row: &AblationRow) -> String {
    row.setting
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn ablate_cmd(args: &AblateArgs) -> Result<Status> {
    let grid = args
        .grid
        .iter()
        .map(|g| parse_grid(g))
        .collect::<Result<Vec<_>>>()?;
    if args.repeats == 0 {
        return Err(TsqError::InvalidConfig(
            "--repeats must be at least 1".into(),
        ));
    }
    let synth = args.synth.config();
    let on_disk = args.data.dataset.is_some() || args.data.vocab.is_some();
    let mut base = match (&args.cfg.config, on_disk) {
        (Some(p), _) => load_config(p)?,
        (None, true) => RunConfig::default(),
        (None, false) => desk_config(&synth, 4),
    };
    args.cfg.apply(&mut base)?;
    let seeds: Vec<u64> = (0..args.repeats).map(|i| base.train.seed + i).collect();
    let policies = [Policy::Tsq];

    let rows = if on_disk || base.data.dataset.is_some() {
        let (dp, dataset, vp, vocab) = load_data(&args.data, &base)?;
        base.data.dataset = Some(dp);
        base.data.vocabulary = Some(vp);
        ablate(&base, &grid, &seeds, |cfg, seed| {
            info!("run seed {seed}");
            let mut c = cfg.clone();
            c.train.seed = seed;
            Ok(run_holdout(&dataset, &vocab, &c, &policies)?.1)
        })?
    } else {
        synth.validate()?;
        ablate(&base, &grid, &seeds, |cfg, seed| {
            info!("run seed {seed}");
            run_synthetic(&synth, cfg, seed, &policies)
        })?
    };

    sayln!(
        "{:<28} {:>8} {:>8} {:>8} {:>8}  per-seed mAP",
        "setting",
        "mAP",
        "top1",
        "recall",
        "coarse"
    );
    for r in &rows {
        let maps: Vec<String> = r.maps.iter().map(|m| format!("{m:.3}")).collect();
        sayln!(
            "{:<28} {:>8.4} {:>8.4} {:>8} {:>8.4}  {}",
            setting_label(r),
            r.median_map,
            r.median_top1,
            fmt_opt(r.median_recall),
            r.median_coarse_map,
            maps.join(" ")
        );
    }
    if let Some(path) = &args.out {
        let text = if is_csv(path) {
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        setting_label(r),
                        format!("{:.4}", r.median_map),
                        format!("{:.4}", r.median_top1),
                        fmt_opt(r.median_recall),
                        format!("{:.4}", r.median_coarse_map),
                        r.seeds.len().to_string(),
                    ]
                })
                .collect();
            csv_text(
                &["setting", "map", "top1", "recall", "coarse_map", "seeds"],
                &table,
            )?
        } else {
            let synth_echo = if on_disk || base.data.dataset.is_some() {
                Value::Null
            } else {
                json!(synth)
            };
            pretty(
                &json!({ "config": base, "synth": synth_echo, "grid": grid, "seeds": seeds, "rows": rows }),
            )
        };
        write_text(path, &text)?;
    }
    Ok(Status::Ok)
}
