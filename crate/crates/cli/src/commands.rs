use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fsec_core::corpus::{
    convert_maven, filter_min_instances, load_canonical, save_canonical, split_by_event_types,
    Corpus, Instance, SplitSpec,
};
use fsec_core::embeddings::{load_table, resolve_path, EmbeddingTable};
use fsec_core::encoder::checkpoint;
use fsec_core::sampling::{MetaTask, Sampler, SamplerConfig};
use fsec_core::stats::{count_trigger_overlap, event_trigger_stats, trigger_event_stats};
use fsec_core::synthetic::{skewed_corpus, SkewedCorpusConfig};
use fsec_core::train::{evaluate, train, EvalConfig, EvalReport, Model, TrainConfig};

use crate::args::{
    AnalyzeArgs, Cli, Command, CorpusCommand, EmbeddingArgs, EvalArgs, ReplayArgs, ReportArgs,
    SampleArgs, SamplerArgs, TrainArgs,
};
use crate::manifest::RunManifest;

/// Settings shared by `sample` and `eval`, as read from `--config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct EpisodeSettings {
    #[serde(flatten)]
    sampler: SamplerConfig,
    tasks: usize,
    seeds: Vec<u64>,
    workers: usize,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            tasks: 10_000,
            seeds: vec![1, 2, 3, 4, 5],
            workers: 0,
        }
    }
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let finish = |mut manifest: RunManifest, artifact: &Path| -> Result<()> {
        manifest.duration_secs = started.elapsed().as_secs_f64();
        manifest.write_beside(artifact)?;
        Ok(())
    };
    match cli.command {
        Command::Corpus(cmd) => corpus(cmd, argv, finish),
        Command::Analyze(args) => analyze(args, argv, finish),
        Command::Sample(args) => sample(args, argv, finish),
        Command::Train(args) => train_cmd(args, argv, finish),
        Command::Eval(args) => eval(args, argv, finish),
        Command::Report(args) => report(args),
        Command::Replay(args) => replay(args),
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn apply_sampler(args: &SamplerArgs, cfg: &mut SamplerConfig) {
    if let Some(n) = args.n_way {
        cfg.n_way = n;
    }
    if let Some(k) = args.k_shot {
        cfg.k_shot = k;
    }
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(p) = args.cos_p {
        cfg.cos_p = p;
    }
    if let Some(u) = args.cos_u {
        cfg.cos_u = u;
    }
    if args.cos_query_uniform {
        cfg.cos_query_confusing = false;
    }
}

fn load_embeddings(args: &EmbeddingArgs) -> Result<Option<(PathBuf, EmbeddingTable)>> {
    match resolve_path(args.embeddings.as_deref()) {
        None => Ok(None),
        Some(path) => {
            let table = load_table(&path, args.dim)
                .with_context(|| format!("loading embeddings {}", path.display()))?;
            Ok(Some((path, table)))
        }
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    load_canonical(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn corpus(
    cmd: CorpusCommand,
    argv: &[String],
    finish: impl Fn(RunManifest, &Path) -> Result<()>,
) -> Result<()> {
    let mut manifest = RunManifest::new("corpus", argv)?;
    match cmd {
        CorpusCommand::Convert { input, out } => {
            let instances =
                convert_maven(&input).with_context(|| format!("converting {}", input.display()))?;
            save_canonical(&out, &instances)?;
            eprintln!("wrote {} instances to {}", instances.len(), out.display());
            manifest.inputs = vec![input];
            manifest.outputs = vec![out.clone()];
            finish(manifest, &out)
        }
        CorpusCommand::Filter { corpus, min, out } => {
            let loaded = load_corpus(&corpus)?;
            let kept = filter_min_instances(&loaded, min)?;
            save_canonical(&out, kept.instances())?;
            eprintln!(
                "kept {} of {} event types ({} instances)",
                kept.n_event_types(),
                loaded.n_event_types(),
                kept.len()
            );
            manifest.config = serde_json::json!({ "min": min });
            manifest.inputs = vec![corpus];
            manifest.outputs = vec![out.clone()];
            finish(manifest, &out)
        }
        CorpusCommand::Split {
            corpus,
            split,
            out_dir,
        } => {
            let loaded = load_corpus(&corpus)?;
            let spec = SplitSpec::load(&split)
                .with_context(|| format!("loading split {}", split.display()))?;
            let parts = split_by_event_types(&loaded, &spec)?;
            if parts.dropped_event_types > 0 {
                eprintln!(
                    "warning: {} event types ({} instances) not listed in the split were dropped",
                    parts.dropped_event_types, parts.dropped_instances
                );
            }
            fs::create_dir_all(&out_dir)?;
            let mut outputs = Vec::new();
            for (name, part) in [
                ("train", &parts.train),
                ("dev", &parts.dev),
                ("test", &parts.test),
            ] {
                let path = out_dir.join(format!("{name}.jsonl"));
                save_canonical(&path, part.instances())?;
                outputs.push(path);
            }
            manifest.config = serde_json::to_value(&spec)?;
            manifest.inputs = vec![corpus, split];
            manifest.outputs = outputs;
            finish(manifest, &out_dir.join("split"))
        }
        CorpusCommand::Synth {
            out,
            events,
            instances,
            dominant_fraction,
            rare,
            vocab,
            context_words,
            seed,
        } => {
            let cfg = SkewedCorpusConfig {
                n_events: events,
                instances_per_event: instances,
                dominant_fraction,
                rare_triggers: rare,
                vocab,
                context_words,
                seed,
                ..Default::default()
            };
            let generated = skewed_corpus(&cfg)?;
            save_canonical(&out, generated.instances())?;
            manifest.config = serde_json::to_value(&cfg)?;
            manifest.seeds = vec![seed];
            manifest.outputs = vec![out.clone()];
            finish(manifest, &out)
        }
    }
}

#[derive(Serialize)]
struct OverlapSummary {
    tasks: usize,
    overlapping: usize,
    rate: f64,
    sampler: SamplerConfig,
}

#[derive(Serialize)]
struct AnalysisReport {
    corpus: PathBuf,
    min_instances: Option<usize>,
    instances: usize,
    event_trigger: fsec_core::stats::EventTriggerStats,
    trigger_event: fsec_core::stats::TriggerEventStats,
    overlap: Option<OverlapSummary>,
}

fn render_analysis(r: &AnalysisReport) -> String {
    let et = &r.event_trigger;
    let te = &r.trigger_event;
    let mut lines = vec![format!(
        "corpus: {} ({} instances)",
        r.corpus.display(),
        r.instances
    )];
    if let Some(min) = r.min_instances {
        lines.push(format!("filter: event types with >= {min} instances"));
    }
    lines.push(format!("{:<36}{:>10}", "event types", et.n_event_types));
    lines.push(format!(
        "{:<36}{:>10.2}",
        "avg triggers per event", et.avg_triggers_per_event
    ));
    lines.push(format!(
        "{:<36}{:>10.4}",
        format!("avg top-{} trigger instance fraction", et.top_m),
        et.avg_top_m_instance_fraction
    ));
    lines.push(format!(
        "{:<36}{:>10}",
        "distinct top triggers", te.n_triggers
    ));
    lines.push(format!(
        "{:<36}{:>10.2}",
        "avg event types per top trigger", te.avg_events_per_top_trigger
    ));
    for (x, f) in &te.top_x_fractions {
        lines.push(format!(
            "{:<36}{:>10.4}",
            format!("avg top-{x} event type fraction"),
            f
        ));
    }
    if let Some(o) = &r.overlap {
        lines.push(format!(
            "{:<36}{:>10}",
            format!("overlapping {} tasks ({})", o.sampler.method, o.tasks),
            format!("{}", o.overlapping)
        ));
        lines.push(format!("{:<36}{:>10.4}", "overlap rate", o.rate));
    }
    lines.join("\n") + "\n"
}

fn analyze(
    args: AnalyzeArgs,
    argv: &[String],
    finish: impl Fn(RunManifest, &Path) -> Result<()>,
) -> Result<()> {
    let loaded = load_corpus(&args.corpus)?;
    let corpus = match args.min {
        Some(min) => filter_min_instances(&loaded, min)?,
        None => loaded,
    };
    let event_trigger = event_trigger_stats(&corpus, args.top_m)?;
    let trigger_event = trigger_event_stats(&corpus, args.top_m, &args.top_x)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let overlap = match args.overlap_tasks {
        None => None,
        Some(n) => {
            let mut cfg = SamplerConfig::default();
            apply_sampler(&args.sampler, &mut cfg);
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let sampler = Sampler::new(&corpus, cfg.clone(), embeddings.as_ref().map(|(_, t)| t))?;
            let tasks = (0..n as u64)
                .map(|i| sampler.task(i))
                .collect::<Result<Vec<MetaTask>, _>>()?;
            let (overlapping, total) = count_trigger_overlap(&corpus, &tasks);
            Some(OverlapSummary {
                tasks: total,
                overlapping,
                rate: if total == 0 {
                    0.0
                } else {
                    overlapping as f64 / total as f64
                },
                sampler: cfg,
            })
        }
    };
    let report = AnalysisReport {
        corpus: args.corpus.clone(),
        min_instances: args.min,
        instances: corpus.len(),
        event_trigger,
        trigger_event,
        overlap,
    };
    let text = if args.json {
        serde_json::to_string_pretty(&report)? + "\n"
    } else {
        render_analysis(&report)
    };
    emit(args.out.as_deref(), &text)?;
    if let Some(out) = &args.out {
        let mut manifest = RunManifest::new("analyze", argv)?;
        manifest.config = serde_json::json!({
            "min": args.min,
            "top_m": args.top_m,
            "top_x": args.top_x,
            "overlap": report.overlap.as_ref().map(|o| &o.sampler),
        });
        manifest.seeds = report.overlap.iter().map(|o| o.sampler.seed).collect();
        manifest.inputs = vec![args.corpus.clone()];
        manifest.outputs = vec![out.clone()];
        finish(manifest, out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    task_id: u64,
    role: &'static str,
    #[serde(flatten)]
    instance: &'a Instance,
}

fn sample(
    args: SampleArgs,
    argv: &[String],
    finish: impl Fn(RunManifest, &Path) -> Result<()>,
) -> Result<()> {
    let mut settings: EpisodeSettings = load_config(args.config.as_deref())?;
    apply_sampler(&args.sampler, &mut settings.sampler);
    if let Some(seed) = args.seed {
        settings.sampler.seed = seed;
    }
    let tasks = args.tasks.unwrap_or(if args.config.is_some() {
        settings.tasks
    } else {
        10
    });
    let corpus = load_corpus(&args.corpus)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let sampler = Sampler::new(
        &corpus,
        settings.sampler.clone(),
        embeddings.as_ref().map(|(_, t)| t),
    )?;
    let mut text = String::new();
    for id in 0..tasks as u64 {
        let task = sampler.task(id)?;
        let episode = task.resolve(&corpus);
        let roles = episode
            .support
            .iter()
            .flatten()
            .map(|i| ("support", *i))
            .chain(std::iter::once(("query", episode.query)));
        for (role, instance) in roles {
            text.push_str(&serde_json::to_string(&SampleRecord {
                task_id: id,
                role,
                instance,
            })?);
            text.push('\n');
        }
    }
    emit(args.out.as_deref(), &text)?;
    if let Some(out) = &args.out {
        let mut manifest = RunManifest::new("sample", argv)?;
        manifest.config = serde_json::json!({ "sampler": settings.sampler, "tasks": tasks });
        manifest.seeds = vec![settings.sampler.seed];
        manifest.inputs = std::iter::once(args.corpus.clone())
            .chain(embeddings.map(|(p, _)| p))
            .collect();
        manifest.outputs = vec![out.clone()];
        finish(manifest, out)?;
    }
    Ok(())
}

fn train_cmd(
    args: TrainArgs,
    argv: &[String],
    finish: impl Fn(RunManifest, &Path) -> Result<()>,
) -> Result<()> {
    let mut cfg: TrainConfig = load_config(args.config.as_deref())?;
    let s = &args.sampler;
    if let Some(n) = s.n_way {
        cfg.n_way = n;
    }
    if let Some(k) = s.k_shot {
        cfg.k_shot = k;
    }
    if let Some(m) = s.method {
        cfg.train_method = m;
    }
    if let Some(p) = s.cos_p {
        cfg.cos_p = p;
    }
    if let Some(u) = s.cos_u {
        cfg.cos_u = u;
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(
        lr,
        episodes_per_epoch,
        patience,
        max_epochs,
        dev_tasks,
        alpha,
        beta,
        eps,
        adv_scope,
        seed
    );

    let train_corpus = load_corpus(&args.train)?;
    let dev_corpus = load_corpus(&args.dev)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let outcome = train(
        &train_corpus,
        &dev_corpus,
        embeddings.as_ref().map(|(_, t)| t),
        &cfg,
    )?;

    checkpoint::save(
        &args.out,
        &outcome.params,
        Some(serde_json::to_value(&cfg)?),
    )
    .with_context(|| format!("writing checkpoint {}", args.out.display()))?;
    let history_path = PathBuf::from(format!("{}.history.json", args.out.display()));
    let history = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "best_dev_accuracy": outcome.best_dev_accuracy,
        "epochs": outcome.history,
    });
    fs::write(
        &history_path,
        serde_json::to_string_pretty(&history)? + "\n",
    )?;

    println!(
        "{:>6}  {:>10}  {:>10}  {:>10}  {:>10}  {:>8}",
        "epoch", "l_ce", "l_adv", "l_rec", "total", "dev acc"
    );
    for h in &outcome.history {
        println!(
            "{:>6}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>8.2}",
            h.epoch,
            h.mean_l_ce,
            h.mean_l_adv,
            h.mean_l_rec,
            h.mean_total,
            h.dev_accuracy * 100.0
        );
    }
    println!(
        "best epoch {} (dev accuracy {:.2})",
        outcome.best_epoch,
        outcome.best_dev_accuracy * 100.0
    );

    let mut manifest = RunManifest::new("train", argv)?;
    manifest.config = serde_json::to_value(&cfg)?;
    manifest.seeds = vec![cfg.seed];
    manifest.inputs = [args.train.clone(), args.dev.clone()]
        .into_iter()
        .chain(embeddings.map(|(p, _)| p))
        .collect();
    manifest.outputs = vec![args.out.clone(), history_path];
    finish(manifest, &args.out)
}

fn eval(
    args: EvalArgs,
    argv: &[String],
    finish: impl Fn(RunManifest, &Path) -> Result<()>,
) -> Result<()> {
    let mut settings: EpisodeSettings = load_config(args.config.as_deref())?;
    apply_sampler(&args.sampler, &mut settings.sampler);
    if let Some(t) = args.tasks {
        settings.tasks = t;
    }
    if let Some(seeds) = &args.seeds {
        settings.seeds = seeds.clone();
    }
    if let Some(w) = args.workers {
        settings.workers = w;
    }
    let workers = if settings.workers == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        settings.workers
    };
    let corpus = load_corpus(&args.corpus)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let table = embeddings.as_ref().map(|(_, t)| t);

    let loaded;
    let mut inputs = vec![args.corpus.clone()];
    let model = match args.model.as_str() {
        "string-match" => Model::StringMatch,
        "glove-match" => Model::GloveMatch,
        path => {
            let path = Path::new(path);
            if !checkpoint::is_checkpoint(path) {
                bail!(
                    "`{}` is neither string-match, glove-match nor a checkpoint file",
                    path.display()
                );
            }
            loaded = checkpoint::load(path)?.0;
            inputs.push(path.to_path_buf());
            Model::Encoder(&loaded)
        }
    };
    let cfg = EvalConfig {
        sampler: settings.sampler.clone(),
        n_tasks: settings.tasks,
        seeds: settings.seeds.clone(),
        workers,
    };
    let report = evaluate(&model, &corpus, table, &cfg)?;
    print!("{}", report.render_table());
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
        let mut manifest = RunManifest::new("eval", argv)?;
        manifest.config = serde_json::json!({
            "model": args.model,
            "sampler": settings.sampler,
            "tasks": settings.tasks,
            "seeds": settings.seeds,
            "workers": workers,
        });
        manifest.seeds = settings.seeds.clone();
        inputs.extend(embeddings.map(|(p, _)| p));
        manifest.inputs = inputs;
        manifest.outputs = vec![out.clone()];
        finish(manifest, out)?;
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut text = format!(
        "{:<16}  {:<6}  {:<14}  {:>8}  {:>5}  {:>15}\n",
        "model", "method", "setting", "tasks", "seeds", "accuracy"
    );
    for path in &args.reports {
        let raw =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r: EvalReport = serde_json::from_str(&raw)
            .with_context(|| format!("parsing report {}", path.display()))?;
        text.push_str(&format!(
            "{:<16}  {:<6}  {:<14}  {:>8}  {:>5}  {:>15}\n",
            r.model,
            r.method.to_string(),
            format!("{}-way-{}-shot", r.n_way, r.k_shot),
            r.n_tasks,
            r.seeds.len(),
            format!("{:.2} ± {:.2}", r.mean * 100.0, r.std * 100.0)
        ));
    }
    emit(args.out.as_deref(), &text)
}

/// Replaces the value of `flag` in `argv`, in either `--flag v` or `--flag=v` form.
fn replace_flag(argv: &mut [String], flag: &str, value: &str) -> bool {
    let prefix = format!("{flag}=");
    for i in 0..argv.len() {
        if argv[i] == flag && i + 1 < argv.len() {
            argv[i + 1] = value.to_string();
            return true;
        }
        if argv[i].starts_with(&prefix) {
            argv[i] = format!("{prefix}{value}");
            return true;
        }
    }
    false
}

fn replay(args: ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    let mut argv = manifest.argv.clone();
    if argv.first().map(String::as_str) == Some("replay") {
        bail!("manifest records a replay; refusing to recurse");
    }
    if let Some(out) = &args.out {
        let out = std::path::absolute(out)?;
        let out = out.to_string_lossy();
        if !replace_flag(&mut argv, "--out", &out) && !replace_flag(&mut argv, "--out-dir", &out) {
            bail!("recorded command has no output flag to redirect");
        }
    }
    std::env::set_current_dir(&manifest.cwd)
        .with_context(|| format!("entering recorded directory {}", manifest.cwd.display()))?;
    let cli = Cli::try_parse_from(std::iter::once("fsec".to_string()).chain(argv.iter().cloned()))?;
    run(cli, &argv)
}
