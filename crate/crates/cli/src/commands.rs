use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hiex_core::contextfree::{
    context_free_evidence, match_pattern, polarity_scan, ContextFreeEvidence, EditConfig, InteractionPattern,
};
use hiex_core::gateway::{Head, PredictorHandle};
use hiex_core::hierarchy::{explain as explain_instance, sigma_grid, ExplainConfig};
use hiex_core::rng::derive_seed;
use hiex_core::sampler::{Instance, InstanceKind, Metric, SamplerConfig};
use hiex_core::synthbench::{
    run_synthetic, toy_corpus, toy_sentences, toy_text_model, BenchConfig, GlmConfig, SyntheticFunction, TOY_PATTERN,
};
use serde::Serialize;

use crate::inputs::{format_instance, parse_instance, read_instances, read_labelled};
use crate::settings::{pick, FileConfig};
use crate::{BenchArgs, CommonArgs, ContextFreeArgs, ExplainArgs, MakeToyArgs, SamplerArgs};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    hiex_core::Error::Config(msg.into()).into()
}

/// Resolved settings written next to every output.
#[derive(Debug, Serialize)]
struct RunRecord<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    predictor: Option<String>,
    settings: T,
}

impl<T: Serialize> RunRecord<'_, T> {
    fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run records serialise")
    }

    /// One `# run: {...}` line for CSV and TSV files.
    fn comment(&self) -> String {
        format!("# run: {}\n", serde_json::to_string(self).expect("run records serialise"))
    }
}

fn setup(common: &CommonArgs, file: &FileConfig) -> Result<u64> {
    let seed = common
        .seed
        .or(file.seed)
        .ok_or_else(|| usage("--seed is required (or `seed` in the config file)"))?;
    if let Some(jobs) = common.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        // fails only when a pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(seed)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn predictor(args: &SamplerArgs, file: &FileConfig) -> Result<(String, PredictorHandle)> {
    let spec = args
        .predictor
        .clone()
        .or_else(|| file.predictor.clone())
        .ok_or_else(|| usage("--predictor is required"))?;
    let mut f = PredictorHandle::from_spec(&spec)?;
    if let Some(head) = args.head.clone().or_else(|| file.head.clone()) {
        f = f.with_head(match head.as_str() {
            "regression" => Head::Regression,
            "probability" => Head::Probability,
            other => return Err(usage(format!("unknown head {other:?} (expected regression|probability)"))),
        });
    }
    Ok((spec, f))
}

fn default_metric(x: &Instance) -> Metric {
    match x.kind() {
        InstanceKind::TokenSequence => Metric::Edit,
        InstanceKind::Binary => Metric::Cosine,
        InstanceKind::Continuous | InstanceKind::Mixed => Metric::L2,
    }
}

fn default_sigma(metric: Metric) -> f64 {
    match metric {
        Metric::L2 => 0.6,
        Metric::Cosine => 0.4,
        Metric::Edit => 4.0,
    }
}

fn explain_config(args: &SamplerArgs, file: &FileConfig, seed: u64, first: &Instance) -> Result<ExplainConfig> {
    let metric = match args.metric.clone().or_else(|| file.metric.clone()) {
        Some(m) => m.parse::<Metric>()?,
        None => default_metric(first),
    };
    let sigma = pick(args.sigma, file.sigma, default_sigma(metric));
    let n = pick(args.n_samples, file.n_samples, 1000);
    let mut cfg = ExplainConfig::new(SamplerConfig::new(n, sigma, metric, seed));
    cfg.stop.max_levels = args.levels_max.or(file.levels_max);
    cfg.stop.min_improvement = pick(args.stop_improvement, file.stop_improvement, cfg.stop.min_improvement);
    cfg.stop.patience = pick(args.stop_patience, file.stop_patience, cfg.stop.patience);
    if !(cfg.stop.min_improvement >= 0.0) {
        return Err(usage("--stop-improvement must be non-negative"));
    }
    if cfg.stop.patience == 0 {
        return Err(usage("--stop-patience must be at least 1"));
    }
    cfg.logit_space = !(args.raw_probability || file.raw_probability.unwrap_or(false));
    cfg.sampler.validate_for(first)?;
    Ok(cfg)
}

pub fn explain(a: &ExplainArgs, detect_only: bool) -> Result<()> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let seed = setup(&a.common, &file)?;
    let (spec, f) = predictor(&a.sampler, &file)?;
    let instances = match (&a.instance, &a.instances_file) {
        (Some(text), None) => vec![parse_instance(text, &f)?],
        (None, Some(path)) => read_instances(path, &f)?,
        _ => return Err(usage("give --instance or --instances-file")),
    };
    if instances.is_empty() {
        return Err(usage("no instances to explain"));
    }
    let mut cfg = explain_config(&a.sampler, &file, seed, &instances[0])?;
    if detect_only {
        cfg.stop.max_levels = Some(0);
    }
    let command = if detect_only { "detect" } else { "explain" };
    let single = instances.len() == 1;
    for (i, x) in instances.iter().enumerate() {
        let mut c = cfg.clone();
        if !single {
            c.sampler.seed = derive_seed(seed, "instance", i as u64);
        }
        let record = RunRecord {
            command,
            seed,
            predictor: Some(spec.clone()),
            settings: serde_json::json!({"instance": format_instance(x), "explain": c}),
        };
        let expl = explain_instance(x, &f, &c)?;
        let stem = if single { String::new() } else { format!("_{i}") };
        if detect_only {
            let ranking: Vec<_> = expl
                .ranking
                .iter()
                .map(|c| serde_json::json!({"indices": c.indices, "strength": c.strength}))
                .collect();
            write_json(
                &a.common.out.join(format!("ranking{stem}.json")),
                &serde_json::json!({"run": record.json(), "ranking": ranking}),
            )?;
            if !single {
                println!("instance {i}");
            }
            println!("rank  indices          strength");
            for (r, cand) in expl.ranking.iter().take(10).enumerate() {
                println!("{:<5} {:<16} {:.6e}", r + 1, format!("{:?}", cand.indices), cand.strength);
            }
        } else {
            let mut json = expl.to_json_value();
            json["run"] = record.json();
            write_json(&a.common.out.join(format!("explanation{stem}.json")), &json)?;
            write(
                &a.common.out.join(format!("explanation{stem}.tsv")),
                &(record.comment() + &expl.to_tsv()),
            )?;
            if !single {
                println!("instance {i}");
            }
            print!("{}", expl.level_table());
        }
    }
    Ok(())
}

/// `(sigma, matched, detected, fraction positive, fraction negative)`.
type SweepRow = (f64, usize, usize, Option<f64>, Option<f64>);

fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
    let mut s = String::from("sigma,n_matched,n_detected,frac_pos,frac_neg\n");
    for (sigma, m, d, p, n) in rows {
        let _ = writeln!(s, "{sigma},{m},{d},{},{}", opt(*p), opt(*n));
    }
    s
}

pub fn contextfree(a: &ContextFreeArgs) -> Result<()> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let seed = setup(&a.common, &file)?;
    let (spec, f) = predictor(&a.sampler, &file)?;
    let pattern_text = a
        .pattern
        .clone()
        .or_else(|| file.pattern.clone())
        .ok_or_else(|| usage("--pattern is required"))?;
    let pattern = InteractionPattern::parse(&pattern_text)?;
    let instances = read_instances(&a.instances_file, &f)?;
    let Some(first) = instances.first() else {
        return Err(usage(format!("{} has no instances", a.instances_file.display())));
    };
    let cfg = explain_config(&a.sampler, &file, seed, first)?;
    let do_edit = if a.no_edit { false } else if a.edit { true } else { file.edit.unwrap_or(true) };
    let edit = EditConfig {
        c: pick(a.c, file.c, 3.0),
        fine_tune_steps: pick(a.fine_tune_steps, file.fine_tune_steps, EditConfig::default().fine_tune_steps),
        seed: derive_seed(seed, "edit", 0),
        ..EditConfig::default()
    };
    edit.validate()?;
    let record = RunRecord {
        command: "contextfree",
        seed,
        predictor: Some(spec),
        settings: serde_json::json!({
            "instances_file": a.instances_file,
            "holdout": a.holdout,
            "pattern": pattern,
            "explain": cfg,
            "edit": (do_edit && !a.sigma_grid).then_some(&edit),
            "sigma_grid": a.sigma_grid,
        }),
    };
    let out = &a.common.out;

    if a.sigma_grid {
        let grid = sigma_grid(&instances, cfg.sampler.metric)?;
        let mut rows = Vec::new();
        let mut reports = Vec::new();
        for sigma in grid {
            let mut c = cfg.clone();
            c.sampler.sigma = sigma;
            let r = polarity_scan(&pattern, &instances, &f, &c)?;
            println!(
                "sigma {sigma:.4}: matched {} detected {} positive {:?}",
                r.n_matched, r.n_detected, r.fraction_positive
            );
            rows.push((sigma, r.n_matched, r.n_detected, r.fraction_positive, r.fraction_negative));
            reports.push(r);
        }
        write(&out.join("sweep.csv"), &(record.comment() + &sweep_csv(&rows)))?;
        write_json(&out.join("sweep.json"), &serde_json::json!({"run": record.json(), "reports": reports}))?;
        return Ok(());
    }

    let holdout = match &a.holdout {
        Some(path) => Some(read_labelled(path, &f)?),
        None => None,
    };
    let evidence = if do_edit {
        context_free_evidence(
            &pattern,
            &instances,
            &f,
            &cfg,
            &edit,
            holdout.as_ref().map(|(x, y)| (x.as_slice(), y.as_slice())),
        )?
    } else {
        let n_matched = instances.iter().filter(|x| match_pattern(&pattern, x).is_some()).count();
        if n_matched < 2 {
            return Err(hiex_core::Error::Precondition(format!(
                "need at least two instances matching {}, found {n_matched}",
                pattern.label()
            ))
            .into());
        }
        let before = polarity_scan(&pattern, &instances, &f, &cfg)?;
        ContextFreeEvidence {
            pattern: pattern.clone(),
            inconclusive: before.n_detected == 0,
            before,
            after: None,
            edited_instance_id: None,
            edited_level: None,
            edit: edit.clone(),
            metric: None,
            edited_model: None,
        }
    };
    let mut json = evidence.to_json_value();
    json["run"] = record.json();
    write_json(&out.join("evidence.json"), &json)?;
    write(&out.join("table.csv"), &(record.comment() + &evidence.to_csv()))?;
    if let Some(model) = &evidence.edited_model {
        model.save_network_file(&out.join("edited_model.json"))?;
    }
    print!("{}", evidence.to_csv());
    if let Some(m) = &evidence.metric {
        println!("{}: {:.4} -> {:.4} (delta {:+.4})", m.name, m.before, m.after, m.delta);
    }
    if evidence.inconclusive {
        println!("inconclusive: {} was never detected", pattern.label());
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let seed = setup(&a.common, &file)?;
    let id = a.function.clone().or_else(|| file.function.clone()).unwrap_or_else(|| "F1".into());
    let function = SyntheticFunction::from_id(&id)?;
    let mut cfg = BenchConfig::new(function, seed);
    cfg.trials = pick(a.trials, file.trials, cfg.trials);
    cfg.instances_per_trial = pick(a.instances, file.instances, cfg.instances_per_trial);
    cfg.sigma = pick(a.sigma, file.sigma, cfg.sigma);
    cfg.n_samples = pick(a.n_samples, file.n_samples, cfg.n_samples);
    cfg.probes = pick(a.probes, file.probes, cfg.probes);
    if a.no_glm || file.glm == Some(false) {
        cfg.glm = None;
    } else {
        cfg.glm = Some(GlmConfig::default());
    }
    cfg.validate()?;
    let record = RunRecord {
        command: "bench",
        seed,
        predictor: None,
        settings: &cfg,
    };
    let report = run_synthetic(&cfg)?;
    let out = &a.common.out;
    write(&out.join("bench.csv"), &(record.comment() + &report.to_csv()))?;
    let mut json = report.to_json_value();
    json["run"] = record.json();
    write_json(&out.join("bench_summary.json"), &json)?;

    for t in report.trials.iter().filter(|t| !t.valid) {
        println!("trial {} excluded: base model train R² {:.4}", t.trial, t.base_model_r2);
    }
    println!("{} instances", report.results.len());
    if let (Some(r), Some(s)) = (report.r_precision(), report.std_mse()) {
        println!("R-precision {:.3} ± {:.3}", r.mean, r.std);
        println!("std MSE     {:.4} ± {:.4}", s.mean, s.std);
        let total: f64 = report.results.iter().map(|r| r.runtimes.explain.total()).sum();
        println!("explain time {:.2}s per instance", total / report.results.len() as f64);
    }
    Ok(())
}

pub fn make_toy(a: &MakeToyArgs) -> Result<()> {
    if a.sentences < 2 {
        bail!(usage("--sentences must be at least 2"));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let model = a.out.join("toy_model.json");
    toy_text_model().save_network_file(&model)?;
    let lines: String = toy_sentences(a.sentences, a.seed)
        .iter()
        .map(|x| x.token_list().expect("token instances").join(" ") + "\n")
        .collect();
    write(&a.out.join("sentences.txt"), &lines)?;
    let (hx, hy) = toy_corpus(a.holdout, a.seed);
    let holdout: String = hx
        .iter()
        .zip(&hy)
        .map(|(x, y)| format!("{y}\t{}\n", x.token_list().expect("token instances").join(" ")))
        .collect();
    write(&a.out.join("holdout.tsv"), &holdout)?;
    println!(
        "wrote {} ; try: hiex contextfree --predictor network:{} --instances-file {} --holdout {} --pattern {} --n-samples 600 --seed 0",
        a.out.display(),
        model.display(),
        a.out.join("sentences.txt").display(),
        a.out.join("holdout.tsv").display(),
        TOY_PATTERN.join(","),
    );
    Ok(())
}
