use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use poi_rag::eval::{plan_sections, render_table, run_experiment, ExperimentConfig, MetricReport};
use poi_rag::ingestion::{preprocess, Dataset, DatasetFormat, ParseMode};
use poi_rag::llm::{
    Journal, LlmClient, LlmProvider, MockProvider, MockRule, OpenAiCompatible, RetryPolicy,
};
use poi_rag::pipeline::{Pipeline, PipelineConfig};
use poi_rag::synth::{generate_tsv, SynthConfig};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::args::{
    Cli, Command, EvaluateArgs, PreprocessArgs, ProviderKind, RecommendArgs, SynthArgs,
};
use crate::config::{
    pipeline_config, preprocess_config, prompt_config, FileConfig, ProviderSettings,
};

/// How a command finished when it did not error outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Strict evaluation saw failed queries.
    QueriesFailed,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Status> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Preprocess(args) => cmd_preprocess(&args, &file, out),
        Command::Recommend(args) => cmd_recommend(&args, &file, out),
        Command::Evaluate(args) => cmd_evaluate(&args, &file, out),
        Command::Synth(args) => cmd_synth(&args, out),
    }
}

pub fn cmd_preprocess(
    args: &PreprocessArgs,
    file: &FileConfig,
    out: &mut dyn Write,
) -> Result<Status> {
    let cfg = preprocess_config(args, file);
    let format: DatasetFormat = args
        .format
        .clone()
        .or_else(|| file.format.clone())
        .unwrap_or_else(|| "foursquare-tsv".into())
        .parse()?;
    let mode = if args.strict || file.strict.unwrap_or(false) {
        ParseMode::Strict
    } else {
        ParseMode::Lenient
    };
    let input =
        File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let (dataset, report) = preprocess(BufReader::new(input), format, mode, &cfg)?;

    let mut w = BufWriter::new(
        File::create(&args.output)
            .with_context(|| format!("creating {}", args.output.display()))?,
    );
    dataset.write_json(&mut w)?;
    w.flush()?;

    writeln!(out, "check-ins read: {}", report.checkins_read)?;
    writeln!(out, "malformed lines skipped: {}", report.malformed)?;
    writeln!(
        out,
        "POIs with conflicting coordinates: {}",
        report.divergent_coordinates
    )?;
    writeln!(out, "sessions: {}", report.sessions)?;
    for (i, pass) in report.filters.passes.iter().enumerate() {
        writeln!(
            out,
            "filter pass {}: dropped {} check-ins, {} trajectories, {} users",
            i + 1,
            pass.checkins_dropped,
            pass.trajectories_dropped,
            pass.users_dropped
        )?;
    }
    writeln!(out, "users: {}", report.users)?;
    writeln!(out, "POIs: {}", report.pois)?;
    writeln!(out, "trajectories: {}", report.database + report.test)?;
    writeln!(out, "database trajectories: {}", report.database)?;
    writeln!(out, "test trajectories: {}", report.test)?;
    Ok(Status::Success)
}

fn load_dataset(path: &Path) -> Result<(Dataset, String)> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading dataset {}", path.display()))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let ds = Dataset::read_json(bytes.as_slice())
        .with_context(|| format!("loading dataset {}", path.display()))?;
    Ok((ds, digest))
}

fn build_client(p: &ProviderSettings, k_out: usize) -> Result<LlmClient> {
    let provider: Box<dyn LlmProvider> = match p.provider {
        ProviderKind::MockEcho => Box::new(MockProvider::echo(k_out)),
        ProviderKind::MockFixture => {
            let path = p.fixture.as_deref().expect("checked during resolution");
            Box::new(MockProvider::fixtures_from_journal(path, k_out)?)
        }
        ProviderKind::MockCorrupt => Box::new(MockProvider::new(
            MockRule::CorruptOutput {
                mode: p.corrupt_mode.expect("set for mock-corrupt"),
                recover_on_review: p.recover_on_review,
            },
            k_out,
        )),
        ProviderKind::Openai => Box::new(OpenAiCompatible::from_env(p.timeout())?),
    };
    let mut client = LlmClient::new(provider)
        .with_retry(RetryPolicy {
            max_attempts: p.max_attempts.max(1),
            ..RetryPolicy::default()
        })
        .with_concurrency(p.concurrency);
    if let Some(path) = &p.journal {
        let journal = Journal::append_to(path)
            .with_context(|| format!("opening journal {}", path.display()))?;
        client = client.with_journal(journal);
    }
    Ok(client)
}

fn select_queries(selector: &str, n: usize) -> Result<Vec<usize>> {
    if selector.trim() == "all" {
        return Ok((0..n).collect());
    }
    let mut ids = BTreeSet::new();
    for part in selector.split(',') {
        let part = part.trim();
        let id: usize = part
            .parse()
            .with_context(|| format!("query id `{part}` is neither a number nor `all`"))?;
        if id >= n {
            bail!("unknown query id {id}: the dataset has {n} test queries");
        }
        ids.insert(id);
    }
    Ok(ids.into_iter().collect())
}

pub fn cmd_recommend(
    args: &RecommendArgs,
    file: &FileConfig,
    out: &mut dyn Write,
) -> Result<Status> {
    let (dataset, _) = load_dataset(&args.dataset)?;
    let queries = select_queries(&args.query, dataset.test.len())?;
    let cfg = pipeline_config(&args.pipeline, &args.provider, file);
    let prompts = prompt_config(&args.pipeline, file)?;
    let mut provider = ProviderSettings::resolve(&args.provider, file)?;
    if provider.journal.is_none() {
        provider.journal = Some(args.dataset.with_extension("journal.jsonl"));
    }
    let client = build_client(&provider, cfg.k_out)?;
    let pipeline = Pipeline::new(&dataset, cfg, &prompts, &client)?;

    for id in queries {
        let q = &dataset.test[id];
        let outcome = pipeline
            .recommend(q)
            .with_context(|| format!("query {id}"))?;
        let target = q.target().map(|t| t.as_str()).unwrap_or("");
        let rec = &outcome.recommendation;
        if args.json {
            let context: Vec<_> = outcome
                .context
                .entries
                .iter()
                .map(|e| json!({"index": e.index, "similarity": e.similarity, "dwdtw_cost": e.dwdtw_cost}))
                .collect();
            let line = json!({
                "query_id": id,
                "user": q.user().as_str(),
                "target": target,
                "items": rec.items().iter().map(|p| p.as_str()).collect::<Vec<_>>(),
                "reason": rec.rationale(),
                "context": context,
                "rounds": outcome.rounds,
                "fallback": outcome.fallback,
            });
            writeln!(out, "{line}")?;
            continue;
        }
        writeln!(
            out,
            "query {id} (user {}, target {target})",
            q.user().as_str()
        )?;
        let ctx: Vec<String> = outcome
            .context
            .entries
            .iter()
            .map(|e| match e.dwdtw_cost {
                Some(c) => format!("#{} sim {:.3} cost {:.3}", e.index, e.similarity, c),
                None => format!("#{} sim {:.3}", e.index, e.similarity),
            })
            .collect();
        writeln!(
            out,
            "  context: {}",
            if ctx.is_empty() {
                "none".into()
            } else {
                ctx.join(", ")
            }
        )?;
        for (rank, poi) in rec.items().iter().enumerate() {
            writeln!(out, "  {:>2}. {}", rank + 1, poi.as_str())?;
        }
        writeln!(out, "  reason: {}", rec.rationale())?;
        writeln!(
            out,
            "  review rounds: {}, repaired: {}",
            outcome.rounds, outcome.fallback
        )?;
    }
    Ok(Status::Success)
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    dataset_sha256: &'a str,
    pipeline: &'a PipelineConfig,
    provider: &'a ProviderSettings,
    char_budget: usize,
    ks: &'a [usize],
    group_breakdown: bool,
    fail_fast: bool,
}

#[derive(Serialize)]
struct SectionOut<'a> {
    label: &'a str,
    results_file: String,
    metrics: &'a MetricReport,
}

fn results_path(base: &Path, label: &str, multiple: bool) -> PathBuf {
    if !multiple {
        return base.to_path_buf();
    }
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = base
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "jsonl".into());
    base.with_file_name(format!("{stem}.{}.{ext}", label.replace('/', "_")))
}

pub fn cmd_evaluate(args: &EvaluateArgs, file: &FileConfig, out: &mut dyn Write) -> Result<Status> {
    let (dataset, digest) = load_dataset(&args.dataset)?;
    let pipeline = pipeline_config(&args.pipeline, &args.provider, file);
    let prompts = prompt_config(&args.pipeline, file)?;
    let provider = ProviderSettings::resolve(&args.provider, file)?;
    let ks = if !args.ks.is_empty() {
        args.ks.clone()
    } else {
        file.ks.clone().unwrap_or_else(|| vec![1, 5, 10])
    };
    if ks.iter().any(|&k| k == 0 || k > pipeline.k_out) {
        bail!("every K must lie in 1..={}", pipeline.k_out);
    }
    let base = ExperimentConfig {
        pipeline: pipeline.clone(),
        ks: ks.clone(),
        group_breakdown: args.group_breakdown || file.group_breakdown.unwrap_or(false),
        concurrency: provider.concurrency,
        fail_fast: args.fail_fast || file.fail_fast.unwrap_or(false),
    };
    let client = build_client(&provider, pipeline.k_out)?;
    let sections = plan_sections(&base, &args.ablation, &args.rho_sweep);
    let results_base = args
        .results
        .clone()
        .unwrap_or_else(|| args.report.with_extension("results.jsonl"));

    let mut reports = Vec::with_capacity(sections.len());
    let mut files = Vec::with_capacity(sections.len());
    for section in &sections {
        tracing::info!(section = %section.label, "running");
        let run = run_experiment(&dataset, &section.config, &prompts, &client)
            .with_context(|| format!("section {}", section.label))?;
        let path = results_path(&results_base, &section.label, sections.len() > 1);
        std::fs::write(&path, run.results_jsonl())
            .with_context(|| format!("writing {}", path.display()))?;
        files.push(path);
        reports.push((section.label.clone(), run.report));
    }

    let echo = ConfigEcho {
        dataset_sha256: &digest,
        pipeline: &pipeline,
        provider: &provider,
        char_budget: prompts.char_budget,
        ks: &ks,
        group_breakdown: base.group_breakdown,
        fail_fast: base.fail_fast,
    };
    let section_out: Vec<SectionOut> = reports
        .iter()
        .zip(&files)
        .map(|((label, metrics), path)| SectionOut {
            label,
            results_file: path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            metrics,
        })
        .collect();
    let mut report_text =
        serde_json::to_string_pretty(&json!({"config": echo, "sections": section_out}))?;
    report_text.push('\n');
    std::fs::write(&args.report, report_text)
        .with_context(|| format!("writing {}", args.report.display()))?;

    let table = render_table(&reports);
    std::fs::write(args.report.with_extension("txt"), &table)?;
    out.write_all(table.as_bytes())?;

    let failed: usize = reports.iter().map(|(_, r)| r.n_failed).sum();
    if failed > 0 {
        writeln!(out, "{failed} queries failed and were scored as misses")?;
        if args.strict {
            return Ok(Status::QueriesFailed);
        }
    }
    Ok(Status::Success)
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<Status> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        seed: args.seed,
        users: args.users.unwrap_or(d.users),
        sessions_per_user: args.sessions_per_user.unwrap_or(d.sessions_per_user),
        ..d
    };
    let tsv = generate_tsv(&cfg);
    std::fs::write(&args.output, &tsv)
        .with_context(|| format!("writing {}", args.output.display()))?;
    writeln!(
        out,
        "wrote {} check-ins to {}",
        tsv.lines().count(),
        args.output.display()
    )?;
    Ok(Status::Success)
}
