use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use anyhow::{bail, ensure, Context, Result};
use bos_topics::corpus::{load_corpus, Corpus};
use bos_topics::embedding::{
    index_entries, index_path, load_embeddings, request_embeddings, request_embeddings_with_env, EmbeddingMatrix,
    IndexEntry, ProviderCommand,
};
use bos_topics::eval::{build_coherence_source, labeled_nmi, npmi_coherence, topic_vocabulary, CoherenceSource, Metrics};
use bos_topics::model::{fit, TopicModel};
use bos_topics::report::{count_words, format_table, top_words, TopicWords};
use bos_topics::triplets::{build_triplets, export_triplets, filter_triplets, TrainerConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{optional_arg, required_arg, sidecar_path, Params, RunConfig};
use crate::{Command, Format};

/// Model file: the fitted model with the run config that produced it.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    run_config: RunConfig,
    #[serde(flatten)]
    model: TopicModel,
}

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    #[serde(flatten)]
    metrics: &'a Metrics,
    run_config: &'a RunConfig,
}

#[derive(Serialize)]
struct GroupLine<'a> {
    row: usize,
    doc: &'a str,
    group: usize,
    text: String,
}

pub fn run(command: Command, format: Format) -> Result<()> {
    match command {
        Command::Tokenize { corpus, out, params } => {
            let mut cfg = params.resolve("tokenize")?;
            let corpus_path = PathBuf::from(required_arg(&corpus, &mut cfg.corpus, "corpus")?);
            let out = optional_arg(&out, &mut cfg.output);
            cfg.check_distinct()?;
            let corpus = read_corpus(&corpus_path, cfg.n_s)?;
            match out {
                Some(out) => {
                    let out = PathBuf::from(out);
                    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
                    write_groups(&corpus, BufWriter::new(file))?;
                    write_sidecar(&out, &cfg)?;
                }
                None => write_groups(&corpus, io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Embed {
            corpus,
            provider,
            out,
            params,
        } => {
            let mut cfg = params.resolve("embed")?;
            let corpus_path = PathBuf::from(required_arg(&corpus, &mut cfg.corpus, "corpus")?);
            let provider = ProviderCommand::parse(&required_arg(&provider, &mut cfg.provider, "provider")?)?;
            let out = PathBuf::from(required_arg(&out, &mut cfg.output, "out")?);
            cfg.check_distinct()?;
            let corpus = read_corpus(&corpus_path, cfg.n_s)?;
            let emb = request_embeddings(&corpus, &provider, &out)?;
            write_sidecar(&out, &cfg)?;
            emit(
                format,
                json!({"embeddings": out, "rows": emb.rows(), "dim": emb.dim()}),
                format!("wrote {} rows of dimension {} to {}\n", emb.rows(), emb.dim(), out.display()),
            )
        }
        Command::Triplets {
            corpus,
            emb,
            out,
            params,
        } => {
            let mut cfg = params.resolve("triplets")?;
            cfg.output = Some(optional_arg(&out, &mut cfg.output).unwrap_or_else(|| "triplets.jsonl".into()));
            let corpus_path = PathBuf::from(required_arg(&corpus, &mut cfg.corpus, "corpus")?);
            let emb_path = PathBuf::from(required_arg(&emb, &mut cfg.embeddings, "emb")?);
            cfg.check_distinct()?;
            let corpus = read_corpus(&corpus_path, cfg.n_s)?;
            let emb = read_embeddings(&emb_path, &corpus)?;
            let out = PathBuf::from(cfg.output.clone().expect("set above"));
            let (n0, kept) = triplets_stage(&corpus, &emb, &cfg, &out)?;
            emit(
                format,
                json!({"triplets": out, "built": n0, "kept": kept}),
                format!("kept {kept} of {n0} triplets in {}\n", out.display()),
            )
        }
        Command::Fit {
            corpus,
            emb,
            out,
            params,
        } => {
            let mut cfg = params.resolve("fit")?;
            cfg.output = Some(optional_arg(&out, &mut cfg.output).unwrap_or_else(|| "model.json".into()));
            let corpus_path = PathBuf::from(required_arg(&corpus, &mut cfg.corpus, "corpus")?);
            let emb_path = PathBuf::from(required_arg(&emb, &mut cfg.embeddings, "emb")?);
            cfg.check_distinct()?;
            let corpus = read_corpus(&corpus_path, cfg.n_s)?;
            let emb = read_embeddings(&emb_path, &corpus)?;
            let out = PathBuf::from(cfg.output.clone().expect("set above"));
            let model = fit_stage(&corpus, &emb, &cfg, &out)?;
            let changed = model.epoch_log.last().map_or(0, |e| e.changed);
            emit(
                format,
                json!({"model": out, "documents": corpus.num_documents(), "groups": corpus.num_groups(),
                       "topics": model.k(), "final_changed": changed}),
                format!(
                    "fitted {} topics on {} documents ({} groups); {} groups changed in the last epoch; wrote {}\n",
                    model.k(),
                    corpus.num_documents(),
                    corpus.num_groups(),
                    changed,
                    out.display()
                ),
            )
        }
        Command::Topics {
            model,
            corpus,
            raw,
            out,
            params,
        } => {
            let (mut cfg, file) = resolve_with_model(&params, &model, "topics")?;
            let corpus_path = PathBuf::from(required_arg(&corpus, &mut cfg.corpus, "corpus")?);
            let out = optional_arg(&out, &mut cfg.output);
            cfg.check_distinct()?;
            let corpus = read_corpus(&corpus_path, file.model.params.n_s)?;
            let topics = report(&corpus, &file.model, cfg.top_n, !raw)?;
            let body = match format {
                Format::Json => serde_json::to_string_pretty(&topics)? + "\n",
                Format::Text => format_table(&topics, cfg.top_n),
            };
            match out {
                Some(out) => {
                    let out = PathBuf::from(out);
                    write_file(&out, body.as_bytes())?;
                    write_sidecar(&out, &cfg)
                }
                None => write_stdout(body.as_bytes()),
            }
        }
        Command::Eval {
            model,
            corpus,
            reference,
            out,
            params,
        } => {
            let (mut cfg, file) = resolve_with_model(&params, &model, "eval")?;
            let corpus_path = PathBuf::from(required_arg(&corpus, &mut cfg.corpus, "corpus")?);
            let reference = optional_arg(&reference, &mut cfg.reference);
            let out = optional_arg(&out, &mut cfg.output);
            cfg.check_distinct()?;
            let corpus = read_corpus(&corpus_path, file.model.params.n_s)?;
            let metrics = evaluate(&corpus, &file.model, reference.as_deref().map(Path::new), cfg.top_n)?;
            let body = serde_json::to_string_pretty(&MetricsFile {
                metrics: &metrics,
                run_config: &cfg,
            })? + "\n";
            if let Some(out) = out {
                write_file(Path::new(&out), body.as_bytes())?;
            }
            emit_metrics(format, &metrics, &body)
        }
        Command::Pipeline {
            corpus,
            emb,
            provider,
            finetune,
            reference,
            workdir,
            params,
        } => {
            let mut cfg = params.resolve("pipeline")?;
            let corpus_path = PathBuf::from(required_arg(&corpus, &mut cfg.corpus, "corpus")?);
            let emb_arg = optional_arg(&emb, &mut cfg.embeddings);
            let provider = optional_arg(&provider, &mut cfg.provider);
            let finetune = optional_arg(&finetune, &mut cfg.finetune);
            let reference = optional_arg(&reference, &mut cfg.reference);
            cfg.output = Some(workdir.display().to_string());
            pipeline(&cfg, &corpus_path, emb_arg, provider, finetune, reference, &workdir, format)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pipeline(
    cfg: &RunConfig,
    corpus_path: &Path,
    emb: Option<String>,
    provider: Option<String>,
    finetune: Option<String>,
    reference: Option<String>,
    workdir: &Path,
    format: Format,
) -> Result<()> {
    fs::create_dir_all(workdir).with_context(|| format!("creating {}", workdir.display()))?;
    let at = |name: &str| workdir.join(name);
    let corpus = read_corpus(corpus_path, cfg.n_s)?;

    let groups = at("groups.jsonl");
    write_groups(&corpus, BufWriter::new(File::create(&groups)?))?;

    let provider = provider.as_deref().map(ProviderCommand::parse).transpose()?;
    let base = match (&emb, &provider) {
        (Some(path), _) => read_embeddings(Path::new(path), &corpus)?,
        (None, Some(p)) => request_embeddings(&corpus, p, at("base.emb"))?.normalize()?,
        (None, None) => bail!("pipeline needs --emb or --provider"),
    };

    let triplets = at("triplets.jsonl");
    let (n0, kept) = triplets_stage(&corpus, &base, cfg, &triplets)?;

    let emb = match (&finetune, &provider) {
        (Some(trainer), Some(p)) => {
            let model_dir = at("encoder");
            fs::create_dir_all(&model_dir)?;
            let trainer = ProviderCommand::parse(trainer)?;
            let status = Process::new(&trainer.program)
                .args(&trainer.args)
                .arg(&triplets)
                .arg(trainer_config_path(&triplets))
                .arg(&model_dir)
                .status()
                .with_context(|| format!("running fine-tuning command {}", trainer.program))?;
            ensure!(status.success(), "fine-tuning command failed: {status}");
            let dir = model_dir.display().to_string();
            request_embeddings_with_env(&corpus, p, at("tuned.emb"), &[("BOS_MODEL_DIR", dir.as_str())])?.normalize()?
        }
        _ => base,
    };

    let model = fit_stage(&corpus, &emb, cfg, &at("model.json"))?;
    let topics = report(&corpus, &model, cfg.top_n, true)?;
    write_file(&at("topics.json"), (serde_json::to_string_pretty(&topics)? + "\n").as_bytes())?;
    write_file(&at("topics.txt"), format_table(&topics, cfg.top_n).as_bytes())?;
    write_sidecar(&at("topics.json"), cfg)?;
    let metrics = evaluate(&corpus, &model, reference.as_deref().map(Path::new), cfg.top_n)?;
    let body = serde_json::to_string_pretty(&MetricsFile {
        metrics: &metrics,
        run_config: cfg,
    })? + "\n";
    write_file(&at("metrics.json"), body.as_bytes())?;

    match format {
        Format::Json => emit_metrics(format, &metrics, &body),
        Format::Text => {
            eprintln!("kept {kept} of {n0} triplets");
            write_stdout(format_table(&topics, cfg.top_n).as_bytes())?;
            emit_metrics(format, &metrics, &body)
        }
    }
}

fn resolve_with_model(params: &Params, model: &Option<String>, command: &str) -> Result<(RunConfig, ModelFile)> {
    let model_path = model
        .clone()
        .or_else(|| params.config.as_ref().and_then(|c| RunConfig::load(c).ok()?.model))
        .context("missing required --model")?;
    let file = read_model(Path::new(&model_path))?;
    let mut cfg = match &params.config {
        Some(_) => params.resolve(command)?,
        None => {
            // Inherit the model's run config so the corpus and n_s carry over.
            let mut base = file.run_config.clone();
            base.output = None;
            overlay(params, base, command)
        }
    };
    cfg.model = Some(model_path);
    cfg.n_s = file.model.params.n_s;
    Ok((cfg, file))
}

fn overlay(params: &Params, mut cfg: RunConfig, command: &str) -> RunConfig {
    cfg.command = command.to_owned();
    macro_rules! apply {
        ($($f:ident),*) => { $( if let Some(v) = params.$f { cfg.$f = v; } )* };
    }
    apply!(seed, k, alpha, epochs, f_pos, f_tri, n_neg, margin, ft_epochs, top_n);
    cfg
}

fn read_corpus(path: &Path, n_s: usize) -> Result<Corpus> {
    let (corpus, report) = load_corpus(path, n_s).with_context(|| format!("loading corpus {}", path.display()))?;
    if !report.dropped.is_empty() {
        eprintln!(
            "note: dropped {} document(s) without sentences: {}",
            report.dropped.len(),
            report.dropped.join(", ")
        );
    }
    Ok(corpus)
}

/// Load, check against the corpus (and its index sidecar when present) and normalize.
fn read_embeddings(path: &Path, corpus: &Corpus) -> Result<EmbeddingMatrix> {
    let emb = load_embeddings(path).with_context(|| format!("loading embeddings {}", path.display()))?;
    emb.check_aligned(corpus)
        .with_context(|| format!("embeddings {} do not match the corpus", path.display()))?;
    let idx = index_path(path);
    if idx.exists() {
        let text = fs::read_to_string(&idx).with_context(|| format!("reading {}", idx.display()))?;
        let expected: Vec<IndexEntry> = index_entries(corpus).collect();
        for (i, (line, want)) in text.lines().zip(&expected).enumerate() {
            let got: IndexEntry =
                serde_json::from_str(line).with_context(|| format!("{} line {}", idx.display(), i + 1))?;
            ensure!(
                &got == want,
                "{} line {} is {:?} but the corpus has {:?}",
                idx.display(),
                i + 1,
                got,
                want
            );
        }
    }
    Ok(emb.normalize()?)
}

fn read_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("parsing model {}", path.display()))
}

fn write_groups(corpus: &Corpus, mut w: impl Write) -> Result<()> {
    for (row, key) in corpus.group_index().iter().enumerate() {
        let doc = &corpus.documents()[key.doc];
        serde_json::to_writer(
            &mut w,
            &GroupLine {
                row,
                doc: &doc.id,
                group: key.group,
                text: doc.groups[key.group].text(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn trainer_config_path(triplets: &Path) -> PathBuf {
    let mut s = triplets.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

fn triplets_stage(corpus: &Corpus, emb: &EmbeddingMatrix, cfg: &RunConfig, out: &Path) -> Result<(usize, usize)> {
    let ft = cfg.ft_params();
    ft.validate()?;
    let all = build_triplets(corpus, ft.n_neg, ft.seed)?;
    let kept = filter_triplets(&all, corpus, emb, ft.f_pos, ft.f_tri)?;
    export_triplets(&kept, corpus, out)?;
    write_file(
        &trainer_config_path(out),
        (serde_json::to_string(&TrainerConfig::from(&ft))? + "\n").as_bytes(),
    )?;
    write_sidecar(out, cfg)?;
    Ok((all.len(), kept.len()))
}

fn fit_stage(corpus: &Corpus, emb: &EmbeddingMatrix, cfg: &RunConfig, out: &Path) -> Result<TopicModel> {
    let model = fit(corpus, emb, &cfg.fit_params())?;
    let mut run_config = cfg.clone();
    run_config.output = Some(out.display().to_string());
    let file = ModelFile { run_config, model };
    write_file(out, &(serde_json::to_vec(&file)?))?;
    Ok(file.model)
}

fn report(corpus: &Corpus, model: &TopicModel, top_n: usize, postprocess: bool) -> Result<Vec<TopicWords>> {
    check_model_corpus(corpus, model)?;
    let counts = count_words(corpus, &model.assignments, model.k())?;
    Ok(top_words(&counts, top_n, postprocess))
}

fn evaluate(corpus: &Corpus, model: &TopicModel, reference: Option<&Path>, top_n: usize) -> Result<Metrics> {
    let topics = report(corpus, model, top_n, true)?;
    let vocab = topic_vocabulary(&topics);
    let source = match reference {
        Some(path) => build_coherence_source(path, &vocab)
            .with_context(|| format!("building coherence counts from {}", path.display()))?,
        None => CoherenceSource::from_corpus(corpus, &vocab)?,
    };
    let coherence = npmi_coherence(&topics, &source, top_n)?;
    let (nmi, docs_scored) = labeled_nmi(corpus, &model.topic_doc)?;
    Ok(Metrics {
        nmi,
        npmi: coherence.mean,
        per_topic_npmi: coherence.per_topic,
        docs_scored,
    })
}

fn check_model_corpus(corpus: &Corpus, model: &TopicModel) -> Result<()> {
    let ids = corpus.documents().iter().map(|d| d.id.as_str());
    ensure!(
        model.assignments.len() == corpus.num_groups() && ids.eq(model.doc_ids.iter().map(String::as_str)),
        "model was fitted on a different corpus ({} documents, {} groups; corpus has {} and {})",
        model.doc_ids.len(),
        model.assignments.len(),
        corpus.num_documents(),
        corpus.num_groups()
    );
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_sidecar(artifact: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(&sidecar_path(artifact), (serde_json::to_string_pretty(cfg)? + "\n").as_bytes())
}

fn write_stdout(bytes: &[u8]) -> Result<()> {
    let mut out = io::stdout().lock();
    out.write_all(bytes)?;
    out.flush()?;
    Ok(())
}

fn emit(format: Format, value: serde_json::Value, text: String) -> Result<()> {
    match format {
        Format::Json => write_stdout((value.to_string() + "\n").as_bytes()),
        Format::Text => write_stdout(text.as_bytes()),
    }
}

fn emit_metrics(format: Format, metrics: &Metrics, json_body: &str) -> Result<()> {
    match format {
        Format::Json => write_stdout(json_body.as_bytes()),
        Format::Text => {
            let nmi = metrics.nmi.map_or("n/a (no labels)".to_owned(), |v| format!("{v:.4}"));
            let mut text = format!("nmi: {nmi} over {} documents\nnpmi: {:.4}\n", metrics.docs_scored, metrics.npmi);
            for (t, s) in metrics.per_topic_npmi.iter().enumerate() {
                let s = s.map_or("-".to_owned(), |v| format!("{v:.4}"));
                text.push_str(&format!("  topic {t:>3}: {s}\n"));
            }
            write_stdout(text.as_bytes())
        }
    }
}
