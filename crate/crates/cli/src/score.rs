use std::collections::HashMap;
use std::time::Instant;

use alignkit_core::backends::Backends;
use alignkit_core::metric::{embedding_score, gecko_score, tifa_score, GeckoConfig, ScoringMode};
use alignkit_core::records::{load_prompt_set, MetricRecord, PromptRecord};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{load_images, ImageEntry, RunConfig};
use crate::error::{backend_error, metric_error, record_error, CliError};
use crate::output::{ensure_dir, thread_pool, write_records};
use crate::{MetricKind, ScoreArgs, Scoring};

fn metric_config(base: &GeckoConfig, args: &ScoreArgs) -> GeckoConfig {
    let mut cfg = base.clone();
    if let Some(s) = args.scoring {
        cfg.scoring_mode = match s {
            Scoring::Eq1 => ScoringMode::Binary,
            Scoring::Eq2 => ScoringMode::Normalized,
            Scoring::Nll => ScoringMode::NegLogLikelihood,
        };
    }
    if let Some(r) = args.nli_threshold {
        cfg.nli_threshold = r;
    }
    if args.no_nli_filter {
        cfg.nli_filter = false;
    }
    cfg
}

fn score_pair(
    kind: MetricKind,
    backends: &Backends,
    cfg: &RunConfig,
    gecko: &GeckoConfig,
    prompt: &PromptRecord,
    entry: &ImageEntry,
) -> Result<MetricRecord, CliError> {
    let image = entry.image();
    let gen = || backends.generation().map_err(backend_error);
    let vqa = || backends.vqa().map_err(backend_error);
    let mut record = match kind {
        MetricKind::Gecko => {
            let nli = if gecko.nli_filter {
                Some(backends.nli().map_err(backend_error)?)
            } else {
                None
            };
            gecko_score(gen()?, nli, vqa()?, prompt, &image, gecko)
                .map_err(metric_error)?
                .to_record()
        }
        MetricKind::Tifa => tifa_score(gen()?, vqa()?, prompt, &image, gecko.retries)
            .map_err(metric_error)?
            .to_record(),
        MetricKind::Embed => {
            let emb = backends.embedding().map_err(backend_error)?;
            let s = embedding_score(emb, &prompt.text, &image, cfg.embedding.token_limit)
                .map_err(metric_error)?;
            MetricRecord {
                prompt_id: prompt.id.clone(),
                image_id: image.id.clone(),
                metric: "embed".into(),
                score: s.score,
                details: json!({ "truncated": s.truncated, "token_limit": cfg.embedding.token_limit }),
                extra: Default::default(),
            }
        }
    };
    record.extra.insert(
        "model_id".into(),
        serde_json::Value::String(entry.model_id.clone()),
    );
    Ok(record)
}

/// Scores every image in the manifest against its prompt and writes
/// `<out>/<metric>.jsonl` in manifest order.
pub fn score(args: &ScoreArgs) -> Result<(), CliError> {
    let (cfg, base) = RunConfig::load(&args.config)?;
    let gecko = metric_config(&cfg.metric, args);
    gecko.validate().map_err(metric_error)?;
    let backends = Backends::build(&cfg.backends, &base).map_err(backend_error)?;
    let prompts = load_prompt_set(&args.prompts).map_err(record_error)?;
    let by_id: HashMap<&str, &PromptRecord> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let images = load_images(&args.images)?;
    let pairs: Vec<(&PromptRecord, &ImageEntry)> = images
        .iter()
        .map(|img| {
            by_id
                .get(img.prompt_id.as_str())
                .map(|p| (*p, img))
                .ok_or_else(|| {
                    CliError::validation(anyhow::anyhow!(
                        "image {} refers to unknown prompt {}",
                        img.image_id,
                        img.prompt_id
                    ))
                })
        })
        .collect::<Result<_, _>>()?;
    ensure_dir(&args.out)?;
    let pool = thread_pool(args.jobs)?;
    let mut metrics = args.metrics.clone();
    metrics.dedup();
    for kind in metrics {
        let started = Instant::now();
        let records: Vec<MetricRecord> = pool.install(|| {
            pairs
                .par_iter()
                .map(|(p, img)| {
                    score_pair(kind, &backends, &cfg, &gecko, p, img).map_err(|e| {
                        e.context(format!(
                            "{} on prompt {} / image {}",
                            kind.name(),
                            p.id,
                            img.image_id
                        ))
                    })
                })
                .collect::<Result<_, _>>()
        })?;
        let path = args.out.join(format!("{}.jsonl", kind.name()));
        write_records(&path, &records)?;
        tracing::info!(
            metric = kind.name(),
            pairs = records.len(),
            elapsed_ms = started.elapsed().as_millis() as u64,
            out = %path.display(),
            "scored"
        );
    }
    Ok(())
}
