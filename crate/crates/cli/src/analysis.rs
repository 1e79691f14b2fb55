use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use alignkit_core::human::{aggregate_items, aggregate_sxs};
use alignkit_core::metric::sxs_predict;
use alignkit_core::records::{
    load_annotations, load_metric_results, MetricRecord, RatingRecord, TemplateKind,
};
use alignkit_core::stats::{
    disagreement_rows, kendall_tau_b, krippendorff_alpha, majority_relation, mean_relation,
    pearson, rating_matrix, reliable_prompts, spearman, sxs_accuracy, wilcoxon_signed_rank,
    Relation,
};
use serde::Serialize;

use crate::config::load_images;
use crate::error::{record_error, CliError};
use crate::output::{read_id_list, write_bytes, write_csv};
use crate::{AgreementArgs, CorrelateArgs, OrderArgs, ReliableArgs};

/// Absolute templates in report order.
const REPORT_TEMPLATES: [TemplateKind; 3] = TemplateKind::ABSOLUTE;

type PairKey = (String, String);
/// Scores keyed by (prompt, image), one map per metric name.
type MetricScores = Vec<(String, HashMap<PairKey, f64>)>;
/// Per model pair: (judge, is human, significance relation, mean relation).
type PairRelations = BTreeMap<(String, String), Vec<(String, bool, Relation, Relation)>>;

fn load_filtered_annotations(
    path: &Path,
    keep: Option<&BTreeSet<String>>,
) -> Result<Vec<RatingRecord>, CliError> {
    let mut records = load_annotations(path).map_err(record_error)?;
    if let Some(keep) = keep {
        records.retain(|r| keep.contains(&r.prompt_id));
    }
    Ok(records)
}

/// Metric scores grouped by metric name, in order of first appearance.
fn load_metric_scores(
    paths: &[PathBuf],
    keep: Option<&BTreeSet<String>>,
) -> Result<MetricScores, CliError> {
    let mut out: MetricScores = Vec::new();
    for path in paths {
        let records: Vec<MetricRecord> = load_metric_results(path).map_err(record_error)?;
        for r in records {
            if keep.is_some_and(|k| !k.contains(&r.prompt_id)) {
                continue;
            }
            let idx = match out.iter().position(|(m, _)| *m == r.metric) {
                Some(i) => i,
                None => {
                    out.push((r.metric.clone(), HashMap::new()));
                    out.len() - 1
                }
            };
            out[idx].1.insert((r.prompt_id, r.image_id), r.score);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct CorrelationRow {
    metric: String,
    template: TemplateKind,
    n: usize,
    spearman: Option<f64>,
    pearson: Option<f64>,
    kendall_tau_b: Option<f64>,
    sxs_accuracy: Option<f64>,
}

/// Rank and linear correlation of each metric with each absolute human
/// template, plus side-by-side accuracy.
pub fn correlate(args: &CorrelateArgs) -> Result<(), CliError> {
    let keep = args.prompt_ids.as_deref().map(read_id_list).transpose()?;
    let annotations = load_filtered_annotations(&args.annotations, keep.as_ref())?;
    let metrics = load_metric_scores(&args.metrics, keep.as_ref())?;
    let items = aggregate_items(&annotations);
    let sxs = aggregate_sxs(&annotations);

    let mut rows = Vec::new();
    for (name, scores) in &metrics {
        for template in REPORT_TEMPLATES {
            let (m, h): (Vec<f64>, Vec<f64>) = items
                .iter()
                .filter(|i| i.template == template)
                .filter_map(|i| {
                    let human = i.score?;
                    let metric = scores.get(&(i.prompt_id.clone(), i.image_id.clone()))?;
                    Some((*metric, human))
                })
                .unzip();
            rows.push(CorrelationRow {
                metric: name.clone(),
                template,
                n: m.len(),
                spearman: spearman(&m, &h).ok(),
                pearson: pearson(&m, &h).ok(),
                kendall_tau_b: kendall_tau_b(&m, &h).ok(),
                sxs_accuracy: None,
            });
        }
        let (predicted, human): (Vec<_>, Vec<_>) = sxs
            .iter()
            .filter_map(|o| {
                let a = scores.get(&(o.prompt_id.clone(), o.image_a.clone()))?;
                let b = scores.get(&(o.prompt_id.clone(), o.image_b.clone()))?;
                Some((sxs_predict(*a, *b, args.tie_epsilon), o.outcome))
            })
            .unzip();
        rows.push(CorrelationRow {
            metric: name.clone(),
            template: TemplateKind::Sxs,
            n: human.len(),
            spearman: None,
            pearson: None,
            kendall_tau_b: None,
            sxs_accuracy: sxs_accuracy(&predicted, &human).ok(),
        });
    }
    write_csv(&args.out, &rows)?;
    tracing::info!(rows = rows.len(), out = %args.out.display(), "correlation report written");
    Ok(())
}

#[derive(Debug, Serialize)]
struct AgreementRow {
    model_id: String,
    template: TemplateKind,
    units: usize,
    raters: usize,
    alpha: Option<f64>,
}

/// Krippendorff's alpha per (model, template).
pub fn agreement(args: &AgreementArgs) -> Result<(), CliError> {
    let records = load_annotations(&args.annotations).map_err(record_error)?;
    let mut groups: BTreeMap<(String, TemplateKind), Vec<RatingRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.model_id.clone(), r.template))
            .or_default()
            .push(r);
    }
    let rows: Vec<AgreementRow> = groups
        .into_iter()
        .map(|((model_id, template), recs)| {
            let m = rating_matrix(&recs, template);
            AgreementRow {
                model_id,
                template,
                units: m.units.len(),
                raters: m.raters.len(),
                alpha: krippendorff_alpha(&m).ok(),
            }
        })
        .collect();
    write_csv(&args.out, &rows)
}

/// Writes the reliable prompt ids, one per line, in sorted order.
pub fn reliable(args: &ReliableArgs) -> Result<(), CliError> {
    if !(args.factor > 0.0 && args.factor <= 1.0) {
        return Err(CliError::input(anyhow::anyhow!(
            "--factor must be in (0, 1], got {}",
            args.factor
        )));
    }
    let records = load_annotations(&args.annotations).map_err(record_error)?;
    let rows = disagreement_rows(&records);
    let all: BTreeSet<&str> = rows.iter().map(|r| r.prompt_id.as_str()).collect();
    let keep = reliable_prompts(&rows, args.factor);
    let mut text = String::new();
    for id in &keep {
        text.push_str(id);
        text.push('\n');
    }
    write_bytes(&args.out, text.as_bytes())?;
    tracing::info!(
        kept = keep.len(),
        of = all.len(),
        "reliable prompts selected"
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct RelationRow {
    judge: String,
    model_a: String,
    model_b: String,
    n: usize,
    mean_a: f64,
    mean_b: f64,
    statistic: f64,
    p_value: f64,
    relation: &'static str,
}

#[derive(Debug, Serialize)]
struct SuccessRow {
    metric: String,
    pairs: usize,
    significant_success: usize,
    mean_success: usize,
}

/// model -> prompt -> mean score
type ModelScores = BTreeMap<String, BTreeMap<String, f64>>;

fn mean_by_prompt(values: BTreeMap<String, BTreeMap<String, Vec<f64>>>) -> ModelScores {
    values
        .into_iter()
        .map(|(model, prompts)| {
            let means = prompts
                .into_iter()
                .map(|(p, v)| (p, v.iter().sum::<f64>() / v.len() as f64))
                .collect();
            (model, means)
        })
        .collect()
}

fn paired(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .filter_map(|(p, x)| b.get(p).map(|y| (*x, *y)))
        .unzip()
}

/// Pairwise model relations under every human template and metric, and how
/// often each metric reproduces the majority human relation.
pub fn order(args: &OrderArgs) -> Result<(), CliError> {
    let keep = args.prompt_ids.as_deref().map(read_id_list).transpose()?;
    let annotations = load_filtered_annotations(&args.annotations, keep.as_ref())?;
    let images = load_images(&args.images)?;
    let model_of: HashMap<PairKey, &str> = images
        .iter()
        .map(|i| {
            (
                (i.prompt_id.clone(), i.image_id.clone()),
                i.model_id.as_str(),
            )
        })
        .collect();

    let mut judges: Vec<(String, bool, ModelScores)> = Vec::new();
    for template in REPORT_TEMPLATES {
        let mut acc: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for item in aggregate_items(&annotations)
            .into_iter()
            .filter(|i| i.template == template)
        {
            if let Some(s) = item.score {
                acc.entry(item.model_id)
                    .or_default()
                    .entry(item.prompt_id)
                    .or_default()
                    .push(s);
            }
        }
        if !acc.is_empty() {
            judges.push((template.to_string(), true, mean_by_prompt(acc)));
        }
    }
    for (name, scores) in load_metric_scores(&args.metrics, keep.as_ref())? {
        let mut acc: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for ((prompt, image), s) in scores {
            let model = model_of
                .get(&(prompt.clone(), image.clone()))
                .ok_or_else(|| {
                    CliError::validation(anyhow::anyhow!(
                        "{name} score for image {image} is not in the image manifest"
                    ))
                })?;
            acc.entry((*model).to_owned())
                .or_default()
                .entry(prompt)
                .or_default()
                .push(s);
        }
        judges.push((name, false, mean_by_prompt(acc)));
    }

    let models: BTreeSet<&str> = judges
        .iter()
        .flat_map(|(_, _, s)| s.keys().map(String::as_str))
        .collect();
    let models: Vec<&str> = models.into_iter().collect();
    let mut rows = Vec::new();
    let mut relations = PairRelations::new();
    for (judge, human, scores) in &judges {
        for (i, a) in models.iter().enumerate() {
            for b in &models[i + 1..] {
                let (Some(sa), Some(sb)) = (scores.get(*a), scores.get(*b)) else {
                    continue;
                };
                let (x, y) = paired(sa, sb);
                let Ok(w) = wilcoxon_signed_rank(&x, &y, args.p_threshold) else {
                    continue;
                };
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                rows.push(RelationRow {
                    judge: judge.clone(),
                    model_a: (*a).to_owned(),
                    model_b: (*b).to_owned(),
                    n: x.len(),
                    mean_a: mean(&x),
                    mean_b: mean(&y),
                    statistic: w.statistic,
                    p_value: w.p_value,
                    relation: w.relation().symbol(),
                });
                relations
                    .entry(((*a).to_owned(), (*b).to_owned()))
                    .or_default()
                    .push((judge.clone(), *human, w.relation(), mean_relation(&x, &y)));
            }
        }
    }

    let mut success: Vec<SuccessRow> = judges
        .iter()
        .filter(|(_, human, _)| !human)
        .map(|(name, _, _)| SuccessRow {
            metric: name.clone(),
            pairs: 0,
            significant_success: 0,
            mean_success: 0,
        })
        .collect();
    for rels in relations.values() {
        let human: Vec<Relation> = rels.iter().filter(|r| r.1).map(|r| r.2).collect();
        if human.is_empty() {
            continue;
        }
        let truth = majority_relation(&human);
        for (judge, _, sig, mean) in rels.iter().filter(|r| !r.1) {
            let row = success
                .iter_mut()
                .find(|s| &s.metric == judge)
                .expect("metric judge row");
            row.pairs += 1;
            row.significant_success += usize::from(*sig == truth);
            row.mean_success += usize::from(*mean == truth);
        }
    }
    write_csv(&args.out.join("relations.csv"), &rows)?;
    write_csv(&args.out.join("ordering_success.csv"), &success)?;
    Ok(())
}
