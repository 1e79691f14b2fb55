//! Agreement, correlation and significance statistics used to compare
//! metrics, annotation templates and generative models.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::human::{
    DsgAnswer, DsgAnswerSet, LikertRating, Payload, SxsVote, WordLabel, WordLevelRating,
};
use crate::records::{RatingRecord, TemplateKind};

/// Largest number of non-zero differences for which the Wilcoxon p-value is exact.
pub const WILCOXON_EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("not enough pairable ratings")]
    InsufficientData,
    #[error("fewer than two usable raters")]
    InsufficientRaters,
    #[error("expected agreement is 1; error consistency undefined")]
    Degenerate,
    #[error("no usable pairs")]
    NoUsablePairs,
    #[error("{0} must lie in [0, 1]")]
    OutOfRange(&'static str),
    #[error("prompt sets differ between the two models")]
    PromptSetMismatch,
}

// ---------------------------------------------------------------------------
// Krippendorff's alpha

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Nominal,
    Ordinal,
    Interval,
}

/// Ratings indexed `[unit][rater]`; `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    pub units: Vec<String>,
    pub raters: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub level: Level,
}

impl RatingMatrix {
    pub fn from_rows(values: Vec<Vec<Option<f64>>>, level: Level) -> Self {
        let n_raters = values.iter().map(Vec::len).max().unwrap_or(0);
        RatingMatrix {
            units: (0..values.len()).map(|i| format!("u{i}")).collect(),
            raters: (0..n_raters).map(|i| format!("r{i}")).collect(),
            values,
            level,
        }
    }
}

fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn krippendorff_alpha(m: &RatingMatrix) -> Result<f64, StatsError> {
    let pairable: Vec<Vec<f64>> = m
        .values
        .iter()
        .map(|row| row.iter().flatten().copied().collect::<Vec<f64>>())
        .filter(|row| row.len() >= 2)
        .collect();
    let cats = distinct_sorted(pairable.iter().flatten().copied());
    let k = cats.len();
    let idx = |v: f64| {
        cats.binary_search_by(|c| c.total_cmp(&v))
            .expect("value is a category")
    };

    let mut o = vec![vec![0.0; k]; k];
    for row in &pairable {
        let w = 1.0 / (row.len() as f64 - 1.0);
        for (i, a) in row.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                if i != j {
                    o[idx(*a)][idx(*b)] += w;
                }
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();
    if n < 2.0 {
        return Err(StatsError::InsufficientData);
    }

    let delta2 = |c: usize, d: usize| -> f64 {
        match m.level {
            Level::Nominal => f64::from(u8::from(c != d)),
            Level::Interval => (cats[c] - cats[d]).powi(2),
            Level::Ordinal => {
                let (lo, hi) = (c.min(d), c.max(d));
                let s: f64 = n_c[lo..=hi].iter().sum::<f64>() - (n_c[c] + n_c[d]) / 2.0;
                s * s
            }
        }
    };
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..k {
        for d in 0..k {
            let dd = delta2(c, d);
            d_o += o[c][d] * dd;
            d_e += n_c[c] * n_c[d] * dd;
        }
    }
    d_o /= n;
    d_e /= n * (n - 1.0);
    if d_e == 0.0 {
        return Err(StatsError::InsufficientData);
    }
    Ok(1.0 - d_o / d_e)
}

/// Value used for a side-by-side choice in a nominal rating matrix.
pub fn sxs_category(v: SxsVote) -> f64 {
    match v {
        SxsVote::ImageA => 0.0,
        SxsVote::ImageB => 1.0,
        SxsVote::Unsure => 2.0,
    }
}

/// Builds the rating matrix for one template: units are (prompt, image)
/// items, cells are each rater's item score. Absolute templates use the
/// interval level with unsure ratings missing; side-by-side uses nominal
/// levels with unsure as its own category.
pub fn rating_matrix(records: &[RatingRecord], template: TemplateKind) -> RatingMatrix {
    let mut cells: BTreeMap<(String, String), BTreeMap<String, Option<f64>>> = BTreeMap::new();
    let mut raters = BTreeSet::new();
    for r in records.iter().filter(|r| r.template == template) {
        let Ok(p) = r.payload() else { continue };
        let v = match p {
            Payload::Likert(l) => l.mapped(),
            Payload::WordLevel(w) => w.score(),
            Payload::DsgH(d) => d.score(),
            Payload::Sxs(s) => Some(sxs_category(s.choice)),
        };
        raters.insert(r.rater_id.clone());
        cells
            .entry((r.prompt_id.clone(), r.image_id.clone()))
            .or_default()
            .insert(r.rater_id.clone(), v);
    }
    let raters: Vec<String> = raters.into_iter().collect();
    let mut units = Vec::with_capacity(cells.len());
    let mut values = Vec::with_capacity(cells.len());
    for ((p, i), row) in cells {
        units.push(format!("{p}/{i}"));
        values.push(
            raters
                .iter()
                .map(|r| row.get(r).copied().flatten())
                .collect(),
        );
    }
    RatingMatrix {
        units,
        raters,
        values,
        level: if template == TemplateKind::Sxs {
            Level::Nominal
        } else {
            Level::Interval
        },
    }
}

// ---------------------------------------------------------------------------
// Correlation

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooShort {
            needed: 3,
            got: x.len(),
        });
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Kendall's tau-b (tie-corrected).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = (x[i] - x[j]).partial_cmp(&0.0).expect("finite");
            let dy = (y[i] - y[j]).partial_cmp(&0.0).expect("finite");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => tx += 1,
                (_, Equal) => ty += 1,
                (a, b) if a == b => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let denom = (((conc + disc + tx) * (conc + disc + ty)) as f64).sqrt();
    if denom == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((conc - disc) as f64 / denom)
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test and model ordering

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Better,
    Worse,
    Same,
}

impl Relation {
    pub fn flip(self) -> Relation {
        match self {
            Relation::Better => Relation::Worse,
            Relation::Worse => Relation::Better,
            Relation::Same => Relation::Same,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Better => ">",
            Relation::Worse => "<",
            Relation::Same => "=",
        }
    }
}

/// Compares the means of two series.
pub fn mean_relation(x: &[f64], y: &[f64]) -> Relation {
    let (mx, my) = (mean(x), mean(y));
    if mx > my {
        Relation::Better
    } else if mx < my {
        Relation::Worse
    } else {
        Relation::Same
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub exact: bool,
    pub significant: bool,
    /// Mean comparison of the two series.
    pub direction: Relation,
}

impl WilcoxonResult {
    /// The direction when significant, otherwise `Same`.
    pub fn relation(&self) -> Relation {
        if self.significant {
            self.direction
        } else {
            Relation::Same
        }
    }
}

/// Exact two-sided p-value for the signed-rank statistic given the (possibly
/// tied) ranks, by dynamic programming over doubled rank sums.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w2 = (w_plus * 2.0).round() as usize;
    let total = 2f64.powi(ranks.len() as i32);
    let le: u64 = counts[..=w2].iter().sum();
    let ge: u64 = counts[w2..].iter().sum();
    (2.0 * (le.min(ge) as f64) / total).min(1.0)
}

fn normal_p(ranks: &[f64], abs_d: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mu = n * (n + 1.0) / 4.0;
    let mut sorted = abs_d.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let diff = w_plus - mu;
    let corrected = (diff.abs() - 0.5).max(0.0);
    let z = corrected / var.sqrt();
    let phi = Normal::standard().cdf(z);
    (2.0 * (1.0 - phi)).min(1.0)
}

/// Paired two-sided Wilcoxon signed-rank test of `x` against `y`.
pub fn wilcoxon_signed_rank(
    x: &[f64],
    y: &[f64],
    p_threshold: f64,
) -> Result<WilcoxonResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::TooShort { needed: 1, got: 0 });
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let direction = mean_relation(x, y);
    if diffs.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            exact: true,
            significant: false,
            direction,
        });
    }
    let abs_d: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs_d);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let exact = diffs.len() <= WILCOXON_EXACT_MAX_N;
    let p_value = if exact {
        exact_p(&ranks, w_plus)
    } else {
        normal_p(&ranks, &abs_d, w_plus)
    };
    Ok(WilcoxonResult {
        statistic: w_plus,
        p_value,
        n_effective: diffs.len(),
        exact,
        significant: p_value < p_threshold,
        direction,
    })
}

/// The relation held by a strict majority, or `Same`.
pub fn majority_relation(relations: &[Relation]) -> Relation {
    for r in [Relation::Better, Relation::Worse, Relation::Same] {
        if 2 * relations.iter().filter(|x| **x == r).count() > relations.len() {
            return r;
        }
    }
    Relation::Same
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderingSuccess {
    pub significant_success: bool,
    pub mean_success: bool,
}

/// Aligns two per-prompt score maps on the same prompt ids.
pub fn align(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(StatsError::PromptSetMismatch);
    }
    Ok((a.values().copied().collect(), b.values().copied().collect()))
}

/// Whether a metric recovers the ground-truth relation between two models.
pub fn metric_ordering_success(
    scores_a: &BTreeMap<String, f64>,
    scores_b: &BTreeMap<String, f64>,
    ground_truth: Relation,
    p_threshold: f64,
) -> Result<OrderingSuccess, StatsError> {
    let (x, y) = align(scores_a, scores_b)?;
    let w = wilcoxon_signed_rank(&x, &y, p_threshold)?;
    Ok(OrderingSuccess {
        significant_success: w.relation() == ground_truth,
        mean_success: mean_relation(&x, &y) == ground_truth,
    })
}

// ---------------------------------------------------------------------------
// Disagreement and reliable prompts

pub fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

/// All ratings one item received under one absolute template.
#[derive(Debug, Clone, Copy)]
pub enum ItemRatings<'a> {
    Likert(&'a [LikertRating]),
    WordLevel(&'a [WordLevelRating]),
    DsgH(&'a [DsgAnswerSet]),
}

fn atom_variance(per_rater: &[Vec<Option<f64>>]) -> Result<f64, StatsError> {
    if per_rater.len() < 2 {
        return Err(StatsError::InsufficientRaters);
    }
    let atoms = per_rater.iter().map(Vec::len).max().unwrap_or(0);
    let mut vars = Vec::new();
    for a in 0..atoms {
        let vals: Vec<f64> = per_rater
            .iter()
            .filter_map(|r| r.get(a).copied().flatten())
            .collect();
        if vals.len() >= 2 {
            vars.push(population_variance(&vals));
        }
    }
    if vars.is_empty() {
        return Err(StatsError::InsufficientRaters);
    }
    Ok(mean(&vars))
}

/// Inter-rater disagreement for one item: the variance of rater scores for
/// Likert, the mean per-atom variance for word-level and DSG(H).
pub fn disagreement(ratings: ItemRatings<'_>) -> Result<f64, StatsError> {
    match ratings {
        ItemRatings::Likert(rs) => {
            let v: Vec<f64> = rs.iter().filter_map(|r| r.mapped()).collect();
            if v.len() < 2 {
                return Err(StatsError::InsufficientRaters);
            }
            Ok(population_variance(&v))
        }
        ItemRatings::WordLevel(rs) => atom_variance(
            &rs.iter()
                .map(|r| {
                    r.labels
                        .iter()
                        .map(|l| match l {
                            WordLabel::Aligned => Some(1.0),
                            WordLabel::NotAligned => Some(0.0),
                            WordLabel::Unsure => None,
                        })
                        .collect()
                })
                .collect::<Vec<_>>(),
        ),
        ItemRatings::DsgH(rs) => atom_variance(
            &rs.iter()
                .map(|r| {
                    r.answers
                        .iter()
                        .map(|a| match a {
                            DsgAnswer::Yes => Some(1.0),
                            DsgAnswer::No => Some(0.0),
                            DsgAnswer::Invalid | DsgAnswer::Unsure => None,
                        })
                        .collect()
                })
                .collect::<Vec<_>>(),
        ),
    }
}

/// Disagreement of one prompt for one (model, template) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementRow {
    pub prompt_id: String,
    pub model_id: String,
    pub template: TemplateKind,
    /// `None` when it could not be computed (too few usable raters).
    pub disagreement: Option<f64>,
    /// Every rating of this item was unsure.
    pub all_unsure: bool,
}

/// Computes a [`DisagreementRow`] per (prompt, model, absolute template).
pub fn disagreement_rows(records: &[RatingRecord]) -> Vec<DisagreementRow> {
    let mut groups: BTreeMap<(String, String, TemplateKind), Vec<Payload>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.template != TemplateKind::Sxs) {
        if let Ok(p) = r.payload() {
            groups
                .entry((r.prompt_id.clone(), r.model_id.clone(), r.template))
                .or_default()
                .push(p);
        }
    }
    groups
        .into_iter()
        .map(|((prompt_id, model_id, template), payloads)| {
            let (d, all_unsure) = match template {
                TemplateKind::Likert => {
                    let v: Vec<LikertRating> = payloads
                        .iter()
                        .filter_map(|p| {
                            if let Payload::Likert(l) = p {
                                Some(*l)
                            } else {
                                None
                            }
                        })
                        .collect();
                    let all_unsure = v.iter().all(|l| *l == LikertRating::Unsure);
                    (disagreement(ItemRatings::Likert(&v)), all_unsure)
                }
                TemplateKind::WordLevel => {
                    let v: Vec<WordLevelRating> = payloads
                        .into_iter()
                        .filter_map(|p| {
                            if let Payload::WordLevel(w) = p {
                                Some(w)
                            } else {
                                None
                            }
                        })
                        .collect();
                    let all_unsure = v.iter().all(|w| w.score().is_none());
                    (disagreement(ItemRatings::WordLevel(&v)), all_unsure)
                }
                TemplateKind::DsgH => {
                    let v: Vec<DsgAnswerSet> = payloads
                        .into_iter()
                        .filter_map(|p| {
                            if let Payload::DsgH(d) = p {
                                Some(d)
                            } else {
                                None
                            }
                        })
                        .collect();
                    let all_unsure = v.iter().all(|d| d.score().is_none());
                    (disagreement(ItemRatings::DsgH(&v)), all_unsure)
                }
                TemplateKind::Sxs => unreachable!(),
            };
            DisagreementRow {
                prompt_id,
                model_id,
                template,
                disagreement: d.ok(),
                all_unsure,
            }
        })
        .collect()
}

/// Prompts whose disagreement is below `factor` times the maximum for every
/// (model, absolute template) pair, minus prompts rated all-unsure under
/// Likert for any model.
///
/// A pair whose maximum disagreement is zero keeps all of its prompts. A
/// prompt with no computable disagreement for some pair is not kept.
pub fn reliable_prompts(rows: &[DisagreementRow], factor: f64) -> BTreeSet<String> {
    let mut all: BTreeSet<String> = rows.iter().map(|r| r.prompt_id.clone()).collect();
    let mut by_pair: BTreeMap<(&str, TemplateKind), Vec<&DisagreementRow>> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| TemplateKind::ABSOLUTE.contains(&r.template))
    {
        by_pair
            .entry((r.model_id.as_str(), r.template))
            .or_default()
            .push(r);
    }
    for group in by_pair.values() {
        let max = group
            .iter()
            .filter_map(|r| r.disagreement)
            .fold(0.0, f64::max);
        let keep: BTreeSet<&str> = group
            .iter()
            .filter(|r| match r.disagreement {
                Some(d) => max == 0.0 || d < factor * max,
                None => false,
            })
            .map(|r| r.prompt_id.as_str())
            .collect();
        all.retain(|p| keep.contains(p.as_str()));
    }
    for r in rows
        .iter()
        .filter(|r| r.template == TemplateKind::Likert && r.all_unsure)
    {
        all.remove(&r.prompt_id);
    }
    all
}

// ---------------------------------------------------------------------------
// Metric meta-evaluation

/// Fraction of confident human preferences that the metric reproduces.
pub fn sxs_accuracy(metric: &[SxsVote], human: &[SxsVote]) -> Result<f64, StatsError> {
    if metric.len() != human.len() {
        return Err(StatsError::LengthMismatch(metric.len(), human.len()));
    }
    let (mut used, mut hit) = (0usize, 0usize);
    for (m, h) in metric.iter().zip(human) {
        if *h != SxsVote::Unsure {
            used += 1;
            hit += usize::from(m == h);
        }
    }
    if used == 0 {
        return Err(StatsError::NoUsablePairs);
    }
    Ok(hit as f64 / used as f64)
}

/// Agreement beyond chance between two binary judges with accuracies
/// `p1`, `p2` and observed agreement `c_obs`.
pub fn error_consistency(p1: f64, p2: f64, c_obs: f64) -> Result<f64, StatsError> {
    for (v, name) in [(p1, "p1"), (p2, "p2"), (c_obs, "c_obs")] {
        if !(0.0..=1.0).contains(&v) {
            return Err(StatsError::OutOfRange(name));
        }
    }
    let c_exp = p1 * p2 + (1.0 - p1) * (1.0 - p2);
    if c_exp >= 1.0 {
        return Err(StatsError::Degenerate);
    }
    Ok((c_obs - c_exp) / (1.0 - c_exp))
}

/// Inputs for per-word evaluation of one (prompt, image) item.
#[derive(Debug, Clone)]
pub struct PerWordItem {
    /// Keyword index to covered word positions.
    pub coverage: BTreeMap<u32, Vec<usize>>,
    pub wl_ratings: Vec<WordLevelRating>,
    /// Whether the VQA model answered every question of a keyword correctly.
    pub keyword_correct: BTreeMap<u32, bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerWordEval {
    pub n_words: usize,
    pub accuracy: f64,
    /// `None` when chance agreement is 1.
    pub kappa: Option<f64>,
}

/// Compares per-keyword VQA correctness with unanimous word-level labels.
/// Only covered words that every rater labelled the same way, without
/// unsure, are counted.
pub fn per_word_eval(items: &[PerWordItem]) -> Result<PerWordEval, StatsError> {
    let (mut n, mut matches, mut vqa_ok, mut grounded) = (0usize, 0usize, 0usize, 0usize);
    for item in items {
        if item.wl_ratings.is_empty() {
            continue;
        }
        for (k, positions) in &item.coverage {
            let Some(&correct) = item.keyword_correct.get(k) else {
                continue;
            };
            for &pos in positions {
                let labels: Vec<Option<WordLabel>> = item
                    .wl_ratings
                    .iter()
                    .map(|r| r.labels.get(pos).copied())
                    .collect();
                let Some(Some(first)) = labels.first().copied() else {
                    continue;
                };
                if first == WordLabel::Unsure || labels.iter().any(|l| *l != Some(first)) {
                    continue;
                }
                let g = first == WordLabel::Aligned;
                n += 1;
                vqa_ok += usize::from(correct);
                grounded += usize::from(g);
                matches += usize::from(correct == g);
            }
        }
    }
    if n == 0 {
        return Err(StatsError::NoUsablePairs);
    }
    let nf = n as f64;
    let accuracy = matches as f64 / nf;
    Ok(PerWordEval {
        n_words: n,
        accuracy,
        kappa: error_consistency(vqa_ok as f64 / nf, grounded as f64 / nf, accuracy).ok(),
    })
}
