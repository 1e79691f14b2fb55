//! Benchmark construction: skill tagging, skill-balanced resampling,
//! sub-skill prompt generation and linguistic complexity measures.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backends::{self, BackendError, GenRequest, TextGenerator};
use crate::records::{PromptRecord, SkillCategory, SkillTag};
use crate::templates::{self, TemplateError};

#[derive(Debug, Error)]
pub enum PromptSetError {
    #[error("pool has {pool} records but {requested} were requested")]
    PoolTooSmall { pool: usize, requested: usize },
    #[error("only {positive} records have positive weight but {requested} were requested")]
    NotEnoughWeight { positive: usize, requested: usize },
    #[error("skill weight for {0} must be finite and non-negative")]
    InvalidWeight(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("generated output {0:?} contains no caption")]
    EmptyOutput(String),
}

// ---------------------------------------------------------------------------
// Tagging

/// One line of tagger output, `N | category - subcategory (arg, arg)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagLine {
    pub index: u32,
    pub category: String,
    pub subcategory: String,
    pub arguments: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TagParse {
    pub tags: Vec<TagLine>,
    /// Non-blank lines that did not parse.
    pub skipped: Vec<String>,
}

static TAG_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:output:\s*)?(\d+)\s*\|\s*([^-|()]+?)\s+-\s+([^()]+?)\s*\((.*)\)\s*$")
        .expect("valid regex")
});

/// Parses tagger output leniently: malformed lines are collected, never fatal.
pub fn parse_tag_output(text: &str) -> TagParse {
    let mut out = TagParse::default();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match TAG_LINE
            .captures(line)
            .and_then(|c| Some((c[1].parse::<u32>().ok()?, c)))
        {
            Some((index, c)) => out.tags.push(TagLine {
                index,
                category: c[2].trim().to_owned(),
                subcategory: c[3].trim().to_owned(),
                arguments: c[4]
                    .split(',')
                    .map(|a| a.trim().to_owned())
                    .filter(|a| !a.is_empty())
                    .collect(),
            }),
            None => out.skipped.push(line.to_owned()),
        }
    }
    out
}

/// Maps a tagger (category, subcategory) pair onto a skill.
pub fn skill_for(tag: &TagLine) -> SkillCategory {
    let cat = tag.category.to_ascii_lowercase();
    let sub = tag.subcategory.to_ascii_lowercase();
    match (cat.as_str(), sub.as_str()) {
        ("entity", "named entity" | "landmark") => SkillCategory::NamedEntity,
        ("entity", _) => SkillCategory::Entity,
        ("attribute", "color") => SkillCategory::Color,
        ("attribute", "shape") => SkillCategory::Shape,
        ("attribute", "material" | "texture") => SkillCategory::TextureMaterial,
        ("attribute", "size" | "scale") => SkillCategory::Scale,
        ("attribute", _) => SkillCategory::Attribute,
        ("relation", "spatial") => SkillCategory::Spatial,
        ("relation", "scale" | "size") => SkillCategory::Scale,
        ("relation", "action") | ("action", _) => SkillCategory::Action,
        ("relation", _) => SkillCategory::Relation,
        ("global", "style") => SkillCategory::Style,
        ("other", "count") => SkillCategory::Count,
        ("other", "text" | "text rendering") => SkillCategory::TextRendering,
        _ => SkillCategory::parse(&cat.replace(' ', "_")).unwrap_or(SkillCategory::Other),
    }
}

/// Distinct skills of a tag list, each carrying the first subcategory seen.
pub fn tags_to_skills(tags: &[TagLine]) -> Vec<SkillTag> {
    let mut seen: BTreeMap<SkillCategory, String> = BTreeMap::new();
    for t in tags {
        seen.entry(skill_for(t))
            .or_insert_with(|| t.subcategory.clone());
    }
    seen.into_iter()
        .map(|(c, d)| SkillTag::with_detail(c, d))
        .collect()
}

/// Tags one prompt with the bundled few-shot tagging template.
pub fn tag_prompt(
    gen: &dyn TextGenerator,
    record: &PromptRecord,
) -> Result<TagParse, PromptSetError> {
    let filled = templates::fill(
        templates::TAGGING,
        &[("image_id", &record.id), ("text_input", &record.text)],
    )?;
    let out = backends::generate(gen, &GenRequest::new("tagging", &record.text, filled))?;
    Ok(parse_tag_output(&out))
}

// ---------------------------------------------------------------------------
// Distribution and resampling

/// Number of records carrying each skill (a record counts once per skill).
pub fn skill_distribution(records: &[PromptRecord]) -> BTreeMap<SkillCategory, usize> {
    let mut hist: BTreeMap<SkillCategory, usize> =
        SkillCategory::ALL.iter().map(|c| (*c, 0)).collect();
    for r in records {
        for c in r.categories() {
            *hist.entry(c).or_default() += 1;
        }
    }
    hist
}

/// Divides each dataset's per-skill count by the largest count for that
/// skill over all datasets. Skills absent everywhere map to 0.
pub fn normalize_distributions(
    datasets: &BTreeMap<String, BTreeMap<SkillCategory, usize>>,
) -> BTreeMap<String, BTreeMap<SkillCategory, f64>> {
    let mut max: BTreeMap<SkillCategory, usize> = BTreeMap::new();
    for hist in datasets.values() {
        for (c, n) in hist {
            let m = max.entry(*c).or_default();
            *m = (*m).max(*n);
        }
    }
    datasets
        .iter()
        .map(|(name, hist)| {
            let norm = max
                .iter()
                .map(|(c, m)| {
                    let n = hist.get(c).copied().unwrap_or(0);
                    (*c, if *m == 0 { 0.0 } else { n as f64 / *m as f64 })
                })
                .collect();
            (name.clone(), norm)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillWeights {
    #[serde(default)]
    pub weights: BTreeMap<SkillCategory, f64>,
    /// Weight for skills not listed, and for untagged records.
    #[serde(default = "one")]
    pub default: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SkillWeights {
    fn default() -> Self {
        SkillWeights {
            weights: BTreeMap::new(),
            default: 1.0,
        }
    }
}

impl SkillWeights {
    pub fn validate(&self) -> Result<(), PromptSetError> {
        let bad = |w: f64| !w.is_finite() || w < 0.0;
        if bad(self.default) {
            return Err(PromptSetError::InvalidWeight("default".into()));
        }
        if let Some((c, _)) = self.weights.iter().find(|(_, w)| bad(**w)) {
            return Err(PromptSetError::InvalidWeight(c.to_string()));
        }
        Ok(())
    }

    /// Sampling weight of a record: the largest weight among its skills.
    pub fn record_weight(&self, record: &PromptRecord) -> f64 {
        let cats = record.categories();
        if cats.is_empty() {
            return self.default;
        }
        cats.iter()
            .map(|c| self.weights.get(c).copied().unwrap_or(self.default))
            .fold(0.0, f64::max)
    }
}

/// Draws `n` distinct records without replacement, each draw proportional
/// to the record weight. The result keeps pool order.
pub fn weighted_resample(
    pool: &[PromptRecord],
    weights: &SkillWeights,
    n: usize,
    seed: u64,
) -> Result<Vec<PromptRecord>, PromptSetError> {
    weights.validate()?;
    if pool.len() < n {
        return Err(PromptSetError::PoolTooSmall {
            pool: pool.len(),
            requested: n,
        });
    }
    let w: Vec<f64> = pool.iter().map(|r| weights.record_weight(r)).collect();
    let positive = w.iter().filter(|x| **x > 0.0).count();
    if positive < n {
        return Err(PromptSetError::NotEnoughWeight {
            positive,
            requested: n,
        });
    }
    let idx: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = idx
        .choose_multiple_weighted(&mut rng, n, |i| w[*i])
        .map_err(|e| PromptSetError::InvalidWeight(e.to_string()))?
        .copied()
        .collect();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| pool[i].clone()).collect())
}

// ---------------------------------------------------------------------------
// Sub-skill prompt generation

/// A request for `count` prompts from a few-shot template.
#[derive(Debug, Clone)]
pub struct SubskillRequest<'a> {
    pub template: &'a str,
    pub template_id: &'a str,
    pub conditioning: &'a BTreeMap<String, String>,
    pub skill: SkillCategory,
    pub sub_skill: &'a str,
    pub id_prefix: &'a str,
    pub count: u32,
}

/// Splits generator output into the rendered text (if any) and the caption.
pub fn parse_caption_output(raw: &str) -> Option<(Option<String>, String)> {
    let mut text = None;
    for line in raw.lines().map(str::trim) {
        if let Some(c) = line.strip_prefix("Caption:") {
            let c = c.trim();
            return (!c.is_empty()).then(|| (text, c.to_owned()));
        }
        if text.is_none() && !line.is_empty() {
            text = Some(line.trim_matches('"').to_owned());
        }
    }
    text.filter(|t| !t.is_empty()).map(|t| (None, t))
}

/// Fills the template with the conditioning values and turns each sample
/// into a prompt record. The raw output is kept in `extra` for review.
pub fn generate_subskill_prompts(
    gen: &dyn TextGenerator,
    req: &SubskillRequest<'_>,
) -> Result<Vec<PromptRecord>, PromptSetError> {
    let vars: Vec<(&str, &str)> = req
        .conditioning
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    let filled = templates::fill(req.template, &vars)?;
    let subject = req
        .conditioning
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ");
    let mut out = Vec::with_capacity(req.count as usize);
    for i in 0..req.count {
        let raw = backends::generate(
            gen,
            &GenRequest::new(req.template_id, &subject, filled.clone()).sampled(i),
        )?;
        let (rendered, caption) =
            parse_caption_output(&raw).ok_or_else(|| PromptSetError::EmptyOutput(raw.clone()))?;
        let mut record = PromptRecord::new(format!("{}-{:04}", req.id_prefix, i), caption);
        record.source = format!("generated:{}", req.template_id);
        record.sub_skill = Some(req.sub_skill.to_owned());
        record.skills = req
            .conditioning
            .iter()
            .map(|(k, v)| SkillTag::with_detail(req.skill, format!("{k}={v}")))
            .collect();
        record
            .extra
            .insert("raw_llm_output".into(), Value::String(raw));
        record
            .extra
            .insert("conditioning".into(), json!(req.conditioning));
        if let Some(t) = rendered {
            record
                .extra
                .insert("rendered_text".into(), Value::String(t));
        }
        out.push(record);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Complexity

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("tree has no root")]
    NoRoot,
    #[error("tree has several roots: positions {0:?}")]
    MultipleRoots(Vec<usize>),
    #[error("position {0} appears twice")]
    DuplicatePosition(usize),
    #[error("token {token} points at unknown head {head}")]
    UnknownHead { token: usize, head: usize },
    #[error("dependency structure contains a cycle")]
    Cycle,
}

/// One token of a parsed prompt. A root has no head, or is its own head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    #[serde(default)]
    pub token: String,
    pub position: usize,
    pub head: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyNode {
    pub position: usize,
    #[serde(default)]
    pub token: String,
    #[serde(default)]
    pub children: Vec<DependencyNode>,
}

impl DependencyNode {
    pub fn leaf(position: usize) -> Self {
        DependencyNode {
            position,
            token: String::new(),
            children: Vec::new(),
        }
    }

    pub fn with_children(position: usize, children: Vec<DependencyNode>) -> Self {
        DependencyNode {
            position,
            token: String::new(),
            children,
        }
    }
}

/// Builds a tree from (token, position, head) triples.
pub fn build_tree(tokens: &[TokenEntry]) -> Result<DependencyNode, TreeError> {
    let mut positions = BTreeSet::new();
    for t in tokens {
        if !positions.insert(t.position) {
            return Err(TreeError::DuplicatePosition(t.position));
        }
    }
    let mut roots = Vec::new();
    let mut children: BTreeMap<usize, Vec<&TokenEntry>> = BTreeMap::new();
    for t in tokens {
        match t.head {
            None => roots.push(t.position),
            Some(h) if h == t.position => roots.push(t.position),
            Some(h) if !positions.contains(&h) => {
                return Err(TreeError::UnknownHead {
                    token: t.position,
                    head: h,
                })
            }
            Some(h) => children.entry(h).or_default().push(t),
        }
    }
    let root = match roots.as_slice() {
        [] => {
            return Err(if tokens.is_empty() {
                TreeError::NoRoot
            } else {
                TreeError::Cycle
            })
        }
        [r] => *r,
        _ => return Err(TreeError::MultipleRoots(roots)),
    };
    let by_pos: BTreeMap<usize, &TokenEntry> = tokens.iter().map(|t| (t.position, t)).collect();
    let mut visited = 0usize;
    fn build(
        pos: usize,
        by_pos: &BTreeMap<usize, &TokenEntry>,
        children: &BTreeMap<usize, Vec<&TokenEntry>>,
        visited: &mut usize,
    ) -> DependencyNode {
        *visited += 1;
        let mut kids: Vec<DependencyNode> = children
            .get(&pos)
            .map(|c| {
                c.iter()
                    .map(|t| build(t.position, by_pos, children, visited))
                    .collect()
            })
            .unwrap_or_default();
        kids.sort_by_key(|k| k.position);
        DependencyNode {
            position: pos,
            token: by_pos[&pos].token.clone(),
            children: kids,
        }
    }
    let tree = build(root, &by_pos, &children, &mut visited);
    if visited != tokens.len() {
        return Err(TreeError::Cycle);
    }
    Ok(tree)
}

/// Depth of the deepest branch alternating left and right, in each direction:
/// `left` follows a left child then that child's `right`, and vice versa.
/// A node without children on a side scores 0 on that side.
pub fn central_depth(node: &DependencyNode) -> (usize, usize) {
    let mut left = 0;
    let mut right = 0;
    for child in &node.children {
        let (cl, cr) = central_depth(child);
        if child.position < node.position {
            left = left.max(cr + 1);
        } else if child.position > node.position {
            right = right.max(cl + 1);
        }
    }
    (left, right)
}

/// Deepest branch with material on both sides: max over nodes of
/// `min(left, right)` from [`central_depth`].
pub fn syntactic_complexity(tree: &DependencyNode) -> usize {
    let (l, r) = central_depth(tree);
    tree.children
        .iter()
        .map(syntactic_complexity)
        .fold(l.min(r), usize::max)
}

/// Number of distinct entities, ignoring case.
pub fn semantic_complexity(entities: &[String]) -> usize {
    entities
        .iter()
        .map(|e| e.trim().to_lowercase())
        .collect::<BTreeSet<_>>()
        .len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedGenerator;

    fn rec(id: &str, cats: &[SkillCategory]) -> PromptRecord {
        let mut r = PromptRecord::new(id, format!("prompt {id}"));
        r.skills = cats.iter().map(|c| SkillTag::new(*c)).collect();
        r
    }

    #[test]
    fn tag_lines_from_listing() {
        let p = parse_tag_output(
            "output: 1 | entity - whole (man)\n        2 | entity - named entity (iPhone)\n        3 | action - hold (man, iPhone)",
        );
        assert!(p.skipped.is_empty());
        assert_eq!(
            p.tags[0],
            TagLine {
                index: 1,
                category: "entity".into(),
                subcategory: "whole".into(),
                arguments: vec!["man".into()],
            }
        );
        assert_eq!(p.tags[2].arguments, vec!["man", "iPhone"]);
        let p = parse_tag_output("2 | relation - spatial (mallgoths, hot topic store, at)\nhello");
        assert_eq!(p.tags[0].arguments.len(), 3);
        assert_eq!(p.skipped, vec!["hello"]);
        let skills: Vec<_> = tags_to_skills(&parse_tag_output("1 | entity - whole (man)\n2 | entity - named entity (iPhone)\n3 | other - count (mallgoths, ==bunch)").tags)
            .into_iter()
            .map(|s| s.category)
            .collect();
        assert_eq!(
            skills,
            vec![
                SkillCategory::Count,
                SkillCategory::NamedEntity,
                SkillCategory::Entity
            ]
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect::<Vec<_>>()
        );
    }

    #[test]
    fn tag_prompt_uses_template() {
        let g =
            ScriptedGenerator::new([("a man is holding an iPhone.", "1 | entity - whole (man)")]);
        let p = tag_prompt(&g, &PromptRecord::new("s1", "a man is holding an iPhone.")).unwrap();
        assert_eq!(p.tags.len(), 1);
    }

    #[test]
    fn distribution_examples() {
        use SkillCategory::*;
        assert!(skill_distribution(&[]).values().all(|v| *v == 0));
        let h = skill_distribution(&[rec("1", &[Count]), rec("2", &[Count]), rec("3", &[Shape])]);
        assert_eq!(h[&Count], 2);
        assert_eq!(h[&Shape], 1);
        let mut ds = BTreeMap::new();
        ds.insert("a".to_owned(), BTreeMap::from([(Count, 4), (Shape, 1)]));
        ds.insert("b".to_owned(), BTreeMap::from([(Count, 2), (Shape, 3)]));
        let n = normalize_distributions(&ds);
        assert_eq!(n["a"][&Count], 1.0);
        assert_eq!(n["b"][&Count], 0.5);
        assert!((n["a"][&Shape] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(n["b"][&Shape], 1.0);
    }

    #[test]
    fn resample_examples() {
        use SkillCategory::*;
        let pool: Vec<_> = (0..20)
            .map(|i| {
                rec(
                    &format!("r{i}"),
                    if i % 2 == 0 { &[Count] } else { &[Shape] },
                )
            })
            .collect();
        let all = weighted_resample(&pool, &SkillWeights::default(), 20, 1).unwrap();
        assert_eq!(all, pool);
        let only_count = SkillWeights {
            weights: BTreeMap::from([(Count, 1.0)]),
            default: 0.0,
        };
        let s = weighted_resample(&pool, &only_count, 10, 3).unwrap();
        assert!(s.iter().all(|r| r.categories() == vec![Count]));
        assert!(matches!(
            weighted_resample(&pool, &only_count, 11, 3),
            Err(PromptSetError::NotEnoughWeight { .. })
        ));
        assert!(matches!(
            weighted_resample(&pool, &SkillWeights::default(), 21, 3),
            Err(PromptSetError::PoolTooSmall { .. })
        ));
        let a = weighted_resample(&pool, &SkillWeights::default(), 7, 42).unwrap();
        assert_eq!(
            a,
            weighted_resample(&pool, &SkillWeights::default(), 7, 42).unwrap()
        );
        let ids: BTreeSet<_> = a.iter().map(|r| r.id.clone()).collect();
        assert_eq!(ids.len(), 7);
    }

    #[test]
    fn subskill_generation() {
        let cond = BTreeMap::from([
            ("language".to_owned(), "Gibberish".to_owned()),
            ("text_length".to_owned(), "20".to_owned()),
        ]);
        let g = ScriptedGenerator::new([(
            "language=Gibberish, text_length=20",
            " \"blorp zink fadoo\"\nCaption: a neon sign reading \"blorp zink fadoo\" above a diner",
        )]);
        let recs = generate_subskill_prompts(
            &g,
            &SubskillRequest {
                template: templates::CAPTION_TEXT_RENDERING,
                template_id: "caption_text_rendering",
                conditioning: &cond,
                skill: SkillCategory::TextRendering,
                sub_skill: "gibberish",
                id_prefix: "tr",
                count: 1,
            },
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(
            r.text,
            "a neon sign reading \"blorp zink fadoo\" above a diner"
        );
        assert_eq!(r.sub_skill.as_deref(), Some("gibberish"));
        let details: Vec<_> = r.skills.iter().filter_map(|s| s.detail.clone()).collect();
        assert_eq!(details, vec!["language=Gibberish", "text_length=20"]);
        assert_eq!(r.extra["rendered_text"], "blorp zink fadoo");
        assert!(r.extra["raw_llm_output"]
            .as_str()
            .unwrap()
            .contains("Caption:"));

        let bad = BTreeMap::from([("language".to_owned(), "English".to_owned())]);
        let err = generate_subskill_prompts(
            &g,
            &SubskillRequest {
                conditioning: &bad,
                ..SubskillRequest {
                    template: templates::CAPTION_TEXT_RENDERING,
                    template_id: "caption_text_rendering",
                    conditioning: &cond,
                    skill: SkillCategory::TextRendering,
                    sub_skill: "english",
                    id_prefix: "tr",
                    count: 1,
                }
            },
        )
        .unwrap_err();
        assert!(
            matches!(err, PromptSetError::Template(TemplateError::Unfilled(ref k)) if k == "text_length")
        );
    }

    #[test]
    fn central_depth_examples() {
        assert_eq!(central_depth(&DependencyNode::leaf(0)), (0, 0));
        assert_eq!(
            central_depth(&DependencyNode::with_children(
                1,
                vec![DependencyNode::leaf(0)]
            )),
            (1, 0)
        );
        let chain = DependencyNode::with_children(
            2,
            vec![DependencyNode::with_children(
                1,
                vec![DependencyNode::leaf(0)],
            )],
        );
        // Child 1 has only a left child, so its right depth is 0: root left = 0 + 1.
        assert_eq!(central_depth(&chain), (1, 0));
        let balanced = DependencyNode::with_children(
            1,
            vec![DependencyNode::leaf(0), DependencyNode::leaf(2)],
        );
        assert_eq!(syntactic_complexity(&balanced), 1);
        assert_eq!(syntactic_complexity(&DependencyNode::leaf(0)), 0);
        let right_chain = DependencyNode::with_children(
            0,
            vec![DependencyNode::with_children(
                1,
                vec![DependencyNode::leaf(2)],
            )],
        );
        assert_eq!(syntactic_complexity(&right_chain), 0);
    }

    #[test]
    fn tree_building() {
        let t = |p: usize, h: Option<usize>| TokenEntry {
            token: format!("w{p}"),
            position: p,
            head: h,
        };
        let tree = build_tree(&[t(0, Some(1)), t(1, None), t(2, Some(1))]).unwrap();
        assert_eq!(tree.position, 1);
        assert_eq!(tree.children.len(), 2);
        assert_eq!(
            build_tree(&[t(0, Some(0)), t(1, Some(0))])
                .unwrap()
                .position,
            0
        );
        assert_eq!(
            build_tree(&[t(0, None), t(1, Some(2)), t(2, Some(1))]),
            Err(TreeError::Cycle)
        );
        assert_eq!(
            build_tree(&[t(0, Some(1)), t(1, Some(0))]),
            Err(TreeError::Cycle)
        );
        assert_eq!(
            build_tree(&[t(0, None), t(1, None)]),
            Err(TreeError::MultipleRoots(vec![0, 1]))
        );
        assert!(matches!(
            build_tree(&[t(0, None), t(1, Some(5))]),
            Err(TreeError::UnknownHead { .. })
        ));
    }

    #[test]
    fn semantic_examples() {
        assert_eq!(semantic_complexity(&[]), 0);
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(semantic_complexity(&v(&["cat", "Cat", "dog"])), 2);
        assert_eq!(semantic_complexity(&v(&["man", "iPhone"])), 2);
    }
}
