use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use alignkit_core::backends::{FixtureLog, Recorded, ScriptedGenerator};
use alignkit_core::promptset::{
    build_tree, central_depth, generate_subskill_prompts, normalize_distributions,
    skill_distribution, syntactic_complexity, weighted_resample, SkillWeights, SubskillRequest,
    TokenEntry,
};
use alignkit_core::records::{load_prompt_set, PromptRecord, SkillCategory, SkillTag};
use alignkit_core::templates;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Literal reading of the listing: for a node, the deepest left child's
/// right value plus one, and the deepest right child's left value plus one,
/// with an empty max taken as 0. Works on a parent array, not on the tree type.
fn oracle_depth(heads: &[Option<usize>], node: usize) -> (usize, usize) {
    let children: Vec<usize> = (0..heads.len())
        .filter(|c| heads[*c] == Some(node))
        .collect();
    let left = children
        .iter()
        .filter(|c| **c < node)
        .map(|c| oracle_depth(heads, *c).1 + 1)
        .max()
        .unwrap_or(0);
    let right = children
        .iter()
        .filter(|c| **c > node)
        .map(|c| oracle_depth(heads, *c).0 + 1)
        .max()
        .unwrap_or(0);
    (left, right)
}

fn random_heads(rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
    let n = rng.random_range(1..=15);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![None; n];
    for k in 1..n {
        heads[order[k]] = Some(order[rng.random_range(0..k)]);
    }
    heads
}

#[test]
fn central_depth_matches_listing_on_random_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let heads = random_heads(&mut rng);
        let tokens: Vec<TokenEntry> = heads
            .iter()
            .enumerate()
            .map(|(p, h)| TokenEntry {
                token: format!("w{p}"),
                position: p,
                head: *h,
            })
            .collect();
        let tree = build_tree(&tokens).unwrap();
        let root = heads.iter().position(Option::is_none).unwrap();
        assert_eq!(
            central_depth(&tree),
            oracle_depth(&heads, root),
            "{heads:?}"
        );
        let expected = (0..heads.len())
            .map(|n| {
                let (l, r) = oracle_depth(&heads, n);
                l.min(r)
            })
            .max()
            .unwrap();
        assert_eq!(syntactic_complexity(&tree), expected, "{heads:?}");
    }
}

#[test]
fn central_depth_three_node_chain() {
    // root(2) -> 1 -> 0, all to the left.
    let heads = [Some(1), Some(2), None];
    let tokens: Vec<_> = heads
        .iter()
        .enumerate()
        .map(|(p, h)| TokenEntry {
            token: String::new(),
            position: p,
            head: *h,
        })
        .collect();
    let tree = build_tree(&tokens).unwrap();
    // Node 1 has a left child only: (0 + 1, 0) = (1, 0). Root takes node 1's right value + 1.
    assert_eq!(central_depth(&tree.children[0]), (1, 0));
    assert_eq!(central_depth(&tree), (1, 0));
    assert_eq!(central_depth(&tree), oracle_depth(&heads, 2));
}

fn pool(n: usize, rng: &mut ChaCha8Rng) -> Vec<PromptRecord> {
    let common = [
        SkillCategory::Entity,
        SkillCategory::Color,
        SkillCategory::Spatial,
        SkillCategory::Action,
    ];
    (0..n)
        .map(|i| {
            let mut r = PromptRecord::new(format!("p{i:04}"), format!("prompt {i}"));
            let cat = match rng.random_range(0..100) {
                0..3 => SkillCategory::Count,
                3..6 => SkillCategory::TextRendering,
                _ => common[rng.random_range(0..common.len())],
            };
            r.skills = vec![SkillTag::new(cat)];
            r
        })
        .collect()
}

fn rare_share(records: &[PromptRecord]) -> f64 {
    let rare = records
        .iter()
        .filter(|r| {
            r.categories()
                .iter()
                .any(|c| matches!(c, SkillCategory::Count | SkillCategory::TextRendering))
        })
        .count();
    rare as f64 / records.len() as f64
}

#[test]
fn boosting_rare_skills_raises_their_share() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pool = pool(1000, &mut rng);
    let base = rare_share(&pool);
    let boosted = SkillWeights {
        weights: BTreeMap::from([
            (SkillCategory::Count, 10.0),
            (SkillCategory::TextRendering, 10.0),
        ]),
        default: 1.0,
    };
    for seed in 0..20 {
        let uniform = weighted_resample(&pool, &SkillWeights::default(), 100, seed).unwrap();
        let weighted = weighted_resample(&pool, &boosted, 100, seed).unwrap();
        assert!(
            rare_share(&weighted) > rare_share(&uniform),
            "seed {seed}: {} vs {}",
            rare_share(&weighted),
            rare_share(&uniform)
        );
        assert!(rare_share(&weighted) > base);
        let ids: BTreeSet<_> = weighted.iter().map(|r| &r.id).collect();
        assert_eq!(ids.len(), 100);
        assert_eq!(
            weighted,
            weighted_resample(&pool, &boosted, 100, seed).unwrap()
        );
    }
}

#[test]
fn prompt_fixture_histogram_matches_manifest() {
    let records = load_prompt_set(&fixture("prompts_2000.jsonl")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(fixture("prompts_2000.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(records.len() as u64, manifest["records"].as_u64().unwrap());
    assert_eq!(
        records.iter().filter(|r| r.id.starts_with('r')).count(),
        1000
    );
    assert_eq!(
        records.iter().filter(|r| r.id.starts_with('s')).count(),
        1000
    );

    let hist = skill_distribution(&records);
    let expected = manifest["skill_histogram"].as_object().unwrap();
    for (cat, n) in &hist {
        let want = expected
            .get(cat.as_str())
            .and_then(|v| v.as_u64())
            .unwrap_or(0);
        assert_eq!(*n as u64, want, "{cat}");
    }
    let tag_pairs: usize = hist.values().sum();
    assert_eq!(tag_pairs as u64, manifest["tag_pairs"].as_u64().unwrap());

    let mut sources: BTreeMap<&str, u64> = BTreeMap::new();
    for r in &records {
        *sources.entry(&r.source).or_default() += 1;
    }
    let want: BTreeMap<&str, u64> = manifest["sources"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_u64().unwrap()))
        .collect();
    assert_eq!(sources, want);
}

#[test]
fn normalized_distributions_match_hand_ratios() {
    use SkillCategory::*;
    let ds = BTreeMap::from([
        (
            "gecko".to_owned(),
            BTreeMap::from([(Count, 120), (Spatial, 80), (Style, 0)]),
        ),
        (
            "tifa".to_owned(),
            BTreeMap::from([(Count, 40), (Spatial, 100), (Style, 0)]),
        ),
        (
            "dsg".to_owned(),
            BTreeMap::from([(Count, 60), (Spatial, 20), (Style, 0)]),
        ),
    ]);
    let n = normalize_distributions(&ds);
    let hand = [
        ("gecko", Count, 1.0),
        ("tifa", Count, 40.0 / 120.0),
        ("dsg", Count, 0.5),
        ("gecko", Spatial, 0.8),
        ("tifa", Spatial, 1.0),
        ("dsg", Spatial, 0.2),
        ("dsg", Style, 0.0),
    ];
    for (d, c, v) in hand {
        assert!((n[d][&c] - v).abs() < 1e-12, "{d} {c}");
    }
}

fn caption_request(cond: &BTreeMap<String, String>, count: u32) -> SubskillRequest<'_> {
    SubskillRequest {
        template: templates::CAPTION_TEXT_RENDERING,
        template_id: "caption_text_rendering",
        conditioning: cond,
        skill: SkillCategory::TextRendering,
        sub_skill: "gibberish",
        id_prefix: "tr",
        count,
    }
}

#[test]
fn recorded_captions_replay_into_records() {
    let cond = BTreeMap::from([
        ("language".to_owned(), "Gibberish".to_owned()),
        ("text_length".to_owned(), "20".to_owned()),
    ]);
    let log = Arc::new(FixtureLog::open(&fixture("caption_replay.jsonl")).unwrap());
    let replay: Recorded<ScriptedGenerator> = Recorded::replay(log);
    let records = generate_subskill_prompts(&replay, &caption_request(&cond, 3)).unwrap();
    let texts: Vec<_> = records.iter().map(|r| r.text.as_str()).collect();
    assert_eq!(
        texts,
        [
            "a neon sign reading \"blorp zink fadoo qua\" above a late-night diner",
            "a chalkboard menu with \"vemt olo krass tibi\" written in looping script",
            "a birthday cake iced with the words \"sna pwett gorrumbo\"",
        ]
    );
    assert_eq!(records[1].id, "tr-0001");
    assert_eq!(records[2].extra["rendered_text"], "sna pwett gorrumbo");
    for r in &records {
        assert_eq!(r.sub_skill.as_deref(), Some("gibberish"));
        assert!(r
            .skills
            .iter()
            .all(|s| s.category == SkillCategory::TextRendering));
        r.validate().unwrap();
    }
    // A fourth sample was never recorded.
    assert!(generate_subskill_prompts(&replay, &caption_request(&cond, 4)).is_err());
}
