use std::collections::BTreeMap;

use alignkit_core::backends::Backends;
use alignkit_core::promptset::{
    generate_subskill_prompts, skill_distribution, tag_prompt, tags_to_skills, weighted_resample,
    SkillWeights, SubskillRequest,
};
use alignkit_core::records::{load_prompt_set, PromptRecord, SkillCategory};
use alignkit_core::templates;
use anyhow::{anyhow, Context};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{backend_error, promptset_error, record_error, CliError};
use crate::output::{thread_pool, write_records};
use crate::{GenPromptsArgs, ResampleArgs, TagArgs};

/// Replaces each prompt's skills with the tagger's, keeping the raw tags
/// under `extra.tags`.
pub fn tag(args: &TagArgs) -> Result<(), CliError> {
    let (cfg, base) = RunConfig::load(&args.config)?;
    let backends = Backends::build(&cfg.backends, &base).map_err(backend_error)?;
    let gen = backends.generation().map_err(backend_error)?;
    let prompts = load_prompt_set(&args.prompts).map_err(record_error)?;
    let pool = thread_pool(args.jobs)?;
    let tagged: Vec<PromptRecord> = pool.install(|| {
        prompts
            .par_iter()
            .map(|p| {
                let parse = tag_prompt(gen, p)
                    .map_err(promptset_error)
                    .map_err(|e| e.context(format!("tagging prompt {}", p.id)))?;
                if !parse.skipped.is_empty() {
                    tracing::warn!(prompt = %p.id, skipped = parse.skipped.len(), "unparsed tagger lines");
                }
                let mut out = p.clone();
                out.skills = tags_to_skills(&parse.tags);
                out.extra.insert("tags".into(), serde_json::to_value(&parse.tags).expect("tags serialize"));
                Ok(out)
            })
            .collect::<Result<_, CliError>>()
    })?;
    write_records(&args.out, &tagged)?;
    for (skill, n) in skill_distribution(&tagged)
        .into_iter()
        .filter(|(_, n)| *n > 0)
    {
        tracing::info!(%skill, prompts = n, "skill count");
    }
    Ok(())
}

/// Draws a skill-weighted subset of the prompt set.
pub fn resample(args: &ResampleArgs) -> Result<(), CliError> {
    let weights = match &args.weights {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(CliError::input)?;
            toml::from_str::<SkillWeights>(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(CliError::input)?
        }
        None => SkillWeights::default(),
    };
    let pool = load_prompt_set(&args.prompts).map_err(record_error)?;
    let chosen = weighted_resample(&pool, &weights, args.n, args.seed).map_err(promptset_error)?;
    write_records(&args.out, &chosen)
}

/// Generates sub-skill prompts from a bundled or user-supplied template.
pub fn gen_prompts(args: &GenPromptsArgs) -> Result<(), CliError> {
    let skill = SkillCategory::parse(&args.skill)
        .ok_or_else(|| CliError::input(anyhow!("unknown skill {:?}", args.skill)))?;
    let (template, template_id) = match args.template.as_str() {
        "caption_text_rendering" => (
            templates::CAPTION_TEXT_RENDERING.to_owned(),
            args.template.clone(),
        ),
        path => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading template {path}"))
                .map_err(CliError::input)?;
            let id = std::path::Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".into());
            (text, id)
        }
    };
    let (cfg, base) = RunConfig::load(&args.config)?;
    let backends = Backends::build(&cfg.backends, &base).map_err(backend_error)?;
    let conditioning: BTreeMap<String, String> = args.conditioning.iter().cloned().collect();
    let req = SubskillRequest {
        template: &template,
        template_id: &template_id,
        conditioning: &conditioning,
        skill,
        sub_skill: &args.sub_skill,
        id_prefix: &args.id_prefix,
        count: args.count,
    };
    let records = generate_subskill_prompts(backends.generation().map_err(backend_error)?, &req)
        .map_err(promptset_error)?;
    write_records(&args.out, &records)
}
