//! Campaign state backed by an append-only JSONL event log.
//!
//! Every mutation is written and fsynced before it is applied in memory, so
//! whatever a client saw acknowledged survives a restart. On open the log is
//! replayed in order; a torn final line (a write that never completed, hence
//! was never acknowledged) is truncated away.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use alignkit_core::coverage;
use alignkit_core::human::{Payload, PayloadError};
use alignkit_core::records::{ImageRef, RatingRecord, TemplateKind, PAIR_SEPARATOR};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("event log {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("event log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("unknown campaign {0:?}")]
    UnknownCampaign(String),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("invalid campaign: {0}")]
    InvalidCampaign(String),
    #[error("campaign {0:?} already exists with a different definition")]
    CampaignExists(String),
    #[error("payload field {}: {}", .0.field, .0.message)]
    Schema(PayloadError),
    #[error("rater {rater:?} already submitted a different payload for item {item:?}")]
    PayloadConflict { item: String, rater: String },
    #[error("item {item:?} already has {limit} submissions")]
    OverSubscribed { item: String, limit: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskQuestion {
    pub id: String,
    pub text: String,
}

/// One unit of annotation work as supplied by the campaign author.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    pub prompt_id: String,
    pub prompt_text: String,
    pub template: TemplateKind,
    pub images: Vec<ImageRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questions: Vec<TaskQuestion>,
}

fn default_raters() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    pub id: String,
    pub prompt_set_id: String,
    #[serde(default = "default_raters")]
    pub raters_per_item: u32,
    pub items: Vec<ItemSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub prompt_id: String,
    pub prompt_text: String,
    pub template: TemplateKind,
    pub images: Vec<ImageRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questions: Vec<TaskQuestion>,
}

impl Item {
    fn image_id(&self) -> String {
        join_pair(self.images.iter().map(|i| i.id.as_str()))
    }

    fn model_id(&self) -> String {
        join_pair(self.images.iter().map(|i| i.model_id.as_str()))
    }

    fn check(&self, payload: &Value) -> Result<(), PayloadError> {
        let parsed = Payload::from_value(self.template, payload)?;
        parsed.check_against_prompt(&self.prompt_text)?;
        let ids: Vec<String> = self.questions.iter().map(|q| q.id.clone()).collect();
        parsed.check_questions(&ids)?;
        if let Payload::Sxs(s) = &parsed {
            if s.image_a != self.images[0].id {
                return Err(PayloadError::new(
                    "image_a",
                    format!("expected {:?}", self.images[0].id),
                ));
            }
            if s.image_b != self.images[1].id {
                return Err(PayloadError::new(
                    "image_b",
                    format!("expected {:?}", self.images[1].id),
                ));
            }
        }
        Ok(())
    }
}

fn join_pair<'a>(parts: impl Iterator<Item = &'a str>) -> String {
    parts.collect::<Vec<_>>().join(&PAIR_SEPARATOR.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Campaign {
    pub id: String,
    pub prompt_set_id: String,
    pub raters_per_item: u32,
    pub items: Vec<Item>,
}

impl CampaignSpec {
    /// Checks the spec and assigns item ids where the author left them out.
    pub fn resolve(self) -> Result<Campaign, StoreError> {
        let bad = |m: String| Err(StoreError::InvalidCampaign(m));
        if self.id.is_empty() {
            return bad("campaign id is empty".into());
        }
        if self.raters_per_item == 0 {
            return bad("raters_per_item must be at least 1".into());
        }
        if self.items.is_empty() {
            return bad("campaign has no items".into());
        }
        let mut seen = HashSet::new();
        let mut items = Vec::with_capacity(self.items.len());
        for (i, spec) in self.items.into_iter().enumerate() {
            let item_id = spec
                .item_id
                .unwrap_or_else(|| format!("{}-{:04}", self.id, i));
            let want = if spec.template == TemplateKind::Sxs {
                2
            } else {
                1
            };
            if spec.images.len() != want {
                return bad(format!(
                    "item {item_id}: {} items carry exactly {want} image(s), got {}",
                    spec.template,
                    spec.images.len()
                ));
            }
            if spec.prompt_text.trim().is_empty() {
                return bad(format!("item {item_id}: empty prompt text"));
            }
            if spec.template == TemplateKind::DsgH {
                let ids: HashSet<_> = spec.questions.iter().map(|q| &q.id).collect();
                if spec.questions.is_empty() || ids.len() != spec.questions.len() {
                    return bad(format!(
                        "item {item_id}: dsg_h items need questions with distinct ids"
                    ));
                }
            } else if !spec.questions.is_empty() {
                return bad(format!("item {item_id}: only dsg_h items carry questions"));
            }
            if !seen.insert(item_id.clone()) {
                return bad(format!("duplicate item id {item_id}"));
            }
            items.push(Item {
                item_id,
                prompt_id: spec.prompt_id,
                prompt_text: spec.prompt_text,
                template: spec.template,
                images: spec.images,
                questions: spec.questions,
            });
        }
        Ok(Campaign {
            id: self.id,
            prompt_set_id: self.prompt_set_id,
            raters_per_item: self.raters_per_item,
            items,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    CampaignCreated {
        campaign: Campaign,
    },
    Submitted {
        item_id: String,
        rater_id: String,
        payload: Value,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskImage {
    pub id: String,
    pub model_id: String,
    pub url: String,
}

/// What a rater needs to render one task.
#[derive(Debug, Clone, Serialize)]
pub struct Task {
    pub campaign_id: String,
    pub item_id: String,
    pub template: TemplateKind,
    pub prompt_id: String,
    pub prompt_text: String,
    pub words: Vec<String>,
    pub images: Vec<TaskImage>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub questions: Vec<TaskQuestion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubmitAck {
    pub item_id: String,
    pub rater_id: String,
    /// True when this exact payload had already been accepted.
    pub duplicate: bool,
    pub submitted: u32,
    pub raters_per_item: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub items: usize,
    pub complete_items: usize,
    pub submitted: u64,
    pub required: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub campaign_id: String,
    pub raters_per_item: u32,
    #[serde(flatten)]
    pub total: Counts,
    pub by_template: BTreeMap<TemplateKind, Counts>,
}

#[derive(Default)]
struct State {
    order: Vec<String>,
    campaigns: HashMap<String, Campaign>,
    /// item id -> (campaign id, index in campaign)
    items: HashMap<String, (String, usize)>,
    /// item id -> (rater, payload) in submission order
    submissions: HashMap<String, Vec<(String, Value)>>,
}

impl State {
    fn item(&self, item_id: &str) -> Result<(&Campaign, &Item), StoreError> {
        let (cid, idx) = self
            .items
            .get(item_id)
            .ok_or_else(|| StoreError::UnknownItem(item_id.to_owned()))?;
        let c = &self.campaigns[cid];
        Ok((c, &c.items[*idx]))
    }

    fn submitted(&self, item_id: &str) -> &[(String, Value)] {
        self.submissions
            .get(item_id)
            .map(Vec::as_slice)
            .unwrap_or_default()
    }

    fn check_new_campaign(&self, c: &Campaign) -> Result<bool, StoreError> {
        if let Some(existing) = self.campaigns.get(&c.id) {
            return if existing == c {
                Ok(false)
            } else {
                Err(StoreError::CampaignExists(c.id.clone()))
            };
        }
        if let Some(it) = c
            .items
            .iter()
            .find(|it| self.items.contains_key(&it.item_id))
        {
            return Err(StoreError::InvalidCampaign(format!(
                "item id {} is already used by another campaign",
                it.item_id
            )));
        }
        Ok(true)
    }

    /// Decides whether a submission is new, a harmless repeat, or an error.
    fn check_submit(
        &self,
        item_id: &str,
        rater: &str,
        payload: &Value,
    ) -> Result<Option<SubmitAck>, StoreError> {
        let (c, item) = self.item(item_id)?;
        let subs = self.submitted(item_id);
        let ack = |duplicate, submitted| SubmitAck {
            item_id: item_id.to_owned(),
            rater_id: rater.to_owned(),
            duplicate,
            submitted,
            raters_per_item: c.raters_per_item,
        };
        if let Some((_, prev)) = subs.iter().find(|(r, _)| r == rater) {
            return if prev == payload {
                Ok(Some(ack(true, subs.len() as u32)))
            } else {
                Err(StoreError::PayloadConflict {
                    item: item_id.to_owned(),
                    rater: rater.to_owned(),
                })
            };
        }
        item.check(payload).map_err(StoreError::Schema)?;
        if subs.len() as u32 >= c.raters_per_item {
            return Err(StoreError::OverSubscribed {
                item: item_id.to_owned(),
                limit: c.raters_per_item,
            });
        }
        Ok(None)
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::CampaignCreated { campaign } => {
                for (i, it) in campaign.items.iter().enumerate() {
                    self.items
                        .insert(it.item_id.clone(), (campaign.id.clone(), i));
                }
                self.order.push(campaign.id.clone());
                self.campaigns.insert(campaign.id.clone(), campaign);
            }
            Event::Submitted {
                item_id,
                rater_id,
                payload,
            } => self
                .submissions
                .entry(item_id)
                .or_default()
                .push((rater_id, payload)),
        }
    }

    fn replay(&mut self, event: Event) -> Result<(), String> {
        match &event {
            Event::CampaignCreated { campaign } => {
                if !self
                    .check_new_campaign(campaign)
                    .map_err(|e| e.to_string())?
                {
                    return Ok(());
                }
            }
            Event::Submitted {
                item_id,
                rater_id,
                payload,
            } => {
                if self
                    .check_submit(item_id, rater_id, payload)
                    .map_err(|e| e.to_string())?
                    .is_some()
                {
                    return Ok(());
                }
            }
        }
        self.apply(event);
        Ok(())
    }
}

struct Log {
    path: PathBuf,
    file: File,
}

impl Log {
    fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        let io = |source| StoreError::Io {
            path: self.path.display().to_string(),
            source,
        };
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}

/// Pending leases handed out by `next_task`: item id -> rater -> issued at.
type Leases = HashMap<String, HashMap<String, Instant>>;

pub struct Store {
    log: Mutex<Log>,
    state: RwLock<State>,
    leases: Mutex<Leases>,
    lease: Duration,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Store {
    /// Opens (or creates) the event log at `path` and replays it.
    pub fn open(path: &Path, lease: Duration) -> Result<Store, StoreError> {
        let io = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;

        let mut state = State::default();
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while offset < bytes.len() {
            line_no += 1;
            let (line, next, terminated) = match bytes[offset..].iter().position(|b| *b == b'\n') {
                Some(p) => (&bytes[offset..offset + p], offset + p + 1, true),
                None => (&bytes[offset..], bytes.len(), false),
            };
            if line.iter().all(u8::is_ascii_whitespace) {
                offset = next;
                continue;
            }
            match serde_json::from_slice::<Event>(line) {
                Ok(ev) => state.replay(ev).map_err(|message| StoreError::Corrupt {
                    line: line_no,
                    message,
                })?,
                Err(_) if !terminated => {
                    tracing::warn!(path = %path.display(), line = line_no, "dropping torn final record");
                    file.set_len(offset as u64).map_err(io)?;
                    file.sync_data().map_err(io)?;
                    break;
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        line: line_no,
                        message: e.to_string(),
                    })
                }
            }
            if !terminated {
                file.write_all(b"\n").map_err(io)?;
            }
            offset = next;
        }
        tracing::info!(
            path = %path.display(),
            campaigns = state.campaigns.len(),
            submissions = state.submissions.values().map(Vec::len).sum::<usize>(),
            "event log replayed"
        );
        Ok(Store {
            log: Mutex::new(Log {
                path: path.to_owned(),
                file,
            }),
            state: RwLock::new(state),
            leases: Mutex::new(HashMap::new()),
            lease,
        })
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn commit(&self, log: &mut Log, event: Event) -> Result<(), StoreError> {
        log.append(&event)?;
        self.state
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .apply(event);
        Ok(())
    }

    /// Creates a campaign. Re-posting an identical definition is accepted and
    /// returns `false`; a different definition under the same id is an error.
    pub fn create_campaign(&self, spec: CampaignSpec) -> Result<(Campaign, bool), StoreError> {
        let campaign = spec.resolve()?;
        let mut log = lock(&self.log);
        if !self.read().check_new_campaign(&campaign)? {
            return Ok((campaign, false));
        }
        self.commit(
            &mut log,
            Event::CampaignCreated {
                campaign: campaign.clone(),
            },
        )?;
        Ok((campaign, true))
    }

    /// Records a rating. Writers are serialized, so the per-item limit holds
    /// under concurrent submissions.
    pub fn submit(
        &self,
        item_id: &str,
        rater: &str,
        payload: Value,
    ) -> Result<SubmitAck, StoreError> {
        let mut log = lock(&self.log);
        if let Some(ack) = self.read().check_submit(item_id, rater, &payload)? {
            return Ok(ack);
        }
        self.commit(
            &mut log,
            Event::Submitted {
                item_id: item_id.to_owned(),
                rater_id: rater.to_owned(),
                payload,
            },
        )?;
        if let Some(l) = lock(&self.leases).get_mut(item_id) {
            l.remove(rater);
        }
        let state = self.read();
        let (c, _) = state.item(item_id)?;
        Ok(SubmitAck {
            item_id: item_id.to_owned(),
            rater_id: rater.to_owned(),
            duplicate: false,
            submitted: state.submitted(item_id).len() as u32,
            raters_per_item: c.raters_per_item,
        })
    }

    /// Picks the least-loaded item the rater may still work on, counting
    /// both submissions and live leases held by other raters. A rater asking
    /// again before submitting gets the same task back.
    pub fn next_task(&self, rater: &str) -> Option<Task> {
        let state = self.read();
        let mut leases = lock(&self.leases);
        let now = Instant::now();
        for l in leases.values_mut() {
            l.retain(|_, at| now.duration_since(*at) < self.lease);
        }
        let mut best: Option<(usize, &Item, &Campaign)> = None;
        for cid in &state.order {
            let c = &state.campaigns[cid];
            for item in &c.items {
                let subs = state.submitted(&item.item_id);
                if subs.iter().any(|(r, _)| r == rater) {
                    continue;
                }
                let held = leases.get(&item.item_id);
                if held.is_some_and(|l| l.contains_key(rater)) {
                    return Some(task_view(c, item));
                }
                let others = held.map_or(0, HashMap::len);
                let load = subs.len() + others;
                if load >= c.raters_per_item as usize {
                    continue;
                }
                if best.is_none_or(|(b, _, _)| load < b) {
                    best = Some((load, item, c));
                }
            }
        }
        let (_, item, c) = best?;
        leases
            .entry(item.item_id.clone())
            .or_default()
            .insert(rater.to_owned(), now);
        Some(task_view(c, item))
    }

    pub fn campaign(&self, id: &str) -> Result<Campaign, StoreError> {
        self.read()
            .campaigns
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownCampaign(id.to_owned()))
    }

    /// All accepted ratings of a campaign, in item order then submission order.
    pub fn export(&self, campaign_id: &str) -> Result<Vec<RatingRecord>, StoreError> {
        let state = self.read();
        let c = state
            .campaigns
            .get(campaign_id)
            .ok_or_else(|| StoreError::UnknownCampaign(campaign_id.to_owned()))?;
        let mut out = Vec::new();
        for item in &c.items {
            for (rater, payload) in state.submitted(&item.item_id) {
                let mut extra = Map::new();
                extra.insert("campaign_id".into(), Value::String(c.id.clone()));
                extra.insert("item_id".into(), Value::String(item.item_id.clone()));
                out.push(RatingRecord {
                    prompt_id: item.prompt_id.clone(),
                    image_id: item.image_id(),
                    model_id: item.model_id(),
                    rater_id: rater.clone(),
                    template: item.template,
                    payload: payload.clone(),
                    extra,
                });
            }
        }
        Ok(out)
    }

    pub fn progress(&self, campaign_id: &str) -> Result<Progress, StoreError> {
        let state = self.read();
        let c = state
            .campaigns
            .get(campaign_id)
            .ok_or_else(|| StoreError::UnknownCampaign(campaign_id.to_owned()))?;
        let rpi = c.raters_per_item as u64;
        let mut total = Counts::default();
        let mut by_template: BTreeMap<TemplateKind, Counts> = BTreeMap::new();
        for item in &c.items {
            let n = state.submitted(&item.item_id).len() as u64;
            for counts in [&mut total, by_template.entry(item.template).or_default()] {
                counts.items += 1;
                counts.submitted += n;
                counts.required += rpi;
                counts.complete_items += usize::from(n >= rpi);
            }
        }
        Ok(Progress {
            campaign_id: c.id.clone(),
            raters_per_item: c.raters_per_item,
            total,
            by_template,
        })
    }
}

fn media_url(uri: &str) -> String {
    if uri.starts_with("http://") || uri.starts_with("https://") {
        uri.to_owned()
    } else {
        format!("/media/{}", uri.trim_start_matches('/'))
    }
}

fn task_view(c: &Campaign, item: &Item) -> Task {
    let words = coverage::words(&item.prompt_text)
        .into_iter()
        .map(|w| item.prompt_text[w.range].to_owned())
        .collect();
    Task {
        campaign_id: c.id.clone(),
        item_id: item.item_id.clone(),
        template: item.template,
        prompt_id: item.prompt_id.clone(),
        prompt_text: item.prompt_text.clone(),
        words,
        images: item
            .images
            .iter()
            .map(|i| TaskImage {
                id: i.id.clone(),
                model_id: i.model_id.clone(),
                url: media_url(&i.uri),
            })
            .collect(),
        questions: item.questions.clone(),
    }
}
