//! Few-shot prompting of hosted LLMs for sentiment transfer.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::adapters::{complete_with_retry, AdapterError, DecodingParams, LlmClient};
use crate::corpus::{direction_view, Corpus, Direction, LanguageTag};
use crate::util;

pub const DEFINITION_LINE: &str =
    "Sentiment transfer changes the sentiment of a sentence while keeping the rest of the content unchanged.";

pub const DEFAULT_SHOTS: usize = 4;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("≥1 example required")]
    NoExamples,
    #[error("definition line must not be empty")]
    EmptyDefinition,
    #[error("empty input")]
    EmptyInput,
    #[error("empty completion")]
    EmptyCompletion,
    #[error("need {needed} few-shot examples but the pool has {available} pairs")]
    NotEnoughExamples { needed: usize, available: usize },
    #[error("no prompt templates given")]
    NoTemplates,
    #[error("systemic failure: {failed} of {total} requests failed")]
    SystemicFailure { failed: usize, total: usize },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub direction: Direction,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub definition_line: String,
    pub examples: Vec<PromptExample>,
    pub language_name: String,
    pub direction: Direction,
}

impl PromptTemplate {
    pub fn new(language: LanguageTag, direction: Direction, examples: Vec<PromptExample>) -> Self {
        PromptTemplate {
            definition_line: DEFINITION_LINE.to_string(),
            examples,
            language_name: language.name().to_string(),
            direction,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.definition_line.trim().is_empty() {
            return Err(LlmError::EmptyDefinition);
        }
        if self.examples.is_empty() {
            return Err(LlmError::NoExamples);
        }
        Ok(())
    }
}

/// Renders the prompt as blank-line separated paragraphs: definition,
/// `Examples:`, one `Task/Input/Output` block per example, then the
/// instruction with the task and input, ending in a bare `Output:` line.
pub fn build_prompt(template: &PromptTemplate, input: &str) -> Result<String, LlmError> {
    template.validate()?;
    if input.trim().is_empty() {
        return Err(LlmError::EmptyInput);
    }
    let mut paragraphs = vec![template.definition_line.clone(), "Examples:".to_string()];
    for ex in &template.examples {
        paragraphs.push(format!(
            "Task: {}\nInput: {}\nOutput: {}",
            ex.direction.task_label(),
            ex.input,
            ex.output
        ));
    }
    paragraphs.push(format!(
        "Now change the sentiment of the following {} sentence.\nTask: {}\nInput: {}\nOutput:",
        template.language_name,
        template.direction.task_label(),
        input
    ));
    Ok(paragraphs.join("\n\n"))
}

fn strip_quotes(s: &str) -> &str {
    const PAIRS: [(char, char); 5] = [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’'), ('«', '»')];
    let mut s = s;
    loop {
        let t = s.trim();
        let stripped = PAIRS.iter().find_map(|(a, b)| {
            t.strip_prefix(*a)
                .and_then(|r| r.strip_suffix(*b))
                .filter(|_| t.chars().count() >= 2)
        });
        match stripped {
            Some(r) => s = r,
            None => return t,
        }
    }
}

/// First non-empty line of a completion with an `Output:` echo and matched
/// surrounding quotes removed.
pub fn parse_completion(raw: &str) -> Result<String, LlmError> {
    let mut text = raw.trim();
    if let Some(rest) = text.strip_prefix("Output:") {
        text = rest.trim_start();
    }
    text.lines()
        .map(strip_quotes)
        .find(|l| !l.is_empty())
        .map(str::to_string)
        .ok_or(LlmError::EmptyCompletion)
}

/// `k` distinct pairs drawn from `pool` by a seeded shuffle, alternating
/// pos2neg and neg2pos starting with pos2neg.
pub fn select_few_shot(pool: &Corpus, k: usize, seed: u64) -> Result<Vec<PromptExample>, LlmError> {
    if k == 0 {
        return Err(LlmError::NoExamples);
    }
    if pool.len() < k {
        return Err(LlmError::NotEnoughExamples {
            needed: k,
            available: pool.len(),
        });
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut util::rng(seed));
    Ok(idx[..k]
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let d = Direction::BOTH[i % 2];
            let pair = &pool.pairs[p];
            PromptExample {
                direction: d,
                input: pair.side(d.source()).to_string(),
                output: pair.side(d.target()).to_string(),
            }
        })
        .collect())
}

/// Templates for both directions sharing one few-shot set.
pub fn default_templates(
    language: LanguageTag,
    pool: &Corpus,
    seed: u64,
) -> Result<BTreeMap<Direction, PromptTemplate>, LlmError> {
    let examples = select_few_shot(pool, DEFAULT_SHOTS, seed)?;
    Ok(Direction::BOTH
        .into_iter()
        .map(|d| (d, PromptTemplate::new(language, d, examples.clone())))
        .collect())
}

/// One request/response record, written to `llm_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmLogEntry {
    pub direction: Direction,
    pub pair_id: u64,
    pub prompt: String,
    pub response: Option<String>,
    pub output: String,
    pub error: Option<String>,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRun {
    /// One output per test pair and direction; failed items are empty strings.
    pub outputs: BTreeMap<Direction, Vec<String>>,
    /// Indices (into the direction's outputs) of failed items.
    pub failed: BTreeMap<Direction, Vec<usize>>,
    pub retries: u64,
    pub log: Vec<LlmLogEntry>,
}

impl LlmRun {
    pub fn metadata(&self) -> BTreeMap<String, Value> {
        let mut md = BTreeMap::new();
        md.insert("retries".into(), json!(self.retries));
        md.insert(
            "failed_items".into(),
            json!(self.failed.iter().map(|(d, v)| (d.code(), v)).collect::<BTreeMap<_, _>>()),
        );
        md
    }
}

struct Item {
    direction: Direction,
    index: usize,
    pair_id: u64,
    prompt: String,
}

/// Prompts `client` for every test pair in each direction that has a template, with bounded
/// concurrency (`client.parallelism()` workers) and per-request retries.
/// Items that still fail become flagged empty outputs; the run aborts when
/// more than half of all items fail.
pub fn run_llm_eval(
    client: &dyn LlmClient,
    templates: &BTreeMap<Direction, PromptTemplate>,
    test: &Corpus,
    decoding: &DecodingParams,
) -> Result<LlmRun, LlmError> {
    let mut items = Vec::new();
    if templates.is_empty() {
        return Err(LlmError::NoTemplates);
    }
    for (&d, template) in templates {
        for (index, ex) in direction_view(test, d).into_iter().enumerate() {
            items.push(Item {
                direction: d,
                index,
                pair_id: ex.pair_id,
                prompt: build_prompt(template, &ex.input)?,
            });
        }
    }
    let total = items.len();
    let policy = client.retry_policy();
    let results: Mutex<Vec<Option<LlmLogEntry>>> = Mutex::new(vec![None; total]);
    let next = AtomicUsize::new(0);
    let failures = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = client.parallelism().max(1).min(total.max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let mut entry = LlmLogEntry {
                    direction: item.direction,
                    pair_id: item.pair_id,
                    prompt: item.prompt.clone(),
                    response: None,
                    output: String::new(),
                    error: None,
                    retries: 0,
                };
                match complete_with_retry(client, &item.prompt, decoding, &policy) {
                    Ok((raw, retries)) => {
                        entry.retries = retries;
                        match parse_completion(&raw) {
                            Ok(out) => entry.output = out,
                            Err(e) => entry.error = Some(e.to_string()),
                        }
                        entry.response = Some(raw);
                    }
                    Err(e) => {
                        if let AdapterError::RetriesExhausted { attempts, .. } = &e {
                            entry.retries = attempts.saturating_sub(1);
                        }
                        entry.error = Some(e.to_string());
                    }
                }
                if entry.error.is_some() {
                    let f = failures.fetch_add(1, Ordering::Relaxed) + 1;
                    if 2 * f > total {
                        abort.store(true, Ordering::Relaxed);
                    }
                }
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(entry);
            });
        }
    });

    let failed_count = failures.load(Ordering::Relaxed);
    if 2 * failed_count > total {
        return Err(LlmError::SystemicFailure {
            failed: failed_count,
            total,
        });
    }
    let results = results.into_inner().unwrap_or_else(|e| e.into_inner());
    let mut run = LlmRun {
        outputs: BTreeMap::new(),
        failed: BTreeMap::new(),
        retries: 0,
        log: Vec::with_capacity(total),
    };
    for &d in templates.keys() {
        run.outputs.insert(d, Vec::new());
        run.failed.insert(d, Vec::new());
    }
    for (item, entry) in items.iter().zip(results) {
        let entry = entry.expect("every item is processed when the run is not aborted");
        run.retries += u64::from(entry.retries);
        if entry.error.is_some() {
            log::warn!("{} item {} (pair {}) failed: {}", item.direction, item.index, item.pair_id, entry.error.as_deref().unwrap_or(""));
            run.failed.get_mut(&item.direction).expect("direction present").push(item.index);
        }
        run.outputs.get_mut(&item.direction).expect("direction present").push(entry.output.clone());
        run.log.push(entry);
    }
    Ok(run)
}

pub fn write_llm_log(path: &Path, entries: &[LlmLogEntry]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
