//! LLM annotation over an OpenAI-style chat completions endpoint.
//!
//! Each session sends the two context prompts (category definitions and
//! reference links) followed by the classification prompt for every word of
//! its batch. Sessions run in parallel up to `LlmConfig::concurrency`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Annotation, AnnotationSource, Annotator, ProtectedCategory};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "FAIRLEX_LLM_API_KEY";
pub const ENDPOINT_ENV: &str = "FAIRLEX_LLM_ENDPOINT";

pub const CATEGORY_PROMPT: &str = "Consider these 9 protected categories defined by the Equality Act law to avoid discrimination of automatic decision-making algorithms:
\"Age\": A person belonging to a particular age or range of ages (for example, teenagers).
\"Disability\": A person has a disability if she or he has a physical or mental impairment which has a substantial and long-term adverse effect on that person's ability to carry out normal day-to-day activities.
\"Gender reassignment\": The process of transitioning from one sex to another.
\"Marriage and civil partnership\": Marriage is a union between a man and a woman or between a same-sex couple. Same-sex couples can also have their relationships legally recognised as 'civil partnerships'. Civil partners must not be treated less favourably than married couples.
\"Pregnancy and maternity\": Pregnancy is the condition of being pregnant or expecting a baby. Maternity refers to the period after the birth, and is linked to maternity leave in the employment context. In the non-work context, protection against maternity discrimination is for 26 weeks after giving birth, and this includes treating a woman unfavourably because she is breastfeeding.
\"Race\": Refers to the protected characteristic of race. It refers to a group of people defined by their race, colour, and nationality (including citizenship) ethnic or national origins.
\"Religion and belief\": Religion refers to any religion, including a lack of religion. Belief refers to any religious or philosophical belief and includes a lack of belief. Generally, a belief should affect your life choices or the way you live for it to be included in the definition.
\"Sex\": A man or a woman.
\"Sexual orientation\": Whether a person's sexual attraction is towards their own sex, the opposite sex, or both sexes.";

pub const LINKS_PROMPT: &str = "You can learn more about the discrimination along each protected attribute on the following URLs:
\"Age\": https://www.equalityhumanrights.com/en/advice-and-guidance/age-discrimination
\"Disability\":https://www.equalityhumanrights.com/en/disability-advice-and-guidance
\"Gender reassignment\": https://www.equalityhumanrights.com/en/advice-and-guidance/gender-reassignment-discrimination
\"Marriage and civil partnership\": https://www.equalityhumanrights.com/en/advice-and-guidance/marriage-and-civil-partnership-discrimination
\"Pregnancy and maternity\": https://www.equalityhumanrights.com/en/node/5916
\"Race\": https://www.equalityhumanrights.com/en/advice-and-guidance/race-discrimination
\"Religion and belief\": https://www.equalityhumanrights.com/en/religion-or-belief-work
\"Sex\": https://www.equalityhumanrights.com/en/advice-and-guidance/sex-discrimination
\"Sexual orientation\": https://www.equalityhumanrights.com/en/advice-and-guidance/sexual-orientation-discrimination";

const WORD_PROMPT_TEMPLATE: &str = "Given the previously defined protected categories \"Age\", \"Disability\", \"Gender reassignment\", \"Marriage and civil partnership\", \"Pregnancy and maternity\", \"Race\", \"Religion and belief\", \"Sex\", and \"Sexual orientation\".
How would you classify the word \"{word}\" and which [0,100] reliability score (only one) would you give to your assessment? You must assign one category.
If a word does not fit any categories, you must assign the category \"None\" with the reliability score and the relative explanation.
Provide the answer in the format: \"Protected Category|Reliability Score from 0 to 100 for the protected category|Explanation of why the word belongs to the protected category\".
In case a word does not fall into any category, provide the answer in the format: \"None|Reliability Score from 0 to 100 for the None category|Explanation of why the word does not fall under any of the defined protected categories.
Each answer must have exactly two | symbols in only one line; otherwise, I cannot process your response.";

pub fn word_prompt(word: &str) -> String {
    WORD_PROMPT_TEMPLATE.replace("{word}", word)
}

/// A parsed reply: category (or none), reliability, explanation.
pub type Reply = (Option<ProtectedCategory>, u8, String);

/// Parses `Category|Reliability|Explanation`. The reply must be a single line
/// with exactly two `|`; surrounding quotes and whitespace are ignored.
pub fn parse_llm_reply(reply: &str) -> Result<Reply> {
    let mut text = reply.trim();
    if text.len() >= 2 && text.starts_with('"') && text.ends_with('"') {
        text = text[1..text.len() - 1].trim();
    }
    if text.contains('\n') {
        return Err(Error::Reply("reply spans more than one line".into()));
    }
    let parts: Vec<&str> = text.split('|').collect();
    if parts.len() != 3 {
        return Err(Error::Reply(format!("expected exactly two `|`, found {}", parts.len() - 1)));
    }
    let category_text = parts[0].trim();
    let category = if category_text.eq_ignore_ascii_case("none") {
        None
    } else {
        Some(
            category_text
                .parse::<ProtectedCategory>()
                .map_err(|_| Error::Reply(format!("unknown category `{category_text}`")))?,
        )
    };
    let reliability = parts[1]
        .trim()
        .parse::<u8>()
        .ok()
        .filter(|r| *r <= 100)
        .ok_or_else(|| Error::Reply(format!("reliability `{}` is not an integer in 0..=100", parts[1].trim())))?;
    Ok((category, reliability, parts[2].trim().to_string()))
}

/// The inverse of [`parse_llm_reply`] for well-formed triples.
pub fn format_llm_reply(category: Option<ProtectedCategory>, reliability: u8, explanation: &str) -> String {
    let name = category.map_or("None", ProtectedCategory::display_name);
    format!("{name} | {reliability} | {explanation}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Falls back to `FAIRLEX_LLM_ENDPOINT` when empty.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: usize,
    pub timeout_secs: u64,
    pub concurrency: usize,
    /// Words classified per session; the context prompts are re-sent for
    /// each session.
    pub batch_size: usize,
    /// Base delay for exponential backoff after transport errors.
    pub backoff_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: String::new(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.3,
            max_retries: 3,
            timeout_secs: 60,
            concurrency: 4,
            batch_size: 1,
            backoff_ms: 500,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Invalid(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.concurrency == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("concurrency and batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_endpoint(&self) -> Result<String> {
        if !self.endpoint.is_empty() {
            return Ok(self.endpoint.clone());
        }
        std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Invalid(format!("no LLM endpoint configured (set `endpoint` or {ENDPOINT_ENV})")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Sends one conversation and returns the assistant's reply text.
pub trait ChatTransport: Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;
}

/// Blocking HTTP client for `/chat/completions`-style endpoints.
pub struct HttpChat {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
}

impl HttpChat {
    pub fn new(config: &LlmConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpChat {
            client,
            endpoint: config.resolved_endpoint()?,
            model: config.model.clone(),
            temperature: config.temperature,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: ChatMessage,
}

impl ChatTransport for HttpChat {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": messages,
        });
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(Error::Transport(format!("endpoint returned {status}")));
        }
        let parsed: CompletionResponse = response
            .json()
            .map_err(|e| Error::Transport(format!("unreadable completion: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Transport("completion has no choices".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmFailure {
    pub word: String,
    pub reason: String,
    /// True when the last attempt failed in transport rather than parsing.
    pub transport: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmOutcome {
    /// In input word order, failed words omitted.
    pub annotations: Vec<Annotation>,
    pub failures: Vec<LlmFailure>,
}

fn classify_word(
    transport: &dyn ChatTransport,
    config: &LlmConfig,
    conversation: &mut Vec<ChatMessage>,
    word: &str,
) -> std::result::Result<Annotation, LlmFailure> {
    conversation.push(ChatMessage::user(word_prompt(word)));
    let mut last = (String::new(), false);
    for attempt in 0..=config.max_retries {
        match transport.complete(conversation) {
            Ok(reply) => match parse_llm_reply(&reply) {
                Ok((category, reliability, explanation)) => {
                    conversation.push(ChatMessage {
                        role: Role::Assistant,
                        content: reply,
                    });
                    return Ok(Annotation {
                        word: word.to_string(),
                        category,
                        reliability,
                        explanation,
                        source: AnnotationSource::Llm,
                        tie: false,
                    });
                }
                Err(e) => {
                    log::debug!("`{word}` attempt {attempt}: {e}");
                    last = (e.to_string(), false);
                }
            },
            Err(e) => {
                log::debug!("`{word}` attempt {attempt}: {e}");
                last = (e.to_string(), true);
                if attempt < config.max_retries && config.backoff_ms > 0 {
                    std::thread::sleep(Duration::from_millis(config.backoff_ms << attempt.min(10)));
                }
            }
        }
    }
    // keep the conversation well-formed for the next word of the batch
    conversation.pop();
    Err(LlmFailure {
        word: word.to_string(),
        reason: last.0,
        transport: last.1,
    })
}

/// Annotates `words` through `transport`. Words whose retries are exhausted
/// become failures; if every word failed in transport the endpoint is
/// considered unreachable and an error is returned.
pub fn identify_llm_with(transport: &dyn ChatTransport, words: &[String], config: &LlmConfig) -> Result<LlmOutcome> {
    config.validate()?;
    let batches: Vec<&[String]> = words.chunks(config.batch_size).collect();
    let results: Vec<Mutex<Vec<std::result::Result<Annotation, LlmFailure>>>> =
        batches.iter().map(|_| Mutex::new(Vec::new())).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..config.concurrency.min(batches.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(batch) = batches.get(i) else { break };
                let mut conversation = vec![ChatMessage::user(CATEGORY_PROMPT), ChatMessage::user(LINKS_PROMPT)];
                let out: Vec<_> = batch
                    .iter()
                    .map(|w| classify_word(transport, config, &mut conversation, w))
                    .collect();
                *results[i].lock().unwrap() = out;
            });
        }
    });

    let mut outcome = LlmOutcome::default();
    for slot in results {
        for r in slot.into_inner().unwrap() {
            match r {
                Ok(a) => outcome.annotations.push(a),
                Err(f) => {
                    log::warn!("LLM annotation failed for `{}`: {}", f.word, f.reason);
                    outcome.failures.push(f);
                }
            }
        }
    }
    if !words.is_empty() && outcome.annotations.is_empty() && outcome.failures.iter().all(|f| f.transport) {
        return Err(Error::Transport(format!(
            "all {} words failed: {}",
            words.len(),
            outcome.failures[0].reason
        )));
    }
    Ok(outcome)
}

/// [`identify_llm_with`] over HTTP.
pub fn identify_llm(words: &[String], config: &LlmConfig) -> Result<LlmOutcome> {
    config.validate()?;
    let transport = HttpChat::new(config)?;
    identify_llm_with(&transport, words, config)
}

/// [`Annotator`] adapter: failed words are logged and left unannotated.
pub struct LlmAnnotator {
    pub transport: Box<dyn ChatTransport>,
    pub config: LlmConfig,
}

impl LlmAnnotator {
    pub fn http(config: LlmConfig) -> Result<Self> {
        config.validate()?;
        Ok(LlmAnnotator {
            transport: Box::new(HttpChat::new(&config)?),
            config,
        })
    }
}

impl Annotator for LlmAnnotator {
    fn annotate(&self, words: &[String]) -> Result<Vec<Annotation>> {
        let outcome = identify_llm_with(self.transport.as_ref(), words, &self.config)?;
        if !outcome.failures.is_empty() {
            log::warn!(
                "{} of {} words could not be annotated and are treated as not protected",
                outcome.failures.len(),
                words.len()
            );
        }
        Ok(outcome.annotations)
    }
}
