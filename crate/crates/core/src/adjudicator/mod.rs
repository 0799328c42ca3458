//! Batch LLM adjudication with the two-turn prompt scheme.
//!
//! Each batch of posts becomes one conversation: a system context, a first
//! user turn listing the posts between `<tweet>` tags and asking for
//! step-by-step reasoning, the model's reasoning, then a second user turn
//! asking for one comma-separated yes/no/unsure answer per post.
//!
//! Failure handling per batch:
//! * retryable transport errors are retried with exponential backoff up to
//!   the configured attempt count,
//! * an unparseable answer is re-asked once in the same conversation, then
//!   the whole conversation is retried once, then the batch has failed,
//! * a failed or refused batch of several posts is split into single-post
//!   batches, so only the offending post carries the error label
//!   ([`Label::ContentRestrictionError`] for refusals, [`Label::ApiError`]
//!   otherwise).

pub mod http;
pub mod mock;
pub mod prompt;
pub mod provider;
pub mod rate;

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use serde::{Deserialize, Serialize};

pub use prompt::{parse_answers, render_answers, AnswerVocabulary, ParseError, PromptError, PromptScheme};
pub use provider::{
    ChatMessage, Completion, CompletionProvider, CompletionRequest, ConfigError, ProviderConfig,
    ProviderError, ProviderKind, RetryPolicy,
};
pub use rate::{Clock, ManualClock, RateLimiter, SystemClock};

use crate::corpus::{Corpus, Post};
use crate::label::{Label, Prediction, PredictionSet};

pub const DEFAULT_BATCH_SIZE: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum AdjudicateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("batch size must be >= 1")]
    BatchSize,
    #[error("failed to persist transcript: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranscriptOutcome {
    Labeled,
    ParseFailed,
    Refused,
    Failed,
}

/// One attempted conversation, persisted verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTranscript {
    pub id: String,
    pub provider_id: String,
    /// Post ids in the order they appear in `rendered_turn1`.
    pub batch: Vec<String>,
    pub context: String,
    pub rendered_turn1: String,
    pub reasoning_reply: Option<String>,
    pub rendered_turn2: String,
    /// Every reply to turn 2, including rejected ones.
    pub answer_replies: Vec<String>,
    /// The reply the labels were parsed from.
    pub answer_reply: Option<String>,
    pub outcome: TranscriptOutcome,
    pub error: Option<String>,
    pub temperature: Option<f64>,
    pub started_ms: u64,
    pub elapsed_ms: u64,
    pub requests: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Destination for transcripts as they complete.
pub trait TranscriptSink {
    fn record(&mut self, transcript: &PromptTranscript) -> std::io::Result<()>;
}

impl TranscriptSink for Vec<PromptTranscript> {
    fn record(&mut self, transcript: &PromptTranscript) -> std::io::Result<()> {
        self.push(transcript.clone());
        Ok(())
    }
}

/// Appends one JSON object per transcript.
pub struct JsonlSink<W: Write>(pub W);

impl<W: Write> TranscriptSink for JsonlSink<W> {
    fn record(&mut self, transcript: &PromptTranscript) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.0, transcript)?;
        self.0.write_all(b"\n")?;
        self.0.flush()
    }
}

/// Discards transcripts.
pub struct NullSink;

impl TranscriptSink for NullSink {
    fn record(&mut self, _: &PromptTranscript) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub posts_requested: usize,
    pub posts_skipped: usize,
    pub batches: usize,
    pub requests: usize,
    /// Turn-2 re-asks plus full-conversation retries.
    pub retries: usize,
    pub answer_reasks: usize,
    pub full_retries: usize,
    pub transport_retries: usize,
    pub split_batches: usize,
    pub refused: usize,
    pub api_errors: usize,
}

impl RunStats {
    fn absorb(&mut self, other: &RunStats) {
        self.batches += other.batches;
        self.requests += other.requests;
        self.retries += other.retries;
        self.answer_reasks += other.answer_reasks;
        self.full_retries += other.full_retries;
        self.transport_retries += other.transport_retries;
        self.split_batches += other.split_batches;
        self.refused += other.refused;
        self.api_errors += other.api_errors;
    }
}

#[derive(Debug, Clone)]
pub struct AdjudicationRun {
    pub predictions: PredictionSet,
    pub stats: RunStats,
}

enum Hard {
    Refused(String),
    Failed(String),
}

struct BatchResult {
    labels: Vec<(String, Label, Option<String>)>,
    transcripts: Vec<PromptTranscript>,
    stats: RunStats,
}

struct Call {
    completion: Completion,
}

pub struct Adjudicator {
    provider: Arc<dyn CompletionProvider>,
    scheme: PromptScheme,
    batch_size: usize,
    max_concurrent: usize,
    retry: RetryPolicy,
    temperature: Option<f64>,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    predictor_id: String,
}

impl Adjudicator {
    pub fn new(
        provider: Arc<dyn CompletionProvider>,
        config: &ProviderConfig,
        scheme: PromptScheme,
        batch_size: usize,
    ) -> Result<Self, AdjudicateError> {
        Self::with_clock(provider, config, scheme, batch_size, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(
        provider: Arc<dyn CompletionProvider>,
        config: &ProviderConfig,
        scheme: PromptScheme,
        batch_size: usize,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, AdjudicateError> {
        config.validate()?;
        scheme.validate()?;
        if batch_size == 0 {
            return Err(AdjudicateError::BatchSize);
        }
        let temperature = if config.supports_temperature {
            Some(scheme.temperature)
        } else {
            log::info!(
                "provider {} does not accept a temperature; omitting it (scheme asks for {})",
                config.id,
                scheme.temperature
            );
            None
        };
        log::info!("adjudicating with {} in batches of {batch_size}", config.id);
        Ok(Adjudicator {
            predictor_id: config.id.clone(),
            provider,
            scheme,
            batch_size,
            max_concurrent: config.max_concurrent,
            retry: config.retry.clone(),
            temperature,
            limiter: RateLimiter::new(config.requests_per_minute, clock.clone()),
            clock,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Labels every post of `corpus` not already present in `prior`.
    ///
    /// The result holds the prior entries plus one new entry per remaining
    /// post, in corpus order. Transcripts reach `sink` as batches finish.
    pub fn run(
        &self,
        corpus: &Corpus,
        prior: Option<&PredictionSet>,
        sink: &mut dyn TranscriptSink,
    ) -> Result<AdjudicationRun, AdjudicateError> {
        let todo: Vec<&Post> = corpus
            .posts()
            .iter()
            .filter(|p| !prior.is_some_and(|pr| pr.contains(&p.id)))
            .collect();
        let mut stats = RunStats {
            posts_requested: todo.len(),
            posts_skipped: corpus.len() - todo.len(),
            ..RunStats::default()
        };
        let batches: Vec<&[&Post]> = todo.chunks(self.batch_size).collect();
        let mut fresh: std::collections::HashMap<String, Prediction> = Default::default();

        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<BatchResult>();
        let workers = self.max_concurrent.min(batches.len()).max(1);
        let sink_result = std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                let batches = &batches;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(batch) = batches.get(i) else { break };
                    let result = self.adjudicate_batch(batch, &format!("b{i}"));
                    if tx.send(result).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut sink_error = None;
            for result in rx {
                stats.absorb(&result.stats);
                if sink_error.is_none() {
                    for t in &result.transcripts {
                        if let Err(e) = sink.record(t) {
                            sink_error = Some(e);
                            // stop handing out work; in-flight batches drain
                            next.store(usize::MAX / 2, Ordering::SeqCst);
                            break;
                        }
                    }
                }
                for (id, label, transcript) in result.labels {
                    fresh.insert(
                        id,
                        Prediction {
                            label,
                            shadow_label: None,
                            transcript,
                        },
                    );
                }
            }
            sink_error.map_or(Ok(()), Err)
        });
        sink_result?;

        let mut predictions = match prior {
            Some(p) => PredictionSet::new(p.predictor_id.clone()),
            None => PredictionSet::new(self.predictor_id.clone()),
        };
        for post in corpus.posts() {
            if let Some(p) = prior.and_then(|pr| pr.get(&post.id)) {
                predictions.insert_prediction(post.id.clone(), p.clone());
            } else if let Some(p) = fresh.remove(&post.id) {
                predictions.insert_prediction(post.id.clone(), p);
            }
        }
        if let Some(prior) = prior {
            for (id, p) in prior.iter() {
                if !predictions.contains(id) {
                    predictions.insert_prediction(id, p.clone());
                }
            }
        }
        Ok(AdjudicationRun { predictions, stats })
    }

    fn adjudicate_batch(&self, posts: &[&Post], tag: &str) -> BatchResult {
        let mut out = BatchResult {
            labels: Vec::with_capacity(posts.len()),
            transcripts: Vec::new(),
            stats: RunStats {
                batches: 1,
                ..RunStats::default()
            },
        };
        match self.converse(posts, tag, &mut out) {
            Ok((labels, transcript_id)) => {
                for (post, label) in posts.iter().zip(labels) {
                    out.labels.push((post.id.clone(), label, Some(transcript_id.clone())));
                }
            }
            Err(hard) if posts.len() == 1 => {
                let (label, why) = match hard {
                    Hard::Refused(why) => {
                        out.stats.refused += 1;
                        (Label::ContentRestrictionError, why)
                    }
                    Hard::Failed(why) => {
                        out.stats.api_errors += 1;
                        (Label::ApiError, why)
                    }
                };
                log::warn!("post {}: {label} ({why})", posts[0].id);
                let transcript = out.transcripts.last().map(|t| t.id.clone());
                out.labels.push((posts[0].id.clone(), label, transcript));
            }
            Err(_) => {
                out.stats.split_batches += 1;
                for (j, post) in posts.iter().enumerate() {
                    let single = self.adjudicate_batch(&[*post], &format!("{tag}.{j}"));
                    out.stats.absorb(&single.stats);
                    out.labels.extend(single.labels);
                    out.transcripts.extend(single.transcripts);
                }
            }
        }
        out
    }

    /// Runs the two-turn conversation with the retry ladder. Returns the
    /// labels and the id of the transcript they came from.
    fn converse(
        &self,
        posts: &[&Post],
        tag: &str,
        out: &mut BatchResult,
    ) -> Result<(Vec<Label>, String), Hard> {
        let turn1 = self
            .scheme
            .render_turn1(posts, self.batch_size)
            .map_err(|e| Hard::Failed(e.to_string()))?;
        let vocabulary = &self.scheme.answer_vocabulary;
        for attempt in 0..2 {
            let mut t = PromptTranscript {
                id: format!("{}-{tag}-a{attempt}", self.predictor_id),
                provider_id: self.provider.id().to_string(),
                batch: posts.iter().map(|p| p.id.clone()).collect(),
                context: self.scheme.context.clone(),
                rendered_turn1: turn1.clone(),
                reasoning_reply: None,
                rendered_turn2: self.scheme.turn2.clone(),
                answer_replies: Vec::new(),
                answer_reply: None,
                outcome: TranscriptOutcome::Failed,
                error: None,
                temperature: self.temperature,
                started_ms: self.clock.now_ms(),
                elapsed_ms: 0,
                requests: 0,
                prompt_tokens: 0,
                completion_tokens: 0,
            };
            let mut messages = vec![
                ChatMessage::system(self.scheme.context.clone()),
                ChatMessage::user(turn1.clone()),
            ];
            let result = (|| {
                let reasoning = self.call(&messages, &mut t, &mut out.stats)?;
                t.reasoning_reply = Some(reasoning.completion.text.clone());
                messages.push(ChatMessage::assistant(reasoning.completion.text));
                messages.push(ChatMessage::user(self.scheme.turn2.clone()));
                for reask in 0..2 {
                    let answer = self.call(&messages, &mut t, &mut out.stats)?.completion.text;
                    t.answer_replies.push(answer.clone());
                    match parse_answers(&answer, posts.len(), vocabulary) {
                        Ok(labels) => {
                            t.answer_reply = Some(answer);
                            return Ok(Some(labels));
                        }
                        Err(e) => {
                            t.error = Some(e.to_string());
                            if reask == 0 {
                                out.stats.answer_reasks += 1;
                                out.stats.retries += 1;
                                messages.push(ChatMessage::assistant(answer));
                                messages.push(ChatMessage::user(self.scheme.turn2.clone()));
                            }
                        }
                    }
                }
                Ok(None)
            })();
            t.elapsed_ms = self.clock.now_ms().saturating_sub(t.started_ms);
            match result {
                Ok(Some(labels)) => {
                    t.outcome = TranscriptOutcome::Labeled;
                    t.error = None;
                    let id = t.id.clone();
                    out.transcripts.push(t);
                    return Ok((labels, id));
                }
                Ok(None) => {
                    t.outcome = TranscriptOutcome::ParseFailed;
                    out.transcripts.push(t);
                    if attempt == 0 {
                        out.stats.full_retries += 1;
                        out.stats.retries += 1;
                    }
                }
                Err(ProviderError::ContentPolicy(why)) => {
                    t.outcome = TranscriptOutcome::Refused;
                    t.error = Some(why.clone());
                    out.transcripts.push(t);
                    return Err(Hard::Refused(why));
                }
                Err(e) => {
                    t.outcome = TranscriptOutcome::Failed;
                    t.error = Some(e.to_string());
                    out.transcripts.push(t);
                    return Err(Hard::Failed(e.to_string()));
                }
            }
        }
        Err(Hard::Failed("answer unparseable after retries".into()))
    }

    fn call(
        &self,
        messages: &[ChatMessage],
        transcript: &mut PromptTranscript,
        stats: &mut RunStats,
    ) -> Result<Call, ProviderError> {
        let request = CompletionRequest {
            messages: messages.to_vec(),
            temperature: self.temperature,
        };
        let mut attempt = 1;
        loop {
            self.limiter.acquire();
            stats.requests += 1;
            transcript.requests += 1;
            match self.provider.complete(&request) {
                Ok(completion) => {
                    transcript.prompt_tokens += completion.prompt_tokens.unwrap_or(0);
                    transcript.completion_tokens += completion.completion_tokens.unwrap_or(0);
                    return Ok(Call { completion });
                }
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    log::debug!("retrying after {e}");
                    stats.transport_retries += 1;
                    self.clock.sleep_ms(self.retry.backoff_ms(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
