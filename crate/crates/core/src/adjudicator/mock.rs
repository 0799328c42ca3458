//! Scriptable offline provider.
//!
//! Answers by keyword rules over the posts it finds in the turn-1 message,
//! with optional canned transcripts and injected failures (content-policy
//! refusals, malformed answers, transport errors).

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::prompt::{extract_posts, render_answers, AnswerVocabulary};
use super::provider::{
    ChatMessage, Completion, CompletionProvider, CompletionRequest, ProviderError, Role,
};
use super::rate::{Clock, SystemClock};
use crate::label::Label;
use crate::lexicon::{MatchPolicy, TermMatcher};

/// Posts containing any keyword (word-boundary, case-insensitive) get
/// `answer`. Rules are tried in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub keywords: Vec<String>,
    pub answer: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub rules: Vec<KeywordRule>,
    pub default_answer: Label,
    /// Batches containing any of these phrases are refused.
    pub refuse_when: Vec<String>,
    /// The first N answer turns come back malformed.
    pub malformed_answers: u32,
    /// The first N requests fail with a transport error.
    pub transport_failures: u32,
    /// Simulated latency per request, on the provider's clock.
    pub latency_ms: u64,
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript {
            rules: Vec::new(),
            default_answer: Label::NotOpioidRelated,
            refuse_when: Vec::new(),
            malformed_answers: 0,
            transport_failures: 0,
            latency_ms: 0,
        }
    }
}

impl MockScript {
    /// "yes" for posts with any keyword, otherwise "no".
    pub fn keywords(keywords: &[&str]) -> Self {
        MockScript {
            rules: vec![KeywordRule {
                keywords: keywords.iter().map(|s| s.to_string()).collect(),
                answer: Label::OpioidRelated,
            }],
            ..MockScript::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Reasoning,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedRequest {
    pub at_ms: u64,
    pub turn: Turn,
    pub posts: Vec<String>,
    pub temperature_sent: bool,
}

#[derive(Debug, Default)]
struct Faults {
    malformed_left: u32,
    transport_left: u32,
}

pub struct MockProvider {
    id: String,
    rules: Vec<(TermMatcher, Label)>,
    default_answer: Label,
    refuse: TermMatcher,
    canned: Vec<(String, String, String)>,
    vocabulary: AnswerVocabulary,
    latency_ms: u64,
    clock: Arc<dyn Clock>,
    faults: Mutex<Faults>,
    log: Mutex<Vec<LoggedRequest>>,
}

impl MockProvider {
    pub fn new(id: impl Into<String>, script: &MockScript) -> Self {
        Self::with_clock(id, script, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(id: impl Into<String>, script: &MockScript, clock: Arc<dyn Clock>) -> Self {
        let policy = MatchPolicy::default();
        MockProvider {
            id: id.into(),
            rules: script
                .rules
                .iter()
                .map(|r| (TermMatcher::new(r.keywords.iter().map(String::as_str), policy), r.answer))
                .collect(),
            default_answer: script.default_answer,
            refuse: TermMatcher::new(script.refuse_when.iter().map(String::as_str), policy),
            canned: Vec::new(),
            vocabulary: AnswerVocabulary::default(),
            latency_ms: script.latency_ms,
            clock,
            faults: Mutex::new(Faults {
                malformed_left: script.malformed_answers,
                transport_left: script.transport_failures,
            }),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Fixed replies for an exact turn-1 message.
    pub fn with_canned(
        mut self,
        turn1: impl Into<String>,
        reasoning: impl Into<String>,
        answer: impl Into<String>,
    ) -> Self {
        self.canned.push((turn1.into(), reasoning.into(), answer.into()));
        self
    }

    pub fn with_vocabulary(mut self, vocabulary: AnswerVocabulary) -> Self {
        self.vocabulary = vocabulary;
        self
    }

    /// Queues `n` more malformed answer turns.
    pub fn inject_malformed(&self, n: u32) {
        self.faults.lock().unwrap().malformed_left += n;
    }

    pub fn inject_transport_failures(&self, n: u32) {
        self.faults.lock().unwrap().transport_left += n;
    }

    /// The label this script gives a post text.
    pub fn scripted_label(&self, text: &str) -> Label {
        self.rules
            .iter()
            .find(|(m, _)| m.is_match(text))
            .map(|(_, l)| *l)
            .unwrap_or(self.default_answer)
    }

    pub fn would_refuse(&self, text: &str) -> bool {
        self.refuse.is_match(text)
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn request_times(&self) -> Vec<u64> {
        self.log.lock().unwrap().iter().map(|r| r.at_ms).collect()
    }
}

fn turn1_of(messages: &[ChatMessage]) -> Option<&str> {
    messages
        .iter()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
}

impl CompletionProvider for MockProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let turn1 = turn1_of(&request.messages)
            .ok_or_else(|| ProviderError::Rejected("no user message".into()))?;
        let posts = extract_posts(turn1);
        let turn = if request.messages.iter().any(|m| m.role == Role::Assistant) {
            Turn::Answer
        } else {
            Turn::Reasoning
        };
        self.log.lock().unwrap().push(LoggedRequest {
            at_ms: self.clock.now_ms(),
            turn,
            posts: posts.iter().map(|s| s.to_string()).collect(),
            temperature_sent: request.temperature.is_some(),
        });
        if self.latency_ms > 0 {
            self.clock.sleep_ms(self.latency_ms);
        }
        {
            let mut faults = self.faults.lock().unwrap();
            if faults.transport_left > 0 {
                faults.transport_left -= 1;
                return Err(ProviderError::Transport("injected connection reset".into()));
            }
            if turn == Turn::Answer && faults.malformed_left > 0 {
                faults.malformed_left -= 1;
                return Ok(reply("Sure! Here is what I think: probably yes, hard to say"));
            }
        }
        if let Some((_, reasoning, answer)) = self.canned.iter().find(|(t, _, _)| t == turn1) {
            return Ok(reply(match turn {
                Turn::Reasoning => reasoning,
                Turn::Answer => answer,
            }));
        }
        if posts.iter().any(|p| self.would_refuse(p)) {
            return Err(ProviderError::ContentPolicy(
                "the request was flagged by the content filter".into(),
            ));
        }
        let labels: Vec<Label> = posts.iter().map(|p| self.scripted_label(p)).collect();
        Ok(reply(&match turn {
            Turn::Reasoning => labels
                .iter()
                .enumerate()
                .map(|(i, l)| format!("Tweet {}: by my rules this is {}.", i + 1, l))
                .collect::<Vec<_>>()
                .join("\n"),
            Turn::Answer => render_answers(&labels, &self.vocabulary),
        }))
    }
}

fn reply(text: &str) -> Completion {
    Completion {
        text: text.to_string(),
        prompt_tokens: None,
        completion_tokens: Some(text.split_whitespace().count() as u64),
    }
}
