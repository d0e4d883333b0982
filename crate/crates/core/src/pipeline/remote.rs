//! Client for the model-server wire protocol (JSON over HTTP).
//!
//! | request | response |
//! |---|---|
//! | `GET /v1/health` | `{"status":"ok","model_id":s,"protocol":1}` |
//! | `GET /v1/vocab` | `{"size":n,"bos_id":i,"eos_id":i}` |
//! | `POST /v1/session {"text":s}` | `{"session_id":s,"truncated":b,"source_len":n}` |
//! | `POST /v1/step {"session_id":s,"prefix":[i..]}` | `{"log_probs":[f..],"representation":[f..]}` |
//! | `POST /v1/summarize {"text","method","params","n"}` | `{"summaries":[s..]}` |
//! | `DELETE /v1/session/{id}` | `{}` |
//! | `POST /v1/detokenize {"ids":[i..]}` | `{"text":s}` (optional extension) |
//!
//! Masked tokens may be sent as `null` log-probabilities.
//!
//! Transport failures and 5xx responses are reported as transient
//! [`LmError::Backend`]; 4xx responses and malformed bodies as
//! [`LmError::Protocol`].

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ureq::Agent;

use crate::decode::{DecodeConfig, Method};
use crate::lm::{LmError, StepModel, StepOutput, TokenId};

pub const PROTOCOL_VERSION: u64 = 1;
const TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct VocabInfo {
    pub size: usize,
    pub bos_id: TokenId,
    pub eos_id: TokenId,
}

#[derive(Deserialize)]
struct Health {
    status: String,
    model_id: String,
    protocol: u64,
}

#[derive(Debug, Deserialize)]
struct SessionInfo {
    session_id: String,
    truncated: bool,
    source_len: usize,
}

#[derive(Deserialize)]
struct StepReply {
    /// `null` stands for a masked token (−∞), which JSON cannot encode.
    log_probs: Vec<Option<f64>>,
    representation: Vec<f64>,
}

#[derive(Deserialize)]
struct Detokenized {
    text: String,
}

#[derive(Deserialize)]
struct Summaries {
    summaries: Vec<String>,
}

fn vocab_cache() -> &'static Mutex<HashMap<String, VocabInfo>> {
    static CACHE: OnceLock<Mutex<HashMap<String, VocabInfo>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    agent: Agent,
    base: String,
    model_id: String,
    vocab: VocabInfo,
}

impl RemoteClient {
    /// Checks server health and protocol version, then fetches the
    /// vocabulary description (once per process and URL).
    pub fn connect(url: &str) -> Result<Self, LmError> {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(TIMEOUT))
            .build()
            .into();
        let base = url.trim_end_matches('/').to_owned();
        let health: Health = get(&agent, &format!("{base}/v1/health"))?;
        if health.protocol != PROTOCOL_VERSION {
            return Err(LmError::Protocol(format!(
                "server speaks protocol {}, client speaks {PROTOCOL_VERSION}",
                health.protocol
            )));
        }
        if health.status != "ok" {
            return Err(LmError::Backend(format!(
                "server status `{}`",
                health.status
            )));
        }
        let cached = vocab_cache()
            .lock()
            .expect("vocab cache poisoned")
            .get(&base)
            .copied();
        let vocab = match cached {
            Some(v) => v,
            None => {
                let v: VocabInfo = get(&agent, &format!("{base}/v1/vocab"))?;
                if v.size == 0 || v.bos_id as usize >= v.size || v.eos_id as usize >= v.size {
                    return Err(LmError::Protocol(format!("inconsistent vocabulary {v:?}")));
                }
                vocab_cache()
                    .lock()
                    .expect("vocab cache poisoned")
                    .insert(base.clone(), v);
                v
            }
        };
        Ok(Self {
            agent,
            base,
            model_id: health.model_id,
            vocab,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn vocab(&self) -> VocabInfo {
        self.vocab
    }

    /// Opens a server-side session encoding `text`.
    pub fn open_session(&self, text: &str) -> Result<RemoteSession, LmError> {
        let info: SessionInfo = post(
            &self.agent,
            &format!("{}/v1/session", self.base),
            &json!({ "text": text }),
        )?;
        Ok(RemoteSession {
            client: self.clone(),
            context: text.to_owned(),
            info,
            serial: Mutex::new(()),
        })
    }

    /// Maps generated ids back to text via the detokenize extension.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String, LmError> {
        let reply: Detokenized = post(
            &self.agent,
            &format!("{}/v1/detokenize", self.base),
            &json!({ "ids": ids }),
        )
        .map_err(|e| match e {
            LmError::Protocol(m) => LmError::Protocol(format!(
                "{m} (the server must implement the /v1/detokenize extension)"
            )),
            other => other,
        })?;
        Ok(reply.text)
    }

    /// Server-side reference decoding, for cross-checks.
    pub fn summarize_remote(
        &self,
        text: &str,
        cfg: &DecodeConfig,
        n: usize,
    ) -> Result<Vec<String>, LmError> {
        let body = json!({
            "text": text,
            "method": cfg.method.name(),
            "params": summarize_params(cfg),
            "n": n,
        });
        let reply: Summaries = post(&self.agent, &format!("{}/v1/summarize", self.base), &body)?;
        Ok(reply.summaries)
    }
}

fn summarize_params(cfg: &DecodeConfig) -> Value {
    let mut params = json!({
        "max_len": cfg.max_len,
        "min_len": cfg.min_len,
        "length_penalty": cfg.length_penalty,
        "seed": cfg.seed,
    });
    let extra = match cfg.method {
        Method::Greedy => json!({}),
        Method::Beam { num_beams } => json!({ "num_beams": num_beams }),
        Method::TopK { k } => json!({ "k": k }),
        Method::TopP { p } => json!({ "p": p }),
        Method::Contrastive { k, alpha } => json!({ "k": k, "alpha": alpha }),
    };
    if let (Some(p), Value::Object(e)) = (params.as_object_mut(), extra) {
        p.extend(e);
    }
    params
}

/// A decode-run-scoped server session. Step calls are serialized; the
/// session is deleted on drop.
#[derive(Debug)]
pub struct RemoteSession {
    client: RemoteClient,
    context: String,
    info: SessionInfo,
    serial: Mutex<()>,
}

impl RemoteSession {
    pub fn session_id(&self) -> &str {
        &self.info.session_id
    }

    /// Whether the server cut the source to its maximum length.
    pub fn truncated(&self) -> bool {
        self.info.truncated
    }

    /// Source length in server tokens after truncation.
    pub fn source_len(&self) -> usize {
        self.info.source_len
    }
}

impl StepModel for RemoteSession {
    fn vocab_size(&self) -> usize {
        self.client.vocab.size
    }

    fn bos_id(&self) -> TokenId {
        self.client.vocab.bos_id
    }

    fn eos_id(&self) -> TokenId {
        self.client.vocab.eos_id
    }

    fn step(&self, context: &str, prefix: &[TokenId]) -> Result<StepOutput, LmError> {
        if context != self.context {
            return Err(LmError::InvalidModel(
                "session was opened for a different context".into(),
            ));
        }
        let size = self.client.vocab.size;
        if let Some(&id) = prefix.iter().find(|&&id| id as usize >= size) {
            return Err(LmError::TokenOutOfRange { id, size });
        }
        let _guard = self.serial.lock().unwrap_or_else(|p| p.into_inner());
        let reply: StepReply = post(
            &self.client.agent,
            &format!("{}/v1/step", self.client.base),
            &json!({ "session_id": self.info.session_id, "prefix": prefix }),
        )?;
        if reply.log_probs.len() != size {
            return Err(LmError::Protocol(format!(
                "step returned {} log-probs for a vocabulary of {size}",
                reply.log_probs.len()
            )));
        }
        Ok(StepOutput {
            log_probs: reply
                .log_probs
                .into_iter()
                .map(|lp| lp.unwrap_or(f64::NEG_INFINITY))
                .collect(),
            representation: reply.representation,
        })
    }
}

impl Drop for RemoteSession {
    fn drop(&mut self) {
        let url = format!("{}/v1/session/{}", self.client.base, self.info.session_id);
        if let Err(e) = self.client.agent.delete(&url).call() {
            log::debug!("closing session {}: {e}", self.info.session_id);
        }
    }
}

fn get<T: DeserializeOwned>(agent: &Agent, url: &str) -> Result<T, LmError> {
    read(url, agent.get(url).call())
}

fn post<T: DeserializeOwned, B: Serialize>(
    agent: &Agent,
    url: &str,
    body: &B,
) -> Result<T, LmError> {
    read(url, agent.post(url).send_json(body))
}

fn read<T: DeserializeOwned>(
    url: &str,
    result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
) -> Result<T, LmError> {
    let mut resp = result.map_err(|e| LmError::Backend(format!("{url}: {e}")))?;
    let status = resp.status();
    if status.is_server_error() {
        return Err(LmError::Backend(format!("{url}: HTTP {status}")));
    }
    if !status.is_success() {
        let detail = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(LmError::Protocol(format!(
            "{url}: HTTP {status} {}",
            detail.trim()
        )));
    }
    resp.body_mut()
        .read_json()
        .map_err(|e| LmError::Protocol(format!("{url}: malformed response: {e}")))
}
