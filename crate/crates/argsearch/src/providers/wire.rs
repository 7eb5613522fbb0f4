//! Newline-delimited JSON request/response protocol over TCP, a client
//! fulfilling the local provider traits, and a loopback stub server that
//! wraps in-process models for differential testing.

use super::{RemoteEndpoint, WireError};
use crate::core::{Context, TokenId, Vocabulary};
use crate::models::{
    LanguageModel, LmDistribution, LmOutput, LmState, ModelError, RewardModel,
};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request {
    /// Next-token distribution for a context, optionally extending a state.
    Lm {
        context: Vec<u32>,
        top_slice: usize,
        state_id: Option<String>,
    },
    /// Advance a state over one selected token.
    Commit { state_id: String, token: u32 },
    /// Scalar reward for a text.
    Rm { text: String },
    /// The provider's vocabulary.
    Vocab,
}

#[derive(Debug, Serialize, Deserialize)]
struct LmResponse {
    tokens: Vec<u32>,
    logprobs: Vec<f64>,
    state_id: String,
    encoded_tokens: usize,
    full_vocab: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CommitResponse {
    state_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RmResponse {
    reward: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabResponse {
    lexemes: Vec<String>,
    eos: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Reply<T> {
    Ok(T),
    Err(String),
}

fn call<T: serde::de::DeserializeOwned>(
    endpoint: &RemoteEndpoint,
    req: &Request,
) -> Result<(T, u32), WireError> {
    let mut retries_used = 0;
    let mut last_err = None;
    for attempt in 0..=endpoint.retries {
        if attempt > 0 {
            retries_used = attempt;
            std::thread::sleep(Duration::from_millis(1u64 << attempt.min(8)));
        }
        match call_once(endpoint, req) {
            Ok(value) => return Ok((value, retries_used)),
            Err(e) if e.is_retryable() && attempt < endpoint.retries => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("retry loop always records an error"))
}

fn call_once<T: serde::de::DeserializeOwned>(
    endpoint: &RemoteEndpoint,
    req: &Request,
) -> Result<T, WireError> {
    let timeout = Duration::from_millis(endpoint.timeout_ms);
    let stream = TcpStream::connect(&endpoint.addr).map_err(|source| WireError::Connect {
        addr: endpoint.addr.clone(),
        source,
    })?;
    stream.set_read_timeout(Some(timeout)).map_err(WireError::Io)?;
    stream.set_write_timeout(Some(timeout)).map_err(WireError::Io)?;

    let mut body = serde_json::to_string(req).map_err(|e| WireError::Malformed {
        message: format!("request encode: {e}"),
    })?;
    body.push('\n');
    let mut writer = stream.try_clone().map_err(WireError::Io)?;
    writer.write_all(body.as_bytes()).map_err(map_io(endpoint))?;

    let mut line = String::new();
    BufReader::new(stream)
        .read_line(&mut line)
        .map_err(map_io(endpoint))?;
    if line.is_empty() {
        // Connection closed before replying; retryable.
        return Err(WireError::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            "connection closed before reply",
        )));
    }
    match serde_json::from_str::<Reply<T>>(&line) {
        Ok(Reply::Ok(value)) => Ok(value),
        Ok(Reply::Err(message)) => Err(WireError::ErrorStatus { message }),
        Err(e) => Err(WireError::Malformed {
            message: e.to_string(),
        }),
    }
}

fn map_io(endpoint: &RemoteEndpoint) -> impl Fn(std::io::Error) -> WireError + '_ {
    move |e| {
        if matches!(
            e.kind(),
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
        ) {
            WireError::Timeout {
                timeout_ms: endpoint.timeout_ms,
            }
        } else {
            WireError::Io(e)
        }
    }
}

/// Language model behind the wire protocol. Fetches the vocabulary once at
/// connection time.
pub struct RemoteLm {
    endpoint: RemoteEndpoint,
    vocab: Vocabulary,
    top_slice: usize,
}

impl RemoteLm {
    /// `top_slice` = 0 requests the full vocabulary.
    pub fn connect(endpoint: RemoteEndpoint, top_slice: usize) -> Result<Self, WireError> {
        endpoint
            .validate()
            .map_err(|message| WireError::Malformed { message })?;
        let (v, _): (VocabResponse, _) = call(&endpoint, &Request::Vocab)?;
        let vocab = Vocabulary::new(v.lexemes, v.eos.map(TokenId)).map_err(|e| {
            WireError::Malformed {
                message: format!("bad remote vocabulary: {e}"),
            }
        })?;
        Ok(Self {
            endpoint,
            vocab,
            top_slice,
        })
    }
}

fn remote_err(e: WireError) -> ModelError {
    ModelError::Remote(Box::new(e))
}

impl LanguageModel for RemoteLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(
        &self,
        ctx: &Context,
        state: Option<&LmState>,
    ) -> Result<LmOutput, ModelError> {
        let req = Request::Lm {
            context: ctx.tokens().iter().map(|t| t.0).collect(),
            top_slice: self.top_slice,
            state_id: state.map(|s| s.handle.clone()),
        };
        let (resp, _): (LmResponse, _) = call(&self.endpoint, &req).map_err(remote_err)?;
        if resp.tokens.len() != resp.logprobs.len() {
            return Err(remote_err(WireError::Malformed {
                message: format!(
                    "tokens/logprobs length mismatch: {} vs {}",
                    resp.tokens.len(),
                    resp.logprobs.len()
                ),
            }));
        }
        Ok(LmOutput {
            dist: LmDistribution {
                token_ids: resp.tokens.into_iter().map(TokenId).collect(),
                logprobs: resp.logprobs,
                full_vocab: resp.full_vocab,
            },
            state: LmState {
                covered: ctx.len(),
                handle: resp.state_id,
            },
            encoded_tokens: resp.encoded_tokens,
        })
    }

    fn commit_token(&self, state: &LmState, token: TokenId) -> Result<LmState, ModelError> {
        let req = Request::Commit {
            state_id: state.handle.clone(),
            token: token.0,
        };
        let (resp, _): (CommitResponse, _) = call(&self.endpoint, &req).map_err(remote_err)?;
        Ok(LmState {
            covered: state.covered + 1,
            handle: resp.state_id,
        })
    }
}

/// Reward model behind the wire protocol.
pub struct RemoteRm {
    endpoint: RemoteEndpoint,
    last_retries: AtomicU64,
}

impl RemoteRm {
    pub fn new(endpoint: RemoteEndpoint) -> Self {
        Self {
            endpoint,
            last_retries: AtomicU64::new(0),
        }
    }

    pub fn score(&self, text: &str) -> Result<f64, WireError> {
        let (resp, retries): (RmResponse, _) = call(
            &self.endpoint,
            &Request::Rm {
                text: text.to_string(),
            },
        )?;
        self.last_retries.store(retries as u64, Ordering::Relaxed);
        Ok(resp.reward)
    }

    /// Retries consumed by the most recent successful call.
    pub fn last_retries(&self) -> u64 {
        self.last_retries.load(Ordering::Relaxed)
    }
}

impl RewardModel for RemoteRm {
    fn score_text(&self, text: &str) -> f64 {
        // The trait is infallible; a decode-visible failure surfaces as NaN
        // and is caught by downstream finiteness checks.
        self.score(text).unwrap_or(f64::NAN)
    }
}

struct StateTable {
    next_id: u64,
    states: std::collections::HashMap<String, Vec<TokenId>>,
}

impl StateTable {
    fn insert(&mut self, tokens: Vec<TokenId>) -> String {
        let id = self.next_id.to_string();
        self.next_id += 1;
        self.states.insert(id.clone(), tokens);
        id
    }
}

/// Loopback stub server speaking the exact wire protocol, backed by
/// in-process models. `fail_next` injects one transport-level failure for
/// retry tests.
pub struct StubServer {
    addr: String,
    shutdown: Arc<AtomicBool>,
    fail_next: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn spawn(
        lm: Arc<dyn LanguageModel>,
        rm: Arc<dyn RewardModel>,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?.to_string();
        let shutdown = Arc::new(AtomicBool::new(false));
        let fail_next = Arc::new(AtomicBool::new(false));
        let states = Arc::new(Mutex::new(StateTable {
            next_id: 1,
            states: std::collections::HashMap::new(),
        }));

        let shutdown_flag = shutdown.clone();
        let fail_flag = fail_next.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if shutdown_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                if fail_flag.swap(false, Ordering::SeqCst) {
                    // Injected failure: drop the connection before replying.
                    drop(stream);
                    continue;
                }
                let lm = lm.clone();
                let rm = rm.clone();
                let states = states.clone();
                std::thread::spawn(move || serve_connection(stream, &*lm, &*rm, &states));
            }
        });

        Ok(Self {
            addr,
            shutdown,
            fail_next,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn endpoint(&self) -> RemoteEndpoint {
        RemoteEndpoint::new(self.addr.clone())
    }

    /// Makes the server drop the next incoming connection unanswered.
    pub fn inject_failure(&self) {
        self.fail_next.store(true, Ordering::SeqCst);
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect(&self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve_connection(
    stream: TcpStream,
    lm: &dyn LanguageModel,
    rm: &dyn RewardModel,
    states: &Mutex<StateTable>,
) {
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { return };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(req) => handle_request(req, lm, rm, states),
            Err(e) => format!("{{\"err\":{}}}", serde_json::json!(format!("bad request: {e}"))),
        };
        if writer.write_all(reply.as_bytes()).is_err() || writer.write_all(b"\n").is_err() {
            return;
        }
    }
}

fn ok_reply<T: Serialize>(value: T) -> String {
    serde_json::to_string(&Reply::Ok(value)).expect("reply serialization cannot fail")
}

fn err_reply(message: String) -> String {
    serde_json::to_string(&Reply::<()>::Err(message)).expect("reply serialization cannot fail")
}

fn handle_request(
    req: Request,
    lm: &dyn LanguageModel,
    rm: &dyn RewardModel,
    states: &Mutex<StateTable>,
) -> String {
    match req {
        Request::Vocab => {
            let vocab = lm.vocab();
            ok_reply(VocabResponse {
                lexemes: (0..vocab.len())
                    .map(|i| vocab.lexeme(TokenId(i as u32)).unwrap().to_string())
                    .collect(),
                eos: vocab.eos().map(|t| t.0),
            })
        }
        Request::Rm { text } => ok_reply(RmResponse {
            reward: rm.score_text(&text),
        }),
        Request::Commit { state_id, token } => {
            let mut table = states.lock().unwrap();
            let Some(mut tokens) = table.states.get(&state_id).cloned() else {
                return err_reply(format!("unknown state_id {state_id:?}"));
            };
            tokens.push(TokenId(token));
            let id = table.insert(tokens);
            ok_reply(CommitResponse { state_id: id })
        }
        Request::Lm {
            context,
            top_slice,
            state_id,
        } => {
            let tokens: Vec<TokenId> = context.into_iter().map(TokenId).collect();
            let mut table = states.lock().unwrap();
            let covered = match &state_id {
                None => 0,
                Some(id) => match table.states.get(id) {
                    None => return err_reply(format!("unknown state_id {id:?}")),
                    Some(stored) => {
                        if stored.len() > tokens.len() || stored[..] != tokens[..stored.len()] {
                            return err_reply("state does not cover a prefix of context".into());
                        }
                        stored.len()
                    }
                },
            };
            let ctx = Context::from_prompt(tokens.clone());
            let state = LmState {
                covered,
                handle: String::new(),
            };
            let out = match lm.next_distribution(&ctx, state_id.as_ref().map(|_| &state)) {
                Ok(out) => out,
                Err(e) => return err_reply(e.to_string()),
            };
            let mut dist = out.dist;
            if top_slice > 0 && top_slice < dist.token_ids.len() {
                let mut pairs: Vec<(TokenId, f64)> = dist
                    .token_ids
                    .iter()
                    .copied()
                    .zip(dist.logprobs.iter().copied())
                    .collect();
                pairs.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.0.cmp(&b.0))
                });
                pairs.truncate(top_slice);
                dist = LmDistribution {
                    token_ids: pairs.iter().map(|p| p.0).collect(),
                    logprobs: pairs.iter().map(|p| p.1).collect(),
                    full_vocab: false,
                };
            }
            let id = table.insert(tokens);
            ok_reply(LmResponse {
                tokens: dist.token_ids.iter().map(|t| t.0).collect(),
                logprobs: dist.logprobs,
                state_id: id,
                encoded_tokens: out.encoded_tokens,
                full_vocab: dist.full_vocab,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LexicalReward, UniformLm};

    fn spawn_uniform(n: usize) -> StubServer {
        StubServer::spawn(
            Arc::new(UniformLm::new(Vocabulary::numbered(n))),
            Arc::new(LexicalReward::new("t1", 1.0)),
        )
        .unwrap()
    }

    #[test]
    fn remote_rm_echoes_stub_value() {
        struct Fixed;
        impl RewardModel for Fixed {
            fn score_text(&self, _: &str) -> f64 {
                1.25
            }
        }
        let server = StubServer::spawn(
            Arc::new(UniformLm::new(Vocabulary::numbered(2))),
            Arc::new(Fixed),
        )
        .unwrap();
        let rm = RemoteRm::new(server.endpoint());
        assert_eq!(rm.score("anything").unwrap(), 1.25);
        assert_eq!(rm.last_retries(), 0);
    }

    #[test]
    fn remote_rm_retries_after_injected_failure() {
        let server = spawn_uniform(4);
        let rm = RemoteRm::new(server.endpoint());
        server.inject_failure();
        let value = rm.score("t1 t2").unwrap();
        assert!((value - 0.5).abs() < 1e-12);
        assert_eq!(rm.last_retries(), 1);
    }

    #[test]
    fn remote_lm_round_trip_and_state() {
        let server = spawn_uniform(4);
        let lm = RemoteLm::connect(server.endpoint(), 0).unwrap();
        assert_eq!(lm.vocab().len(), 4);
        let ctx = Context::from_prompt(vec![TokenId(0), TokenId(1)]);
        let out = lm.next_distribution(&ctx, None).unwrap();
        assert_eq!(out.encoded_tokens, 2);
        assert!(out.dist.full_vocab);
        let committed = lm.commit_token(&out.state, TokenId(2)).unwrap();
        let mut next = ctx.clone();
        next.push(TokenId(2));
        let out2 = lm.next_distribution(&next, Some(&committed)).unwrap();
        assert_eq!(out2.encoded_tokens, 0);
        let sum: f64 = out2.dist.logprobs.iter().map(|lp| lp.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn top_slice_is_flagged_partial() {
        let server = spawn_uniform(8);
        let lm = RemoteLm::connect(server.endpoint(), 3).unwrap();
        let ctx = Context::from_prompt(vec![TokenId(0)]);
        let out = lm.next_distribution(&ctx, None).unwrap();
        assert_eq!(out.dist.token_ids.len(), 3);
        assert!(!out.dist.full_vocab);
    }

    #[test]
    fn malformed_server_reply_is_a_parse_error() {
        // A raw listener that answers garbage.
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            if let Ok((stream, _)) = listener.accept() {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                let _ = reader.read_line(&mut line);
                let mut w = stream;
                let _ = w.write_all(b"{\"ok\":{\"reward\"\n");
            }
        });
        let mut endpoint = RemoteEndpoint::new(addr);
        endpoint.retries = 0;
        let rm = RemoteRm::new(endpoint);
        assert!(matches!(
            rm.score("x"),
            Err(WireError::Malformed { .. })
        ));
    }

    #[test]
    fn bad_state_id_is_an_error_status() {
        let server = spawn_uniform(4);
        let mut endpoint = server.endpoint();
        endpoint.retries = 0;
        let lm = RemoteLm::connect(endpoint, 0).unwrap();
        let ctx = Context::from_prompt(vec![TokenId(0)]);
        let bogus = LmState {
            covered: 1,
            handle: "999999".into(),
        };
        let err = lm.next_distribution(&ctx, Some(&bogus)).unwrap_err();
        assert!(err.to_string().contains("unknown state_id"));
    }
}
