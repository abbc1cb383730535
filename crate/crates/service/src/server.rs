//! WebSocket session service.
//!
//! One endpoint, `/ws`. Each connection reads command envelopes and writes
//! replies plus the events of every session it watches. Every session owns a
//! private [`SignalBus`]; a watcher subscribes to it with `*` and forwards the
//! topics in [`FORWARDED_TOPICS`](crate::protocol::FORWARDED_TOPICS), so a
//! stream carries its session's signals exactly once and in bus order.
//! Events raised by a command are written before that command's reply.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::serve::ListenerExt;
use axum::Router;
use forge_core::bus::{Signal, SignalBus, Subscription};
use forge_core::config::CourseConfig;
use forge_core::results::ResultsStore;
use forge_core::session::{Clock, Session, SessionContext, SessionId, SessionRequest, SystemClock};
use futures::future::{pending, select_all};
use futures::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::net::TcpListener;

use crate::protocol::{
    is_forwarded, ChapterSummary, Command, ErrorBody, EventBody, Kind, Reply, TaskSummary, WireEnvelope,
};

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct LiveSession {
    bus: Arc<SignalBus>,
    session: Mutex<Session>,
}

/// Shared by every connection: the immutable course, the results store and
/// the registry of sessions started since boot.
pub struct AppState {
    config: Arc<CourseConfig>,
    store: Arc<Mutex<ResultsStore>>,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, Arc<LiveSession>>>,
}

impl AppState {
    pub fn new(config: Arc<CourseConfig>, store: ResultsStore) -> Self {
        AppState {
            config,
            store: Arc::new(Mutex::new(store)),
            clock: Arc::new(SystemClock),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    fn session(&self, session_id: &str) -> Result<Arc<LiveSession>, ErrorBody> {
        lock(&self.sessions)
            .get(session_id)
            .cloned()
            .ok_or_else(|| ErrorBody::new("UNKNOWN_SESSION", format!("no session `{session_id}`")))
    }

    fn catalog(&self) -> Reply {
        let c = &self.config;
        Reply::Catalog {
            course_id: c.course_id.clone(),
            title: c.title.clone(),
            chapters: c
                .chapters
                .iter()
                .map(|ch| ChapterSummary {
                    chapter_id: ch.chapter_id.clone(),
                    title: ch.title.clone(),
                    tasks: ch
                        .tasks
                        .iter()
                        .map(|t| TaskSummary {
                            task_id: t.task_id.clone(),
                            title: t.title.clone(),
                            kind: t.kind,
                            step_count: t.steps.len(),
                            total_weight: t.total_weight(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/ws", get(upgrade))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn run(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = listener.tap_io(|tcp| {
        if let Err(e) = tcp.set_nodelay(true) {
            log::warn!("cannot set TCP_NODELAY: {e}");
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds `addr` and serves in the background; returns the bound address.
pub async fn spawn(addr: &str, state: Arc<AppState>) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = run(listener, state, pending()).await {
            log::error!("server stopped: {e}");
        }
    });
    Ok(local)
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

struct Watch {
    session_id: String,
    bus: Arc<SignalBus>,
    sub: Subscription,
}

struct Connection {
    state: Arc<AppState>,
    out_seq: u64,
    last_in: u64,
    watched: Vec<Watch>,
}

enum Wake {
    Frame(Option<Result<Message, axum::Error>>),
    Signal(usize, Option<Signal>),
}

/// Resolves with the next signal on any watched subscription.
async fn next_signal(watched: &[Watch]) -> (usize, Option<Signal>) {
    if watched.is_empty() {
        return pending().await;
    }
    let (signal, index, _) = select_all(watched.iter().map(|w| Box::pin(w.sub.recv()))).await;
    (index, signal)
}

async fn connection(socket: WebSocket, state: Arc<AppState>) {
    let (mut tx, mut rx) = socket.split();
    let mut conn = Connection {
        state,
        out_seq: 0,
        last_in: 0,
        watched: Vec::new(),
    };
    loop {
        let wake = tokio::select! {
            frame = rx.next() => Wake::Frame(frame),
            (index, signal) = next_signal(&conn.watched) => Wake::Signal(index, signal),
        };
        let outgoing = match wake {
            Wake::Frame(None | Some(Err(_)) | Some(Ok(Message::Close(_)))) => break,
            Wake::Frame(Some(Ok(Message::Text(text)))) => conn.handle_text(text.as_str()),
            Wake::Frame(Some(Ok(Message::Binary(_)))) => {
                vec![conn.error(None, ErrorBody::new("BAD_ENVELOPE", "binary frames are not supported"))]
            }
            Wake::Frame(Some(Ok(_))) => continue,
            Wake::Signal(index, Some(signal)) => {
                let session_id = conn.watched[index].session_id.clone();
                conn.event(&session_id, signal).into_iter().collect()
            }
            Wake::Signal(index, None) => {
                conn.watched.remove(index);
                continue;
            }
        };
        for env in outgoing {
            let text = serde_json::to_string(&env).expect("envelopes serialize");
            if tx.send(Message::Text(text.into())).await.is_err() {
                conn.close();
                return;
            }
        }
    }
    conn.close();
}

impl Connection {
    fn envelope(&mut self, kind: Kind, re: Option<u64>, body: Value) -> WireEnvelope {
        self.out_seq += 1;
        WireEnvelope {
            kind,
            seq: self.out_seq,
            re,
            body,
        }
    }

    fn error(&mut self, re: Option<u64>, body: ErrorBody) -> WireEnvelope {
        let body = serde_json::to_value(body).expect("error bodies serialize");
        self.envelope(Kind::Error, re, body)
    }

    fn event(&mut self, session_id: &str, signal: Signal) -> Option<WireEnvelope> {
        if !is_forwarded(&signal.action_type) {
            return None;
        }
        let body = serde_json::to_value(EventBody::from_signal(session_id, signal)).expect("events serialize");
        Some(self.envelope(Kind::Event, None, body))
    }

    /// Everything already queued for the watched sessions, in bus order.
    fn drain_events(&mut self) -> Vec<WireEnvelope> {
        let mut pending = Vec::new();
        for w in &self.watched {
            for s in w.sub.drain() {
                pending.push((w.session_id.clone(), s));
            }
        }
        pending.into_iter().filter_map(|(id, s)| self.event(&id, s)).collect()
    }

    fn handle_text(&mut self, text: &str) -> Vec<WireEnvelope> {
        let raw: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return vec![self.error(None, ErrorBody::new("BAD_ENVELOPE", e.to_string()))],
        };
        let re = raw.get("seq").and_then(Value::as_u64);
        let env: WireEnvelope = match serde_json::from_value(raw) {
            Ok(env) => env,
            Err(e) => return vec![self.error(re, ErrorBody::new("BAD_ENVELOPE", e.to_string()))],
        };
        if env.kind != Kind::Command {
            return vec![self.error(re, ErrorBody::new("BAD_ENVELOPE", "clients may only send commands"))];
        }
        if env.seq <= self.last_in {
            let msg = format!("seq {} is not greater than previous {}", env.seq, self.last_in);
            return vec![self.error(re, ErrorBody::new("SEQ_ORDER", msg))];
        }
        self.last_in = env.seq;
        let result = match serde_json::from_value::<Command>(env.body) {
            Ok(cmd) => self.execute(cmd),
            Err(e) => Err(ErrorBody::new("BAD_COMMAND", e.to_string())),
        };
        let mut out = self.drain_events();
        out.push(match result {
            Ok(reply) => {
                let body = serde_json::to_value(reply).expect("replies serialize");
                self.envelope(Kind::Reply, re, body)
            }
            Err(e) => self.error(re, e),
        });
        out
    }

    fn watch(&mut self, session_id: &str, bus: &Arc<SignalBus>) -> Result<(), ErrorBody> {
        if self.watched.iter().any(|w| w.session_id == session_id) {
            return Ok(());
        }
        let sub = bus.subscribe("*").map_err(|e| ErrorBody::new("BUS", e.to_string()))?;
        self.watched.push(Watch {
            session_id: session_id.to_string(),
            bus: bus.clone(),
            sub,
        });
        Ok(())
    }

    fn unwatch(&mut self, session_id: &str) -> bool {
        match self.watched.iter().position(|w| w.session_id == session_id) {
            Some(i) => {
                let w = self.watched.remove(i);
                let _ = w.bus.unsubscribe(w.sub.id());
                true
            }
            None => false,
        }
    }

    fn close(&mut self) {
        for w in self.watched.drain(..) {
            let _ = w.bus.unsubscribe(w.sub.id());
        }
    }

    fn execute(&mut self, cmd: Command) -> Result<Reply, ErrorBody> {
        let state = self.state.clone();
        match cmd {
            Command::Catalog {} => Ok(state.catalog()),
            Command::Assets { kind } => Ok(Reply::Assets {
                assets: state
                    .config
                    .assets
                    .iter()
                    .filter(|a| kind.is_none_or(|k| a.kind == k))
                    .cloned()
                    .collect(),
            }),
            Command::CreateSession { task_id, mode, user_id } => {
                let session_id = uuid::Uuid::new_v4().to_string();
                let bus = Arc::new(SignalBus::new());
                // Subscribe before starting so the opening prompts are on the stream.
                self.watch(&session_id, &bus)?;
                let ctx = SessionContext::new(bus.clone())
                    .with_recorder(state.store.clone())
                    .with_clock(state.clock.clone());
                let req = SessionRequest {
                    session_id: SessionId::from(session_id.as_str()),
                    task_id,
                    mode,
                    user_id,
                };
                let session = match Session::start(state.config.clone(), req, ctx) {
                    Ok(s) => s,
                    Err(e) => {
                        self.unwatch(&session_id);
                        return Err(ErrorBody::from(&e));
                    }
                };
                let view = session.current_view();
                log::info!("session {session_id} started: {} in {:?}", view.task_id, view.mode);
                let live = Arc::new(LiveSession {
                    bus,
                    session: Mutex::new(session),
                });
                lock(&state.sessions).insert(session_id.clone(), live);
                Ok(Reply::Session { session_id, view })
            }
            Command::WatchSession { session_id } => {
                let live = state.session(&session_id)?;
                self.watch(&session_id, &live.bus)?;
                let view = lock(&live.session).current_view();
                Ok(Reply::Session { session_id, view })
            }
            Command::UnwatchSession { session_id } => {
                if self.unwatch(&session_id) {
                    Ok(Reply::Unwatched { session_id })
                } else {
                    Err(ErrorBody::new("NOT_WATCHING", format!("not watching `{session_id}`")))
                }
            }
            Command::SubmitAction { session_id, event } => {
                let live = state.session(&session_id)?;
                let outcome = lock(&live.session)
                    .submit_action(&event)
                    .map_err(|e| ErrorBody::from(&e))?;
                Ok(Reply::Outcome { outcome })
            }
            Command::CurrentView { session_id } => {
                let live = state.session(&session_id)?;
                let view = lock(&live.session).current_view();
                Ok(Reply::View { view })
            }
            Command::Score { session_id } => {
                let live = state.session(&session_id)?;
                let report = lock(&live.session).compute_score().map_err(|e| ErrorBody::from(&e))?;
                Ok(Reply::Score { report })
            }
            Command::AbortSession { session_id } => {
                let live = state.session(&session_id)?;
                let mut session = lock(&live.session);
                let status = session.abort().map_err(|e| ErrorBody::from(&e))?.status;
                Ok(Reply::Status { session_id, status })
            }
            Command::ShowMedia { session_id, asset_id } => {
                if state.config.asset(&asset_id).is_none() {
                    return Err(ErrorBody::new("UNKNOWN_ASSET", format!("no asset `{asset_id}`")));
                }
                let live = state.session(&session_id)?;
                let signal_seq = lock(&live.session)
                    .show_media(&asset_id)
                    .map_err(|e| ErrorBody::from(&e))?;
                Ok(Reply::Published { signal_seq })
            }
            Command::Records { filter } => Ok(Reply::Records {
                records: lock(&state.store).query(&filter),
            }),
        }
    }
}
