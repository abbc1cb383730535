#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use forge_core::config::parse_config;
use forge_core::results::ResultsStore;
use forge_core::session::{Clock, ReplayScript};
use forge_service::protocol::{Command, EventBody, Kind, WireEnvelope};
use forge_service::server::{self, AppState};
use futures::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub fn fixture_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel)
}

pub fn fixture_text(rel: &str) -> String {
    std::fs::read_to_string(fixture_path(rel)).unwrap()
}

pub fn course_path() -> PathBuf {
    fixture_path("verano_demo.course.json")
}

pub fn script(name: &str) -> ReplayScript {
    serde_json::from_str(&fixture_text(&format!("scripts/{name}"))).unwrap()
}

/// Starts a server on an ephemeral port over the fixture course.
pub async fn start(store: ResultsStore, clock: Option<Arc<dyn Clock>>) -> String {
    let config = Arc::new(parse_config(fixture_text("verano_demo.course.json").as_bytes()).unwrap());
    let mut state = AppState::new(config, store);
    if let Some(c) = clock {
        state = state.with_clock(c);
    }
    let addr = server::spawn("127.0.0.1:0", Arc::new(state)).await.unwrap();
    format!("ws://{addr}/ws")
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    seq: u64,
    /// Highest envelope seq received so far.
    pub last_in: u64,
}

/// Everything the server sent in answer to one command.
#[derive(Debug)]
pub struct Answer {
    pub events: Vec<EventBody>,
    pub envelope: WireEnvelope,
}

impl Answer {
    pub fn body(&self) -> &Value {
        assert_eq!(
            self.envelope.kind,
            Kind::Reply,
            "expected a reply, got {:?}",
            self.envelope
        );
        &self.envelope.body
    }

    pub fn error_code(&self) -> &str {
        assert_eq!(
            self.envelope.kind,
            Kind::Error,
            "expected an error, got {:?}",
            self.envelope
        );
        self.envelope.body["code"].as_str().unwrap()
    }

    pub fn topics(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.action_type.as_str()).collect()
    }
}

impl Client {
    pub async fn connect(url: &str) -> Client {
        let (ws, _) = tokio_tungstenite::connect_async_with_config(url, None, true)
            .await
            .unwrap();
        Client { ws, seq: 0, last_in: 0 }
    }

    pub async fn send_raw(&mut self, msg: Message) {
        self.ws.send(msg).await.unwrap();
    }

    pub async fn recv(&mut self) -> WireEnvelope {
        let msg = tokio::time::timeout(Duration::from_secs(5), self.ws.next())
            .await
            .expect("server went quiet")
            .expect("stream ended")
            .unwrap();
        let env: WireEnvelope = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        assert!(
            env.seq > self.last_in,
            "outgoing seq went backwards: {} after {}",
            env.seq,
            self.last_in
        );
        self.last_in = env.seq;
        env
    }

    /// Reads until the reply or error answering `seq`, collecting events.
    pub async fn answer(&mut self, seq: u64) -> Answer {
        let mut events = Vec::new();
        loop {
            let env = self.recv().await;
            match env.kind {
                Kind::Event => events.push(serde_json::from_value(env.body).unwrap()),
                Kind::Reply | Kind::Error if env.re == Some(seq) => return Answer { events, envelope: env },
                _ => panic!("unexpected envelope {env:?}"),
            }
        }
    }

    pub async fn send(&mut self, cmd: &Command) -> u64 {
        self.seq += 1;
        let env = WireEnvelope::command(self.seq, cmd);
        self.ws
            .send(Message::Text(serde_json::to_string(&env).unwrap().into()))
            .await
            .unwrap();
        self.seq
    }

    pub async fn call(&mut self, cmd: Command) -> Answer {
        let seq = self.send(&cmd).await;
        self.answer(seq).await
    }

    /// Sends a raw text frame and returns the next envelope.
    pub async fn call_text(&mut self, text: &str) -> WireEnvelope {
        self.send_raw(Message::Text(text.to_string().into())).await;
        self.recv().await
    }

    /// Seq the next command will use minus one.
    pub fn set_seq(&mut self, seq: u64) {
        self.seq = seq;
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

pub async fn create(
    client: &mut Client,
    task_id: &str,
    mode: forge_core::session::Mode,
    user_id: &str,
) -> (String, Answer) {
    let a = client
        .call(Command::CreateSession {
            task_id: task_id.into(),
            mode,
            user_id: user_id.into(),
        })
        .await;
    let id = a.body()["session_id"].as_str().unwrap().to_string();
    (id, a)
}
