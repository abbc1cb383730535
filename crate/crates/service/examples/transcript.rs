//! Runs one session (an examination by default) over the WebSocket and prints every frame.
//!
//! `cargo run -p forge-service --example transcript [-- teaching|practice]`

use std::path::Path;
use std::sync::Arc;

use forge_core::config::parse_config;
use forge_core::results::{RecordFilter, ResultsStore};
use forge_core::session::{FixedClock, Mode, ReplayScript};
use forge_service::protocol::{Command, Kind, WireEnvelope};
use forge_service::server::{self, AppState};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// Sends one command and prints it with everything up to its answer.
async fn call(ws: &mut Ws, seq: &mut u64, cmd: Command) -> WireEnvelope {
    *seq += 1;
    let text = serde_json::to_string(&WireEnvelope::command(*seq, &cmd)).unwrap();
    println!(">> {text}");
    ws.send(Message::Text(text.into())).await.unwrap();
    loop {
        let msg = ws.next().await.unwrap().unwrap();
        let text = msg.to_text().unwrap();
        println!("<< {text}");
        let env: WireEnvelope = serde_json::from_str(text).unwrap();
        if env.kind != Kind::Event && env.re == Some(*seq) {
            return env;
        }
    }
}

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures");
    let course = std::fs::read(fixtures.join("verano_demo.course.json")).unwrap();
    let config = Arc::new(parse_config(&course).unwrap());
    let script: ReplayScript = serde_json::from_slice(
        &std::fs::read(fixtures.join("scripts/teaching_engine_cover_off_mistake.json")).unwrap(),
    )
    .unwrap();

    // Event times are moved onto the server clock, as a live pad would report them.
    let start = 1_760_000_000_000;
    let offset = start - script.events.first().map_or(0, |e| e.at);
    let state = AppState::new(config, ResultsStore::in_memory()).with_clock(Arc::new(FixedClock(start)));
    let addr = server::spawn("127.0.0.1:0", Arc::new(state)).await.unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async_with_config(format!("ws://{addr}/ws"), None, true)
        .await
        .unwrap();
    let mode = match std::env::args().nth(1).as_deref() {
        None | Some("examination") => Mode::Examination,
        Some("teaching") => Mode::Teaching,
        Some("practice") => Mode::Practice,
        Some(other) => panic!("unknown mode `{other}`"),
    };
    let mut seq = 0;

    call(&mut ws, &mut seq, Command::Catalog {}).await;
    let created = call(
        &mut ws,
        &mut seq,
        Command::CreateSession {
            task_id: script.task_id.clone(),
            mode,
            user_id: script.user_id.clone(),
        },
    )
    .await;
    let session_id = created.body["session_id"].as_str().unwrap().to_string();
    for mut event in script.events {
        event.at += offset;
        let session_id = session_id.clone();
        call(&mut ws, &mut seq, Command::SubmitAction { session_id, event }).await;
    }
    if mode == Mode::Examination {
        call(&mut ws, &mut seq, Command::Score { session_id }).await;
    }
    call(
        &mut ws,
        &mut seq,
        Command::Records {
            filter: RecordFilter::user(script.user_id),
        },
    )
    .await;
    let _ = ws.close(None).await;
}
