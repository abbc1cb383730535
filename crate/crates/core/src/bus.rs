//! In-process publish/subscribe signal bus.
//!
//! Producers publish a [`Signal`] (action type + target + payload); every
//! subscription whose topic pattern matches gets a copy in its own bounded
//! queue. Publishing never waits on consumers: a full queue drops its oldest
//! entry and the bus follows up with a `bus.overflow` signal.
//!
//! The bus runs either in immediate mode (signals land in subscriber queues
//! during `publish`) or in pump mode, where they wait in a pending list until
//! [`SignalBus::dispatch_pending`] is called. Both give the same ordering:
//! every subscriber sees signals in strictly increasing `seq` order.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const OVERFLOW_TOPIC: &str = "bus.overflow";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("bus is closed")]
    BusClosed,
    #[error("invalid topic pattern `{0}`")]
    InvalidPattern(String),
    #[error("invalid action type `{0}`")]
    InvalidTopic(String),
    #[error("unknown subscription {0}")]
    UnknownSubscription(SubscriptionId),
}

/// Scalar carried by a [`Payload::Value`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Text(s.to_string())
    }
}

impl From<String> for Scalar {
    fn from(s: String) -> Self {
        Scalar::Text(s)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Number(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Value {
        value: Scalar,
    },
    Reference {
        id: String,
    },
    Command {
        name: String,
        args: BTreeMap<String, serde_json::Value>,
    },
}

impl Payload {
    pub fn value(v: impl Into<Scalar>) -> Self {
        Payload::Value { value: v.into() }
    }

    pub fn reference(id: impl Into<String>) -> Self {
        Payload::Reference { id: id.into() }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            Payload::Value { value: Scalar::Text(s) } => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub seq: u64,
    pub action_type: String,
    pub target: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubscriptionId(u64);

impl fmt::Display for SubscriptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sub-{}", self.0)
    }
}

/// Dot-separated topic pattern with an optional trailing `*` segment.
/// `*` alone matches everything; `step.*` matches `step.completed` but not `step`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicPattern {
    prefix: Vec<String>,
    wildcard: bool,
}

fn valid_segment(seg: &str) -> bool {
    !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl TopicPattern {
    pub fn parse(pattern: &str) -> Result<Self, BusError> {
        let invalid = || BusError::InvalidPattern(pattern.to_string());
        let segments: Vec<&str> = pattern.split('.').collect();
        let (last, init) = segments.split_last().ok_or_else(invalid)?;
        if !init.iter().all(|s| valid_segment(s)) {
            return Err(invalid());
        }
        let wildcard = *last == "*";
        if !wildcard && !valid_segment(last) {
            return Err(invalid());
        }
        let mut prefix: Vec<String> = init.iter().map(|s| s.to_string()).collect();
        if !wildcard {
            prefix.push(last.to_string());
        }
        Ok(TopicPattern { prefix, wildcard })
    }

    pub fn matches(&self, action_type: &str) -> bool {
        let segments: Vec<&str> = action_type.split('.').collect();
        if self.wildcard {
            segments.len() > self.prefix.len() && self.prefix.iter().zip(&segments).all(|(p, s)| p == s)
        } else {
            segments.len() == self.prefix.len() && self.prefix.iter().zip(&segments).all(|(p, s)| p == s)
        }
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = self.prefix.iter().map(String::as_str).collect();
        if self.wildcard {
            parts.push("*");
        }
        f.write_str(&parts.join("."))
    }
}

fn validate_topic(action_type: &str) -> Result<(), BusError> {
    if action_type.split('.').all(valid_segment) {
        Ok(())
    } else {
        Err(BusError::InvalidTopic(action_type.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchMode {
    Immediate,
    Pump,
}

#[derive(Default)]
struct QueueState {
    items: VecDeque<Signal>,
    closed: bool,
    dropped: u64,
}

struct SubQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
    notify: Notify,
    capacity: usize,
}

impl SubQueue {
    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Enqueues, dropping the oldest entry when full. Returns true on overflow.
    fn push(&self, signal: Signal) -> bool {
        let overflowed = {
            let mut st = self.lock();
            if st.closed {
                return false;
            }
            let overflowed = st.items.len() >= self.capacity;
            if overflowed {
                st.items.pop_front();
                st.dropped += 1;
            }
            st.items.push_back(signal);
            overflowed
        };
        self.ready.notify_all();
        self.notify.notify_one();
        overflowed
    }

    fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
        self.notify.notify_one();
    }
}

/// Receiving end of a subscription. Dropping it does not unsubscribe; call
/// [`SignalBus::unsubscribe`] with its id.
pub struct Subscription {
    id: SubscriptionId,
    pattern: TopicPattern,
    queue: Arc<SubQueue>,
}

impl fmt::Debug for Subscription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subscription")
            .field("id", &self.id)
            .field("pattern", &self.pattern.to_string())
            .finish()
    }
}

impl Subscription {
    pub fn id(&self) -> SubscriptionId {
        self.id
    }

    pub fn pattern(&self) -> &TopicPattern {
        &self.pattern
    }

    pub fn try_recv(&self) -> Option<Signal> {
        self.queue.lock().items.pop_front()
    }

    /// Takes everything currently queued.
    pub fn drain(&self) -> Vec<Signal> {
        self.queue.lock().items.drain(..).collect()
    }

    /// Blocks up to `timeout`; `None` on timeout or when closed and empty.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<Signal> {
        let deadline = Instant::now() + timeout;
        let mut st = self.queue.lock();
        loop {
            if let Some(s) = st.items.pop_front() {
                return Some(s);
            }
            if st.closed {
                return None;
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            st = self
                .queue
                .ready
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Waits for the next signal; `None` once unsubscribed (or the bus
    /// closed) and the queue is drained.
    pub async fn recv(&self) -> Option<Signal> {
        loop {
            let notified = self.queue.notify.notified();
            {
                let mut st = self.queue.lock();
                if let Some(s) = st.items.pop_front() {
                    return Some(s);
                }
                if st.closed {
                    return None;
                }
            }
            notified.await;
        }
    }

    /// Number of signals lost to overflow so far.
    pub fn dropped(&self) -> u64 {
        self.queue.lock().dropped
    }

    pub fn is_closed(&self) -> bool {
        self.queue.lock().closed
    }
}

struct Entry {
    id: SubscriptionId,
    pattern: TopicPattern,
    /// First seq this subscription is eligible for.
    since: u64,
    queue: Arc<SubQueue>,
}

struct BusState {
    next_seq: u64,
    next_sub: u64,
    entries: Vec<Entry>,
    pending: VecDeque<Signal>,
    closed: bool,
}

pub struct SignalBus {
    state: Mutex<BusState>,
    mode: DispatchMode,
    capacity: usize,
}

impl Default for SignalBus {
    fn default() -> Self {
        SignalBus::new()
    }
}

impl fmt::Debug for SignalBus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SignalBus")
            .field("mode", &self.mode)
            .field("capacity", &self.capacity)
            .finish_non_exhaustive()
    }
}

impl SignalBus {
    pub fn new() -> Self {
        SignalBus::with_options(DispatchMode::Immediate, DEFAULT_QUEUE_CAPACITY)
    }

    /// Deterministic single-threaded bus: nothing is delivered until
    /// [`dispatch_pending`](Self::dispatch_pending).
    pub fn pumped() -> Self {
        SignalBus::with_options(DispatchMode::Pump, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_options(mode: DispatchMode, capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        SignalBus {
            state: Mutex::new(BusState {
                next_seq: 1,
                next_sub: 1,
                entries: Vec::new(),
                pending: VecDeque::new(),
                closed: false,
            }),
            mode,
            capacity,
        }
    }

    fn lock(&self) -> MutexGuard<'_, BusState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn mode(&self) -> DispatchMode {
        self.mode
    }

    pub fn publish(&self, action_type: &str, target: impl Into<String>, payload: Payload) -> Result<u64, BusError> {
        validate_topic(action_type)?;
        let mut st = self.lock();
        if st.closed {
            return Err(BusError::BusClosed);
        }
        let seq = st.next_seq;
        st.next_seq += 1;
        let signal = Signal {
            seq,
            action_type: action_type.to_string(),
            target: target.into(),
            payload,
        };
        match self.mode {
            DispatchMode::Immediate => deliver(&mut st, signal),
            DispatchMode::Pump => st.pending.push_back(signal),
        }
        Ok(seq)
    }

    /// Delivers every pending signal (pump mode). Returns how many were
    /// dispatched; always 0 in immediate mode.
    pub fn dispatch_pending(&self) -> usize {
        let mut st = self.lock();
        let mut n = 0;
        while let Some(signal) = st.pending.pop_front() {
            deliver(&mut st, signal);
            n += 1;
        }
        n
    }

    pub fn subscribe(&self, pattern: &str) -> Result<Subscription, BusError> {
        let pattern = TopicPattern::parse(pattern)?;
        let mut st = self.lock();
        if st.closed {
            return Err(BusError::BusClosed);
        }
        let id = SubscriptionId(st.next_sub);
        st.next_sub += 1;
        let queue = Arc::new(SubQueue {
            state: Mutex::new(QueueState::default()),
            ready: Condvar::new(),
            notify: Notify::new(),
            capacity: self.capacity,
        });
        let since = st.next_seq;
        st.entries.push(Entry {
            id,
            pattern: pattern.clone(),
            since,
            queue: queue.clone(),
        });
        Ok(Subscription { id, pattern, queue })
    }

    pub fn unsubscribe(&self, id: SubscriptionId) -> Result<(), BusError> {
        let mut st = self.lock();
        let pos = st
            .entries
            .iter()
            .position(|e| e.id == id)
            .ok_or(BusError::UnknownSubscription(id))?;
        let entry = st.entries.remove(pos);
        entry.queue.close();
        Ok(())
    }

    pub fn subscriber_count(&self) -> usize {
        self.lock().entries.len()
    }

    /// Refuses further publishes and ends every subscription once drained.
    pub fn close(&self) {
        let mut st = self.lock();
        st.closed = true;
        st.pending.clear();
        for e in st.entries.drain(..) {
            e.queue.close();
        }
    }
}

fn deliver(st: &mut BusState, signal: Signal) {
    let mut overflowed = Vec::new();
    for e in &st.entries {
        if signal.seq >= e.since && e.pattern.matches(&signal.action_type) && e.queue.push(signal.clone()) {
            overflowed.push(e.id);
        }
    }
    for id in overflowed {
        let dropped = st
            .entries
            .iter()
            .find(|e| e.id == id)
            .map(|e| e.queue.lock().dropped)
            .unwrap_or(0);
        let notice = Signal {
            seq: st.next_seq,
            action_type: OVERFLOW_TOPIC.to_string(),
            target: id.to_string(),
            payload: Payload::value(dropped as f64),
        };
        st.next_seq += 1;
        // Overflow caused by the notice itself is not reported again.
        for e in &st.entries {
            if notice.seq >= e.since && e.pattern.matches(OVERFLOW_TOPIC) {
                e.queue.push(notice.clone());
            }
        }
    }
}
