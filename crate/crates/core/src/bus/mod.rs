//! In-process agent bus: topic publish/subscribe with retention and
//! request/reply correlation.
//!
//! Delivery is at-least-once: a subscriber attaching to a topic first receives
//! the topic's retained messages, so consumers that resubscribe see messages
//! again and should deduplicate by message id ([`Deduplicator`]).

mod bridge;
mod expert;

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, Utc};
use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use bridge::{BridgeClient, BridgeServer, MAX_FRAME_LEN, SUBSCRIBE_TOPIC};
pub use expert::{spawn_domain_expert, DomainTask};

use crate::clock::SharedClock;

/// Topic replies are published on.
pub const REPLY_TOPIC: &str = "replies";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SenderRole {
    CoCreation,
    DomainExpert(String),
    Orchestrator,
    Harness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Task,
    Result,
    Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentMessage {
    pub message_id: String,
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_id: Option<String>,
    pub sender: SenderRole,
    pub kind: MessageKind,
    pub payload: Value,
    pub timestamp: DateTime<Utc>,
}

impl AgentMessage {
    pub fn new(topic: &str, sender: SenderRole, kind: MessageKind, payload: Value) -> Self {
        Self {
            message_id: format!("msg-{}", uuid::Uuid::new_v4().simple()),
            topic: topic.into(),
            correlation_id: None,
            sender,
            kind,
            payload,
            timestamp: Utc::now(),
        }
    }

    pub fn task(topic: &str, sender: SenderRole, payload: Value) -> Self {
        Self::new(topic, sender, MessageKind::Task, payload)
    }

    /// A Result answering `task`.
    pub fn reply_to(task: &AgentMessage, sender: SenderRole, payload: Value) -> Self {
        let mut m = Self::new(REPLY_TOPIC, sender, MessageKind::Result, payload);
        m.correlation_id = Some(task.message_id.clone());
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("bus is closed")]
    BusClosed,
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("result correlates to unknown task `{0}`")]
    UnknownCorrelation(String),
    #[error("timeout must be positive")]
    InvalidTimeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retention {
    pub max_messages: usize,
    pub max_age: Duration,
}

impl Default for Retention {
    fn default() -> Self {
        Self { max_messages: 1000, max_age: Duration::from_secs(600) }
    }
}

/// Publish receipt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub message_id: String,
    pub delivered_to: usize,
}

#[derive(Debug, Default)]
struct Topic {
    retained: VecDeque<(u64, AgentMessage)>,
    subscribers: Vec<(u64, Sender<AgentMessage>)>,
}

#[derive(Debug, Default)]
struct Pending {
    waiter: Option<Sender<AgentMessage>>,
    answered: bool,
}

#[derive(Debug, Default)]
struct State {
    closed: bool,
    topics: HashMap<String, Topic>,
    task_ids: HashSet<String>,
    pending: HashMap<String, Pending>,
}

#[derive(Debug)]
pub struct AgentBus {
    state: Mutex<State>,
    retention: Retention,
    clock: SharedClock,
    next_id: AtomicU64,
    duplicates: AtomicU64,
}

impl AgentBus {
    pub fn new(clock: SharedClock) -> Arc<Self> {
        Self::with_retention(clock, Retention::default())
    }

    pub fn with_retention(clock: SharedClock, retention: Retention) -> Arc<Self> {
        Arc::new(Self {
            state: Mutex::new(State::default()),
            retention,
            clock,
            next_id: AtomicU64::new(1),
            duplicates: AtomicU64::new(0),
        })
    }

    fn prune(&self, topic: &mut Topic) {
        let now = self.clock.now_ms();
        let age = self.retention.max_age.as_millis() as u64;
        while topic.retained.len() > self.retention.max_messages
            || topic.retained.front().is_some_and(|(at, _)| now.saturating_sub(*at) > age)
        {
            topic.retained.pop_front();
        }
    }

    /// Retains `message` on its topic and hands it to every current subscriber.
    pub fn publish(&self, message: AgentMessage) -> Result<Receipt, BusError> {
        let mut state = self.state.lock().expect("bus lock");
        if state.closed {
            return Err(BusError::BusClosed);
        }
        if message.kind == MessageKind::Result {
            if let Some(cid) = &message.correlation_id {
                if !state.task_ids.contains(cid) {
                    return Err(BusError::UnknownCorrelation(cid.clone()));
                }
                if let Some(p) = state.pending.get_mut(cid) {
                    if p.answered {
                        let n = self.duplicates.fetch_add(1, Ordering::Relaxed) + 1;
                        tracing::warn!(correlation = %cid, duplicates = n, "duplicate reply ignored by requester");
                    } else if let Some(w) = p.waiter.take() {
                        p.answered = true;
                        let _ = w.send(message.clone());
                    }
                }
            }
        }
        if message.kind == MessageKind::Task {
            state.task_ids.insert(message.message_id.clone());
        }
        let now = self.clock.now_ms();
        let topic = state.topics.entry(message.topic.clone()).or_default();
        topic.subscribers.retain(|(_, tx)| tx.send(message.clone()).is_ok());
        let delivered_to = topic.subscribers.len();
        let receipt = Receipt { message_id: message.message_id.clone(), delivered_to };
        topic.retained.push_back((now, message));
        self.prune(topic);
        Ok(receipt)
    }

    /// Attaches a queue to `topic`; retained messages are queued first.
    pub fn subscribe_queue(self: &Arc<Self>, topic: &str) -> Result<(Subscription, Receiver<AgentMessage>), BusError> {
        let mut state = self.state.lock().expect("bus lock");
        if state.closed {
            return Err(BusError::BusClosed);
        }
        let (tx, rx) = crossbeam_channel::unbounded();
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let t = state.topics.entry(topic.into()).or_default();
        self.prune(t);
        for (_, m) in &t.retained {
            let _ = tx.send(m.clone());
        }
        t.subscribers.push((id, tx));
        let sub = Subscription { id, topic: topic.into(), bus: Arc::downgrade(self), worker: None };
        Ok((sub, rx))
    }

    /// Runs `handler` for every retained and future message on `topic`, one
    /// at a time, on a dedicated thread.
    pub fn subscribe<F>(self: &Arc<Self>, topic: &str, handler: F) -> Result<Subscription, BusError>
    where
        F: Fn(AgentMessage) + Send + 'static,
    {
        let (mut sub, rx) = self.subscribe_queue(topic)?;
        let worker = std::thread::Builder::new()
            .name(format!("bus-{topic}"))
            .spawn(move || {
                for m in rx {
                    handler(m);
                }
            })
            .expect("spawn subscriber");
        sub.worker = Some(worker);
        Ok(sub)
    }

    fn detach(&self, topic: &str, id: u64) {
        let mut state = self.state.lock().expect("bus lock");
        if let Some(t) = state.topics.get_mut(topic) {
            t.subscribers.retain(|(sid, _)| *sid != id);
        }
    }

    /// Publishes a Task and waits for the first Result correlated to it.
    /// Later replies are counted as duplicates.
    pub fn request(&self, message: AgentMessage, timeout: Duration) -> Result<AgentMessage, BusError> {
        if timeout.is_zero() {
            return Err(BusError::InvalidTimeout);
        }
        let (tx, rx) = crossbeam_channel::bounded(1);
        let id = message.message_id.clone();
        {
            let mut state = self.state.lock().expect("bus lock");
            if state.closed {
                return Err(BusError::BusClosed);
            }
            state.pending.insert(id.clone(), Pending { waiter: Some(tx), answered: false });
        }
        if let Err(e) = self.publish(message) {
            self.state.lock().expect("bus lock").pending.remove(&id);
            return Err(e);
        }
        match rx.recv_timeout(timeout) {
            Ok(reply) => Ok(reply),
            Err(RecvTimeoutError::Timeout) => {
                self.state.lock().expect("bus lock").pending.remove(&id);
                Err(BusError::Timeout(timeout))
            }
            Err(RecvTimeoutError::Disconnected) => Err(BusError::BusClosed),
        }
    }

    /// Replies that arrived after their request was already answered.
    pub fn duplicate_replies(&self) -> u64 {
        self.duplicates.load(Ordering::Relaxed)
    }

    pub fn retained(&self, topic: &str) -> Vec<AgentMessage> {
        let mut state = self.state.lock().expect("bus lock");
        match state.topics.get_mut(topic) {
            Some(t) => {
                self.prune(t);
                t.retained.iter().map(|(_, m)| m.clone()).collect()
            }
            None => Vec::new(),
        }
    }

    /// Closes the bus: later publishes fail and subscriber queues end.
    pub fn shutdown(&self) {
        let mut state = self.state.lock().expect("bus lock");
        state.closed = true;
        for t in state.topics.values_mut() {
            t.subscribers.clear();
        }
        state.pending.clear();
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().expect("bus lock").closed
    }
}

/// Detaches on drop; the handler thread, if any, is joined.
#[derive(Debug)]
pub struct Subscription {
    id: u64,
    topic: String,
    bus: Weak<AgentBus>,
    worker: Option<JoinHandle<()>>,
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn unsubscribe(self) {}
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(bus) = self.bus.upgrade() {
            bus.detach(&self.topic, self.id);
        }
        if let Some(w) = self.worker.take() {
            if w.thread().id() != std::thread::current().id() {
                let _ = w.join();
            }
        }
    }
}

/// Remembers recently seen message ids, up to a fixed number.
#[derive(Debug)]
pub struct Deduplicator {
    seen: HashSet<String>,
    order: VecDeque<String>,
    capacity: usize,
}

impl Deduplicator {
    pub fn new(capacity: usize) -> Self {
        Self { seen: HashSet::new(), order: VecDeque::new(), capacity: capacity.max(1) }
    }

    /// True the first time an id is seen.
    pub fn first_time(&mut self, message_id: &str) -> bool {
        if self.seen.contains(message_id) {
            return false;
        }
        if self.order.len() == self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
        self.seen.insert(message_id.into());
        self.order.push_back(message_id.into());
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use serde_json::json;

    fn bus() -> (Arc<AgentBus>, Arc<ManualClock>) {
        let clock = ManualClock::at_fixed_origin();
        (AgentBus::new(clock.clone()), clock)
    }

    fn event(topic: &str, n: u64) -> AgentMessage {
        AgentMessage::new(topic, SenderRole::Harness, MessageKind::Event, json!({ "n": n }))
    }

    fn drain(rx: &Receiver<AgentMessage>) -> Vec<u64> {
        rx.try_iter().map(|m| m.payload["n"].as_u64().unwrap()).collect()
    }

    #[test]
    fn fan_out_in_publish_order() {
        let (bus, _) = bus();
        let (_a, ra) = bus.subscribe_queue("t").unwrap();
        let (_b, rb) = bus.subscribe_queue("t").unwrap();
        for n in 0..20 {
            assert_eq!(bus.publish(event("t", n)).unwrap().delivered_to, 2);
        }
        assert_eq!(drain(&ra), (0..20).collect::<Vec<_>>());
        assert_eq!(drain(&rb), (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn retained_messages_reach_late_subscribers() {
        let (bus, clock) = bus();
        assert_eq!(bus.publish(event("t", 1)).unwrap().delivered_to, 0);
        let (_s, rx) = bus.subscribe_queue("t").unwrap();
        assert_eq!(drain(&rx), [1]);

        clock.advance(Duration::from_secs(601));
        let (_s2, rx2) = bus.subscribe_queue("t").unwrap();
        assert!(drain(&rx2).is_empty());
    }

    #[test]
    fn retention_caps_message_count() {
        let clock = ManualClock::at_fixed_origin();
        let bus = AgentBus::with_retention(clock, Retention { max_messages: 3, max_age: Duration::from_secs(60) });
        for n in 0..5 {
            bus.publish(event("t", n)).unwrap();
        }
        let (_s, rx) = bus.subscribe_queue("t").unwrap();
        assert_eq!(drain(&rx), [2, 3, 4]);
    }

    #[test]
    fn unsubscribe_stops_delivery() {
        let (bus, _) = bus();
        let (s, rx) = bus.subscribe_queue("t").unwrap();
        s.unsubscribe();
        bus.publish(event("t", 1)).unwrap();
        assert!(rx.try_recv().is_err());
    }

    #[test]
    fn handler_subscription_runs_serially() {
        let (bus, _) = bus();
        let (tx, rx) = crossbeam_channel::unbounded();
        let sub = bus.subscribe("t", move |m| tx.send(m.payload["n"].as_u64().unwrap()).unwrap()).unwrap();
        for n in 0..50 {
            bus.publish(event("t", n)).unwrap();
        }
        let got: Vec<u64> = (0..50).map(|_| rx.recv_timeout(Duration::from_secs(5)).unwrap()).collect();
        assert_eq!(got, (0..50).collect::<Vec<_>>());
        drop(sub);
    }

    #[test]
    fn request_reply_with_duplicates() {
        let (bus, _) = bus();
        let b = bus.clone();
        let _echo = bus
            .subscribe("domain.radio", move |task| {
                let reply = AgentMessage::reply_to(&task, SenderRole::DomainExpert("radio".into()), task.payload.clone());
                b.publish(reply.clone()).unwrap();
                b.publish(AgentMessage { message_id: format!("{}-again", reply.message_id), ..reply }).unwrap();
            })
            .unwrap();
        let task = AgentMessage::task("domain.radio", SenderRole::CoCreation, json!({ "q": 1 }));
        let id = task.message_id.clone();
        let reply = bus.request(task, Duration::from_secs(5)).unwrap();
        assert_eq!(reply.correlation_id.as_deref(), Some(id.as_str()));
        assert_eq!(reply.payload["q"], 1);
        let deadline = std::time::Instant::now() + Duration::from_secs(5);
        while bus.duplicate_replies() == 0 && std::time::Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
        assert_eq!(bus.duplicate_replies(), 1);
    }

    #[test]
    fn request_without_responder_times_out() {
        let (bus, _) = bus();
        let task = AgentMessage::task("domain.none", SenderRole::CoCreation, json!({}));
        assert_eq!(bus.request(task.clone(), Duration::from_millis(30)), Err(BusError::Timeout(Duration::from_millis(30))));
        assert_eq!(bus.request(task, Duration::ZERO), Err(BusError::InvalidTimeout));
    }

    #[test]
    fn results_must_correlate_to_known_tasks() {
        let (bus, _) = bus();
        let orphan = AgentMessage::reply_to(&event("x", 0), SenderRole::Harness, json!({}));
        assert!(matches!(bus.publish(orphan), Err(BusError::UnknownCorrelation(_))));
    }

    #[test]
    fn closed_bus_refuses_work() {
        let (bus, _) = bus();
        bus.shutdown();
        assert_eq!(bus.publish(event("t", 1)), Err(BusError::BusClosed));
        assert!(matches!(bus.subscribe_queue("t"), Err(BusError::BusClosed)));
    }

    #[test]
    fn crashing_consumer_loses_nothing_within_retention() {
        let (bus, _) = bus();
        let mut processed = Vec::new();
        let mut dedup = Deduplicator::new(1000);
        let (sub, rx) = bus.subscribe_queue("work").unwrap();
        for n in 0..10 {
            bus.publish(event("work", n)).unwrap();
        }
        // consume three, then crash
        for m in rx.try_iter().take(3) {
            if dedup.first_time(&m.message_id) {
                processed.push(m.payload["n"].as_u64().unwrap());
            }
        }
        drop(sub);
        drop(rx);
        for n in 10..15 {
            bus.publish(event("work", n)).unwrap();
        }
        let (_sub, rx) = bus.subscribe_queue("work").unwrap();
        for m in rx.try_iter() {
            if dedup.first_time(&m.message_id) {
                processed.push(m.payload["n"].as_u64().unwrap());
            }
        }
        assert_eq!(processed, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn deduplicator_forgets_oldest() {
        let mut d = Deduplicator::new(2);
        assert!(d.first_time("a"));
        assert!(!d.first_time("a"));
        assert!(d.first_time("b"));
        assert!(d.first_time("c"));
        assert!(d.first_time("a"));
    }
}
