//! MQTT consumer. The gateway is a client of an external broker and
//! subscribes to `fs/ingest/+`; the last topic level is the Thing UUID.
//!
//! Publishers are authenticated by the broker through the platform's auth
//! hooks, and [`check_publish_acl`] is the rule those hooks apply: a Thing's
//! username may publish on its own topic only. Payloads are buffered for the
//! flush interval, handed to the sink, and acknowledged afterwards, so a
//! crash before the write leads to redelivery rather than loss.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rumqttc::{AsyncClient, Event, MqttOptions, Packet, Publish, QoS};
use serde::Serialize;
use tokio::sync::{mpsc, watch};
use tracing::{debug, info, warn};
use uuid::Uuid;

use crate::{IngestError, IngestSink, PushSummary, Transport};

pub const TOPIC_PREFIX: &str = "fs/ingest/";
pub const INGEST_TOPIC_FILTER: &str = "fs/ingest/+";

pub fn topic_for(thing: Uuid) -> String {
    format!("{TOPIC_PREFIX}{thing}")
}

pub fn thing_from_topic(topic: &str) -> Option<Uuid> {
    let rest = topic.strip_prefix(TOPIC_PREFIX)?;
    if rest.contains('/') {
        return None;
    }
    Uuid::parse_str(rest).ok()
}

/// A Thing's MQTT username is its UUID; it may publish only on its own
/// topic.
pub fn check_publish_acl(username: &str, topic: &str) -> Result<Uuid, IngestError> {
    match (thing_from_topic(topic), Uuid::parse_str(username)) {
        (Some(t), Ok(u)) if t == u => Ok(t),
        _ => Err(IngestError::AuthMismatch {
            username: username.to_string(),
            topic: topic.to_string(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MqttSettings {
    pub host: String,
    pub port: u16,
    pub client_id: String,
    /// The gateway's own broker login.
    pub username: Option<String>,
    pub password: Option<String>,
    pub flush_interval: Duration,
    /// Publishes buffered before consumption pauses.
    pub queue_capacity: usize,
}

impl Default for MqttSettings {
    fn default() -> Self {
        Self {
            host: "localhost".into(),
            port: 1883,
            client_id: "fairstream-gateway".into(),
            username: None,
            password: None,
            flush_interval: Duration::from_secs(1),
            queue_capacity: 1024,
        }
    }
}

#[derive(Debug, Default)]
pub struct MqttStats {
    pub received: AtomicU64,
    pub accepted_rows: AtomicU64,
    pub row_errors: AtomicU64,
    pub auth_mismatch: AtomicU64,
    pub unknown_thing: AtomicU64,
    pub undecodable: AtomicU64,
    pub sink_failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MqttStatsSnapshot {
    pub received: u64,
    pub accepted_rows: u64,
    pub row_errors: u64,
    pub auth_mismatch: u64,
    pub unknown_thing: u64,
    pub undecodable: u64,
    pub sink_failures: u64,
}

impl MqttStats {
    pub fn snapshot(&self) -> MqttStatsSnapshot {
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        MqttStatsSnapshot {
            received: get(&self.received),
            accepted_rows: get(&self.accepted_rows),
            row_errors: get(&self.row_errors),
            auth_mismatch: get(&self.auth_mismatch),
            unknown_thing: get(&self.unknown_thing),
            undecodable: get(&self.undecodable),
            sink_failures: get(&self.sink_failures),
        }
    }

    fn bump(&self, counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Ordering::Relaxed);
    }
}

/// Routes MQTT publishes into a sink and keeps the counters.
pub struct MqttBatcher<S: IngestSink + ?Sized> {
    pub sink: Arc<S>,
    pub stats: Arc<MqttStats>,
}

impl<S: IngestSink + ?Sized> Clone for MqttBatcher<S> {
    fn clone(&self) -> Self {
        Self {
            sink: self.sink.clone(),
            stats: self.stats.clone(),
        }
    }
}

impl<S: IngestSink + ?Sized> MqttBatcher<S> {
    pub fn new(sink: Arc<S>) -> Self {
        Self {
            sink,
            stats: Arc::default(),
        }
    }

    /// Handles one publish. Everything except a sink failure is final and
    /// may be acknowledged.
    pub fn handle(&self, topic: &str, payload: &[u8]) -> Result<PushSummary, IngestError> {
        let s = &self.stats;
        s.bump(&s.received, 1);
        let Some(thing) = thing_from_topic(topic) else {
            s.bump(&s.auth_mismatch, 1);
            warn!(topic, "publish outside the ingest topic scheme dropped");
            return Err(IngestError::AuthMismatch {
                username: String::new(),
                topic: topic.to_string(),
            });
        };
        let result = self.sink.ingest(thing, Transport::Mqtt, payload);
        match &result {
            Ok(summary) => {
                s.bump(&s.accepted_rows, summary.accepted as u64);
                s.bump(&s.row_errors, summary.errors.len() as u64);
            }
            Err(IngestError::UnknownThing(_)) => s.bump(&s.unknown_thing, 1),
            Err(IngestError::Undecodable(_)) => s.bump(&s.undecodable, 1),
            Err(IngestError::AuthMismatch { .. }) => s.bump(&s.auth_mismatch, 1),
            Err(IngestError::Sink(_)) => s.bump(&s.sink_failures, 1),
        }
        if let Err(e) = &result {
            warn!(topic, error = %e, "mqtt payload not stored");
        }
        result
    }

    /// Handles a buffered batch in arrival order; returns the publishes
    /// that are done (to acknowledge) and those to retry.
    pub fn flush(&self, batch: Vec<Publish>) -> (Vec<Publish>, Vec<Publish>) {
        let mut done = Vec::with_capacity(batch.len());
        let mut retry = Vec::new();
        for p in batch {
            match self.handle(&p.topic, &p.payload) {
                Err(IngestError::Sink(_)) => retry.push(p),
                _ => done.push(p),
            }
        }
        (done, retry)
    }
}

/// Runs the consumer until `shutdown` flips to true.
pub async fn run_mqtt<S: IngestSink + ?Sized + 'static>(
    settings: MqttSettings,
    batcher: MqttBatcher<S>,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut opts = MqttOptions::new(&settings.client_id, &settings.host, settings.port);
    opts.set_keep_alive(Duration::from_secs(30));
    opts.set_clean_session(false);
    opts.set_manual_acks(true);
    if let (Some(u), Some(p)) = (&settings.username, &settings.password) {
        opts.set_credentials(u, p);
    }
    let (client, mut eventloop) = AsyncClient::new(opts, settings.queue_capacity.max(10));
    let (tx, rx) = mpsc::channel::<Publish>(settings.queue_capacity.max(1));
    let flusher = tokio::spawn(flush_loop(
        rx,
        client.clone(),
        batcher,
        settings.flush_interval,
    ));
    info!(host = %settings.host, port = settings.port, "mqtt consumer starting");
    loop {
        tokio::select! {
            _ = shutdown.changed() => {
                if *shutdown.borrow() {
                    break;
                }
            }
            event = eventloop.poll() => match event {
                Ok(Event::Incoming(Packet::ConnAck(_))) => {
                    info!("mqtt connected");
                    if let Err(e) = client.try_subscribe(INGEST_TOPIC_FILTER, QoS::AtLeastOnce) {
                        warn!(error = %e, "subscribe failed");
                    }
                }
                Ok(Event::Incoming(Packet::Publish(p))) => {
                    // Awaiting here stops polling, which pauses consumption
                    // while the writers catch up.
                    if tx.send(p).await.is_err() {
                        break;
                    }
                }
                Ok(other) => debug!(?other, "mqtt event"),
                Err(e) => {
                    warn!(error = %e, "mqtt connection error, retrying");
                    tokio::select! {
                        _ = tokio::time::sleep(Duration::from_secs(1)) => {}
                        _ = shutdown.changed() => {}
                    }
                }
            }
        }
    }
    drop(tx);
    let _ = flusher.await;
    let _ = client.try_disconnect();
}

async fn flush_loop<S: IngestSink + ?Sized + 'static>(
    mut rx: mpsc::Receiver<Publish>,
    client: AsyncClient,
    batcher: MqttBatcher<S>,
    interval: Duration,
) {
    let mut pending: Vec<Publish> = Vec::new();
    let mut tick = tokio::time::interval(interval);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut open = true;
    loop {
        tokio::select! {
            msg = rx.recv(), if open => match msg {
                Some(p) => {
                    pending.push(p);
                    continue;
                }
                None => open = false,
            },
            _ = tick.tick() => {}
        }
        if !pending.is_empty() {
            let batch = std::mem::take(&mut pending);
            let worker = batcher.clone();
            let Ok((done, retry)) = tokio::task::spawn_blocking(move || worker.flush(batch)).await
            else {
                return;
            };
            for p in &done {
                if let Err(e) = client.ack(p).await {
                    warn!(error = %e, "ack failed; the broker will redeliver");
                }
            }
            pending = retry;
        }
        if !open {
            if !pending.is_empty() {
                warn!(count = pending.len(), "unstored publishes left for redelivery");
            }
            return;
        }
    }
}
