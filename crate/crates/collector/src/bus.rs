//! In-process publish/subscribe bus with MQTT topic semantics.
//!
//! Stands in for the broker in tests and single-process runs: the simulator
//! publishes where it would publish to MQTT, the collector subscribes where
//! it would subscribe.

use std::sync::{Arc, Mutex};

use cabin_core::model::Timestamp;
use tokio::sync::mpsc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusMessage {
    pub topic: String,
    pub payload: Vec<u8>,
    /// Send-time wall clock of raw byte streams, which carry no envelope.
    pub wall: Option<Timestamp>,
}

struct Subscription {
    filter: String,
    tx: mpsc::UnboundedSender<BusMessage>,
}

#[derive(Clone, Default)]
pub struct Bus {
    subs: Arc<Mutex<Vec<Subscription>>>,
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bus").field("subscriptions", &self.subscriber_count()).finish()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Subscribe to a topic filter (`+` and `#` wildcards). The subscription
    /// ends when the receiver is dropped.
    pub fn subscribe(&self, filter: &str) -> mpsc::UnboundedReceiver<BusMessage> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.lock().push(Subscription {
            filter: filter.to_string(),
            tx,
        });
        rx
    }

    /// Deliver to every matching subscriber; returns how many received it.
    pub fn publish(&self, msg: BusMessage) -> usize {
        let mut subs = self.lock();
        subs.retain(|s| !s.tx.is_closed());
        let mut delivered = 0;
        for s in subs.iter().filter(|s| topic_matches(&s.filter, &msg.topic)) {
            if s.tx.send(msg.clone()).is_ok() {
                delivered += 1;
            }
        }
        delivered
    }

    pub fn subscriber_count(&self) -> usize {
        let mut subs = self.lock();
        subs.retain(|s| !s.tx.is_closed());
        subs.len()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Vec<Subscription>> {
        self.subs.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// MQTT filter matching: `+` matches one level, a trailing `#` matches the rest.
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

/// Topic for raw radar bytes on the bus.
pub fn radar_raw_topic(session_id: &str) -> String {
    format!("cabin/{session_id}/radar/raw")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wildcards() {
        assert!(topic_matches("cabin/+/camera/data", "cabin/s1/camera/data"));
        assert!(!topic_matches("cabin/+/camera/data", "cabin/s1/radar/data"));
        assert!(topic_matches("cabin/#", "cabin/s1/fused"));
        assert!(!topic_matches("cabin/+", "cabin/s1/fused"));
        assert!(!topic_matches("cabin/s1/fused/x", "cabin/s1/fused"));
    }

    #[tokio::test]
    async fn delivery_counts() {
        let bus = Bus::new();
        let msg = BusMessage {
            topic: "cabin/s/wearable/data".into(),
            payload: b"{}".to_vec(),
            wall: None,
        };
        assert_eq!(bus.publish(msg.clone()), 0);
        let mut rx = bus.subscribe("cabin/+/wearable/data");
        let other = bus.subscribe("cabin/+/camera/data");
        assert_eq!(bus.publish(msg.clone()), 1);
        assert_eq!(rx.recv().await.unwrap(), msg);
        drop(rx);
        drop(other);
        assert_eq!(bus.publish(msg), 0);
        assert_eq!(bus.subscriber_count(), 0);
    }
}
