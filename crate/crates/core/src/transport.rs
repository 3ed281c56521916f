//! Lossy, delayed message channel on a virtual clock.
//!
//! Each message is delayed by `latency + N(0, jitter)` (clamped at zero) and
//! dropped with probability `drop_prob`. Delivery never overtakes an earlier
//! message: a delivery time is raised to the previous one when jitter would
//! reorder them.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    /// Mean one-way delay, seconds.
    pub latency: f64,
    /// Standard deviation of the delay, seconds.
    pub jitter: f64,
    pub drop_prob: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            latency: 0.016,
            jitter: 0.0,
            drop_prob: 0.0,
        }
    }
}

impl TransportConfig {
    pub fn from_millis(latency_ms: f64, jitter_ms: f64, drop_prob: f64) -> Self {
        TransportConfig {
            latency: latency_ms / 1000.0,
            jitter: jitter_ms / 1000.0,
            drop_prob,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latency >= 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::Config("transport latency and jitter must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::Config("transport drop_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivered<T> {
    pub sent_at: f64,
    pub delivered_at: f64,
    pub msg: T,
}

/// Delivery-time model shared by simulated and live links.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    cfg: TransportConfig,
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
    last_delivery: f64,
}

impl DelaySampler {
    pub fn new(cfg: TransportConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let normal = if cfg.jitter > 0.0 {
            Some(Normal::new(0.0, cfg.jitter).map_err(|e| Error::Config(format!("jitter: {e}")))?)
        } else {
            None
        };
        Ok(DelaySampler {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal,
            last_delivery: f64::NEG_INFINITY,
        })
    }

    pub fn config(&self) -> TransportConfig {
        self.cfg
    }

    /// Delivery time of a message sent at `now`, or `None` if it is dropped.
    pub fn delivery(&mut self, now: f64) -> Option<f64> {
        if self.cfg.drop_prob > 0.0 && self.rng.random::<f64>() < self.cfg.drop_prob {
            return None;
        }
        let noise = match self.normal {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        };
        let delay = (self.cfg.latency + noise).max(0.0);
        let at = (now + delay).max(self.last_delivery);
        self.last_delivery = at;
        Some(at)
    }
}

#[derive(Debug)]
struct Link<T> {
    delay: DelaySampler,
    queue: VecDeque<Delivered<T>>,
    sender_open: bool,
    receiver_open: bool,
    sent: u64,
    dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkStats {
    pub sent: u64,
    pub dropped: u64,
}

/// Sending half of a simulated link.
#[derive(Debug)]
pub struct SimSender<T> {
    link: Arc<Mutex<Link<T>>>,
}

/// Receiving half of a simulated link.
#[derive(Debug)]
pub struct SimReceiver<T> {
    link: Arc<Mutex<Link<T>>>,
}

pub fn simulated_transport<T>(cfg: TransportConfig, seed: u64) -> Result<(SimSender<T>, SimReceiver<T>)> {
    let link = Arc::new(Mutex::new(Link {
        delay: DelaySampler::new(cfg, seed)?,
        queue: VecDeque::new(),
        sender_open: true,
        receiver_open: true,
        sent: 0,
        dropped: 0,
    }));
    Ok((SimSender { link: Arc::clone(&link) }, SimReceiver { link }))
}

impl<T> SimSender<T> {
    /// Queues `msg` at virtual time `now`. Returns the scheduled delivery
    /// time, or `None` if the message was dropped.
    pub fn send(&self, now: f64, msg: T) -> Result<Option<f64>> {
        let mut l = self.link.lock().expect("link lock");
        if !l.receiver_open {
            return Err(Error::Disconnected);
        }
        l.sent += 1;
        let Some(at) = l.delay.delivery(now) else {
            l.dropped += 1;
            return Ok(None);
        };
        l.queue.push_back(Delivered {
            sent_at: now,
            delivered_at: at,
            msg,
        });
        Ok(Some(at))
    }

    pub fn stats(&self) -> LinkStats {
        let l = self.link.lock().expect("link lock");
        LinkStats {
            sent: l.sent,
            dropped: l.dropped,
        }
    }
}

impl<T> Drop for SimSender<T> {
    fn drop(&mut self) {
        if let Ok(mut l) = self.link.lock() {
            l.sender_open = false;
        }
    }
}

impl<T> SimReceiver<T> {
    /// Takes every message due at or before `now`, in order. Fails with
    /// [`Error::Disconnected`] once the sender is gone and nothing is left.
    pub fn recv_due(&self, now: f64) -> Result<Vec<Delivered<T>>> {
        let mut l = self.link.lock().expect("link lock");
        let mut out = Vec::new();
        while l.queue.front().is_some_and(|m| m.delivered_at <= now) {
            out.push(l.queue.pop_front().expect("front checked"));
        }
        if out.is_empty() && l.queue.is_empty() && !l.sender_open {
            return Err(Error::Disconnected);
        }
        Ok(out)
    }

    pub fn pending(&self) -> usize {
        self.link.lock().expect("link lock").queue.len()
    }
}

impl<T> Drop for SimReceiver<T> {
    fn drop(&mut self) {
        if let Ok(mut l) = self.link.lock() {
            l.receiver_open = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_latency_is_exact() {
        let (tx, rx) = simulated_transport::<u32>(TransportConfig::default(), 1).unwrap();
        for k in 0..100u32 {
            let now = f64::from(k) * 0.02;
            assert_eq!(tx.send(now, k).unwrap(), Some(now + 0.016));
        }
        let got = rx.recv_due(10.0).unwrap();
        assert_eq!(got.len(), 100);
        for (k, d) in got.iter().enumerate() {
            assert_eq!(d.msg, k as u32);
            assert_eq!(d.delivered_at, d.sent_at + 0.016);
        }
    }

    #[test]
    fn not_delivered_early() {
        let (tx, rx) = simulated_transport::<u8>(TransportConfig::default(), 1).unwrap();
        tx.send(1.0, 7).unwrap();
        assert!(rx.recv_due(1.01).unwrap().is_empty());
        assert_eq!(rx.recv_due(1.016).unwrap().len(), 1);
    }

    #[test]
    fn full_drop() {
        let cfg = TransportConfig {
            drop_prob: 1.0,
            ..TransportConfig::default()
        };
        let (tx, rx) = simulated_transport::<u8>(cfg, 1).unwrap();
        for k in 0..50 {
            assert_eq!(tx.send(f64::from(k), 1).unwrap(), None);
        }
        assert!(rx.recv_due(1e9).unwrap().is_empty());
        assert_eq!(tx.stats().dropped, 50);
    }

    #[test]
    fn fifo_under_heavy_jitter() {
        let cfg = TransportConfig::from_millis(16.0, 30.0, 0.0);
        let (tx, rx) = simulated_transport::<u32>(cfg, 9).unwrap();
        for k in 0..1000u32 {
            tx.send(f64::from(k) * 0.001, k).unwrap();
        }
        let got = rx.recv_due(1e9).unwrap();
        assert!(got.windows(2).all(|w| w[0].msg < w[1].msg && w[0].delivered_at <= w[1].delivered_at));
        assert!(got.iter().all(|d| d.delivered_at >= d.sent_at));
    }

    #[test]
    fn disconnects() {
        let (tx, rx) = simulated_transport::<u8>(TransportConfig::default(), 1).unwrap();
        tx.send(0.0, 1).unwrap();
        drop(tx);
        assert_eq!(rx.recv_due(1.0).unwrap().len(), 1);
        assert!(matches!(rx.recv_due(2.0), Err(Error::Disconnected)));

        let (tx, rx) = simulated_transport::<u8>(TransportConfig::default(), 1).unwrap();
        drop(rx);
        assert!(matches!(tx.send(0.0, 1), Err(Error::Disconnected)));
    }
}
