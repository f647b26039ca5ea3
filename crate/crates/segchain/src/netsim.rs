//! Deterministic discrete-event message network.
//!
//! Peers exchange messages through a single logical clock. Every send is
//! enqueued with a fixed per-link latency and deliveries are ordered by
//! `(deliver_at, sender id, send sequence)`, which keeps each (from, to)
//! pair FIFO and makes the complete delivery trace a pure function of the
//! scenario and [`NetParams`]. Actor handlers run to completion inside
//! [`Network::step`]; anything they send is delivered at a strictly later
//! tick.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub type Tick = u64;

/// Identifier of a registered peer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerId(pub u64);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Logical simulation clock; all block timestamps come from it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimClock {
    pub now: Tick,
}

/// Fixed parameters of one simulated network run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetParams {
    /// Per-link delivery latency; at least 1 so a handler never observes
    /// its own sends within the same tick.
    pub latency_ticks: u64,
    pub seed: u64,
}

impl NetParams {
    pub fn new(latency_ticks: u64, seed: u64) -> Self {
        assert!(latency_ticks >= 1, "latency must be at least one tick");
        NetParams {
            latency_ticks,
            seed,
        }
    }
}

impl Default for NetParams {
    fn default() -> Self {
        NetParams {
            latency_ticks: 1,
            seed: 0,
        }
    }
}

/// Messages must expose a short kind label for traces and diagnostics.
pub trait SimMessage: Clone {
    fn kind(&self) -> &'static str;
}

/// Sends collected from one handler invocation.
pub struct Outbox<M> {
    sends: Vec<(PeerId, M)>,
}

impl<M> Outbox<M> {
    pub fn new() -> Self {
        Outbox { sends: Vec::new() }
    }

    pub fn send(&mut self, to: PeerId, message: M) {
        self.sends.push((to, message));
    }

    /// Drains the collected sends; used by drivers that invoke handlers
    /// outside a network step.
    pub fn into_sends(self) -> Vec<(PeerId, M)> {
        self.sends
    }
}

impl<M> Default for Outbox<M> {
    fn default() -> Self {
        Self::new()
    }
}

/// A simulated participant: receives messages, may send through the
/// outbox, never blocks.
pub trait Actor {
    type Msg: SimMessage;

    fn deliver(&mut self, now: Tick, from: PeerId, message: Self::Msg, out: &mut Outbox<Self::Msg>);

    /// One-line status used in timeout diagnostics.
    fn describe(&self) -> String {
        String::new()
    }
}

/// An in-flight message.
#[derive(Clone, Debug)]
pub struct Envelope<M> {
    pub from: PeerId,
    pub to: PeerId,
    pub message: M,
    pub deliver_at: Tick,
}

/// Metadata of one completed delivery.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub tick: Tick,
    pub from: PeerId,
    pub to: PeerId,
    pub kind: &'static str,
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("unknown peer {0}")]
    UnknownPeer(PeerId),

    /// Tick budget exhausted before the condition held; carries per-peer
    /// status lines for diagnosis.
    #[error("condition not reached by tick {at}; peers: {}", format_status(.status))]
    Timeout {
        at: Tick,
        status: Vec<(PeerId, String)>,
    },

    /// The queue drained with the condition still false; stepping further
    /// cannot change anything.
    #[error("network idle at tick {at} with condition unmet; peers: {}", format_status(.status))]
    Stalled {
        at: Tick,
        status: Vec<(PeerId, String)>,
    },
}

fn format_status(status: &[(PeerId, String)]) -> String {
    status
        .iter()
        .map(|(id, s)| format!("{id}=[{s}]"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The network: registered actors, the delivery queue, and the clock.
pub struct Network<A: Actor> {
    params: NetParams,
    clock: SimClock,
    actors: BTreeMap<PeerId, A>,
    // Keyed by (deliver_at, sender, send sequence): the documented
    // deterministic delivery order.
    queue: BTreeMap<(Tick, PeerId, u64), Envelope<A::Msg>>,
    next_seq: u64,
    trace: Option<Vec<String>>,
}

impl<A: Actor> Network<A> {
    pub fn new(params: NetParams) -> Self {
        Network {
            params,
            clock: SimClock::default(),
            actors: BTreeMap::new(),
            queue: BTreeMap::new(),
            next_seq: 0,
            trace: None,
        }
    }

    pub fn params(&self) -> NetParams {
        self.params
    }

    pub fn now(&self) -> Tick {
        self.clock.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Starts recording one tab-separated line per delivery:
    /// `tick from to message_kind`.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.take().unwrap_or_default()
    }

    pub fn register(&mut self, id: PeerId, actor: A) {
        self.actors.insert(id, actor);
    }

    pub fn deregister(&mut self, id: PeerId) -> Option<A> {
        self.actors.remove(&id)
    }

    pub fn contains(&self, id: PeerId) -> bool {
        self.actors.contains_key(&id)
    }

    pub fn actor(&self, id: PeerId) -> Option<&A> {
        self.actors.get(&id)
    }

    pub fn actor_mut(&mut self, id: PeerId) -> Option<&mut A> {
        self.actors.get_mut(&id)
    }

    pub fn actors(&self) -> impl Iterator<Item = (PeerId, &A)> {
        self.actors.iter().map(|(id, a)| (*id, a))
    }

    fn enqueue(&mut self, from: PeerId, to: PeerId, message: A::Msg) {
        let deliver_at = self.clock.now + self.params.latency_ticks;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert(
            (deliver_at, from, seq),
            Envelope {
                from,
                to,
                message,
                deliver_at,
            },
        );
    }

    /// Enqueues a message between two registered peers for delivery at
    /// `now + latency`.
    pub fn send(&mut self, from: PeerId, to: PeerId, message: A::Msg) -> Result<(), NetError> {
        if !self.actors.contains_key(&from) {
            return Err(NetError::UnknownPeer(from));
        }
        if !self.actors.contains_key(&to) {
            return Err(NetError::UnknownPeer(to));
        }
        self.enqueue(from, to, message);
        Ok(())
    }

    fn dispatch(&mut self, envelope: Envelope<A::Msg>) -> Option<Delivery> {
        let kind = envelope.message.kind();
        // Peers deregistered with messages still in flight just miss them.
        let actor = self.actors.get_mut(&envelope.to)?;
        let mut outbox = Outbox::new();
        actor.deliver(self.clock.now, envelope.from, envelope.message, &mut outbox);
        let sender = envelope.to;
        for (to, message) in outbox.sends {
            if self.actors.contains_key(&to) {
                self.enqueue(sender, to, message);
            }
        }
        let delivery = Delivery {
            tick: self.clock.now,
            from: envelope.from,
            to: envelope.to,
            kind,
        };
        if let Some(trace) = &mut self.trace {
            trace.push(format!(
                "{}\t{}\t{}\t{}",
                delivery.tick, delivery.from, delivery.to, delivery.kind
            ));
        }
        Some(delivery)
    }

    /// Advances the clock to the next scheduled delivery time and delivers
    /// everything due, in the documented order. With an empty queue the
    /// clock is unchanged and no events are returned.
    pub fn step(&mut self) -> Vec<Delivery> {
        let Some((&(tick, _, _), _)) = self.queue.first_key_value() else {
            return Vec::new();
        };
        self.clock.now = tick;
        self.deliver_due()
    }

    fn deliver_due(&mut self) -> Vec<Delivery> {
        let mut delivered = Vec::new();
        while let Some((&key, _)) = self.queue.first_key_value() {
            if key.0 > self.clock.now {
                break;
            }
            let envelope = self.queue.remove(&key).expect("key just observed");
            if let Some(delivery) = self.dispatch(envelope) {
                delivered.push(delivery);
            }
        }
        delivered
    }

    /// Moves the clock to `tick`, delivering everything due on the way.
    /// Handler sends are picked up in the same pass when they fall due
    /// within the window.
    pub fn advance_to(&mut self, tick: Tick) -> Vec<Delivery> {
        assert!(tick >= self.clock.now, "clock cannot move backwards");
        let mut delivered = Vec::new();
        loop {
            match self.queue.first_key_value() {
                Some((&(t, _, _), _)) if t <= tick => {
                    self.clock.now = t;
                    delivered.extend(self.deliver_due());
                }
                _ => break,
            }
        }
        self.clock.now = tick;
        delivered
    }

    fn status(&self) -> Vec<(PeerId, String)> {
        self.actors
            .iter()
            .map(|(id, a)| (*id, a.describe()))
            .filter(|(_, s)| !s.is_empty())
            .collect()
    }

    /// Steps until `condition` holds, returning the tick reached. Fails
    /// with a timeout after `budget_ticks`, or as stalled if the queue
    /// drains first.
    pub fn run_until(
        &mut self,
        budget_ticks: u64,
        condition: impl Fn(&Network<A>) -> bool,
    ) -> Result<Tick, NetError> {
        let deadline = self.clock.now + budget_ticks;
        loop {
            if condition(self) {
                return Ok(self.clock.now);
            }
            if self.queue.is_empty() {
                return Err(NetError::Stalled {
                    at: self.clock.now,
                    status: self.status(),
                });
            }
            let next = self
                .queue
                .first_key_value()
                .map(|(&(t, _, _), _)| t)
                .expect("queue is non-empty");
            if next > deadline {
                return Err(NetError::Timeout {
                    at: self.clock.now,
                    status: self.status(),
                });
            }
            self.step();
        }
    }

    /// Steps until no messages remain in flight.
    pub fn run_until_idle(&mut self, budget_ticks: u64) -> Result<Tick, NetError> {
        let deadline = self.clock.now + budget_ticks;
        while !self.queue.is_empty() {
            let next = self
                .queue
                .first_key_value()
                .map(|(&(t, _, _), _)| t)
                .expect("queue is non-empty");
            if next > deadline {
                return Err(NetError::Timeout {
                    at: self.clock.now,
                    status: self.status(),
                });
            }
            self.step();
        }
        Ok(self.clock.now)
    }
}
