use rand::{Rng, RngCore};

use super::{random_word, AttemptRecord, Delivery, Simulation, SERVER_NODE};
use crate::error::Result;
use crate::protocol::message::{open, seal, ChallengeBody, ResponseBody, VerdictBody};
use crate::protocol::{MessageKind, ProtocolMessage, Role, SessionId};
use crate::reram_model::Environment;
use crate::seeding::{domain, fold, stream};

/// What the adversary has obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    /// The server's key pair and its directory of device public keys.
    pub server_keys: bool,
    /// The target device's key pair.
    pub device_keys: bool,
    /// The target's stored first challenge.
    pub c1: bool,
    /// The target's stored second challenge.
    pub c2: bool,
    pub replay: bool,
    pub tamper: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryConfig {
    pub capabilities: Capabilities,
    /// Index of the device whose secrets were compromised.
    pub target: usize,
    pub attempts_per_round: usize,
    /// Spread attempts round-robin over every device instead of only the
    /// target.
    pub all_devices: bool,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self { capabilities: Capabilities::default(), target: 0, attempts_per_round: 10, all_devices: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackMethod {
    /// Genuine stored C1 of the target, sent as the server.
    KnownChallenge,
    /// Random state word sent as C1.
    FabricatedChallenge,
    /// A previously captured C1 frame, resent verbatim.
    Replay,
    /// A captured C1 frame with one payload byte flipped.
    Tampered,
    /// Random payload bytes framed as C1.
    RandomBytes,
    /// Answers the server's C1 in the target's place.
    DeviceImpersonation,
}

impl AttackMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMethod::KnownChallenge => "known-challenge",
            AttackMethod::FabricatedChallenge => "fabricated-challenge",
            AttackMethod::Replay => "replay",
            AttackMethod::Tampered => "tampered",
            AttackMethod::RandomBytes => "random-bytes",
            AttackMethod::DeviceImpersonation => "device-impersonation",
        }
    }
}

impl Simulation {
    fn choose_method(&self, adv: &AdversaryConfig, victim: usize, k: usize) -> AttackMethod {
        let caps = adv.capabilities;
        let captured = self.captured.contains_key(&victim);
        if caps.server_keys && caps.c1 {
            AttackMethod::KnownChallenge
        } else if caps.device_keys {
            AttackMethod::DeviceImpersonation
        } else if caps.server_keys {
            if caps.replay && captured && k % 2 == 1 {
                AttackMethod::Replay
            } else {
                AttackMethod::FabricatedChallenge
            }
        } else if caps.tamper && captured {
            AttackMethod::Tampered
        } else if caps.replay && captured {
            AttackMethod::Replay
        } else {
            AttackMethod::RandomBytes
        }
    }

    /// Starts adversary attempt `k` of `round`. The attempt's outcome is
    /// filled in as its frames are delivered.
    pub fn inject_adversary_session(&mut self, adv: &AdversaryConfig, round: usize, k: usize) -> Result<()> {
        let victim = if adv.all_devices { k % self.devices.len() } else { adv.target };
        let method = self.choose_method(adv, victim, k);
        let attempt = self.attempts.len();
        self.attempts.push(AttemptRecord {
            round,
            attempt: k,
            device_id: self.devices[victim].id().to_string(),
            method,
            accepted: false,
        });
        let mut rng = stream(self.config.seed, domain::ADVERSARY, fold(&[round as u64, k as u64]));
        let sid = SessionId::random(&mut rng);
        let me = self.adversary_node();
        let victim_node = victim + 1;
        let victim_key = || self.server.store().get(self.devices[victim].id()).map(|id| id.public_key);

        let msg = match method {
            AttackMethod::KnownChallenge | AttackMethod::FabricatedChallenge => {
                let target = self.server.store().get(self.devices[adv.target].id()).expect("target enrolled");
                let challenge = if method == AttackMethod::KnownChallenge {
                    target.c1.challenge.clone()
                } else {
                    random_word(&mut rng, target.c1.quantizer.n_states(), target.c1.challenge.len())?
                };
                let body = ChallengeBody { session_id: sid, challenge };
                let key = victim_key().expect("victim enrolled");
                seal(self.cipher, MessageKind::AuthRequestC1, sid, Role::Adversary, &key, &body.to_bytes(), &mut rng)?
            }
            AttackMethod::Replay => {
                let mut msg = self.captured[&victim].clone();
                msg.sender = Role::Adversary;
                msg
            }
            AttackMethod::Tampered => {
                let mut msg = self.captured[&victim].clone();
                msg.session_id = sid;
                msg.sender = Role::Adversary;
                let i = rng.random_range(0..msg.payload.len());
                msg.payload[i] ^= 1 << rng.random_range(0..8);
                msg
            }
            AttackMethod::RandomBytes => {
                let mut payload = vec![0u8; rng.random_range(16..256)];
                rng.fill_bytes(&mut payload);
                ProtocolMessage { kind: MessageKind::AuthRequestC1, session_id: sid, payload, sender: Role::Adversary }
            }
            AttackMethod::DeviceImpersonation => {
                // The server starts a session for the target; the adversary
                // intercepts the request.
                let mut rng = self.seal_rng(sid, MessageKind::AuthRequestC1, SERVER_NODE, me);
                let msg = self.server.initiate(self.devices[victim].id(), sid, self.cipher, &mut rng)?;
                self.net.send(SERVER_NODE, me, msg, Some(attempt));
                return Ok(());
            }
        };
        self.net.send(me, victim_node, msg, Some(attempt));
        Ok(())
    }

    pub(super) fn deliver_to_adversary(&mut self, d: Delivery) -> Result<()> {
        let (Some(attempt), Some(adv)) = (d.attempt, self.config.adversary.clone()) else {
            return Ok(());
        };
        if d.msg.kind != MessageKind::AuthRequestC1 || self.attempts[attempt].method != AttackMethod::DeviceImpersonation {
            return Ok(());
        }
        let target = &self.devices[adv.target];
        let Ok(body) = open(self.cipher, &target.keys().secret, &d.msg).and_then(|p| ChallengeBody::from_bytes(&p)) else {
            return Ok(());
        };
        let sid = body.session_id;
        let me = self.adversary_node();
        let identity = self.server.store().get(target.id()).expect("target enrolled");
        let server_key = self.server.public_key().clone();

        let verdict = VerdictBody { session_id: sid, accepted: true, distance: 0.0 };
        let mut rng = self.seal_rng(sid, MessageKind::DeviceResult, me, SERVER_NODE);
        let result = seal(self.cipher, MessageKind::DeviceResult, sid, Role::Adversary, &server_key, &verdict.to_bytes(), &mut rng)?;
        self.net.send(me, SERVER_NODE, result, Some(attempt));

        let mut rng = self.seal_rng(sid, MessageKind::ResponseR2, me, SERVER_NODE);
        let response = if adv.capabilities.c2 {
            identity.c2.challenge.clone()
        } else {
            random_word(&mut rng, identity.c2.quantizer.n_states(), identity.c2.challenge.len())?
        };
        let inputs = Environment::reference(&self.config.drift).inputs();
        let body = ResponseBody { session_id: sid, inputs, response };
        let r2 = seal(self.cipher, MessageKind::ResponseR2, sid, Role::Adversary, &server_key, &body.to_bytes(), &mut rng)?;
        self.net.send(me, SERVER_NODE, r2, Some(attempt));
        Ok(())
    }
}
