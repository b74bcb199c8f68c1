//! Device side of the two-challenge protocol.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::RngCore;

use super::cipher::{CipherSuite, KeyPair, PublicKey};
use super::enrollment::{CellRange, DeviceIdentity};
use super::message::{
    open, seal, ChallengeBody, ErrorReason, MessageKind, ProtocolMessage, ResponseBody, Role, SessionId,
    VerdictBody,
};
use super::session::{AuthSession, Phase};
use crate::error::{Error, Result};
use crate::mle::{AuthDecision, PredictorModel};
use crate::multistate::{error_vector, StateQuantizer};
use crate::reram_model::{Environment, PufArray};
use crate::seeding::{derive_seed, domain, fold};

/// Session ids remembered for replay detection.
pub const REPLAY_CACHE: usize = 4096;

/// Range and quantizer the device keeps for one of its challenges.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSlot {
    pub range: CellRange,
    pub quantizer: StateQuantizer,
}

/// Everything a device holds: its array, keys, the server's public key,
/// per-challenge measurement slots and its own drift predictor for C1.
#[derive(Debug, Clone)]
pub struct Device {
    id: String,
    array: PufArray,
    keys: KeyPair,
    server_key: PublicKey,
    c1: DeviceSlot,
    c2: DeviceSlot,
    mle: PredictorModel,
    threshold: f64,
    env: Environment,
    noise_seed: u64,
    seen: HashSet<SessionId>,
    seen_order: VecDeque<SessionId>,
    sessions: BTreeMap<SessionId, AuthSession>,
}

/// Outcome of step 1 on the device.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerCheck {
    pub decision: AuthDecision,
    pub reply: ProtocolMessage,
}

impl Device {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        identity: &DeviceIdentity,
        array: PufArray,
        keys: KeyPair,
        server_key: PublicKey,
        mle: PredictorModel,
        threshold: f64,
        env: Environment,
        noise_seed: u64,
    ) -> Self {
        let slot = |s: &super::enrollment::ChallengeSlot| DeviceSlot { range: s.range, quantizer: s.quantizer.clone() };
        Self {
            id: identity.device_id.clone(),
            array,
            keys,
            server_key,
            c1: slot(&identity.c1),
            c2: slot(&identity.c2),
            mle,
            threshold,
            env,
            noise_seed,
            seen: HashSet::new(),
            seen_order: VecDeque::new(),
            sessions: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn environment(&self) -> Environment {
        self.env
    }

    pub fn set_environment(&mut self, env: Environment) {
        self.env = env;
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn mle(&self) -> &PredictorModel {
        &self.mle
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keys.public
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn session(&self, id: &SessionId) -> Option<&AuthSession> {
        self.sessions.get(id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &AuthSession> {
        self.sessions.values()
    }

    /// Fails a session that will receive no further messages.
    pub fn abort(&mut self, id: &SessionId) {
        if let Some(session) = self.sessions.get_mut(id) {
            session.fail();
        }
    }

    /// Replaces the enrolled slots and predictor after a re-enrollment.
    pub fn reenroll(&mut self, identity: &DeviceIdentity, keys: KeyPair, mle: PredictorModel) {
        self.c1 = DeviceSlot { range: identity.c1.range, quantizer: identity.c1.quantizer.clone() };
        self.c2 = DeviceSlot { range: identity.c2.range, quantizer: identity.c2.quantizer.clone() };
        self.keys = keys;
        self.mle = mle;
    }

    fn measure(&self, slot: &DeviceSlot, session: SessionId, step: u64) -> Result<crate::multistate::StateWord> {
        let [a, b] = session.words();
        let seed = derive_seed(self.noise_seed, domain::MEASUREMENT, fold(&[a, b, step]));
        let sweep = self.array.measure_range(slot.range.as_range(), &self.env, seed)?;
        Ok(slot.quantizer.encode(&sweep))
    }

    fn remember(&mut self, id: SessionId) {
        if self.seen.insert(id) {
            self.seen_order.push_back(id);
            if self.seen_order.len() > REPLAY_CACHE {
                if let Some(old) = self.seen_order.pop_front() {
                    self.seen.remove(&old);
                }
            }
        }
    }

    fn refuse(&mut self, msg: &ProtocolMessage, reason: ErrorReason) -> ServerCheck {
        let reply = ProtocolMessage::error(msg.session_id, Role::Device, reason);
        // A replayed id must not disturb the session it originally belonged to.
        if reason != ErrorReason::Replay {
            let session = self.sessions.entry(msg.session_id).or_insert_with(|| AuthSession::new(msg.session_id));
            session.record(msg);
            session.fail();
            session.record(&reply);
        }
        ServerCheck { decision: AuthDecision::unreadable(self.threshold, self.c1.quantizer.n_states()), reply }
    }

    /// Step 1: decrypt C1, measure R1 on the C1 range under the current
    /// environment and accept the server iff the error vector matches the
    /// predictor within threshold.
    pub fn verify_server(
        &mut self,
        msg: &ProtocolMessage,
        cipher: &dyn CipherSuite,
        rng: &mut dyn RngCore,
    ) -> Result<ServerCheck> {
        if msg.kind != MessageKind::AuthRequestC1 {
            return Ok(self.refuse(msg, ErrorReason::ProtocolOrder));
        }
        if self.seen.contains(&msg.session_id) {
            return Ok(self.refuse(msg, ErrorReason::Replay));
        }
        let body = match open(cipher, &self.keys.secret, msg).and_then(|p| ChallengeBody::from_bytes(&p)) {
            Ok(body) => body,
            Err(Error::Decrypt) => {
                self.remember(msg.session_id);
                return Ok(self.refuse(msg, ErrorReason::Decrypt));
            }
            Err(_) => {
                self.remember(msg.session_id);
                return Ok(self.refuse(msg, ErrorReason::Malformed));
            }
        };
        self.remember(msg.session_id);
        let n = self.c1.quantizer.n_states();
        if body.session_id != msg.session_id || body.challenge.len() != self.c1.range.len() || body.challenge.n_states() != n {
            return Ok(self.refuse(msg, ErrorReason::Malformed));
        }

        let mut session = AuthSession::new(msg.session_id);
        session.record(msg);
        let response = self.measure(&self.c1, msg.session_id, 1)?;
        let ve = error_vector(&body.challenge, &response)?;
        let decision = self.mle.decide(&ve, &self.env.inputs(), self.threshold)?;
        if decision.accepted {
            session.transition(Phase::ServerAuthed)?;
        } else {
            session.fail();
        }
        let verdict = VerdictBody { session_id: msg.session_id, accepted: decision.accepted, distance: decision.distance };
        let reply = seal(
            cipher,
            MessageKind::DeviceResult,
            msg.session_id,
            Role::Device,
            &self.server_key,
            &verdict.to_bytes(),
            rng,
        )?;
        session.record(&reply);
        self.sessions.insert(msg.session_id, session);
        Ok(ServerCheck { decision, reply })
    }

    /// Step 2: measure R2 on the C2 range and send it, with the current
    /// environment inputs, to the server.
    pub fn respond_r2(
        &mut self,
        session_id: SessionId,
        cipher: &dyn CipherSuite,
        rng: &mut dyn RngCore,
    ) -> Result<ProtocolMessage> {
        match self.sessions.get(&session_id).map(AuthSession::phase) {
            Some(Phase::ServerAuthed) => {}
            other => {
                return Err(Error::ProtocolOrder(format!(
                    "R2 requested for session {session_id} in phase {}",
                    other.map_or("UNKNOWN", Phase::as_str)
                )))
            }
        }
        let response = self.measure(&self.c2, session_id, 2)?;
        let body = ResponseBody { session_id, inputs: self.env.inputs(), response };
        let msg = seal(cipher, MessageKind::ResponseR2, session_id, Role::Device, &self.server_key, &body.to_bytes(), rng)?;
        self.sessions.get_mut(&session_id).expect("checked above").record(&msg);
        Ok(msg)
    }

    /// Applies the server's step-2 verdict.
    pub fn receive_server_result(&mut self, msg: &ProtocolMessage, cipher: &dyn CipherSuite) -> Result<Phase> {
        let session = self
            .sessions
            .get_mut(&msg.session_id)
            .ok_or_else(|| Error::ProtocolOrder(format!("unknown session {}", msg.session_id)))?;
        session.record(msg);
        if msg.kind == MessageKind::Error {
            session.fail();
            return Ok(session.phase());
        }
        if msg.kind != MessageKind::ServerResult {
            return Err(Error::ProtocolOrder(format!("unexpected {:?}", msg.kind)));
        }
        let verdict = match open(cipher, &self.keys.secret, msg).and_then(|p| VerdictBody::from_bytes(&p)) {
            Ok(v) if v.session_id == msg.session_id => v,
            Ok(_) => {
                session.fail();
                return Err(Error::Malformed("session id mismatch".into()));
            }
            Err(e) => {
                session.fail();
                return Err(e);
            }
        };
        if session.phase() != Phase::ServerAuthed {
            return Err(Error::ProtocolOrder(format!(
                "server result in phase {}",
                session.phase().as_str()
            )));
        }
        if verdict.accepted {
            session.transition(Phase::MutualAuthed)?;
        } else {
            session.fail();
        }
        Ok(session.phase())
    }
}
