//! Server side of the two-challenge protocol.

use std::collections::BTreeMap;

use rand::RngCore;

use super::cipher::{CipherSuite, KeyPair, PublicKey};
use super::enrollment::{DeviceIdentity, IdentityStore};
use super::message::{
    open, seal, ChallengeBody, ErrorReason, MessageKind, ProtocolMessage, ResponseBody, Role, SessionId,
    VerdictBody,
};
use super::session::{AuthSession, Phase};
use crate::error::{Error, Result};
use crate::mle::{AuthDecision, ObservationRecord, PredictorModel};
use crate::multistate::error_vector;

#[derive(Debug, Clone)]
struct ServerSession {
    device_id: String,
    session: AuthSession,
}

/// Outcome of step 2 on the server.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCheck {
    pub device_id: Option<String>,
    pub decision: AuthDecision,
    pub reply: ProtocolMessage,
}

#[derive(Debug, Clone)]
pub struct Server {
    keys: KeyPair,
    store: IdentityStore,
    models: BTreeMap<String, PredictorModel>,
    threshold: f64,
    sessions: BTreeMap<SessionId, ServerSession>,
    clock: u64,
}

impl Server {
    pub fn new(keys: KeyPair, threshold: f64) -> Self {
        Self {
            keys,
            store: IdentityStore::new(),
            models: BTreeMap::new(),
            threshold,
            sessions: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keys.public
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn store(&self) -> &IdentityStore {
        &self.store
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Stores the identity and the C2 predictor for one device, replacing
    /// any earlier enrollment.
    pub fn register(&mut self, identity: DeviceIdentity, c2_model: PredictorModel) {
        self.models.insert(identity.device_id.clone(), c2_model);
        self.store.insert(identity);
    }

    pub fn model(&self, device_id: &str) -> Option<&PredictorModel> {
        self.models.get(device_id)
    }

    pub fn session(&self, id: &SessionId) -> Option<&AuthSession> {
        self.sessions.get(id).map(|s| &s.session)
    }

    pub fn session_device(&self, id: &SessionId) -> Option<&str> {
        self.sessions.get(id).map(|s| s.device_id.as_str())
    }

    /// Step 1 request: the stored C1 for `device_id`, encrypted to the
    /// device's public key.
    pub fn initiate(
        &mut self,
        device_id: &str,
        session_id: SessionId,
        cipher: &dyn CipherSuite,
        rng: &mut dyn RngCore,
    ) -> Result<ProtocolMessage> {
        let identity = self.store.get(device_id).ok_or_else(|| Error::NotEnrolled(device_id.to_string()))?;
        if self.sessions.contains_key(&session_id) {
            return Err(Error::ProtocolOrder(format!("session {session_id} already exists")));
        }
        let body = ChallengeBody { session_id, challenge: identity.c1.challenge.clone() };
        let msg = seal(
            cipher,
            MessageKind::AuthRequestC1,
            session_id,
            Role::Server,
            &identity.public_key,
            &body.to_bytes(),
            rng,
        )?;
        let mut session = AuthSession::new(session_id);
        session.record(&msg);
        self.sessions.insert(session_id, ServerSession { device_id: device_id.to_string(), session });
        Ok(msg)
    }

    /// Fails a session that will receive no further messages.
    pub fn abort(&mut self, id: &SessionId) {
        if let Some(entry) = self.sessions.get_mut(id) {
            entry.session.fail();
        }
    }

    fn entry(&mut self, id: &SessionId) -> Result<&mut ServerSession> {
        self.sessions.get_mut(id).ok_or_else(|| Error::ProtocolOrder(format!("unknown session {id}")))
    }

    /// Applies the device's step-1 verdict (or error) to the session.
    pub fn receive_device_result(&mut self, msg: &ProtocolMessage, cipher: &dyn CipherSuite) -> Result<Phase> {
        let secret = self.keys.secret.clone();
        let entry = self.entry(&msg.session_id)?;
        let session = &mut entry.session;
        if session.phase() != Phase::Init {
            return Err(Error::ProtocolOrder(format!("device result in phase {}", session.phase().as_str())));
        }
        session.record(msg);
        match msg.kind {
            MessageKind::Error => session.fail(),
            MessageKind::DeviceResult => match open(cipher, &secret, msg).and_then(|p| VerdictBody::from_bytes(&p)) {
                Ok(v) if v.session_id == msg.session_id && v.accepted => session.transition(Phase::ServerAuthed)?,
                _ => session.fail(),
            },
            other => return Err(Error::ProtocolOrder(format!("unexpected {other:?} before step 2"))),
        }
        Ok(session.phase())
    }

    fn reject(&mut self, msg: &ProtocolMessage, reason: ErrorReason, n_states: usize) -> DeviceCheck {
        let reply = ProtocolMessage::error(msg.session_id, Role::Server, reason);
        let device_id = self.sessions.get_mut(&msg.session_id).map(|entry| {
            entry.session.record(msg);
            entry.session.fail();
            entry.session.record(&reply);
            entry.device_id.clone()
        });
        DeviceCheck { device_id, decision: AuthDecision::unreadable(self.threshold, n_states), reply }
    }

    /// Step 2: score R2 against the stored C2 with the device's predictor
    /// evaluated at the reported inputs. On acceptance the observation is
    /// appended to the predictor's history.
    pub fn verify_device(
        &mut self,
        msg: &ProtocolMessage,
        cipher: &dyn CipherSuite,
        rng: &mut dyn RngCore,
    ) -> Result<DeviceCheck> {
        let Some(entry) = self.sessions.get(&msg.session_id) else {
            let reply = ProtocolMessage::error(msg.session_id, Role::Server, ErrorReason::ProtocolOrder);
            return Ok(DeviceCheck { device_id: None, decision: AuthDecision::unreadable(self.threshold, 0), reply });
        };
        let device_id = entry.device_id.clone();
        let identity = self.store.get(&device_id).ok_or_else(|| Error::NotEnrolled(device_id.clone()))?;
        let n = identity.c2.quantizer.n_states();
        if msg.kind != MessageKind::ResponseR2 || entry.session.phase() != Phase::ServerAuthed {
            return Ok(self.reject(msg, ErrorReason::ProtocolOrder, n));
        }
        let body = match open(cipher, &self.keys.secret, msg) {
            Err(_) => return Ok(self.reject(msg, ErrorReason::Decrypt, n)),
            Ok(plain) => match ResponseBody::from_bytes(&plain) {
                Ok(b) => b,
                Err(_) => return Ok(self.reject(msg, ErrorReason::Malformed, n)),
            },
        };
        let model = self.models.get(&device_id).ok_or_else(|| Error::NotEnrolled(device_id.clone()))?;
        if body.session_id != msg.session_id
            || body.response.len() != identity.c2.challenge.len()
            || body.response.n_states() != n
            || body.inputs.len() != model.config().input_dim
            || body.inputs.iter().any(|x| !x.is_finite())
        {
            return Ok(self.reject(msg, ErrorReason::Malformed, n));
        }

        let ve = error_vector(&identity.c2.challenge, &body.response)?;
        let decision = model.decide(&ve, &body.inputs, self.threshold)?;
        if decision.accepted {
            self.clock += 1;
            let updated = model.update(ObservationRecord { inputs: body.inputs.clone(), ve, timestamp: self.clock })?;
            self.models.insert(device_id.clone(), updated);
        }
        let verdict = VerdictBody { session_id: msg.session_id, accepted: decision.accepted, distance: decision.distance };
        let reply = seal(
            cipher,
            MessageKind::ServerResult,
            msg.session_id,
            Role::Server,
            &identity.public_key,
            &verdict.to_bytes(),
            rng,
        )?;
        let entry = self.entry(&msg.session_id)?;
        entry.session.record(msg);
        if decision.accepted {
            entry.session.transition(Phase::MutualAuthed)?;
        } else {
            entry.session.fail();
        }
        entry.session.record(&reply);
        Ok(DeviceCheck { device_id: Some(device_id), decision, reply })
    }
}
