//! Two-challenge mutual authentication between a server and PUF devices.
//!
//! The server proves itself by sending a stored challenge C1 that only it
//! could know; the device answers from its own array and accepts if the
//! error vector matches its drift predictor. The device then proves itself
//! with a fresh response to a second, disjoint challenge C2.

pub mod cipher;
pub mod device;
pub mod enrollment;
pub mod message;
pub mod server;
pub mod session;

pub use cipher::{CipherKind, CipherSuite, KeyPair, KeystreamCipher, PublicKey, SecretKey, X25519Cipher};
pub use device::{Device, DeviceSlot, ServerCheck};
pub use enrollment::{enroll, CellRange, CellSplit, ChallengeSlot, DeviceIdentity, Enrollment, IdentityStore};
pub use message::{ErrorReason, MessageKind, ProtocolMessage, Role, SessionId};
pub use server::{DeviceCheck, Server};
pub use session::{AuthSession, Phase};

use crate::error::Result;
use crate::mle::{warmup_history, ModelConfig, PredictorModel};
use crate::reram_model::{Environment, PufArray};
use crate::seeding::{derive_seed, domain};

/// A freshly enrolled device together with what the server must store.
#[derive(Debug, Clone)]
pub struct Provisioned {
    pub device: Device,
    pub identity: DeviceIdentity,
    pub c2_model: PredictorModel,
}

/// Enrolls `array` at its reference environment and trains both drift
/// predictors on a warm-up sweep over `warmup`: the device's for C1 and the
/// server's for C2.
#[allow(clippy::too_many_arguments)]
pub fn provision(
    device_id: &str,
    array: PufArray,
    n_states: usize,
    split: &CellSplit,
    warmup: &[Environment],
    threshold: f64,
    server_key: &PublicKey,
    seed: u64,
    cipher: &dyn CipherSuite,
) -> Result<Provisioned> {
    let reference = Environment::reference(array.drift());
    let enrolled = enroll(device_id, &array, n_states, split, &reference, seed, cipher)?;
    let identity = enrolled.identity;
    let config = ModelConfig::new(n_states, reference.inputs().len());
    let history = |slot: &ChallengeSlot, stream: u64| {
        warmup_history(
            &array,
            slot.range.as_range(),
            &slot.quantizer,
            &slot.challenge,
            warmup,
            derive_seed(seed, domain::CALIBRATION, stream),
        )
    };
    let c1_model = PredictorModel::fit(config, history(&identity.c1, 1)?)?;
    let c2_model = PredictorModel::fit(config, history(&identity.c2, 2)?)?;
    let device = Device::new(
        &identity,
        array,
        enrolled.device_keys,
        server_key.clone(),
        c1_model,
        threshold,
        reference,
        derive_seed(seed, domain::SESSION, 0),
    );
    Ok(Provisioned { device, identity, c2_model })
}
