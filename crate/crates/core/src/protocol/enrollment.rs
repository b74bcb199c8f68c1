//! Challenge enrollment and the server's identity store.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::cipher::{CipherSuite, KeyPair, PublicKey};
use crate::error::{param, Error, Result};
use crate::multistate::{StateQuantizer, StateWord};
use crate::reram_model::{Environment, PufArray};
use crate::seeding::{derive_seed, domain};

/// Smallest cell range accepted for one challenge.
pub const DEFAULT_MIN_CELLS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellRange {
    pub start: usize,
    pub end: usize,
}

impl CellRange {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn overlaps(&self, other: &CellRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<Range<usize>> for CellRange {
    fn from(r: Range<usize>) -> Self {
        Self { start: r.start, end: r.end }
    }
}

/// One enrolled challenge: where it lives in the array, how readings map to
/// states, and the stored state word.
#[derive(Debug, Clone, PartialEq)]
pub struct ChallengeSlot {
    pub range: CellRange,
    pub quantizer: StateQuantizer,
    pub challenge: StateWord,
}

/// What the secure server keeps for one device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceIdentity {
    pub device_id: String,
    pub public_key: PublicKey,
    pub c1: ChallengeSlot,
    pub c2: ChallengeSlot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSplit {
    pub c1: CellRange,
    pub c2: CellRange,
    pub min_cells: usize,
}

impl CellSplit {
    pub fn new(c1: Range<usize>, c2: Range<usize>) -> Self {
        Self { c1: c1.into(), c2: c2.into(), min_cells: DEFAULT_MIN_CELLS }
    }

    /// First half / second half of an array of `cells` cells.
    pub fn halves(cells: usize) -> Self {
        Self::new(0..cells / 2, cells / 2..cells)
    }

    fn validate(&self, array_len: usize) -> Result<()> {
        for (name, r) in [("C1", &self.c1), ("C2", &self.c2)] {
            if r.end > array_len || r.start >= r.end {
                return Err(Error::Config(format!(
                    "{name} range {}..{} invalid for {array_len} cells",
                    r.start, r.end
                )));
            }
            if r.len() < self.min_cells {
                return Err(Error::Config(format!(
                    "{name} range has {} cells, minimum is {}",
                    r.len(),
                    self.min_cells
                )));
            }
        }
        if self.c1.overlaps(&self.c2) {
            return Err(Error::Config("C1 and C2 ranges overlap".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enrollment {
    pub identity: DeviceIdentity,
    pub device_keys: KeyPair,
}

/// Measures both ranges under `env`, calibrates one quantizer per range,
/// stores the encoded challenges and generates the device key pair.
pub fn enroll(
    device_id: &str,
    array: &PufArray,
    n_states: usize,
    split: &CellSplit,
    env: &Environment,
    seed: u64,
    cipher: &dyn CipherSuite,
) -> Result<Enrollment> {
    split.validate(array.len())?;
    let slot = |range: CellRange, stream: u64| -> Result<ChallengeSlot> {
        let sweep = array.measure_range(range.as_range(), env, derive_seed(seed, domain::MEASUREMENT, stream))?;
        let quantizer = StateQuantizer::calibrate(&sweep, n_states)?;
        let challenge = quantizer.encode(&sweep);
        Ok(ChallengeSlot { range, quantizer, challenge })
    };
    let identity = DeviceIdentity {
        device_id: device_id.to_string(),
        public_key: PublicKey::from_bytes(Vec::new()),
        c1: slot(split.c1, 1)?,
        c2: slot(split.c2, 2)?,
    };
    let device_keys = cipher.keypair_generate(derive_seed(seed, domain::KEYS, 0));
    Ok(Enrollment {
        identity: DeviceIdentity { public_key: device_keys.public.clone(), ..identity },
        device_keys,
    })
}

#[derive(Serialize, Deserialize)]
struct SlotRecord {
    start: usize,
    end: usize,
    n_states: usize,
    boundaries: Vec<f64>,
    states: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct IdentityRecord {
    device_id: String,
    public_key: String,
    c1: SlotRecord,
    c2: SlotRecord,
}

impl From<&ChallengeSlot> for SlotRecord {
    fn from(s: &ChallengeSlot) -> Self {
        Self {
            start: s.range.start,
            end: s.range.end,
            n_states: s.quantizer.n_states(),
            boundaries: s.quantizer.boundaries().to_vec(),
            states: s.challenge.states().to_vec(),
        }
    }
}

impl SlotRecord {
    fn into_slot(self) -> Result<ChallengeSlot> {
        let range = CellRange { start: self.start, end: self.end };
        if range.len() != self.states.len() {
            return Err(param("stored challenge length does not match its range"));
        }
        Ok(ChallengeSlot {
            range,
            quantizer: StateQuantizer::new(self.n_states, self.boundaries)?,
            challenge: StateWord::new(self.n_states, self.states)?,
        })
    }
}

/// Device identities keyed by id; concurrent readers, exclusive writers.
#[derive(Debug, Default)]
pub struct IdentityStore {
    inner: RwLock<BTreeMap<String, DeviceIdentity>>,
}

impl Clone for IdentityStore {
    fn clone(&self) -> Self {
        Self { inner: RwLock::new(self.inner.read().expect("identity store poisoned").clone()) }
    }
}

impl IdentityStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, identity: DeviceIdentity) {
        self.inner.write().expect("identity store poisoned").insert(identity.device_id.clone(), identity);
    }

    pub fn get(&self, device_id: &str) -> Option<DeviceIdentity> {
        self.inner.read().expect("identity store poisoned").get(device_id).cloned()
    }

    pub fn contains(&self, device_id: &str) -> bool {
        self.inner.read().expect("identity store poisoned").contains_key(device_id)
    }

    pub fn remove(&self, device_id: &str) -> Option<DeviceIdentity> {
        self.inner.write().expect("identity store poisoned").remove(device_id)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("identity store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.inner.read().expect("identity store poisoned").keys().cloned().collect()
    }

    /// One JSON object per line, in device-id order.
    pub fn to_records(&self) -> String {
        let guard = self.inner.read().expect("identity store poisoned");
        let mut out = String::new();
        for id in guard.values() {
            let record = IdentityRecord {
                device_id: id.device_id.clone(),
                public_key: id.public_key.to_hex(),
                c1: (&id.c1).into(),
                c2: (&id.c2).into(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_records(text: &str) -> Result<Self> {
        let store = Self::new();
        for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record: IdentityRecord = serde_json::from_str(line)
                .map_err(|e| Error::Config(format!("identity record {}: {e}", line_no + 1)))?;
            store.insert(DeviceIdentity {
                device_id: record.device_id,
                public_key: PublicKey::from_hex(&record.public_key)?,
                c1: record.c1.into_slot()?,
                c2: record.c2.into_slot()?,
            });
        }
        Ok(store)
    }
}
