//! In-process network simulation of a server, its enrolled devices and an
//! optional adversary.
//!
//! Everything runs on logical ticks and seeded streams: two runs of the same
//! [`ScenarioConfig`] produce byte-identical reports and transcripts.

mod adversary;
pub mod network;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

pub use adversary::{AdversaryConfig, AttackMethod, Capabilities};
pub use network::{parse_transcript, Delivery, Network, NodeId, SERVER_NODE};

use crate::error::{Error, Result};
use crate::mle::calibration::{default_warmup_temperatures, sample_distances, CalibrationSetup};
use crate::protocol::{
    provision, CellSplit, CipherKind, CipherSuite, Device, MessageKind, Phase, ProtocolMessage, Server, SessionId,
};
use crate::reram_model::{DriftLaw, Environment, PopulationParams, PufArray, TEMPERATURE_RANGE_C};
use crate::seeding::{derive_seed, domain, fold, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub devices: usize,
    pub rounds: usize,
    /// Cells per device array; split in halves for C1 and C2.
    pub cells_per_device: usize,
    pub n_states: usize,
    pub population: PopulationParams,
    pub drift: DriftLaw,
    /// Per-round device temperatures are drawn uniformly from this interval.
    pub temperature_range: (f64, f64),
    pub bias_range: (f64, f64),
    pub warmup_temperatures: Vec<f64>,
    /// Fixed decision threshold; calibrated from simulated sessions if unset.
    pub threshold: Option<f64>,
    pub calibration_trials: usize,
    pub drop_probability: f64,
    pub latency_ticks: u64,
    /// Fresh sessions started after a failed or stalled one, per round.
    pub retry_limit: usize,
    pub cipher: CipherKind,
    pub adversary: Option<AdversaryConfig>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            devices: 4,
            rounds: 100,
            cells_per_device: 256,
            n_states: 8,
            population: PopulationParams::default(),
            drift: DriftLaw::default(),
            temperature_range: (-25.0, 85.0),
            bias_range: (0.0, 0.0),
            warmup_temperatures: default_warmup_temperatures(),
            threshold: None,
            calibration_trials: 200,
            drop_probability: 0.0,
            latency_ticks: 1,
            retry_limit: 0,
            cipher: CipherKind::X25519,
            adversary: None,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 || self.rounds == 0 {
            return Err(Error::Config("devices and rounds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::Config(format!("drop_probability {} outside [0, 1]", self.drop_probability)));
        }
        let (lo, hi) = self.temperature_range;
        let (min, max) = TEMPERATURE_RANGE_C;
        if !(lo <= hi && lo >= min && hi <= max) {
            return Err(Error::Config(format!("temperature range {lo}..{hi} invalid")));
        }
        if !(self.bias_range.0 <= self.bias_range.1 && self.bias_range.0.is_finite() && self.bias_range.1.is_finite()) {
            return Err(Error::Config("bias range invalid".into()));
        }
        if self.warmup_temperatures.is_empty() {
            return Err(Error::Config("warm-up needs at least one temperature".into()));
        }
        if let Some(t) = self.threshold {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("threshold {t} must be finite and >= 0")));
            }
        } else if self.calibration_trials == 0 {
            return Err(Error::Config("calibration needs at least one trial".into()));
        }
        if let Some(adv) = &self.adversary {
            if adv.target >= self.devices {
                return Err(Error::Config(format!("adversary target {} out of range", adv.target)));
            }
        }
        self.drift.validate()?;
        self.population.validate()
    }

    fn split(&self) -> CellSplit {
        CellSplit::halves(self.cells_per_device)
    }
}

pub fn device_name(index: usize) -> String {
    format!("dev-{index}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub device_id: String,
    /// Furthest non-failed phase the server reached in the last session.
    pub phase_reached: Phase,
    /// Step-2 distance if the server scored R2, otherwise the step-1
    /// distance, otherwise NaN.
    pub distance: f64,
    /// Both parties reached mutual authentication.
    pub accepted: bool,
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    pub round: usize,
    pub attempt: usize,
    pub device_id: String,
    pub method: AttackMethod,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DeviceTally {
    pub accepted: usize,
    pub rejected: usize,
    pub attacks: usize,
    pub attacks_accepted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub threshold: f64,
    pub rounds: Vec<RoundRecord>,
    pub attempts: Vec<AttemptRecord>,
    pub transcript: Vec<u8>,
    pub frames_sent: usize,
    pub frames_dropped: usize,
}

fn fmt_distance(d: f64) -> String {
    if d.is_nan() {
        String::new()
    } else {
        format!("{d:.6}")
    }
}

impl ScenarioReport {
    pub fn rounds_csv(&self) -> String {
        let mut out = String::from("round,device_id,phase_reached,distance,accepted\n");
        for r in &self.rounds {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.round,
                r.device_id,
                r.phase_reached.as_str(),
                fmt_distance(r.distance),
                r.accepted
            );
        }
        out
    }

    pub fn attempts_csv(&self) -> String {
        let mut out = String::from("round,attempt,device_id,method,accepted\n");
        for a in &self.attempts {
            let _ = writeln!(out, "{},{},{},{},{}", a.round, a.attempt, a.device_id, a.method.as_str(), a.accepted);
        }
        out
    }

    pub fn tallies(&self) -> BTreeMap<String, DeviceTally> {
        let mut out: BTreeMap<String, DeviceTally> = BTreeMap::new();
        for r in &self.rounds {
            let t = out.entry(r.device_id.clone()).or_default();
            if r.accepted {
                t.accepted += 1;
            } else {
                t.rejected += 1;
            }
        }
        for a in &self.attempts {
            let t = out.entry(a.device_id.clone()).or_default();
            t.attacks += 1;
            t.attacks_accepted += usize::from(a.accepted);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("device_id,accepted,rejected,attacks,attacks_accepted\n");
        for (id, t) in self.tallies() {
            let _ = writeln!(out, "{id},{},{},{},{}", t.accepted, t.rejected, t.attacks, t.attacks_accepted);
        }
        out
    }

    pub fn benign_success_rate(&self) -> f64 {
        self.rounds.iter().filter(|r| r.accepted).count() as f64 / self.rounds.len().max(1) as f64
    }

    pub fn attack_success_rate(&self) -> f64 {
        self.attempts.iter().filter(|a| a.accepted).count() as f64 / self.attempts.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Distances {
    step1: Option<f64>,
    step2: Option<f64>,
}

/// Draws the decision threshold from simulated genuine and impostor sessions
/// shaped like `config`'s challenges.
pub fn calibrate(config: &ScenarioConfig) -> Result<f64> {
    let setup = CalibrationSetup {
        population: config.population.clone(),
        drift: config.drift,
        n_states: config.n_states,
        cells: config.split().c1.len(),
        warmup_temperatures: config.warmup_temperatures.clone(),
        test_temperatures: config.temperature_range,
        trials: config.calibration_trials,
        seed: derive_seed(config.seed, domain::CALIBRATION, 0),
    };
    Ok(sample_distances(&setup)?.threshold())
}

/// A running scenario. [`run_scenario`] drives it round by round; tests may
/// also step it directly.
pub struct Simulation {
    config: ScenarioConfig,
    cipher: &'static dyn CipherSuite,
    threshold: f64,
    server: Server,
    devices: Vec<Device>,
    net: Network,
    distances: BTreeMap<SessionId, Distances>,
    captured: BTreeMap<usize, ProtocolMessage>,
    attempts: Vec<AttemptRecord>,
    rounds: Vec<RoundRecord>,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let cipher = config.cipher.suite();
        let threshold = match config.threshold {
            Some(t) => t,
            None => calibrate(&config)?,
        };
        let warmup = config
            .warmup_temperatures
            .iter()
            .map(|t| Environment::new(*t, 0.0))
            .collect::<Result<Vec<_>>>()?;
        let mut server = Server::new(cipher.keypair_generate(derive_seed(config.seed, domain::KEYS, u64::MAX)), threshold);
        let params = PopulationParams { cell_count: config.cells_per_device, ..config.population.clone() };
        let mut devices = Vec::with_capacity(config.devices);
        for d in 0..config.devices {
            let array = PufArray::sample(&params, &config.drift, derive_seed(config.seed, domain::DEVICE, d as u64))?;
            let p = provision(
                &device_name(d),
                array,
                config.n_states,
                &config.split(),
                &warmup,
                threshold,
                server.public_key(),
                derive_seed(config.seed, domain::DEVICE, (1 << 32) | d as u64),
                cipher,
            )?;
            server.register(p.identity, p.c2_model);
            devices.push(p.device);
        }
        let net = Network::new(config.seed, config.latency_ticks, config.drop_probability);
        Ok(Self {
            config,
            cipher,
            threshold,
            server,
            devices,
            net,
            distances: BTreeMap::new(),
            captured: BTreeMap::new(),
            attempts: Vec::new(),
            rounds: Vec::new(),
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    fn adversary_node(&self) -> NodeId {
        self.devices.len() + 1
    }

    fn seal_rng(&self, sid: SessionId, kind: MessageKind, from: NodeId, to: NodeId) -> ChaCha8Rng {
        let [a, b] = sid.words();
        stream(self.config.seed, domain::SESSION, fold(&[a, b, kind as u64, from as u64, to as u64]))
    }

    fn set_round_environment(&mut self, round: usize) -> Result<()> {
        let (t_lo, t_hi) = self.config.temperature_range;
        let (b_lo, b_hi) = self.config.bias_range;
        for (d, device) in self.devices.iter_mut().enumerate() {
            let mut rng = stream(self.config.seed, domain::DEVICE, fold(&[round as u64, d as u64]));
            let t = if t_hi > t_lo { rng.random_range(t_lo..=t_hi) } else { t_lo };
            let b = if b_hi > b_lo { rng.random_range(b_lo..=b_hi) } else { b_lo };
            device.set_environment(Environment::new(t, b)?);
        }
        Ok(())
    }

    fn benign_session_id(&self, round: usize, device: usize, attempt: usize) -> SessionId {
        let mut rng = stream(self.config.seed, domain::SESSION, fold(&[round as u64, device as u64, attempt as u64]));
        SessionId::random(&mut rng)
    }

    fn start_benign(&mut self, round: usize, device: usize, attempt: usize) -> Result<SessionId> {
        let sid = self.benign_session_id(round, device, attempt);
        let node = device + 1;
        let mut rng = self.seal_rng(sid, MessageKind::AuthRequestC1, SERVER_NODE, node);
        let msg = self.server.initiate(self.devices[device].id(), sid, self.cipher, &mut rng)?;
        self.captured.insert(device, msg.clone());
        self.net.send(SERVER_NODE, node, msg, None);
        Ok(sid)
    }

    fn deliver(&mut self, d: Delivery) -> Result<()> {
        let adversary = self.adversary_node();
        if d.to == SERVER_NODE {
            self.deliver_to_server(d)
        } else if d.to == adversary {
            self.deliver_to_adversary(d)
        } else if d.to <= self.devices.len() {
            self.deliver_to_device(d)
        } else {
            Ok(())
        }
    }

    fn deliver_to_server(&mut self, d: Delivery) -> Result<()> {
        let sid = d.msg.session_id;
        match d.msg.kind {
            MessageKind::DeviceResult | MessageKind::Error => {
                if self.server.session(&sid).is_some_and(|s| s.phase() == Phase::Init) {
                    let _ = self.server.receive_device_result(&d.msg, self.cipher);
                }
            }
            MessageKind::ResponseR2 => {
                let mut rng = self.seal_rng(sid, MessageKind::ServerResult, SERVER_NODE, d.from);
                let check = self.server.verify_device(&d.msg, self.cipher, &mut rng)?;
                if check.decision.distance.is_finite() {
                    self.distances.entry(sid).or_default().step2 = Some(check.decision.distance);
                }
                if let Some(a) = d.attempt {
                    self.attempts[a].accepted |= check.decision.accepted;
                }
                self.net.send(SERVER_NODE, d.from, check.reply, d.attempt);
            }
            MessageKind::AuthRequestC1 | MessageKind::ServerResult => {}
        }
        Ok(())
    }

    fn deliver_to_device(&mut self, d: Delivery) -> Result<()> {
        let index = d.to - 1;
        let sid = d.msg.session_id;
        match d.msg.kind {
            MessageKind::AuthRequestC1 => {
                let mut rng = self.seal_rng(sid, MessageKind::DeviceResult, d.to, d.from);
                let check = self.devices[index].verify_server(&d.msg, self.cipher, &mut rng)?;
                if d.attempt.is_none() && check.decision.distance.is_finite() {
                    self.distances.entry(sid).or_default().step1 = Some(check.decision.distance);
                }
                if let Some(a) = d.attempt {
                    self.attempts[a].accepted |= check.decision.accepted;
                }
                self.net.send(d.to, d.from, check.reply, d.attempt);
                if check.decision.accepted {
                    let mut rng = self.seal_rng(sid, MessageKind::ResponseR2, d.to, d.from);
                    let r2 = self.devices[index].respond_r2(sid, self.cipher, &mut rng)?;
                    self.net.send(d.to, d.from, r2, d.attempt);
                }
            }
            MessageKind::ServerResult | MessageKind::Error => {
                if self.devices[index].session(&sid).is_some() {
                    let _ = self.devices[index].receive_server_result(&d.msg, self.cipher);
                }
            }
            MessageKind::DeviceResult | MessageKind::ResponseR2 => {}
        }
        Ok(())
    }

    fn drain(&mut self) -> Result<()> {
        while let Some(d) = self.net.next() {
            self.deliver(d)?;
        }
        Ok(())
    }

    fn completed(&self, device: usize, sid: &SessionId) -> bool {
        let server = self.server.session(sid).map(|s| s.phase());
        let dev = self.devices[device].session(sid).map(|s| s.phase());
        server == Some(Phase::MutualAuthed) && dev == Some(Phase::MutualAuthed)
    }

    /// Runs one round: adversary attempts first, then one benign session per
    /// device, retrying stalled or failed sessions up to the retry limit.
    pub fn run_round(&mut self, round: usize) -> Result<()> {
        self.net.advance_to(self.net.now() + 1);
        self.set_round_environment(round)?;
        if let Some(adv) = self.config.adversary.clone() {
            for k in 0..adv.attempts_per_round {
                self.inject_adversary_session(&adv, round, k)?;
            }
        }
        let mut current: Vec<(SessionId, usize)> = Vec::with_capacity(self.devices.len());
        for d in 0..self.devices.len() {
            current.push((self.start_benign(round, d, 0)?, 1));
        }
        loop {
            self.drain()?;
            let mut restarted = false;
            for d in 0..self.devices.len() {
                let (sid, tries) = current[d];
                if self.completed(d, &sid) {
                    continue;
                }
                self.server.abort(&sid);
                self.devices[d].abort(&sid);
                if tries <= self.config.retry_limit {
                    current[d] = (self.start_benign(round, d, tries)?, tries + 1);
                    restarted = true;
                }
            }
            if !restarted {
                break;
            }
        }
        for (d, (sid, tries)) in current.into_iter().enumerate() {
            let phases = self.server.session(&sid).map(|s| s.phases().to_vec()).unwrap_or_default();
            let phase_reached = phases.into_iter().filter(|p| *p != Phase::Failed).max().unwrap_or(Phase::Init);
            let dist = self.distances.get(&sid).copied().unwrap_or_default();
            self.rounds.push(RoundRecord {
                round,
                device_id: device_name(d),
                phase_reached,
                distance: dist.step2.or(dist.step1).unwrap_or(f64::NAN),
                accepted: self.completed(d, &sid),
                sessions: tries,
            });
        }
        Ok(())
    }

    pub fn finish(self) -> ScenarioReport {
        let frames_sent = self.net.sent();
        let frames_dropped = self.net.dropped();
        ScenarioReport {
            threshold: self.threshold,
            rounds: self.rounds,
            attempts: self.attempts,
            transcript: self.net.into_transcript(),
            frames_sent,
            frames_dropped,
        }
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport> {
    let mut sim = Simulation::new(config.clone())?;
    for round in 0..config.rounds {
        sim.run_round(round)?;
    }
    Ok(sim.finish())
}

fn random_word(rng: &mut dyn RngCore, n_states: usize, len: usize) -> Result<crate::multistate::StateWord> {
    let states = (0..len).map(|_| (rng.next_u32() % n_states as u32) as u8).collect();
    crate::multistate::StateWord::new(n_states, states)
}
