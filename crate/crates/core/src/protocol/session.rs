use super::message::{ProtocolMessage, SessionId};
use crate::error::{Error, Result};

/// Progress of one authentication run as seen by one party.
///
/// Legal edges: `Init -> ServerAuthed -> MutualAuthed`, and `Init` or
/// `ServerAuthed` to `Failed`. `MutualAuthed` and `Failed` are terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Init,
    ServerAuthed,
    MutualAuthed,
    Failed,
}

impl Phase {
    pub fn can_transition(self, to: Phase) -> bool {
        matches!(
            (self, to),
            (Phase::Init, Phase::ServerAuthed)
                | (Phase::ServerAuthed, Phase::MutualAuthed)
                | (Phase::Init, Phase::Failed)
                | (Phase::ServerAuthed, Phase::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::MutualAuthed | Phase::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "INIT",
            Phase::ServerAuthed => "SERVER_AUTHED",
            Phase::MutualAuthed => "MUTUAL_AUTHED",
            Phase::Failed => "FAILED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthSession {
    id: SessionId,
    phase: Phase,
    /// Every phase the session has been in, starting with `Init`.
    phases: Vec<Phase>,
    transcript: Vec<ProtocolMessage>,
}

impl AuthSession {
    pub fn new(id: SessionId) -> Self {
        Self { id, phase: Phase::Init, phases: vec![Phase::Init], transcript: Vec::new() }
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn transcript(&self) -> &[ProtocolMessage] {
        &self.transcript
    }

    pub fn record(&mut self, msg: &ProtocolMessage) {
        self.transcript.push(msg.clone());
    }

    pub fn transition(&mut self, to: Phase) -> Result<()> {
        if !self.phase.can_transition(to) {
            return Err(Error::ProtocolOrder(format!(
                "session {} cannot move from {} to {}",
                self.id,
                self.phase.as_str(),
                to.as_str()
            )));
        }
        self.phase = to;
        self.phases.push(to);
        Ok(())
    }

    /// Moves to `Failed` unless already terminal.
    pub fn fail(&mut self) {
        if !self.phase.is_terminal() {
            self.phase = Phase::Failed;
            self.phases.push(Phase::Failed);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn happy_path_and_terminal_states() {
        let mut s = AuthSession::new(SessionId::default());
        s.transition(Phase::ServerAuthed).unwrap();
        s.transition(Phase::MutualAuthed).unwrap();
        assert!(s.transition(Phase::Failed).is_err());
        s.fail();
        assert_eq!(s.phase(), Phase::MutualAuthed);
        assert_eq!(s.phases(), &[Phase::Init, Phase::ServerAuthed, Phase::MutualAuthed]);
    }

    #[test]
    fn no_way_out_of_failed() {
        let mut s = AuthSession::new(SessionId::default());
        s.fail();
        for to in [Phase::Init, Phase::ServerAuthed, Phase::MutualAuthed, Phase::Failed] {
            assert!(s.transition(to).is_err());
        }
    }

    #[test]
    fn cannot_skip_server_authentication() {
        let mut s = AuthSession::new(SessionId::default());
        assert!(matches!(s.transition(Phase::MutualAuthed), Err(Error::ProtocolOrder(_))));
    }
}
