//! Websocket session messages. Every message carries a `seq` that increases
//! by one per message in its direction.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sharedctl::context::ContextProbs;
use sharedctl::shared_control::ControlMode;
use sharedctl::sim::{EpisodeMode, Metrics, PegState, TaskPhase, ToolState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Start,
    Pause,
    /// Back to a fresh episode, optionally in another mode.
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Running,
    Paused,
    Finished,
}

/// Snapshot broadcast once per tick while running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBody {
    pub status: SessionStatus,
    pub episode_mode: EpisodeMode,
    pub clock: f64,
    pub phase: TaskPhase,
    pub tools: [ToolState; 2],
    pub peg: PegState,
    /// Human authority in force at the last step.
    pub alpha: f64,
    pub probs: Option<ContextProbs>,
    pub mode: Option<ControlMode>,
    pub engaged: bool,
    pub masters: [Vector3<f64>; 2],
    /// Present once the episode finished.
    pub summary: Option<Metrics>,
    /// Where the finished episode's log was written.
    pub log: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionMessage {
    /// Server greeting.
    Hello { seq: u64, tick_hz: f64, dt: f64, mode: EpisodeMode, status: SessionStatus },
    /// Operator input: master increments since the last input (master
    /// units, left then right), clutch pedal and jaw commands.
    Input { seq: u64, dp: [Vector3<f64>; 2], clutch: bool, grip: [bool; 2], client_time: f64 },
    State {
        seq: u64,
        #[serde(flatten)]
        body: Box<StateBody>,
    },
    Control { seq: u64, action: Action, mode: Option<EpisodeMode> },
    /// Acknowledges a client message.
    Ack { seq: u64, ack: u64, status: SessionStatus },
    /// `ack` names the offending client message when it could be parsed.
    Error { seq: u64, ack: Option<u64>, message: String },
}

impl SessionMessage {
    pub fn seq(&self) -> u64 {
        match self {
            Self::Hello { seq, .. }
            | Self::Input { seq, .. }
            | Self::State { seq, .. }
            | Self::Control { seq, .. }
            | Self::Ack { seq, .. }
            | Self::Error { seq, .. } => *seq,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("session messages serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sharedctl::sim::{sim_init, SimConfig};

    #[test]
    fn messages_round_trip() {
        let s = sim_init(&SimConfig::default()).unwrap();
        let msgs = vec![
            SessionMessage::Hello { seq: 0, tick_hz: 50.0, dt: 0.01, mode: EpisodeMode::Shared, status: SessionStatus::Idle },
            SessionMessage::Input {
                seq: 3,
                dp: [Vector3::new(1e-4, 0.0, -2e-4), Vector3::zeros()],
                clutch: false,
                grip: [false, true],
                client_time: 1.25,
            },
            SessionMessage::State {
                seq: 4,
                body: Box::new(StateBody {
                    status: SessionStatus::Running,
                    episode_mode: EpisodeMode::Manual,
                    clock: s.clock,
                    phase: s.phase,
                    tools: s.tools,
                    peg: s.peg,
                    alpha: 1.0,
                    probs: Some(ContextProbs::uniform()),
                    mode: Some(ControlMode::Manual),
                    engaged: true,
                    masters: [Vector3::zeros(); 2],
                    summary: None,
                    log: None,
                }),
            },
            SessionMessage::Control { seq: 5, action: Action::Reset, mode: Some(EpisodeMode::Autonomous) },
            SessionMessage::Ack { seq: 6, ack: 5, status: SessionStatus::Idle },
            SessionMessage::Error { seq: 7, ack: None, message: "bad".into() },
        ];
        for m in msgs {
            let back: SessionMessage = serde_json::from_str(&m.to_json()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn wire_shape() {
        let v: serde_json::Value = serde_json::from_str(
            &SessionMessage::Control { seq: 1, action: Action::Start, mode: None }.to_json(),
        )
        .unwrap();
        assert_eq!(v["type"], "control");
        assert_eq!(v["action"], "start");
        let m: SessionMessage = serde_json::from_str(
            r#"{"type":"input","seq":2,"dp":[[0,0,0],[0,0,0]],"clutch":true,"grip":[false,false],"client_time":0}"#,
        )
        .unwrap();
        assert_eq!(m.seq(), 2);
    }
}
