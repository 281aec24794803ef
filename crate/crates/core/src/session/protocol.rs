//! Wire messages of a live session. Every message is one JSON object
//! `{"v", "type", "tick", "payload"}`.
//!
//! Units: positions in metres, angles in radians, linear velocity in m/s,
//! angular velocity in rad/s. Input forces are unitless joystick
//! deflections in [-1, 1] per axis, world frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Outcome;
use crate::world::{GoalRegion, Obstacle, Pose2, TableState, Vec2};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    pub tick: u64,
    #[serde(flatten)]
    pub msg: Message,
}

impl Envelope {
    pub fn new(tick: u64, msg: Message) -> Self {
        Envelope {
            v: PROTOCOL_VERSION,
            tick,
            msg,
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    /// Parses one message; the version is checked before the body.
    pub fn decode(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        let v = probe.get("v").and_then(|v| v.as_u64());
        match v {
            Some(v) if v == PROTOCOL_VERSION as u64 => Ok(serde_json::from_value(probe)?),
            Some(v) => Err(Error::Transport(format!(
                "protocol version {v}, expected {PROTOCOL_VERSION}"
            ))),
            None => Err(Error::Transport("message without protocol version".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Message {
    State(StatePayload),
    Input(InputPayload),
    TrialEvent(TrialEventPayload),
    TuringPrompt(TuringPromptPayload),
    TuringResponse(TuringResponsePayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub pose: Pose2,
    pub lin_vel: Vec2,
    pub ang_vel: f64,
    pub obstacles: Vec<Obstacle>,
    pub goal: GoalRegion,
    /// Overlay of the plan the robot is tracking, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<Pose2>>,
}

impl StatePayload {
    pub fn table_state(&self) -> TableState {
        TableState {
            pose: self.pose,
            lin_vel: self.lin_vel,
            ang_vel: self.ang_vel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentId {
    Robot,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputPayload {
    pub agent: AgentId,
    pub fx: f64,
    pub fy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialEventKind {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEventPayload {
    pub event: TrialEventKind,
    pub map_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuringPromptPayload {
    pub question: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuringAnswer {
    Human,
    Robot,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuringResponsePayload {
    pub answer: TuringAnswer,
}

pub const TURING_QUESTION: &str = "Was your partner in this trial a human or a robot?";
