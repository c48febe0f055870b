//! Session messages. Each message is one JSON object carried in one
//! WebSocket text frame, discriminated by its `type` field.
//!
//! Client requests carry a client-chosen `seq`; every server frame produced
//! in response echoes it as `reply_to`. State frames additionally carry the
//! session's own `seq`, which increases by one per state frame.

use serde::{Deserialize, Serialize};

use crate::control::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    CreateSession {
        seq: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<Mode>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        /// Decode with the entropy-regularized model.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        entropy_model: Option<bool>,
    },
    /// Exactly one of `z` (latent modes) and `raw2d` (retargeting modes).
    Input {
        seq: u64,
        session: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        raw2d: Option<[f64; 2]>,
    },
    SetMode {
        seq: u64,
        session: u64,
        mode: Mode,
    },
    Reset {
        seq: u64,
        session: u64,
    },
    /// Workspace position of a goal unseen during training.
    AddGoal {
        seq: u64,
        session: u64,
        x: f64,
        y: f64,
    },
    Close {
        seq: u64,
        session: u64,
    },
}

impl ClientMessage {
    pub fn seq(&self) -> u64 {
        match self {
            ClientMessage::CreateSession { seq, .. }
            | ClientMessage::Input { seq, .. }
            | ClientMessage::SetMode { seq, .. }
            | ClientMessage::Reset { seq, .. }
            | ClientMessage::AddGoal { seq, .. }
            | ClientMessage::Close { seq, .. } => *seq,
        }
    }

    pub fn session(&self) -> Option<u64> {
        match self {
            ClientMessage::CreateSession { .. } => None,
            ClientMessage::Input { session, .. }
            | ClientMessage::SetMode { session, .. }
            | ClientMessage::Reset { session, .. }
            | ClientMessage::AddGoal { session, .. }
            | ClientMessage::Close { session, .. } => Some(*session),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not valid JSON or not a known message shape.
    MalformedMessage,
    UnknownSession,
    DimensionMismatch,
    /// Well-formed but unusable in the session's current state.
    InvalidInput,
    UnreachableGoal,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerFrame {
    Ack {
        reply_to: u64,
        session: u64,
        mode: Mode,
        latent_dim: usize,
        num_goals: usize,
        /// Goal slot taken over by an added goal.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slot: Option<usize>,
    },
    State {
        reply_to: u64,
        session: u64,
        seq: u64,
        t: usize,
        q: Vec<f64>,
        /// End-effector `[x, y, phi]`.
        ee: [f64; 3],
        /// Joint positions from the base to the end effector.
        links: Vec<[f64; 2]>,
    },
    Belief {
        reply_to: u64,
        session: u64,
        p: Vec<f64>,
    },
    ActionDecomp {
        reply_to: u64,
        session: u64,
        a_h: Vec<f64>,
        a_r: Vec<f64>,
        a: Vec<f64>,
    },
    Lyapunov {
        reply_to: u64,
        session: u64,
        v: f64,
        vdot: f64,
        delta: f64,
        t4_holds: bool,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reply_to: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<u64>,
        code: ErrorCode,
        message: String,
    },
}

impl ServerFrame {
    pub fn session(&self) -> Option<u64> {
        match self {
            ServerFrame::Ack { session, .. }
            | ServerFrame::State { session, .. }
            | ServerFrame::Belief { session, .. }
            | ServerFrame::ActionDecomp { session, .. }
            | ServerFrame::Lyapunov { session, .. } => Some(*session),
            ServerFrame::Error { session, .. } => *session,
        }
    }
}

pub fn parse_client(text: &str) -> Result<ClientMessage, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn parse_server(text: &str) -> Result<ServerFrame, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages always serialize")
}
