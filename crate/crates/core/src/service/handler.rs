use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::protocol::{encode, parse_client, ClientMessage, ErrorCode, ServerFrame};
use crate::control::{ControllerConfig, Session, UserInput};
use crate::error::{Error, Result};
use crate::experiments::Models;
use crate::kinematics::{forward_kinematics, link_endpoints, EePose};
use crate::world::{solve_ik, Goal, Scene};

struct LiveSession {
    session: Session,
    /// State frames sent so far.
    frames: u64,
}

/// Sessions multiplexed over shared read-only scene and models.
///
/// Messages for one session are handled one at a time; different sessions
/// never share mutable state. A session only advances when it receives an
/// input.
pub struct SessionServer {
    scene: Arc<Scene>,
    models: Option<Models>,
    controller: ControllerConfig,
    sessions: Mutex<HashMap<u64, Arc<Mutex<LiveSession>>>>,
    next_id: AtomicU64,
}

fn code_for(e: &Error) -> ErrorCode {
    match e {
        Error::DimensionMismatch { .. } => ErrorCode::DimensionMismatch,
        Error::UnreachableTarget(_) => ErrorCode::UnreachableGoal,
        Error::InvalidInput(_) | Error::Config(_) | Error::SceneMismatch { .. } => ErrorCode::InvalidInput,
        _ => ErrorCode::Internal,
    }
}

fn error_frame(
    reply_to: Option<u64>,
    session: Option<u64>,
    code: ErrorCode,
    message: impl Into<String>,
) -> ServerFrame {
    ServerFrame::Error { reply_to, session, code, message: message.into() }
}

impl SessionServer {
    /// `models` may be omitted when only retargeting modes are used.
    pub fn new(scene: Arc<Scene>, models: Option<Models>, controller: ControllerConfig) -> Result<Self> {
        controller.validate()?;
        if let Some(m) = &models {
            for model in [&m.plain, &m.entropy] {
                if model.scene_hash != scene.hash() {
                    return Err(Error::SceneMismatch { expected: scene.hash(), found: model.scene_hash.clone() });
                }
            }
        }
        Ok(SessionServer {
            scene,
            models,
            controller,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }

    /// Parses one text message and returns the encoded response frames.
    pub fn handle_text(&self, text: &str) -> Vec<String> {
        let frames = match parse_client(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => {
                // Echo whatever identifiers survive so the client can match the error.
                let value: Option<serde_json::Value> = serde_json::from_str(text).ok();
                let field = |k: &str| value.as_ref().and_then(|v| v.get(k)).and_then(|v| v.as_u64());
                vec![error_frame(field("seq"), field("session"), ErrorCode::MalformedMessage, e.to_string())]
            }
        };
        frames.iter().map(encode).collect()
    }

    pub fn handle(&self, msg: ClientMessage) -> Vec<ServerFrame> {
        let seq = msg.seq();
        if let ClientMessage::CreateSession { mode, alpha, entropy_model, .. } = msg {
            return match self.create(mode, alpha, entropy_model, seq) {
                Ok(frame) => vec![frame],
                Err(e) => vec![error_frame(Some(seq), None, code_for(&e), e.to_string())],
            };
        }
        let id = msg.session().expect("non-create messages name a session");
        let live = self.sessions.lock().expect("session map poisoned").get(&id).cloned();
        let Some(live) = live else {
            return vec![error_frame(Some(seq), Some(id), ErrorCode::UnknownSession, format!("no session {id}"))];
        };
        if let ClientMessage::Close { .. } = msg {
            self.sessions.lock().expect("session map poisoned").remove(&id);
        }
        let mut live = live.lock().expect("session poisoned");
        match self.apply(&mut live, id, msg) {
            Ok(frames) => frames,
            Err((code, message)) => vec![error_frame(Some(seq), Some(id), code, message)],
        }
    }

    fn create(
        &self,
        mode: Option<crate::control::Mode>,
        alpha: Option<f64>,
        entropy: Option<bool>,
        seq: u64,
    ) -> Result<ServerFrame> {
        let mut config = self.controller.clone();
        if let Some(m) = mode {
            config.mode = m;
        }
        if let Some(a) = alpha {
            config.alpha = a;
        }
        if let Some(e) = entropy {
            config.entropy_model = e;
        }
        let model =
            self.models.as_ref().map(|m| if config.entropy_model { m.entropy.clone() } else { m.plain.clone() });
        let mut session = Session::new(self.scene.clone(), model, config)?;
        session.set_keep_log(false);
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let ack = self.ack(&session, seq, id, None);
        self.sessions
            .lock()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(LiveSession { session, frames: 0 })));
        Ok(ack)
    }

    fn ack(&self, session: &Session, reply_to: u64, id: u64, slot: Option<usize>) -> ServerFrame {
        ServerFrame::Ack {
            reply_to,
            session: id,
            mode: session.config().mode,
            latent_dim: session.model().map_or(0, |m| m.latent_dim),
            num_goals: session.goals().len(),
            slot,
        }
    }

    fn state_frames(&self, live: &mut LiveSession, reply_to: u64, id: u64) -> Result<[ServerFrame; 2]> {
        let s = live.session.state();
        let arm = &self.scene.arm;
        let pose = forward_kinematics(arm, s)?;
        live.frames += 1;
        Ok([
            ServerFrame::State {
                reply_to,
                session: id,
                seq: live.frames,
                t: live.session.t(),
                q: s.as_slice().to_vec(),
                ee: [pose.x, pose.y, pose.phi],
                links: link_endpoints(arm, s)?.into_iter().map(|(x, y)| [x, y]).collect(),
            },
            ServerFrame::Belief { reply_to, session: id, p: live.session.belief().probs().to_vec() },
        ])
    }

    fn apply(
        &self,
        live: &mut LiveSession,
        id: u64,
        msg: ClientMessage,
    ) -> Result<Vec<ServerFrame>, (ErrorCode, String)> {
        let fail = |e: Error| (code_for(&e), e.to_string());
        let seq = msg.seq();
        match msg {
            ClientMessage::CreateSession { .. } => unreachable!("handled by the caller"),
            ClientMessage::Input { z, raw2d, .. } => {
                let input = match (z, raw2d) {
                    (Some(z), None) => UserInput::Latent(z),
                    (None, Some(v)) => UserInput::Raw2d(v),
                    _ => return Err((ErrorCode::MalformedMessage, "input needs exactly one of z and raw2d".into())),
                };
                let record = live.session.step(input).map_err(fail)?;
                let decomp = ServerFrame::ActionDecomp {
                    reply_to: seq,
                    session: id,
                    a_h: record.a_h.as_slice().to_vec(),
                    a_r: record.a_r.as_slice().to_vec(),
                    a: record.a.as_slice().to_vec(),
                };
                let l = record.lyapunov;
                let lyapunov = ServerFrame::Lyapunov {
                    reply_to: seq,
                    session: id,
                    v: l.v,
                    vdot: l.vdot,
                    delta: l.delta,
                    t4_holds: l.t4_holds,
                };
                let mut frames = self.state_frames(live, seq, id).map_err(fail)?.to_vec();
                frames.push(decomp);
                frames.push(lyapunov);
                Ok(frames)
            }
            ClientMessage::SetMode { mode, .. } => {
                live.session.set_mode(mode).map_err(fail)?;
                Ok(vec![self.ack(&live.session, seq, id, None)])
            }
            ClientMessage::Reset { .. } => {
                live.session.reset();
                let mut frames = vec![self.ack(&live.session, seq, id, None)];
                frames.extend(self.state_frames(live, seq, id).map_err(fail)?);
                Ok(frames)
            }
            ClientMessage::AddGoal { x, y, .. } => {
                let goal = self.goal_at(x, y).map_err(fail)?;
                let slot = live.session.add_goal(goal).map_err(fail)?;
                Ok(vec![self.ack(&live.session, seq, id, Some(slot))])
            }
            ClientMessage::Close { .. } => Ok(vec![self.ack(&live.session, seq, id, None)]),
        }
    }

    /// Goal pose reaching `(x, y)` with the grasp orientation of the trained
    /// goal nearest in the workspace, solved from that goal's pose.
    fn goal_at(&self, x: f64, y: f64) -> Result<Goal> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::InvalidInput("goal position must be finite".into()));
        }
        let nearest = self
            .scene
            .goals
            .iter()
            .min_by(|a, b| {
                let da = (a.workspace_pos.0 - x).hypot(a.workspace_pos.1 - y);
                let db = (b.workspace_pos.0 - x).hypot(b.workspace_pos.1 - y);
                da.total_cmp(&db)
            })
            .expect("scene has goals");
        let phi = forward_kinematics(&self.scene.arm, &nearest.q_ref)?.phi;
        let q = solve_ik(&self.scene.arm, &nearest.q_ref, EePose { x, y, phi }, &self.scene.ik)?;
        Goal::new(self.scene.num_goals(), &self.scene.arm, q)
    }
}
