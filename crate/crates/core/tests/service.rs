use std::sync::{Arc, OnceLock};
use std::thread;

use latassist::control::{ControllerConfig, Mode};
use latassist::dataset::{generate_demos, DemoConfig};
use latassist::experiments::Models;
use latassist::latent::{train, TrainConfig};
use latassist::service::protocol::{encode, parse_client, parse_server, ClientMessage, ErrorCode, ServerFrame};
use latassist::service::{bind, serve, SessionServer};
use latassist::world::{make_two_cup_scene, Scene, SceneConfig};
use proptest::prelude::*;
use tungstenite::{connect, Message};

mod common;
use common::{client_message, server_frame};

fn fixture() -> &'static (Arc<Scene>, Models) {
    static CELL: OnceLock<(Arc<Scene>, Models)> = OnceLock::new();
    CELL.get_or_init(|| {
        let scene = Arc::new(make_two_cup_scene(&SceneConfig::default()).unwrap());
        let demos = generate_demos(&scene, &DemoConfig::default(), 0).unwrap();
        let small = TrainConfig { epochs: 150, hidden: vec![16, 16], ..Default::default() };
        let plain = train(&demos, &scene, &small).unwrap().model;
        let entropy = train(&demos, &scene, &TrainConfig { lambda: 0.03, ..small }).unwrap().model;
        (scene, Models { plain: Arc::new(plain), entropy: Arc::new(entropy) })
    })
}

fn server() -> SessionServer {
    let (scene, models) = fixture();
    SessionServer::new(scene.clone(), Some(models.clone()), ControllerConfig::default()).unwrap()
}

fn create(server: &SessionServer, mode: Option<Mode>) -> u64 {
    match &server.handle(ClientMessage::CreateSession { seq: 0, mode, alpha: None, entropy_model: None })[..] {
        [ServerFrame::Ack { session, .. }] => *session,
        other => panic!("unexpected {other:?}"),
    }
}

fn input(session: u64, seq: u64, z: f64) -> ClientMessage {
    ClientMessage::Input { seq, session, z: Some(vec![z]), raw2d: None }
}

fn error_code(frames: &[ServerFrame]) -> ErrorCode {
    match frames {
        [ServerFrame::Error { code, .. }] => *code,
        other => panic!("expected one error frame, got {other:?}"),
    }
}

#[test]
fn ten_inputs_give_ten_numbered_state_frames() {
    let server = server();
    let id = create(&server, None);
    let mut seqs = Vec::new();
    for i in 1..=10 {
        let frames = server.handle(input(id, 100 + i, 0.3));
        let states: Vec<_> = frames.iter().filter(|f| matches!(f, ServerFrame::State { .. })).collect();
        let beliefs = frames.iter().filter(|f| matches!(f, ServerFrame::Belief { .. })).count();
        assert_eq!((states.len(), beliefs), (1, 1));
        if let ServerFrame::State { seq, reply_to, session, .. } = states[0] {
            assert_eq!((*reply_to, *session), (100 + i, id));
            seqs.push(*seq);
        }
    }
    assert_eq!(seqs, (1..=10).collect::<Vec<u64>>());
}

#[test]
fn reset_restores_start_and_uniform_belief() {
    let server = server();
    let (scene, _) = fixture();
    let id = create(&server, None);
    for i in 0..5 {
        server.handle(input(id, i, -1.0));
    }
    let frames = server.handle(ClientMessage::Reset { seq: 9, session: id });
    let q = frames.iter().find_map(|f| match f {
        ServerFrame::State { q, t, .. } => Some((q.clone(), *t)),
        _ => None,
    });
    assert_eq!(q, Some((scene.start.as_slice().to_vec(), 0)));
    let p = frames.iter().find_map(|f| match f {
        ServerFrame::Belief { p, .. } => Some(p.clone()),
        _ => None,
    });
    assert_eq!(p, Some(vec![0.5, 0.5]));
}

#[test]
fn retarget_mode_has_no_assistance() {
    let server = server();
    let id = create(&server, None);
    server.handle(input(id, 1, 0.5));
    let ack = server.handle(ClientMessage::SetMode { seq: 2, session: id, mode: Mode::Retarget });
    assert!(matches!(ack[..], [ServerFrame::Ack { mode: Mode::Retarget, .. }]));
    let frames = server.handle(ClientMessage::Input { seq: 3, session: id, z: None, raw2d: Some([0.4, -0.2]) });
    let a_r = frames.iter().find_map(|f| match f {
        ServerFrame::ActionDecomp { a_r, .. } => Some(a_r.clone()),
        _ => None,
    });
    assert_eq!(a_r, Some(vec![0.0; 5]));
}

#[test]
fn set_mode_preserves_state_and_belief() {
    let server = server();
    let id = create(&server, None);
    let before = strip(&server.handle(input(id, 1, 0.7)), id);
    server.handle(ClientMessage::SetMode { seq: 2, session: id, mode: Mode::Latent });
    server.handle(ClientMessage::SetMode { seq: 3, session: id, mode: Mode::LatentShared });
    let other = create(&server, None);
    assert_eq!(before, strip(&server.handle(input(other, 1, 0.7)), other));
    assert_eq!(strip(&server.handle(input(id, 4, 0.7)), id), strip(&server.handle(input(other, 4, 0.7)), other));
}

fn strip(frames: &[ServerFrame], id: u64) -> Vec<String> {
    frames.iter().map(|f| encode(f).replace(&format!("\"session\":{id}"), "")).collect()
}

#[test]
fn goal_added_at_a_trained_position_changes_nothing() {
    let server = server();
    let (scene, _) = fixture();
    let plain = create(&server, None);
    let moved = create(&server, None);
    let (x, y) = scene.goals[1].workspace_pos;
    let ack = server.handle(ClientMessage::AddGoal { seq: 1, session: moved, x, y });
    assert!(matches!(ack[..], [ServerFrame::Ack { slot: Some(1), .. }]), "{ack:?}");
    for i in 0..40 {
        let z = if i % 3 == 0 { -0.4 } else { 0.9 };
        assert_eq!(strip(&server.handle(input(plain, i, z)), plain), strip(&server.handle(input(moved, i, z)), moved));
    }
}

#[test]
fn added_goal_is_reachable() {
    let server = server();
    let (scene, _) = fixture();
    let id = create(&server, None);
    let (x, y) = scene.goals[0].workspace_pos;
    let frames = server.handle(ClientMessage::AddGoal { seq: 1, session: id, x: x + 0.3, y: y - 0.2 });
    assert!(matches!(frames[..], [ServerFrame::Ack { slot: Some(0), .. }]), "{frames:?}");
    let far = server.handle(ClientMessage::AddGoal { seq: 2, session: id, x: 40.0, y: 0.0 });
    assert_eq!(error_code(&far), ErrorCode::UnreachableGoal);
}

#[test]
fn errors_carry_distinct_codes() {
    let server = server();
    let id = create(&server, None);
    assert_eq!(error_code(&server.handle(input(id + 50, 1, 0.0))), ErrorCode::UnknownSession);
    let wrong_dim = ClientMessage::Input { seq: 2, session: id, z: Some(vec![0.1, 0.2]), raw2d: None };
    assert_eq!(error_code(&server.handle(wrong_dim)), ErrorCode::DimensionMismatch);
    let both = ClientMessage::Input { seq: 3, session: id, z: Some(vec![0.1]), raw2d: Some([0.0, 0.0]) };
    assert_eq!(error_code(&server.handle(both)), ErrorCode::MalformedMessage);
    let raw = ClientMessage::Input { seq: 4, session: id, z: None, raw2d: Some([0.0, 0.0]) };
    assert_eq!(error_code(&server.handle(raw)), ErrorCode::InvalidInput);
    assert_eq!(error_code(&server.handle(input(id, 5, 1.5))), ErrorCode::InvalidInput);

    let garbage = server.handle_text(r#"{"type":"input","seq":7,"session":3,"z":"left"}"#);
    match parse_server(&garbage[0]).unwrap() {
        ServerFrame::Error { code, reply_to, session, .. } => {
            assert_eq!((code, reply_to, session), (ErrorCode::MalformedMessage, Some(7), Some(3)));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        parse_server(&server.handle_text("not json")[0]).unwrap(),
        ServerFrame::Error { code: ErrorCode::MalformedMessage, reply_to: None, .. }
    ));
}

#[test]
fn close_forgets_the_session() {
    let server = server();
    let id = create(&server, None);
    assert_eq!(server.session_count(), 1);
    assert!(matches!(server.handle(ClientMessage::Close { seq: 1, session: id })[..], [ServerFrame::Ack { .. }]));
    assert_eq!(server.session_count(), 0);
    assert_eq!(error_code(&server.handle(input(id, 2, 0.0))), ErrorCode::UnknownSession);
}

fn script(i: u64) -> f64 {
    ((i * 37 % 21) as f64 / 10.0) - 1.0
}

#[test]
fn interleaved_sessions_match_serial_runs() {
    let steps = 60;
    let serial = server();
    let a = create(&serial, None);
    let log_a: Vec<_> = (0..steps).flat_map(|i| strip(&serial.handle(input(a, i, script(i))), a)).collect();
    let b = create(&serial, Some(Mode::Latent));
    let log_b: Vec<_> = (0..steps).flat_map(|i| strip(&serial.handle(input(b, i, -script(i))), b)).collect();

    let shared = Arc::new(server());
    let a2 = create(&shared, None);
    let b2 = create(&shared, Some(Mode::Latent));
    let run = |id: u64, sign: f64| {
        let shared = shared.clone();
        thread::spawn(move || {
            (0..steps).flat_map(|i| strip(&shared.handle(input(id, i, sign * script(i))), id)).collect::<Vec<_>>()
        })
    };
    let (ha, hb) = (run(a2, 1.0), run(b2, -1.0));
    assert_eq!(ha.join().unwrap(), log_a);
    assert_eq!(hb.join().unwrap(), log_b);

    // Strict alternation on one thread as well.
    let alt = server();
    let a3 = create(&alt, None);
    let b3 = create(&alt, Some(Mode::Latent));
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    for i in 0..steps {
        lb.extend(strip(&alt.handle(input(b3, i, -script(i))), b3));
        la.extend(strip(&alt.handle(input(a3, i, script(i))), a3));
    }
    assert_eq!((la, lb), (log_a, log_b));
}

#[test]
fn websocket_round_trip() {
    let listener = bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    assert!(bind(&addr.to_string()).is_err(), "a busy port must fail at startup");
    let shared = Arc::new(server());
    let srv = shared.clone();
    thread::spawn(move || serve(listener, srv));

    let (mut ws, _) = connect(format!("ws://{addr}")).unwrap();
    let mut send = |msg: &ClientMessage, expect: usize| -> Vec<ServerFrame> {
        ws.send(Message::text(encode(msg))).unwrap();
        (0..expect).map(|_| parse_server(ws.read().unwrap().to_text().unwrap()).unwrap()).collect()
    };
    let ack =
        send(&ClientMessage::CreateSession { seq: 1, mode: None, alpha: Some(0.5), entropy_model: Some(true) }, 1);
    let ServerFrame::Ack { session, latent_dim, num_goals, .. } = ack[0] else { panic!("{ack:?}") };
    assert_eq!((latent_dim, num_goals), (1, 2));
    let mut seqs = Vec::new();
    for i in 0..10 {
        for f in send(&input(session, 2 + i, 0.8), 4) {
            if let ServerFrame::State { seq, .. } = f {
                seqs.push(seq);
            }
        }
    }
    assert_eq!(seqs, (1..=10).collect::<Vec<u64>>());
    assert_eq!(shared.session_count(), 1);
    ws.close(None).unwrap();
    // Drain until the server acknowledges the close.
    while ws.read().is_ok() {}
    drop(ws);
    for _ in 0..200 {
        if shared.session_count() == 0 {
            break;
        }
        thread::sleep(std::time::Duration::from_millis(10));
    }
    assert_eq!(shared.session_count(), 0, "sessions die with their connection");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn client_messages_round_trip(msg in client_message()) {
        prop_assert_eq!(parse_client(&encode(&msg)).unwrap(), msg);
    }

    #[test]
    fn server_frames_round_trip(frame in server_frame()) {
        prop_assert_eq!(parse_server(&encode(&frame)).unwrap(), frame);
    }

    #[test]
    fn arbitrary_text_never_panics(text in ".{0,200}") {
        let server = SessionServer::new(fixture().0.clone(), None, ControllerConfig { mode: Mode::Retarget, ..Default::default() }).unwrap();
        for reply in server.handle_text(&text) {
            prop_assert!(parse_server(&reply).is_ok());
        }
    }
}
