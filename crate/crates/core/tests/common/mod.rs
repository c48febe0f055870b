//! Strategies shared by the protocol tests.

use latassist::control::Mode;
use latassist::service::protocol::{ClientMessage, ErrorCode, ServerFrame};
use proptest::prelude::*;

pub fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE), Just(1e300)]
}

pub fn mode() -> impl Strategy<Value = Mode> {
    prop::sample::select(Mode::ALL.to_vec())
}

pub fn client_message() -> impl Strategy<Value = ClientMessage> {
    prop_oneof![
        (any::<u64>(), prop::option::of(mode()), prop::option::of(finite()), prop::option::of(any::<bool>())).prop_map(
            |(seq, mode, alpha, entropy_model)| ClientMessage::CreateSession { seq, mode, alpha, entropy_model }
        ),
        (
            any::<u64>(),
            any::<u64>(),
            prop::option::of(prop::collection::vec(finite(), 0..4)),
            prop::option::of([finite(), finite()])
        )
            .prop_map(|(seq, session, z, raw2d)| ClientMessage::Input { seq, session, z, raw2d }),
        (any::<u64>(), any::<u64>(), mode()).prop_map(|(seq, session, mode)| ClientMessage::SetMode {
            seq,
            session,
            mode
        }),
        (any::<u64>(), any::<u64>()).prop_map(|(seq, session)| ClientMessage::Reset { seq, session }),
        (any::<u64>(), any::<u64>(), finite(), finite()).prop_map(|(seq, session, x, y)| ClientMessage::AddGoal {
            seq,
            session,
            x,
            y
        }),
        (any::<u64>(), any::<u64>()).prop_map(|(seq, session)| ClientMessage::Close { seq, session }),
    ]
}

pub fn code() -> impl Strategy<Value = ErrorCode> {
    prop::sample::select(vec![
        ErrorCode::MalformedMessage,
        ErrorCode::UnknownSession,
        ErrorCode::DimensionMismatch,
        ErrorCode::InvalidInput,
        ErrorCode::UnreachableGoal,
        ErrorCode::Internal,
    ])
}

pub fn server_frame() -> impl Strategy<Value = ServerFrame> {
    let vec = || prop::collection::vec(finite(), 0..6);
    prop_oneof![
        (any::<u64>(), any::<u64>(), mode(), 0..4usize, 0..5usize, prop::option::of(0..5usize)).prop_map(
            |(reply_to, session, mode, latent_dim, num_goals, slot)| ServerFrame::Ack {
                reply_to,
                session,
                mode,
                latent_dim,
                num_goals,
                slot
            }
        ),
        (
            any::<u64>(),
            any::<u64>(),
            any::<u64>(),
            0..10_000usize,
            vec(),
            [finite(), finite(), finite()],
            prop::collection::vec([finite(), finite()], 0..6)
        )
            .prop_map(|(reply_to, session, seq, t, q, ee, links)| ServerFrame::State {
                reply_to,
                session,
                seq,
                t,
                q,
                ee,
                links
            }),
        (any::<u64>(), any::<u64>(), vec()).prop_map(|(reply_to, session, p)| ServerFrame::Belief {
            reply_to,
            session,
            p
        }),
        (any::<u64>(), any::<u64>(), vec(), vec(), vec())
            .prop_map(|(reply_to, session, a_h, a_r, a)| ServerFrame::ActionDecomp { reply_to, session, a_h, a_r, a }),
        (any::<u64>(), any::<u64>(), finite(), finite(), finite(), any::<bool>()).prop_map(
            |(reply_to, session, v, vdot, delta, t4_holds)| ServerFrame::Lyapunov {
                reply_to,
                session,
                v,
                vdot,
                delta,
                t4_holds
            }
        ),
        (prop::option::of(any::<u64>()), prop::option::of(any::<u64>()), code(), ".*")
            .prop_map(|(reply_to, session, code, message)| ServerFrame::Error { reply_to, session, code, message }),
    ]
}
