#![no_main]

use std::sync::{Arc, OnceLock};

use latassist::control::ControllerConfig;
use latassist::service::protocol::{parse_client, ServerFrame};
use latassist::service::SessionServer;
use latassist::world::{make_two_cup_scene, SceneConfig};
use libfuzzer_sys::fuzz_target;

fn server() -> &'static SessionServer {
    static CELL: OnceLock<SessionServer> = OnceLock::new();
    CELL.get_or_init(|| {
        let scene = Arc::new(make_two_cup_scene(&SceneConfig::default()).unwrap());
        SessionServer::new(scene, None, ControllerConfig::default()).unwrap()
    })
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_client(text);
    // Each line is one message; sessions persist across runs.
    for line in text.lines() {
        for frame in server().handle_text(line) {
            serde_json::from_str::<ServerFrame>(&frame).unwrap();
        }
    }
});
