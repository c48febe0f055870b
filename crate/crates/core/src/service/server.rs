use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use tungstenite::{accept, Message};

use super::handler::SessionServer;
use super::protocol::{parse_client, parse_server, ClientMessage, ServerFrame};
use crate::error::{Error, Result};

/// Binds the listening socket; a busy port is reported here, before serving.
pub fn bind(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr).map_err(|e| Error::Config(format!("cannot listen on {addr}: {e}")))
}

/// Accepts WebSocket connections forever, one thread per connection.
pub fn serve(listener: TcpListener, server: Arc<SessionServer>) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let server = server.clone();
        thread::spawn(move || {
            if let Err(e) = connection(stream, &server) {
                eprintln!("connection closed: {e}");
            }
        });
    }
    Ok(())
}

/// Sessions created over a connection are closed when it drops.
fn connection(stream: TcpStream, server: &SessionServer) -> Result<()> {
    let mut ws = accept(stream).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut owned: Vec<u64> = Vec::new();
    let result = loop {
        let msg = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break Ok(()),
            Err(e) => break Err(Error::Io(std::io::Error::other(e.to_string()))),
        };
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(_) => r#"{"type":"binary"}"#.to_string(),
            Message::Close(_) => break Ok(()),
            _ => continue,
        };
        let parsed = parse_client(&text).ok();
        for frame in server.handle_text(&text) {
            if let Ok(ServerFrame::Ack { session, .. }) = parse_server(&frame) {
                match parsed {
                    Some(ClientMessage::CreateSession { .. }) => owned.push(session),
                    Some(ClientMessage::Close { .. }) => owned.retain(|s| *s != session),
                    _ => {}
                }
            }
            if let Err(e) = ws.send(Message::text(frame)) {
                return finish(server, owned, Err(Error::Io(std::io::Error::other(e.to_string()))));
            }
        }
    };
    finish(server, owned, result)
}

fn finish(server: &SessionServer, owned: Vec<u64>, result: Result<()>) -> Result<()> {
    for id in owned {
        server.handle(ClientMessage::Close { seq: 0, session: id });
    }
    result
}
