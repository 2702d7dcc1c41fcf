//! Persistent node-to-node links carrying wire frames.
//!
//! Each node keeps one outbound TCP connection per peer and writes all its
//! frames for that peer through it, so frames between two nodes arrive in
//! the order they were sent. Inbound connections only read. A dropped link
//! reconnects with exponential backoff and resends the frame that failed.

use std::collections::HashMap;
use std::sync::Weak;
use std::time::Duration;

use parking_lot::Mutex;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;

use crate::engine::Engine;
use sbpm_runtime::wire::{read_frame, write_frame, WireError};
use sbpm_runtime::{Frame, FrameKind};

const BACKOFF_BASE: Duration = Duration::from_millis(100);
const BACKOFF_CAP: Duration = Duration::from_secs(5);
const HEARTBEAT: Duration = Duration::from_secs(1);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

pub(crate) struct Links {
    engine: Weak<Engine>,
    senders: Mutex<HashMap<String, mpsc::UnboundedSender<Frame>>>,
}

impl Links {
    pub(crate) fn new(engine: Weak<Engine>) -> Self {
        Links {
            engine,
            senders: Mutex::new(HashMap::new()),
        }
    }

    /// Queues `frame` for `node`. False when there is no link to it.
    pub(crate) fn send(&self, node: &str, frame: Frame) -> bool {
        match self.senders.lock().get(node) {
            Some(tx) => tx.send(frame).is_ok(),
            None => false,
        }
    }

    /// Opens (or replaces the address of) the link to `node`.
    pub(crate) fn connect(&self, node: &str, addr: &str) {
        let Some(engine) = self.engine.upgrade() else { return };
        let mut senders = self.senders.lock();
        if senders.get(node).is_some_and(|tx| !tx.is_closed()) {
            return;
        }
        let (tx, rx) = mpsc::unbounded_channel();
        senders.insert(node.to_string(), tx);
        let me = engine.node_id().to_string();
        engine
            .runtime()
            .spawn(run_link(self.engine.clone(), me, node.to_string(), addr.to_string(), rx));
    }
}

async fn handshake(stream: &mut TcpStream, me: &str) -> Result<(), WireError> {
    write_frame(stream, &Frame::new(FrameKind::Hello, me)).await?;
    match tokio::time::timeout(HANDSHAKE_TIMEOUT, read_frame(stream)).await {
        Ok(Ok(Some(f))) if f.kind == FrameKind::HelloAck => Ok(()),
        Ok(Ok(_)) => Err(WireError::BadJson("expected HELLO_ACK".into())),
        Ok(Err(e)) => Err(e),
        Err(_) => Err(WireError::Io(std::io::Error::new(std::io::ErrorKind::TimedOut, "handshake"))),
    }
}

async fn run_link(engine: Weak<Engine>, me: String, peer: String, addr: String, mut rx: mpsc::UnboundedReceiver<Frame>) {
    let mut backoff = BACKOFF_BASE;
    let mut unsent: Option<Frame> = None;
    loop {
        if engine.strong_count() == 0 {
            return;
        }
        let mut stream = match TcpStream::connect(&addr).await {
            Ok(s) => s,
            Err(e) => {
                tracing::debug!("link {me}->{peer} ({addr}): {e}; retrying in {backoff:?}");
                tokio::time::sleep(backoff).await;
                backoff = (backoff * 2).min(BACKOFF_CAP);
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        if let Err(e) = handshake(&mut stream, &me).await {
            tracing::warn!("link {me}->{peer}: handshake failed: {e}");
            tokio::time::sleep(backoff).await;
            backoff = (backoff * 2).min(BACKOFF_CAP);
            continue;
        }
        backoff = BACKOFF_BASE;
        tracing::info!("link {me}->{peer} up");
        let (mut reader, mut writer) = stream.into_split();
        let touch = engine.clone();
        let peer_name = peer.clone();
        let reading = tokio::spawn(async move {
            while let Ok(Some(f)) = read_frame(&mut reader).await {
                if let Some(e) = touch.upgrade() {
                    if f.kind == FrameKind::Pong {
                        e.touch_node(&peer_name);
                    }
                }
            }
        });
        let mut beat = tokio::time::interval(HEARTBEAT);
        let closed = loop {
            let frame = match unsent.take() {
                Some(f) => f,
                None => tokio::select! {
                    f = rx.recv() => match f {
                        Some(f) => f,
                        None => break true,
                    },
                    _ = beat.tick() => Frame::new(FrameKind::Ping, me.clone()),
                },
            };
            if let Err(e) = write_frame(&mut writer, &frame).await {
                tracing::warn!("link {me}->{peer} dropped: {e}");
                if frame.kind != FrameKind::Ping {
                    unsent = Some(frame);
                }
                break false;
            }
        };
        reading.abort();
        if closed {
            return;
        }
    }
}

/// Accepts inbound links and feeds their frames to the engine.
pub async fn serve_wire(engine: Weak<Engine>, listener: TcpListener) {
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(x) => x,
            Err(e) => {
                tracing::warn!("wire accept: {e}");
                continue;
            }
        };
        let engine = engine.clone();
        tokio::spawn(async move {
            if let Err(e) = serve_conn(engine, stream).await {
                tracing::debug!("wire connection from {peer} closed: {e}");
            }
        });
    }
}

async fn serve_conn(engine: Weak<Engine>, mut stream: TcpStream) -> Result<(), WireError> {
    let _ = stream.set_nodelay(true);
    let me = match engine.upgrade() {
        Some(e) => e.node_id().to_string(),
        None => return Ok(()),
    };
    let hello = match read_frame(&mut stream).await? {
        Some(f) if f.kind == FrameKind::Hello => f,
        _ => return Err(WireError::BadJson("expected HELLO".into())),
    };
    write_frame(&mut stream, &Frame::new(FrameKind::HelloAck, me.clone())).await?;
    if let Some(e) = engine.upgrade() {
        e.touch_node(&hello.node);
    }
    while let Some(f) = read_frame(&mut stream).await? {
        let Some(e) = engine.upgrade() else { return Ok(()) };
        match f.kind {
            FrameKind::Ping => {
                e.touch_node(&f.node);
                write_frame(&mut stream, &Frame::new(FrameKind::Pong, me.clone())).await?;
            }
            _ => e.on_frame(f),
        }
    }
    Ok(())
}
