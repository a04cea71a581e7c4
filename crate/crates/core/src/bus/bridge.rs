//! TCP bridge so agents in other processes can use a bus.
//!
//! Each frame is a big-endian `u32` byte length followed by one JSON
//! [`AgentMessage`]. A client subscribes by sending a message on
//! [`SUBSCRIBE_TOPIC`] whose payload is `{"topic": "<name>"}`; every other
//! frame is published as is. Deliveries come back as frames.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::json;

use super::{AgentBus, AgentMessage, MessageKind, SenderRole};

pub const SUBSCRIBE_TOPIC: &str = "$bridge.subscribe";
pub const MAX_FRAME_LEN: u32 = 1 << 20;

pub(crate) fn write_frame(w: &mut impl Write, msg: &AgentMessage) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    let len = u32::try_from(body.len()).ok().filter(|l| *l <= MAX_FRAME_LEN).ok_or_else(|| io::Error::other("frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

pub(crate) fn read_frame(r: &mut impl Read) -> io::Result<AgentMessage> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

fn serve_connection(bus: Arc<AgentBus>, stream: TcpStream) {
    let writer = match stream.try_clone() {
        Ok(w) => Arc::new(Mutex::new(w)),
        Err(_) => return,
    };
    let mut reader = stream;
    let mut subscriptions = Vec::new();
    loop {
        let msg = match read_frame(&mut reader) {
            Ok(m) => m,
            Err(e) => {
                if e.kind() != io::ErrorKind::UnexpectedEof {
                    tracing::debug!(error = %e, "bridge connection closed");
                }
                break;
            }
        };
        if msg.topic == SUBSCRIBE_TOPIC {
            let Some(topic) = msg.payload.get("topic").and_then(|t| t.as_str()) else { continue };
            let w = writer.clone();
            match bus.subscribe(topic, move |m| {
                let _ = write_frame(&mut *w.lock().expect("writer lock"), &m);
            }) {
                Ok(s) => subscriptions.push(s),
                Err(_) => break,
            }
        } else if let Err(e) = bus.publish(msg) {
            tracing::debug!(error = %e, "bridge publish refused");
        }
    }
    let _ = reader.shutdown(std::net::Shutdown::Both);
    drop(subscriptions);
}

#[derive(Debug)]
pub struct BridgeServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl BridgeServer {
    pub fn bind(bus: Arc<AgentBus>, addr: impl ToSocketAddrs) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = std::thread::Builder::new().name("bus-bridge".into()).spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(s) = stream {
                    let bus = bus.clone();
                    let _ = std::thread::Builder::new().name("bus-bridge-conn".into()).spawn(move || serve_connection(bus, s));
                }
            }
        })?;
        Ok(Self { addr, stop, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

#[derive(Debug)]
pub struct BridgeClient {
    stream: TcpStream,
}

impl BridgeClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn publish(&mut self, msg: &AgentMessage) -> io::Result<()> {
        write_frame(&mut self.stream, msg)
    }

    pub fn subscribe(&mut self, topic: &str) -> io::Result<()> {
        let msg = AgentMessage::new(SUBSCRIBE_TOPIC, SenderRole::Harness, MessageKind::Event, json!({ "topic": topic }));
        write_frame(&mut self.stream, &msg)
    }

    /// Next delivered message; `None` when nothing arrives within `timeout`.
    pub fn recv(&mut self, timeout: Duration) -> io::Result<Option<AgentMessage>> {
        self.stream.set_read_timeout(Some(timeout))?;
        match read_frame(&mut self.stream) {
            Ok(m) => Ok(Some(m)),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e),
        }
    }
}
