//! Blocking TCP transport: one thread per accepted connection, requests
//! answered by zero or more informational messages and exactly one `Ack` or
//! `Error` carrying the request's correlation id.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::{Ack, Body, Codec, Error, Message, WireError};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
const IO_TIMEOUT: Duration = Duration::from_secs(300);

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub fn next_correlation_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub struct Connection {
    stream: TcpStream,
    codec: Codec,
}

impl Connection {
    pub fn connect(address: &str) -> Result<Self, WireError> {
        let connect_err = |source| WireError::Connect { address: address.to_string(), source };
        let addrs: Vec<SocketAddr> = address.to_socket_addrs().map_err(connect_err)?.collect();
        let mut last = std::io::Error::new(std::io::ErrorKind::NotFound, "no address resolved");
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
                Ok(stream) => return Ok(Connection::from_stream(stream)),
                Err(e) => last = e,
            }
        }
        Err(connect_err(last))
    }

    pub fn from_stream(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        let _ = stream.set_read_timeout(Some(IO_TIMEOUT));
        let _ = stream.set_write_timeout(Some(IO_TIMEOUT));
        Connection { stream, codec: Codec::default() }
    }

    pub fn send(&mut self, message: &Message) -> Result<(), WireError> {
        let frame = self.codec.encode(message)?;
        self.stream.write_all(&frame)?;
        Ok(())
    }

    /// Reads the next frame. `Ok(None)` on a clean end of stream.
    pub fn recv(&mut self) -> Result<Option<Message>, WireError> {
        let mut prefix = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            match self.stream.read(&mut prefix[filled..])? {
                0 if filled == 0 => return Ok(None),
                0 => return Err(WireError::IncompleteFrame { needed: 4, available: filled }),
                n => filled += n,
            }
        }
        let len = self.codec.frame_length(&prefix)?;
        let mut payload = vec![0u8; len];
        self.stream.read_exact(&mut payload).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => WireError::IncompleteFrame { needed: len + 4, available: 4 },
            _ => WireError::Io(e),
        })?;
        self.codec.decode_payload(&payload).map(Some)
    }

    pub fn recv_required(&mut self) -> Result<Message, WireError> {
        self.recv()?.ok_or_else(|| WireError::Protocol("connection closed mid-exchange".into()))
    }

    /// Sends `requests` (all with one fresh correlation id) and collects the
    /// informational replies up to the terminal `Ack`.
    pub fn exchange(&mut self, requests: Vec<Body>) -> Result<(Vec<Body>, Ack), WireError> {
        let id = next_correlation_id();
        for body in requests {
            self.send(&Message { correlation_id: id, body })?;
        }
        let mut replies = Vec::new();
        loop {
            let msg = self.recv_required()?;
            if msg.correlation_id != id {
                return Err(WireError::Protocol(format!(
                    "expected correlation id {id}, got {}",
                    msg.correlation_id
                )));
            }
            match msg.body {
                Body::Ack(ack) => return Ok((replies, ack)),
                Body::Error(e) => return Err(WireError::Remote { code: e.code, message: e.message }),
                other => replies.push(other),
            }
        }
    }

    pub fn request(&mut self, body: impl Into<Body>) -> Result<(Vec<Body>, Ack), WireError> {
        self.exchange(vec![body.into()])
    }
}

/// One-shot request over a fresh connection.
pub fn request(address: &str, body: impl Into<Body>) -> Result<(Vec<Body>, Ack), WireError> {
    Connection::connect(address)?.request(body)
}

/// Handles requests arriving on a server connection.
pub trait Handler: Send + Sync + 'static {
    /// Processes the request in `first`, reading any follow-up frames of the
    /// same exchange from `conn` and writing the replies, terminal one last.
    fn handle(&self, first: Message, conn: &mut Connection) -> Result<(), WireError>;
}

/// Replies helper for handlers.
pub struct Reply<'a> {
    pub conn: &'a mut Connection,
    pub correlation_id: u64,
}

impl Reply<'_> {
    pub fn info(&mut self, body: impl Into<Body>) -> Result<(), WireError> {
        self.conn.send(&Message { correlation_id: self.correlation_id, body: body.into() })
    }

    pub fn ack(self, detail: Option<String>) -> Result<(), WireError> {
        self.conn.send(&Message::new(self.correlation_id, Ack { detail }))
    }

    pub fn error(self, code: &str, message: impl ToString) -> Result<(), WireError> {
        self.conn.send(&Message::new(
            self.correlation_id,
            Error { code: code.to_string(), message: message.to_string() },
        ))
    }
}

/// A running TCP server. Dropping the handle does not stop it; call [`Server::shutdown`].
pub struct Server {
    address: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind(address: &str, handler: Arc<dyn Handler>) -> std::io::Result<Server> {
        let listener = TcpListener::bind(address)?;
        Ok(Server::start(listener, handler))
    }

    pub fn start(listener: TcpListener, handler: Arc<dyn Handler>) -> Server {
        let address = listener.local_addr().expect("bound listener has an address");
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let thread = thread::Builder::new()
            .name(format!("accept-{address}"))
            .spawn(move || {
                for stream in listener.incoming() {
                    if stop_flag.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let handler = handler.clone();
                    let _ = thread::Builder::new().name("conn".into()).spawn(move || serve_connection(stream, handler));
                }
            })
            .expect("spawn accept thread");
        Server { address, stop, thread: Some(thread) }
    }

    pub fn address(&self) -> SocketAddr {
        self.address
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.address, Duration::from_millis(200));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve_connection(stream: TcpStream, handler: Arc<dyn Handler>) {
    let mut conn = Connection::from_stream(stream);
    loop {
        match conn.recv() {
            Ok(Some(msg)) => {
                let id = msg.correlation_id;
                if let Err(e) = handler.handle(msg, &mut conn) {
                    tracing::warn!(error = %e, "request handling failed");
                    let reply = Reply { conn: &mut conn, correlation_id: id };
                    if reply.error("internal", e).is_err() {
                        return;
                    }
                }
            }
            Ok(None) => return,
            Err(e) => {
                tracing::debug!(error = %e, "dropping connection");
                return;
            }
        }
    }
}
