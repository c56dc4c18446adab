//! Frame transports: in-process queues and TCP streams carry the same bytes.

use std::collections::HashMap;
use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{frame_decode, read_frame, Frame};
use super::{ChannelError, PartyId};

/// Environment variable that overrides the configured bind address.
pub const BIND_ENV: &str = "FGS_BIND";

/// `FGS_BIND` if set, else `configured`.
pub fn bind_address(configured: &str) -> String {
    std::env::var(BIND_ENV)
        .ok()
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| configured.to_string())
}

pub trait Transport: Send {
    fn id(&self) -> PartyId;

    /// Sends one frame and returns its size on the wire.
    fn send(&mut self, to: PartyId, frame: &Frame) -> Result<usize, ChannelError>;

    /// Next frame from any peer, or `Timeout`.
    fn recv(&mut self, timeout: Duration) -> Result<Frame, ChannelError>;
}

pub struct InProcEndpoint {
    id: PartyId,
    peers: HashMap<PartyId, Sender<Vec<u8>>>,
    inbox: Receiver<Vec<u8>>,
}

/// Fully connected in-process endpoints, one per id, in the given order.
pub fn inproc_network(ids: &[PartyId]) -> Vec<InProcEndpoint> {
    let (senders, receivers): (Vec<_>, Vec<_>) = ids.iter().map(|_| channel::<Vec<u8>>()).unzip();
    let peers: HashMap<PartyId, Sender<Vec<u8>>> = ids.iter().copied().zip(senders).collect();
    ids.iter()
        .zip(receivers)
        .map(|(&id, inbox)| InProcEndpoint {
            id,
            peers: peers.clone(),
            inbox,
        })
        .collect()
}

impl Transport for InProcEndpoint {
    fn id(&self) -> PartyId {
        self.id
    }

    fn send(&mut self, to: PartyId, frame: &Frame) -> Result<usize, ChannelError> {
        let bytes = frame.encode()?;
        let n = bytes.len();
        self.peers
            .get(&to)
            .ok_or(ChannelError::UnknownPeer(to))?
            .send(bytes)
            .map_err(|_| ChannelError::Closed)?;
        Ok(n)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Frame, ChannelError> {
        let bytes = self.inbox.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => ChannelError::Timeout,
            RecvTimeoutError::Disconnected => ChannelError::Closed,
        })?;
        let (frame, used) = frame_decode(&bytes)?;
        if used != bytes.len() {
            return Err(ChannelError::Malformed("trailing bytes after frame".into()));
        }
        Ok(frame)
    }
}

/// TCP endpoint: one listener for inbound frames, lazily opened outbound
/// streams per peer.
pub struct TcpEndpoint {
    id: PartyId,
    local: SocketAddr,
    peers: HashMap<PartyId, SocketAddr>,
    conns: HashMap<PartyId, TcpStream>,
    inbox: Receiver<Result<Frame, ChannelError>>,
    connect_timeout: Duration,
}

impl TcpEndpoint {
    pub fn bind(
        id: PartyId,
        listen: &str,
        peers: HashMap<PartyId, SocketAddr>,
        connect_timeout: Duration,
    ) -> Result<Self, ChannelError> {
        let listener = TcpListener::bind(listen)?;
        let local = listener.local_addr()?;
        let (tx, inbox) = channel();
        thread::spawn(move || accept_loop(listener, tx));
        Ok(TcpEndpoint {
            id,
            local,
            peers,
            conns: HashMap::new(),
            inbox,
            connect_timeout,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn add_peer(&mut self, id: PartyId, addr: SocketAddr) {
        self.peers.insert(id, addr);
    }

    fn stream(&mut self, to: PartyId) -> Result<&mut TcpStream, ChannelError> {
        if !self.conns.contains_key(&to) {
            let addr = *self.peers.get(&to).ok_or(ChannelError::UnknownPeer(to))?;
            let deadline = Instant::now() + self.connect_timeout;
            let stream = loop {
                match TcpStream::connect(addr) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() >= deadline => return Err(e.into()),
                    Err(_) => thread::sleep(Duration::from_millis(50)),
                }
            };
            stream.set_nodelay(true)?;
            self.conns.insert(to, stream);
        }
        Ok(self.conns.get_mut(&to).expect("inserted above"))
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Result<Frame, ChannelError>>) {
    for conn in listener.incoming() {
        let Ok(mut stream) = conn else { continue };
        let tx = tx.clone();
        thread::spawn(move || loop {
            match read_frame(&mut stream) {
                Ok(Some(f)) => {
                    if tx.send(Ok(f)).is_err() {
                        return;
                    }
                }
                Ok(None) => return,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            }
        });
    }
}

impl Transport for TcpEndpoint {
    fn id(&self) -> PartyId {
        self.id
    }

    fn send(&mut self, to: PartyId, frame: &Frame) -> Result<usize, ChannelError> {
        let bytes = frame.encode()?;
        let stream = self.stream(to)?;
        if let Err(e) = stream.write_all(&bytes).and_then(|_| stream.flush()) {
            self.conns.remove(&to);
            return Err(e.into());
        }
        Ok(bytes.len())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Frame, ChannelError> {
        match self.inbox.recv_timeout(timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(ChannelError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(ChannelError::Closed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::MessageType;
    use super::*;

    #[test]
    fn test_inproc_delivery() {
        let mut eps = inproc_network(&[0, 1]);
        let mut b = eps.pop().unwrap();
        let mut a = eps.pop().unwrap();
        let f = Frame::new(MessageType::Hello, 3, 0, b"hi".to_vec());
        assert_eq!(a.send(1, &f).unwrap(), 13);
        assert_eq!(b.recv(Duration::from_secs(1)).unwrap(), f);
        assert_eq!(b.recv(Duration::from_millis(10)), Err(ChannelError::Timeout));
        assert_eq!(a.send(7, &f), Err(ChannelError::UnknownPeer(7)));
    }

    #[test]
    fn test_tcp_delivery() {
        let t = Duration::from_secs(5);
        let mut b = TcpEndpoint::bind(1, "127.0.0.1:0", HashMap::new(), t).unwrap();
        let peers = HashMap::from([(1, b.local_addr())]);
        let mut a = TcpEndpoint::bind(0, "127.0.0.1:0", peers, t).unwrap();
        let f1 = Frame::new(MessageType::PubKey, 1, 0, vec![7; 1000]);
        let f2 = Frame::new(MessageType::RoundEnd, 1, 0, vec![]);
        a.send(1, &f1).unwrap();
        a.send(1, &f2).unwrap();
        assert_eq!(b.recv(t).unwrap(), f1);
        assert_eq!(b.recv(t).unwrap(), f2);
    }
}
