//! Optional UDP transport for the canonical wire format: one encoded
//! message per datagram. Exercised by integration tests only; the
//! simulator uses the in-process transport.

use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};

use super::{decode, encode, CodecError, Message};

/// Largest datagram we accept; the sizing contract keeps encoded messages
/// for tables of up to 256 entries under this bound.
pub const MAX_DATAGRAM: usize = 64 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum UdpError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Message-oriented wrapper over a bound UDP socket.
pub struct UdpTransport {
    socket: UdpSocket,
}

impl UdpTransport {
    pub fn bind(addr: impl ToSocketAddrs) -> io::Result<Self> {
        Ok(UdpTransport { socket: UdpSocket::bind(addr)? })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn send_to(&self, msg: &Message, addr: impl ToSocketAddrs) -> Result<usize, UdpError> {
        let bytes = encode(msg)?;
        Ok(self.socket.send_to(&bytes, addr)?)
    }

    pub fn recv_from(&self) -> Result<(Message, SocketAddr), UdpError> {
        let mut buf = vec![0u8; MAX_DATAGRAM];
        let (len, from) = self.socket.recv_from(&mut buf)?;
        let msg = decode(&buf[..len])?;
        Ok((msg, from))
    }
}
