// Licensed under the Apache-2.0 license

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::{take_frame, Frame, FrameTransport, TransportError, DEFAULT_RECV_TIMEOUT};

/// Frames over a TCP stream. The byte format is the same as on the
/// in-memory channel.
#[derive(Debug)]
pub struct TcpTransport {
    stream: TcpStream,
    buf: Vec<u8>,
    timeout: Duration,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        TcpTransport {
            stream,
            buf: Vec::new(),
            timeout: DEFAULT_RECV_TIMEOUT,
        }
    }

    /// Dials `addr`, giving up after `timeout`.
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, TransportError> {
        let mut last = None;
        for sa in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&sa, timeout) {
                Ok(s) => {
                    let mut t = TcpTransport::new(s);
                    t.timeout = timeout;
                    return Ok(t);
                }
                Err(e) => last = Some(e),
            }
        }
        Err(match last {
            Some(e) if e.kind() == ErrorKind::TimedOut => TransportError::Timeout,
            Some(e) => TransportError::Io(e),
            None => TransportError::Io(std::io::Error::new(
                ErrorKind::InvalidInput,
                "address resolved to nothing",
            )),
        })
    }

    pub fn peer_addr(&self) -> Option<std::net::SocketAddr> {
        self.stream.peer_addr().ok()
    }
}

impl FrameTransport for TcpTransport {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        self.stream.write_all(&frame.encode())?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, TransportError> {
        let deadline = Instant::now() + self.timeout;
        let mut chunk = [0u8; 4096];
        loop {
            if let Some(frame) = take_frame(&mut self.buf)? {
                return Ok(frame);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::Timeout);
            }
            self.stream.set_read_timeout(Some(left))?;
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(TransportError::ChannelClosed),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(TransportError::Timeout)
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::FrameType;
    use std::net::TcpListener;

    #[test]
    fn loopback_round_trip_and_timeout() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            let mut t = TcpTransport::new(s);
            let f = t.recv().unwrap();
            t.send(&f).unwrap();
            t.set_timeout(Duration::from_millis(50));
            assert!(matches!(t.recv(), Err(TransportError::Timeout)));
        });
        let mut c = TcpTransport::connect(addr, Duration::from_secs(2)).unwrap();
        let f = Frame::new(FrameType::M2, vec![5; 300]);
        c.send(&f).unwrap();
        assert_eq!(c.recv().unwrap(), f);
        server.join().unwrap();
        assert!(matches!(c.recv(), Err(TransportError::ChannelClosed)));
    }
}
