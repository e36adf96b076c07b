//! Byte-stream transports a [`Connection`](crate::Connection) runs over.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::Duration;

/// Closes both directions of the underlying stream, unblocking any reader.
pub type Closer = Box<dyn Fn() + Send + Sync>;

pub struct Halves {
    pub reader: Box<dyn Read + Send>,
    pub writer: Box<dyn Write + Send>,
    pub closer: Closer,
}

pub trait Transport: Send {
    fn into_halves(self) -> io::Result<Halves>;
}

impl Transport for TcpStream {
    fn into_halves(self) -> io::Result<Halves> {
        self.set_nodelay(true)?;
        let reader = self.try_clone()?;
        let killer = self.try_clone()?;
        Ok(Halves {
            reader: Box::new(reader),
            writer: Box::new(self),
            closer: Box::new(move || {
                let _ = killer.shutdown(Shutdown::Both);
            }),
        })
    }
}

/// One end of an in-process byte pipe pair, see [`duplex`].
pub struct MemoryStream {
    rx: Receiver<Vec<u8>>,
    tx: Sender<Vec<u8>>,
    closed: Arc<AtomicBool>,
}

/// Two connected in-memory endpoints. Closing either one closes the pair,
/// the way a dropped TCP connection is seen from both sides.
pub fn duplex() -> (MemoryStream, MemoryStream) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    let closed = Arc::new(AtomicBool::new(false));
    (
        MemoryStream {
            rx: rx_a,
            tx: tx_a,
            closed: closed.clone(),
        },
        MemoryStream { rx: rx_b, tx: tx_b, closed },
    )
}

struct MemoryReader {
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    offset: usize,
    closed: Arc<AtomicBool>,
}

impl Read for MemoryReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        while self.offset == self.pending.len() {
            if self.closed.load(Ordering::SeqCst) {
                return Ok(0);
            }
            match self.rx.recv_timeout(Duration::from_millis(20)) {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.offset = 0;
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.offset);
        buf[..n].copy_from_slice(&self.pending[self.offset..self.offset + n]);
        self.offset += n;
        Ok(n)
    }
}

struct MemoryWriter {
    tx: Sender<Vec<u8>>,
    closed: Arc<AtomicBool>,
}

impl Write for MemoryWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(io::ErrorKind::BrokenPipe.into());
        }
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Transport for MemoryStream {
    fn into_halves(self) -> io::Result<Halves> {
        let closed = self.closed.clone();
        Ok(Halves {
            reader: Box::new(MemoryReader {
                rx: self.rx,
                pending: Vec::new(),
                offset: 0,
                closed: self.closed.clone(),
            }),
            writer: Box::new(MemoryWriter {
                tx: self.tx,
                closed: self.closed,
            }),
            closer: Box::new(move || closed.store(true, Ordering::SeqCst)),
        })
    }
}
