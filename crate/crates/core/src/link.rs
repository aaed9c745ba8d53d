//! Byte-stream transports between the gateway and the device.
//!
//! Both ends only ever see `std::io::{Read, Write}`; the in-memory pipe
//! can hold every chunk back for a fixed delay to emulate a slow path.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender};

const CHUNK: usize = 64 << 10;
const PIPE_DEPTH: usize = 64;

/// Writing half of an in-memory pipe. Dropping it signals end of stream.
pub struct PipeWriter {
    tx: Sender<(Instant, Vec<u8>)>,
    delay: Duration,
}

/// Reading half of an in-memory pipe.
pub struct PipeReader {
    rx: Receiver<(Instant, Vec<u8>)>,
    buf: Vec<u8>,
    pos: usize,
}

/// Unidirectional pipe; each write becomes visible `delay` after it was made.
pub fn pipe(delay: Duration) -> (PipeWriter, PipeReader) {
    let (tx, rx) = bounded(PIPE_DEPTH);
    (
        PipeWriter { tx, delay },
        PipeReader {
            rx,
            buf: Vec::new(),
            pos: 0,
        },
    )
}

impl Write for PipeWriter {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        let n = data.len().min(CHUNK);
        let due = Instant::now() + self.delay;
        self.tx
            .send((due, data[..n].to_vec()))
            .map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.buf.len() {
            let Ok((due, chunk)) = self.rx.recv() else {
                return Ok(0);
            };
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
            self.buf = chunk;
            self.pos = 0;
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// One end of a bidirectional connection, already split into halves.
pub struct Endpoint {
    pub reader: Box<dyn Read + Send>,
    pub writer: Box<dyn Write + Send>,
}

/// Connected pair of in-memory endpoints with the same one-way delay in
/// both directions.
pub fn duplex(one_way_delay: Duration) -> (Endpoint, Endpoint) {
    let (aw, br) = pipe(one_way_delay);
    let (bw, ar) = pipe(one_way_delay);
    (
        Endpoint {
            reader: Box::new(ar),
            writer: Box::new(aw),
        },
        Endpoint {
            reader: Box::new(br),
            writer: Box::new(bw),
        },
    )
}

/// Write half of a TCP stream that half-closes the connection on drop, so
/// the peer sees end of stream while replies can still flow back.
struct TcpWriteHalf(TcpStream);

impl Write for TcpWriteHalf {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()
    }
}

impl Drop for TcpWriteHalf {
    fn drop(&mut self) {
        let _ = self.0.shutdown(Shutdown::Write);
    }
}

impl Endpoint {
    pub fn tcp(stream: TcpStream) -> io::Result<Endpoint> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(Endpoint {
            reader: Box::new(reader),
            writer: Box::new(TcpWriteHalf(stream)),
        })
    }
}
