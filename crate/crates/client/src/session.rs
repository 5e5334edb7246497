//! The submission end of the line protocol.

use std::cell::{Cell, RefCell};
use std::io::{self, BufRead, BufReader, Stdin, Stdout, Write};

use maestro_arena::protocol::{encode, ClientMessage, ServerMessage};
use maestro_core::oracle::{Capability, Oracle};
use maestro_core::{Error, Result, Tensor};

/// One protocol conversation over a reader and writer, normally the
/// process's standard streams.
pub struct Session<R, W> {
    reader: R,
    writer: W,
}

impl Session<BufReader<Stdin>, Stdout> {
    pub fn stdio() -> Self {
        Self::new(BufReader::new(io::stdin()), io::stdout())
    }
}

fn invalid(message: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, message)
}

impl<R: BufRead, W: Write> Session<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer }
    }

    /// Next message from the judge.
    pub fn receive(&mut self) -> io::Result<ServerMessage> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "judge closed the session"));
        }
        serde_json::from_str(&line).map_err(|e| invalid(format!("unreadable judge message: {e}")))
    }

    pub fn send(&mut self, message: &ClientMessage) -> io::Result<()> {
        self.writer.write_all(encode(message).as_bytes())?;
        self.writer.flush()
    }

    pub fn request(&mut self, message: &ClientMessage) -> io::Result<ServerMessage> {
        self.send(message)?;
        self.receive()
    }
}

/// An [`Oracle`] answered by the judge over a [`Session`].
///
/// The capability is whatever the submission was granted; the judge refuses
/// anything beyond it. `num_classes` is learned from the first prediction
/// and is 0 before that.
pub struct RemoteOracle<'s, R, W> {
    session: RefCell<&'s mut Session<R, W>>,
    capability: Capability,
    query_budget: Option<u64>,
    queries: Cell<u64>,
    gradient_queries: Cell<u64>,
    num_classes: Cell<usize>,
}

impl<'s, R: BufRead, W: Write> RemoteOracle<'s, R, W> {
    pub fn new(session: &'s mut Session<R, W>, capability: Capability, query_budget: Option<u64>) -> Self {
        Self {
            session: RefCell::new(session),
            capability,
            query_budget,
            queries: Cell::new(0),
            gradient_queries: Cell::new(0),
            num_classes: Cell::new(0),
        }
    }

    fn exchange(&self, message: ClientMessage) -> Result<ServerMessage> {
        match self.session.borrow_mut().request(&message)? {
            ServerMessage::Error { message } if message.starts_with("capability error") => Err(Error::Capability(message)),
            ServerMessage::Error { message } => Err(Error::Input(format!("judge refused request: {message}"))),
            reply => Ok(reply),
        }
    }
}

fn unexpected(reply: ServerMessage) -> Error {
    Error::Io(invalid(format!("unexpected judge reply {reply:?}")))
}

impl<R: BufRead, W: Write> Oracle for RemoteOracle<'_, R, W> {
    fn capability(&self) -> Capability {
        self.capability
    }

    fn num_classes(&self) -> usize {
        self.num_classes.get()
    }

    fn predict(&self, images: &Tensor) -> Result<Tensor> {
        match self.exchange(ClientMessage::Predict { images: images.to_rows() })? {
            ServerMessage::Prediction { probs } => {
                self.queries.set(self.queries.get() + images.rows() as u64);
                let probs = Tensor::from_rows(&probs)?;
                self.num_classes.set(probs.row_len());
                Ok(probs)
            }
            other => Err(unexpected(other)),
        }
    }

    fn gradient(&self, images: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        match self.exchange(ClientMessage::Gradient { images: images.to_rows(), labels: labels.to_vec() })? {
            ServerMessage::GradientResult { loss, grads } => {
                self.gradient_queries.set(self.gradient_queries.get() + images.rows() as u64);
                let grads = Tensor::new(images.shape().to_vec(), Tensor::from_rows(&grads)?.into_data())?;
                Ok((loss, grads))
            }
            other => Err(unexpected(other)),
        }
    }

    fn queries_used(&self) -> u64 {
        self.queries.get()
    }

    fn gradient_queries_used(&self) -> u64 {
        self.gradient_queries.get()
    }

    fn query_budget(&self) -> Option<u64> {
        self.query_budget
    }
}
