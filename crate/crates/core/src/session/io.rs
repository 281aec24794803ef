//! Transports between the tick loop and its clients.

use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tungstenite::{Message as WsMessage, WebSocket};

use crate::error::{Error, Result};
use crate::sim::Policy;

use super::protocol::{
    AgentId, Envelope, InputPayload, Message, TuringAnswer, TuringResponsePayload,
};

/// Server side of a session transport. Errors mean the client is gone.
pub trait SessionIo {
    /// Messages received since the last call, without blocking.
    fn poll(&mut self) -> Result<Vec<Envelope>>;
    /// Waits up to `timeout` for one message.
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>>;
    fn send(&mut self, msg: &Envelope) -> Result<()>;
}

/// Transport with no client: sends are dropped, nothing arrives.
#[derive(Debug, Default)]
pub struct NullIo;

impl SessionIo for NullIo {
    fn poll(&mut self) -> Result<Vec<Envelope>> {
        Ok(Vec::new())
    }

    fn recv_timeout(&mut self, _timeout: Duration) -> Result<Option<Envelope>> {
        Ok(None)
    }

    fn send(&mut self, _msg: &Envelope) -> Result<()> {
        Ok(())
    }
}

/// In-process transport. Messages travel as encoded JSON so the wire
/// format is exercised.
#[derive(Debug)]
pub struct ChannelIo {
    tx: Sender<String>,
    rx: Receiver<String>,
}

/// Connected server and client ends.
pub fn loopback() -> (ChannelIo, ChannelIo) {
    let (a_tx, a_rx) = mpsc::channel();
    let (b_tx, b_rx) = mpsc::channel();
    (
        ChannelIo { tx: a_tx, rx: b_rx },
        ChannelIo { tx: b_tx, rx: a_rx },
    )
}

fn disconnected() -> Error {
    Error::Transport("client disconnected".into())
}

impl SessionIo for ChannelIo {
    fn poll(&mut self) -> Result<Vec<Envelope>> {
        let mut out = Vec::new();
        loop {
            match self.rx.try_recv() {
                Ok(text) => out.push(Envelope::decode(&text)?),
                Err(TryRecvError::Empty) => return Ok(out),
                Err(TryRecvError::Disconnected) => {
                    return if out.is_empty() {
                        Err(disconnected())
                    } else {
                        Ok(out)
                    }
                }
            }
        }
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>> {
        match self.rx.recv_timeout(timeout) {
            Ok(text) => Envelope::decode(&text).map(Some),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(disconnected()),
        }
    }

    fn send(&mut self, msg: &Envelope) -> Result<()> {
        self.tx.send(msg.encode()).map_err(|_| disconnected())
    }
}

/// Several clients behind one transport, e.g. one per joystick. Sends go
/// to every client; losing any client is a disconnect.
pub struct MultiIo {
    pub clients: Vec<Box<dyn SessionIo + Send>>,
}

impl SessionIo for MultiIo {
    fn poll(&mut self) -> Result<Vec<Envelope>> {
        let mut out = Vec::new();
        for c in &mut self.clients {
            out.extend(c.poll()?);
        }
        Ok(out)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>> {
        let deadline = Instant::now() + timeout;
        let slice = Duration::from_millis(1);
        loop {
            for c in &mut self.clients {
                if let Some(m) = c.recv_timeout(Duration::ZERO)? {
                    return Ok(Some(m));
                }
            }
            if Instant::now() >= deadline {
                return Ok(None);
            }
            std::thread::sleep(slice);
        }
    }

    fn send(&mut self, msg: &Envelope) -> Result<()> {
        for c in &mut self.clients {
            c.send(msg)?;
        }
        Ok(())
    }
}

/// WebSocket transport over a blocking TCP stream. Reads use a short
/// socket timeout so `poll` never stalls the tick.
pub struct WsIo {
    ws: WebSocket<TcpStream>,
}

const WS_POLL_TIMEOUT: Duration = Duration::from_micros(500);

impl WsIo {
    pub fn new(ws: WebSocket<TcpStream>) -> Result<Self> {
        ws.get_ref()
            .set_nodelay(true)
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(WsIo { ws })
    }

    fn read_one(&mut self, timeout: Duration) -> Result<Option<Envelope>> {
        let t = if timeout.is_zero() {
            WS_POLL_TIMEOUT
        } else {
            timeout
        };
        self.ws
            .get_ref()
            .set_read_timeout(Some(t))
            .map_err(|e| Error::Transport(e.to_string()))?;
        loop {
            match self.ws.read() {
                Ok(WsMessage::Text(text)) => return Envelope::decode(&text).map(Some),
                Ok(WsMessage::Close(_)) => return Err(disconnected()),
                Ok(_) => continue,
                Err(tungstenite::Error::Io(e))
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) =>
                {
                    return Ok(None)
                }
                Err(e) => return Err(Error::Transport(e.to_string())),
            }
        }
    }
}

impl SessionIo for WsIo {
    fn poll(&mut self) -> Result<Vec<Envelope>> {
        let mut out = Vec::new();
        while let Some(m) = self.read_one(Duration::ZERO)? {
            out.push(m);
        }
        Ok(out)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>> {
        self.read_one(timeout)
    }

    fn send(&mut self, msg: &Envelope) -> Result<()> {
        self.ws
            .send(WsMessage::text(msg.encode()))
            .map_err(|e| Error::Transport(e.to_string()))
    }
}

/// Client that answers every state message with the input of a local
/// policy, tagged with the state's tick, and answers the Turing prompt.
pub struct ScriptedClient<P: Policy> {
    pub agent: AgentId,
    pub policy: P,
    pub answer: TuringAnswer,
    /// Stop responding after this many state messages, simulating a
    /// dropped connection.
    pub drop_after: Option<u64>,
}

impl<P: Policy> ScriptedClient<P> {
    /// Serves until the session closes the channel or the trial ends.
    /// Returns the number of inputs sent.
    pub fn run(mut self, mut io: ChannelIo) -> u64 {
        let mut sent = 0u64;
        let mut states = 0u64;
        while let Ok(Some(env)) = io.recv_timeout(Duration::from_secs(60)) {
            match env.msg {
                Message::State(s) => {
                    states += 1;
                    if self.drop_after.is_some_and(|d| states > d) {
                        return sent;
                    }
                    let a = self.policy.act(env.tick, &s.table_state(), &[]);
                    let input = Message::Input(InputPayload {
                        agent: self.agent,
                        fx: a.fx,
                        fy: a.fy,
                    });
                    if io.send(&Envelope::new(env.tick, input)).is_err() {
                        return sent;
                    }
                    sent += 1;
                }
                Message::TuringPrompt(_) => {
                    let r = Message::TuringResponse(TuringResponsePayload {
                        answer: self.answer,
                    });
                    let _ = io.send(&Envelope::new(env.tick, r));
                    return sent;
                }
                _ => {}
            }
        }
        sent
    }
}

impl<P: Policy + Send + 'static> ScriptedClient<P> {
    pub fn spawn(self, io: ChannelIo) -> JoinHandle<u64> {
        std::thread::spawn(move || self.run(io))
    }
}
