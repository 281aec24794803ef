//! WebSocket front end: one trial per connection (two connections for
//! human-human sessions when each joystick has its own client).

use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::vrnn::VrnnModel;

use super::io::{MultiIo, SessionIo, WsIo};
use super::{run_trial, SessionConfig, TrialLog};

pub struct ServerHandle {
    pub addr: SocketAddr,
    handle: JoinHandle<Result<Vec<TrialLog>>>,
}

impl ServerHandle {
    /// Waits for the server to finish its trials.
    pub fn join(self) -> Result<Vec<TrialLog>> {
        self.handle
            .join()
            .map_err(|_| Error::Transport("server thread panicked".into()))?
    }
}

/// Accepts one TCP connection and completes the WebSocket handshake.
pub fn accept_ws(listener: &TcpListener) -> Result<WsIo> {
    let (stream, _) = listener
        .accept()
        .map_err(|e| Error::Transport(e.to_string()))?;
    let ws = tungstenite::accept(stream).map_err(|e| Error::Transport(e.to_string()))?;
    WsIo::new(ws)
}

/// Serves trials sequentially on `listener`. `clients_per_trial` is 1, or 2
/// for human-human sessions with separate joysticks. Stops after
/// `max_trials` trials when given. Logs are written to `log_dir` as
/// `trial-NNNN.json`. Each trial uses `cfg.seed + n` as its seed.
pub fn serve(
    listener: TcpListener,
    cfg: SessionConfig,
    model: Option<Arc<VrnnModel>>,
    clients_per_trial: usize,
    max_trials: Option<usize>,
    log_dir: Option<PathBuf>,
) -> Result<ServerHandle> {
    cfg.validate()?;
    if !(1..=2).contains(&clients_per_trial) {
        return Err(Error::Invalid(format!(
            "clients per trial must be 1 or 2, got {clients_per_trial}"
        )));
    }
    let addr = listener
        .local_addr()
        .map_err(|e| Error::Transport(e.to_string()))?;
    let handle = std::thread::spawn(move || {
        let mut logs = Vec::new();
        let mut n = 0usize;
        while max_trials.is_none_or(|m| n < m) {
            let mut clients: Vec<Box<dyn SessionIo + Send>> = Vec::new();
            for _ in 0..clients_per_trial {
                clients.push(Box::new(accept_ws(&listener)?));
            }
            let mut io = MultiIo { clients };
            let trial_cfg = SessionConfig {
                seed: cfg.seed.wrapping_add(n as u64),
                ..cfg.clone()
            };
            let log = run_trial(&trial_cfg, model.clone(), &mut io)?;
            if let Some(dir) = &log_dir {
                log.save(&dir.join(format!("trial-{n:04}.json")))?;
            }
            logs.push(log);
            n += 1;
        }
        Ok(logs)
    });
    Ok(ServerHandle { addr, handle })
}
