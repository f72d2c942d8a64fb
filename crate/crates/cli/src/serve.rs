//! Websocket bridge: one live episode per connection, advanced at a fixed
//! tick rate from the latest operator input.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use nalgebra::Vector3;
use sharedctl::context::Classifier;
use sharedctl::sim::{compute_metrics, EpisodeConfig, EpisodeMode, EpisodeModels, EpisodeRunner, HumanOutput, Metrics, RobotPlan};
use tokio::net::{TcpListener, TcpStream};
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::Message;

use crate::commands::mode_name;
use crate::error::{CliError, CliResult};
use crate::formats::write_log;
use crate::protocol::{Action, SessionMessage, SessionStatus, StateBody};

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOptions {
    /// 0 picks a free port.
    pub port: u16,
    pub mode: EpisodeMode,
    pub tick_hz: f64,
    /// Episode seed of the first session; later episodes count up.
    pub seed: u64,
    pub log_dir: PathBuf,
}

struct Shared {
    cfg: EpisodeConfig,
    plan: Option<RobotPlan>,
    classifier: Option<Classifier>,
    opts: ServeOptions,
    episodes: AtomicU64,
}

impl Shared {
    fn models(&self) -> EpisodeModels<'_> {
        EpisodeModels { plan: self.plan.as_ref(), classifier: self.classifier.as_ref() }
    }
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Server {
    /// Binds on localhost; fails early when `opts.mode` lacks its models.
    pub async fn bind(
        cfg: EpisodeConfig,
        plan: Option<RobotPlan>,
        classifier: Option<Classifier>,
        opts: ServeOptions,
    ) -> CliResult<Self> {
        if !(opts.tick_hz > 0.0 && opts.tick_hz.is_finite()) {
            return Err(CliError::Usage(format!("tick rate must be positive, got {}", opts.tick_hz)));
        }
        let models = EpisodeModels { plan: plan.as_ref(), classifier: classifier.as_ref() };
        EpisodeRunner::new(opts.mode, models, &cfg, opts.seed)?;
        let listener = TcpListener::bind(("127.0.0.1", opts.port)).await?;
        let shared = Arc::new(Shared { cfg, plan, classifier, opts, episodes: AtomicU64::new(0) });
        Ok(Self { listener, shared })
    }

    pub fn local_addr(&self) -> CliResult<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections until the task is dropped.
    pub async fn run(self) -> CliResult<()> {
        loop {
            let (stream, _) = self.listener.accept().await?;
            let shared = Arc::clone(&self.shared);
            tokio::spawn(async move {
                if let Err(e) = handle(stream, shared).await {
                    eprintln!("session ended: {e}");
                }
            });
        }
    }
}

pub fn serve_blocking(
    cfg: EpisodeConfig,
    plan: Option<RobotPlan>,
    classifier: Option<Classifier>,
    opts: ServeOptions,
) -> CliResult<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let server = Server::bind(cfg, plan, classifier, opts).await?;
        eprintln!("listening on ws://{}", server.local_addr()?);
        server.run().await
    })
}

type Controls = ([bool; 2], bool);

struct Session<'m> {
    shared: &'m Shared,
    mode: EpisodeMode,
    runner: EpisodeRunner<'m>,
    status: SessionStatus,
    out_seq: u64,
    last_in: Option<u64>,
    /// Latest increment since the last tick; consumed by the tick.
    dp: Option<[Vector3<f64>; 2]>,
    /// Grip/clutch changes not yet applied, one per tick.
    edges: VecDeque<Controls>,
    queued: Controls,
    applied: Controls,
    engaged: bool,
    masters: [Vector3<f64>; 2],
    summary: Option<Metrics>,
    log: Option<String>,
}

impl<'m> Session<'m> {
    fn new(shared: &'m Shared, mode: EpisodeMode, out_seq: u64, last_in: Option<u64>) -> CliResult<Self> {
        let seed = shared.opts.seed + shared.episodes.fetch_add(1, Ordering::SeqCst);
        let runner = EpisodeRunner::new(mode, shared.models(), &shared.cfg, seed)?;
        Ok(Self {
            shared,
            mode,
            runner,
            status: SessionStatus::Idle,
            out_seq,
            last_in,
            dp: None,
            edges: VecDeque::new(),
            queued: ([false; 2], false),
            applied: ([false; 2], false),
            engaged: true,
            masters: [Vector3::zeros(); 2],
            summary: None,
            log: None,
        })
    }

    fn next_seq(&mut self) -> u64 {
        let s = self.out_seq;
        self.out_seq += 1;
        s
    }

    fn error(&mut self, ack: Option<u64>, message: impl Into<String>) -> SessionMessage {
        SessionMessage::Error { seq: self.next_seq(), ack, message: message.into() }
    }

    fn snapshot(&mut self) -> SessionMessage {
        let s = self.runner.state();
        let last = self.runner.log().steps.last();
        let body = StateBody {
            status: self.status,
            episode_mode: self.mode,
            clock: s.clock,
            phase: s.phase,
            tools: s.tools,
            peg: s.peg,
            alpha: last.map_or(1.0, |r| r.alpha),
            probs: last.and_then(|r| r.probs),
            mode: last.map(|r| r.mode),
            engaged: self.engaged,
            masters: self.masters,
            summary: self.summary,
            log: self.log.clone(),
        };
        SessionMessage::State { seq: self.next_seq(), body: Box::new(body) }
    }

    /// Replies to one client text frame.
    fn on_text(&mut self, text: &str) -> Vec<SessionMessage> {
        let msg: SessionMessage = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return vec![self.error(None, format!("malformed message: {e}"))],
        };
        let seq = msg.seq();
        if self.last_in.is_some_and(|l| seq <= l) {
            return vec![self.error(Some(seq), "sequence number must increase")];
        }
        self.last_in = Some(seq);
        match msg {
            SessionMessage::Input { dp, clutch, grip, .. } => {
                if self.status != SessionStatus::Running {
                    return vec![self.error(Some(seq), "session not running")];
                }
                if dp.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
                    return vec![self.error(Some(seq), "non-finite increment")];
                }
                self.dp = Some(dp);
                if (grip, clutch) != self.queued {
                    self.queued = (grip, clutch);
                    self.edges.push_back(self.queued);
                }
                Vec::new()
            }
            SessionMessage::Control { action, mode, .. } => self.on_control(seq, action, mode),
            _ => vec![self.error(Some(seq), "unexpected message type")],
        }
    }

    fn on_control(&mut self, seq: u64, action: Action, mode: Option<EpisodeMode>) -> Vec<SessionMessage> {
        match action {
            Action::Start if self.status == SessionStatus::Finished => {
                return vec![self.error(Some(seq), "episode finished; reset first")];
            }
            Action::Start => self.status = SessionStatus::Running,
            Action::Pause if self.status != SessionStatus::Running => {
                return vec![self.error(Some(seq), "session not running")];
            }
            Action::Pause => self.status = SessionStatus::Paused,
            Action::Reset => {
                match Session::new(self.shared, mode.unwrap_or(self.mode), self.out_seq, self.last_in) {
                    Ok(s) => *self = s,
                    Err(e) => return vec![self.error(Some(seq), e.to_string())],
                }
            }
        }
        let ack = SessionMessage::Ack { seq: self.next_seq(), ack: seq, status: self.status };
        vec![ack, self.snapshot()]
    }

    /// One control step from the pending input.
    fn tick(&mut self) -> Vec<SessionMessage> {
        if self.status != SessionStatus::Running {
            return Vec::new();
        }
        let dp = self.dp.take().unwrap_or([Vector3::zeros(); 2]);
        if let Some(e) = self.edges.pop_front() {
            self.applied = e;
        }
        let (grip, clutch) = self.applied;
        let engaged = !clutch;
        let clutch_event = engaged && !self.engaged;
        self.engaged = engaged;
        let masters = &mut self.masters;
        let stepped = self.runner.step(|_, alpha| {
            let dph = if engaged { dp } else { [Vector3::zeros(); 2] };
            for (m, d) in masters.iter_mut().zip(&dph) {
                *m += alpha * d;
            }
            HumanOutput { dph, grip, engaged, masters: *masters, clutch_event }
        });
        if let Err(e) = stepped {
            self.status = SessionStatus::Paused;
            return vec![self.error(None, format!("step failed: {e}"))];
        }
        let mut out = Vec::new();
        if self.runner.finished() {
            self.status = SessionStatus::Finished;
            if let Err(e) = self.finish() {
                out.push(self.error(None, format!("could not persist log: {e}")));
            }
        }
        out.push(self.snapshot());
        out
    }

    fn finish(&mut self) -> CliResult<()> {
        let log = self.runner.log();
        self.summary = Some(compute_metrics(log)?);
        let path = self.shared.opts.log_dir.join(format!("session_{}_{}.jsonl", mode_name(self.mode), log.seed));
        write_log(&path, log)?;
        self.log = Some(path.to_string_lossy().into_owned());
        Ok(())
    }
}

async fn handle(stream: TcpStream, shared: Arc<Shared>) -> CliResult<()> {
    let ws = tokio_tungstenite::accept_async(stream).await.map_err(|e| CliError::Data(format!("handshake: {e}")))?;
    let (mut tx, mut rx) = ws.split();
    let mut session = Session::new(&shared, shared.opts.mode, 0, None)?;
    let send_err = |e: tokio_tungstenite::tungstenite::Error| CliError::Data(format!("websocket: {e}"));

    let hello = SessionMessage::Hello {
        seq: session.next_seq(),
        tick_hz: shared.opts.tick_hz,
        dt: shared.cfg.sim.dt,
        mode: session.mode,
        status: session.status,
    };
    tx.send(Message::text(hello.to_json())).await.map_err(send_err)?;

    let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / shared.opts.tick_hz));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
    loop {
        let replies = tokio::select! {
            incoming = rx.next() => match incoming {
                None | Some(Ok(Message::Close(_))) => break,
                Some(Err(e)) => return Err(send_err(e)),
                Some(Ok(Message::Text(t))) => session.on_text(t.as_str()),
                Some(Ok(Message::Binary(_))) => vec![session.error(None, "binary frames are not supported")],
                Some(Ok(_)) => Vec::new(),
            },
            _ = ticker.tick() => session.tick(),
        };
        for m in replies {
            tx.feed(Message::text(m.to_json())).await.map_err(send_err)?;
        }
        tx.flush().await.map_err(send_err)?;
    }
    Ok(())
}
