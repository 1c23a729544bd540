//! Reliability oracles `F: X -> {0, 1}`.
//!
//! `true` means the controller output at `x` is good (`F(x) = 1`); `false`
//! marks a bad control (`F(x) = 0`). An oracle that cannot produce a verdict
//! returns an [`OracleError`]; errors are never folded into `false`.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::space::{Block, StatePoint, StateSpace};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle crashed: {0}")]
    Crash(String),
    #[error("oracle protocol error: {0}")]
    Protocol(String),
    #[error("oracle i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// How an oracle may be shared between workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Concurrency {
    /// One instance may be called from many threads at once.
    ConcurrentSafe,
    /// Every worker task needs its own instance, see [`ReliabilityOracle::replicate`].
    ReplicatePerWorker,
}

pub trait ReliabilityOracle: Send + Sync {
    fn name(&self) -> &str;

    /// `F(x)`.
    fn is_reliable(&self, x: &StatePoint) -> Result<bool, OracleError>;

    /// Verdict for a state `x` that was produced by perturbing `anchor` in the
    /// concurrent design. Oracles backed by a two-argument controller use this
    /// to keep `anchor` as the constraint input; the default ignores it.
    fn is_reliable_from(&self, anchor: &StatePoint, x: &StatePoint) -> Result<bool, OracleError> {
        let _ = anchor;
        self.is_reliable(x)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::ConcurrentSafe
    }

    /// Fresh instance for a worker. Required for [`Concurrency::ReplicatePerWorker`].
    fn replicate(&self) -> Result<Arc<dyn ReliabilityOracle>, OracleError> {
        Err(OracleError::Crash(format!("oracle `{}` cannot be replicated", self.name())))
    }
}

/// Handle a worker task should use: the shared instance, or a replica.
pub fn worker_handle(oracle: &Arc<dyn ReliabilityOracle>) -> Result<Arc<dyn ReliabilityOracle>, OracleError> {
    match oracle.concurrency() {
        Concurrency::ConcurrentSafe => Ok(Arc::clone(oracle)),
        Concurrency::ReplicatePerWorker => oracle.replicate(),
    }
}

/// Wrapper counting every call that reaches the inner oracle.
pub struct Counted<O> {
    inner: O,
    calls: AtomicU64,
}

impl<O> Counted<O> {
    pub fn new(inner: O) -> Self {
        Counted { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: ReliabilityOracle> ReliabilityOracle for Counted<O> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn is_reliable(&self, x: &StatePoint) -> Result<bool, OracleError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.is_reliable(x)
    }

    fn is_reliable_from(&self, anchor: &StatePoint, x: &StatePoint) -> Result<bool, OracleError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.is_reliable_from(anchor, x)
    }

    fn concurrency(&self) -> Concurrency {
        self.inner.concurrency()
    }
}

impl<O: ReliabilityOracle + ?Sized> ReliabilityOracle for Arc<O> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn is_reliable(&self, x: &StatePoint) -> Result<bool, OracleError> {
        (**self).is_reliable(x)
    }
    fn is_reliable_from(&self, anchor: &StatePoint, x: &StatePoint) -> Result<bool, OracleError> {
        (**self).is_reliable_from(anchor, x)
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
    fn replicate(&self) -> Result<Arc<dyn ReliabilityOracle>, OracleError> {
        (**self).replicate()
    }
}

/// `F` identically equal to `reliable`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantOracle(pub bool);

impl ReliabilityOracle for ConstantOracle {
    fn name(&self) -> &str {
        if self.0 { "always-reliable" } else { "never-reliable" }
    }
    fn is_reliable(&self, _: &StatePoint) -> Result<bool, OracleError> {
        Ok(self.0)
    }
}

/// Volume of the Euclidean ball of radius `r` in `R^n`.
pub fn ball_volume(n: usize, r: f64) -> f64 {
    // V_n = pi^(n/2) r^n / Gamma(n/2 + 1), by the two-step recursion V_n = 2 pi r^2 / n * V_{n-2}
    let mut v = if n % 2 == 0 { 1.0 } else { 2.0 * r };
    let mut k = if n % 2 == 0 { 2 } else { 3 };
    while k <= n {
        v *= 2.0 * PI * r * r / k as f64;
        k += 2;
    }
    v
}

fn box_of(space: &StateSpace) -> Result<Vec<(f64, f64)>> {
    match space.blocks.as_slice() {
        [Block::Interval { bounds, .. }] if space.actors == 1 => Ok(bounds.clone()),
        _ => Err(Error::InvalidConfig("synthetic oracles need a single interval block and one actor".into())),
    }
}

/// Failure set is the union of closed balls of radius `radius` around `centers`.
#[derive(Debug, Clone, PartialEq)]
pub struct IslandsOracle {
    centers: Vec<Vec<f64>>,
    radius: f64,
    label: &'static str,
}

impl IslandsOracle {
    /// Every ball must lie inside the interval box of `space`.
    pub fn new(space: &StateSpace, centers: Vec<Vec<f64>>, radius: f64) -> Result<Self> {
        let bounds = box_of(space)?;
        if centers.is_empty() {
            return Err(Error::InvalidConfig("at least one center is required".into()));
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidConfig(format!("invalid ball radius {radius}")));
        }
        for c in &centers {
            if c.len() != bounds.len() {
                return Err(Error::InvalidConfig("center dimension does not match the space".into()));
            }
            if c.iter().zip(&bounds).any(|(&ci, &(lo, hi))| ci - radius < lo || ci + radius > hi) {
                return Err(Error::InvalidConfig(format!("ball around {c:?} leaves the box")));
            }
        }
        Ok(IslandsOracle { centers, radius, label: "islands" })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `P(F(X) = 0)` for uniform `X`, valid when the balls are disjoint.
    pub fn failure_probability(&self, space: &StateSpace) -> f64 {
        let bounds = box_of(space).expect("validated at construction");
        let box_volume: f64 = bounds.iter().map(|(lo, hi)| hi - lo).product();
        self.centers.len() as f64 * ball_volume(bounds.len(), self.radius) / box_volume
    }

    pub fn in_failure_set(&self, x: &[f64]) -> bool {
        let r2 = self.radius * self.radius;
        self.centers
            .iter()
            .any(|c| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r2)
    }
}

impl ReliabilityOracle for IslandsOracle {
    fn name(&self) -> &str {
        self.label
    }
    fn is_reliable(&self, x: &StatePoint) -> Result<bool, OracleError> {
        Ok(!self.in_failure_set(&x.0))
    }
}

/// Failure set is one closed ball: `F(x) = 0` iff `|x - center| <= radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallOracle(IslandsOracle);

impl BallOracle {
    pub fn new(space: &StateSpace, center: Vec<f64>, radius: f64) -> Result<Self> {
        let mut inner = IslandsOracle::new(space, vec![center], radius)?;
        inner.label = "ball";
        Ok(BallOracle(inner))
    }

    pub fn center(&self) -> &[f64] {
        &self.0.centers[0]
    }

    pub fn radius(&self) -> f64 {
        self.0.radius
    }

    /// Ball volume over box volume.
    pub fn failure_probability(&self, space: &StateSpace) -> f64 {
        self.0.failure_probability(space)
    }
}

impl ReliabilityOracle for BallOracle {
    fn name(&self) -> &str {
        "ball"
    }
    fn is_reliable(&self, x: &StatePoint) -> Result<bool, OracleError> {
        self.0.is_reliable(x)
    }
}

/// Line-oriented wire format for out-of-process oracles.
///
/// Request: one line of space-separated decimal coordinates. Response: one
/// line, `0` or `1`. Anything else is a protocol error.
pub mod protocol {
    use super::*;

    pub fn format_request(x: &StatePoint) -> String {
        let mut line = String::with_capacity(x.len() * 20);
        for (i, c) in x.0.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            // Display for f64 is the shortest decimal that round-trips
            line.push_str(&c.to_string());
        }
        line
    }

    pub fn parse_request(line: &str) -> Result<StatePoint, OracleError> {
        let coords: std::result::Result<Vec<f64>, _> = line.split_ascii_whitespace().map(str::parse::<f64>).collect();
        match coords {
            Ok(v) if !v.is_empty() && v.iter().all(|c| c.is_finite()) => Ok(StatePoint(v)),
            Ok(_) => Err(OracleError::Protocol(format!("bad request line {line:?}"))),
            Err(e) => Err(OracleError::Protocol(format!("bad request line {line:?}: {e}"))),
        }
    }

    pub fn format_response(reliable: bool) -> &'static str {
        if reliable { "1" } else { "0" }
    }

    pub fn parse_response(line: &str) -> Result<bool, OracleError> {
        match line.trim_end_matches(['\r', '\n']) {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(OracleError::Protocol(format!("bad response line {other:?}"))),
        }
    }

    /// Answers requests from `input` until end of stream. Returns the number served.
    pub fn serve<R: BufRead, W: Write>(oracle: &dyn ReliabilityOracle, input: R, mut output: W) -> Result<u64, OracleError> {
        let mut served = 0;
        for line in input.lines() {
            let line = line?;
            let x = parse_request(&line)?;
            let verdict = oracle.is_reliable(&x)?;
            writeln!(output, "{}", format_response(verdict))?;
            output.flush()?;
            served += 1;
        }
        Ok(served)
    }
}

struct ChildIo {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    line: String,
}

impl Drop for ChildIo {
    fn drop(&mut self) {
        let _ = self.stdin.flush();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Oracle answered by an external program speaking [`protocol`] on its standard streams.
pub struct ProcessOracle {
    command: Vec<String>,
    io: Mutex<ChildIo>,
}

impl ProcessOracle {
    pub fn spawn(command: &[String]) -> Result<Self, OracleError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| OracleError::Crash("empty oracle command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ProcessOracle {
            command: command.to_vec(),
            io: Mutex::new(ChildIo { child, stdin, stdout, line: String::new() }),
        })
    }
}

impl ReliabilityOracle for ProcessOracle {
    fn name(&self) -> &str {
        "process"
    }

    fn is_reliable(&self, x: &StatePoint) -> Result<bool, OracleError> {
        let mut io = self.io.lock().map_err(|_| OracleError::Crash("oracle mutex poisoned".into()))?;
        let io = &mut *io;
        writeln!(io.stdin, "{}", protocol::format_request(x))?;
        io.stdin.flush()?;
        io.line.clear();
        if io.stdout.read_line(&mut io.line)? == 0 {
            return Err(OracleError::Crash("oracle process closed its output".into()));
        }
        protocol::parse_response(&io.line)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::ReplicatePerWorker
    }

    fn replicate(&self) -> Result<Arc<dyn ReliabilityOracle>, OracleError> {
        Ok(Arc::new(ProcessOracle::spawn(&self.command)?))
    }
}
