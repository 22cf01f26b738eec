//! Sharded detection over a document-partitioned corpus.
//!
//! Rounds between the coordinator and shard `s`:
//!
//! ```text
//! -> Setup        split seed, global index of the shard's first document
//! <- RowTotals    per-word totals of both halves, document count
//! -> Init         global totals, M, projection seed, P
//! <- faithful:    PartialCooc, Done
//!    light:       PartialDiag, PartialProj, Done
//! -> RowRequest   (light only) shortlisted words
//! <- PartialRows
//! ```
//!
//! `PartialDiag`, `PartialCooc` and `PartialRows` carry integer co-counts
//! `G_s`; the coordinator applies the global normalization once. Integer sums
//! are exact in `f64`, so the faithful result is bit-identical to a
//! single-node run for any shard count. `PartialProj` carries `C_s u_r`
//! formed with the global constants from `Init`.
//!
//! Frames are `u32` length, then `{version u16, tag u8, shard_id u16,
//! payload}`, little-endian, doubles as IEEE-754 bits. Payload per tag:
//!
//! | tag | message     | payload |
//! |-----|-------------|---------|
//! | 1   | Setup       | split_seed u64, doc_offset u64 |
//! | 2   | RowTotals   | num_docs u64, W u32, first [u64; W], second [u64; W] |
//! | 3   | Init        | split_seed u64, doc_offset u64, projection_seed u64, P u32, num_docs u64, W u32, first [u64; W], second [u64; W] |
//! | 4   | PartialDiag | W u32, [f64; W] |
//! | 5   | PartialCooc | W u32, n u64, n x (i u32, j u32, g f64) |
//! | 6   | PartialProj | P u32, W u32, [f64; P*W], projection-major |
//! | 7   | RowRequest  | n u32, [u32; n] |
//! | 8   | PartialRows | n u32, W u32, rows [u32; n], [f64; n*W] row-major |
//! | 9   | Done        | empty |

use std::collections::{BTreeMap, VecDeque};
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooc::{co_counts, normalize_co_counts, partial_cooc_times, split_counts, RowTotals, SplitPair};
use crate::detect::{
    d_from_statistics, detect_on_cooc, directions, neighborhoods_masked, select_from_order, DPolicy, DetectionResult,
    DetectorConfig, Diagnostics,
};
use crate::error::{Error, Result};
use crate::model::Corpus;

pub const PROTOCOL_VERSION: u16 = 1;

/// Light mode shortlists this many candidates per topic.
pub const SHORTLIST_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Ship co-counts and rebuild `C` exactly.
    #[default]
    Faithful,
    /// Ship projections only, then fetch the rows of a shortlist.
    Light,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Init {
    pub split_seed: u64,
    pub doc_offset: u64,
    pub projection_seed: u64,
    pub projections: u32,
    pub num_docs: u64,
    pub totals: RowTotals,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShardMessage {
    Setup { shard_id: u16, split_seed: u64, doc_offset: u64 },
    RowTotals { shard_id: u16, num_docs: u64, totals: RowTotals },
    Init { shard_id: u16, init: Init },
    PartialDiag { shard_id: u16, diag: Vec<f64> },
    PartialCooc { shard_id: u16, vocab_size: u32, triples: Vec<(u32, u32, f64)> },
    PartialProj { shard_id: u16, projections: u32, vocab_size: u32, values: Vec<f64> },
    RowRequest { shard_id: u16, rows: Vec<u32> },
    PartialRows { shard_id: u16, vocab_size: u32, rows: Vec<u32>, values: Vec<f64> },
    Done { shard_id: u16 },
}

const TAG_SETUP: u8 = 1;
const TAG_ROW_TOTALS: u8 = 2;
const TAG_INIT: u8 = 3;
const TAG_DIAG: u8 = 4;
const TAG_COOC: u8 = 5;
const TAG_PROJ: u8 = 6;
const TAG_ROW_REQUEST: u8 = 7;
const TAG_ROWS: u8 = 8;
const TAG_DONE: u8 = 9;

impl ShardMessage {
    pub fn tag(&self) -> u8 {
        match self {
            ShardMessage::Setup { .. } => TAG_SETUP,
            ShardMessage::RowTotals { .. } => TAG_ROW_TOTALS,
            ShardMessage::Init { .. } => TAG_INIT,
            ShardMessage::PartialDiag { .. } => TAG_DIAG,
            ShardMessage::PartialCooc { .. } => TAG_COOC,
            ShardMessage::PartialProj { .. } => TAG_PROJ,
            ShardMessage::RowRequest { .. } => TAG_ROW_REQUEST,
            ShardMessage::PartialRows { .. } => TAG_ROWS,
            ShardMessage::Done { .. } => TAG_DONE,
        }
    }

    pub fn shard_id(&self) -> u16 {
        match *self {
            ShardMessage::Setup { shard_id, .. }
            | ShardMessage::RowTotals { shard_id, .. }
            | ShardMessage::Init { shard_id, .. }
            | ShardMessage::PartialDiag { shard_id, .. }
            | ShardMessage::PartialCooc { shard_id, .. }
            | ShardMessage::PartialProj { shard_id, .. }
            | ShardMessage::RowRequest { shard_id, .. }
            | ShardMessage::PartialRows { shard_id, .. }
            | ShardMessage::Done { shard_id } => shard_id,
        }
    }

    fn is_from_shard(&self) -> bool {
        !matches!(self.tag(), TAG_SETUP | TAG_INIT | TAG_ROW_REQUEST)
    }
}

// ---- wire format ----

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length fits in u32"));
    }
    fn u64s(&mut self, v: &[u64]) {
        v.iter().for_each(|&x| self.u64(x));
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn u32s(&mut self, v: &[u32]) {
        v.iter().for_each(|&x| self.u32(x));
    }
}

/// Serializes one message as a length-prefixed frame.
pub fn encode(msg: &ShardMessage) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u32(0);
    w.u16(PROTOCOL_VERSION);
    w.u8(msg.tag());
    w.u16(msg.shard_id());
    match msg {
        ShardMessage::Setup { split_seed, doc_offset, .. } => {
            w.u64(*split_seed);
            w.u64(*doc_offset);
        }
        ShardMessage::RowTotals { num_docs, totals, .. } => {
            w.u64(*num_docs);
            w.len(totals.vocab_size());
            w.u64s(&totals.first);
            w.u64s(&totals.second);
        }
        ShardMessage::Init { init, .. } => {
            w.u64(init.split_seed);
            w.u64(init.doc_offset);
            w.u64(init.projection_seed);
            w.u32(init.projections);
            w.u64(init.num_docs);
            w.len(init.totals.vocab_size());
            w.u64s(&init.totals.first);
            w.u64s(&init.totals.second);
        }
        ShardMessage::PartialDiag { diag, .. } => {
            w.len(diag.len());
            w.f64s(diag);
        }
        ShardMessage::PartialCooc { vocab_size, triples, .. } => {
            w.u32(*vocab_size);
            w.u64(triples.len() as u64);
            for &(i, j, g) in triples {
                w.u32(i);
                w.u32(j);
                w.f64(g);
            }
        }
        ShardMessage::PartialProj { projections, vocab_size, values, .. } => {
            w.u32(*projections);
            w.u32(*vocab_size);
            w.f64s(values);
        }
        ShardMessage::RowRequest { rows, .. } => {
            w.len(rows.len());
            w.u32s(rows);
        }
        ShardMessage::PartialRows { vocab_size, rows, values, .. } => {
            w.len(rows.len());
            w.u32(*vocab_size);
            w.u32s(rows);
            w.f64s(values);
        }
        ShardMessage::Done { .. } => {}
    }
    let len = (w.0.len() - 4) as u32;
    w.0[..4].copy_from_slice(&len.to_le_bytes());
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn truncated() -> Error {
    Error::Protocol("truncated frame".into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(truncated)?;
        let s = self.buf.get(self.pos..end).ok_or_else(truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    /// Guards allocations against corrupt counts.
    fn count(&mut self, n: u64, elem: usize) -> Result<usize> {
        let n = usize::try_from(n).map_err(|_| truncated())?;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(truncated());
        }
        Ok(n)
    }
    fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        let n = self.count(n as u64, 8)?;
        (0..n).map(|_| self.u64()).collect()
    }
    fn f64s(&mut self, n: u64) -> Result<Vec<f64>> {
        let n = self.count(n, 8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let n = self.count(n as u64, 4)?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn totals(&mut self) -> Result<RowTotals> {
        let w = self.u32()? as usize;
        Ok(RowTotals {
            first: self.u64s(w)?,
            second: self.u64s(w)?,
        })
    }
}

/// Decodes the frame at the start of `bytes`; returns the message and the
/// number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(ShardMessage, usize)> {
    if bytes.len() < 4 {
        return Err(truncated());
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let frame = bytes.get(4..4 + len).ok_or_else(truncated)?;
    let mut r = Reader { buf: frame, pos: 0 };
    let version = r.u16()?;
    if version != PROTOCOL_VERSION {
        return Err(Error::VersionMismatch {
            expected: PROTOCOL_VERSION,
            got: version,
        });
    }
    let tag = r.u8()?;
    let shard_id = r.u16()?;
    let msg = match tag {
        TAG_SETUP => ShardMessage::Setup {
            shard_id,
            split_seed: r.u64()?,
            doc_offset: r.u64()?,
        },
        TAG_ROW_TOTALS => ShardMessage::RowTotals {
            shard_id,
            num_docs: r.u64()?,
            totals: r.totals()?,
        },
        TAG_INIT => ShardMessage::Init {
            shard_id,
            init: Init {
                split_seed: r.u64()?,
                doc_offset: r.u64()?,
                projection_seed: r.u64()?,
                projections: r.u32()?,
                num_docs: r.u64()?,
                totals: r.totals()?,
            },
        },
        TAG_DIAG => {
            let w = r.u32()?;
            ShardMessage::PartialDiag {
                shard_id,
                diag: r.f64s(u64::from(w))?,
            }
        }
        TAG_COOC => {
            let vocab_size = r.u32()?;
            let n = r.u64()?;
            let n = r.count(n, 16)?;
            let triples = (0..n)
                .map(|_| Ok((r.u32()?, r.u32()?, r.f64()?)))
                .collect::<Result<_>>()?;
            ShardMessage::PartialCooc {
                shard_id,
                vocab_size,
                triples,
            }
        }
        TAG_PROJ => {
            let projections = r.u32()?;
            let vocab_size = r.u32()?;
            let values = r.f64s(u64::from(projections) * u64::from(vocab_size))?;
            ShardMessage::PartialProj {
                shard_id,
                projections,
                vocab_size,
                values,
            }
        }
        TAG_ROW_REQUEST => {
            let n = r.u32()? as usize;
            ShardMessage::RowRequest {
                shard_id,
                rows: r.u32s(n)?,
            }
        }
        TAG_ROWS => {
            let n = r.u32()?;
            let vocab_size = r.u32()?;
            let rows = r.u32s(n as usize)?;
            let values = r.f64s(u64::from(n) * u64::from(vocab_size))?;
            ShardMessage::PartialRows {
                shard_id,
                vocab_size,
                rows,
                values,
            }
        }
        TAG_DONE => ShardMessage::Done { shard_id },
        t => return Err(Error::Protocol(format!("unknown tag {t}"))),
    };
    if r.pos != frame.len() {
        return Err(Error::Protocol(format!("{} trailing bytes in frame", frame.len() - r.pos)));
    }
    Ok((msg, 4 + len))
}

/// Decodes a concatenation of frames.
pub fn decode_all(mut bytes: &[u8]) -> Result<Vec<ShardMessage>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (msg, used) = decode(bytes)?;
        out.push(msg);
        bytes = &bytes[used..];
    }
    Ok(out)
}

// ---- shards ----

/// Contiguous document ranges; the first `M mod S` shards get one extra.
pub fn shard_ranges(num_docs: usize, shards: usize) -> Result<Vec<Range<usize>>> {
    if shards == 0 || shards > usize::from(u16::MAX) {
        return Err(Error::InvalidInput(format!("shard count must be in 1..=65535, got {shards}")));
    }
    let (base, extra) = (num_docs / shards, num_docs % shards);
    let mut start = 0;
    Ok((0..shards)
        .map(|s| {
            let len = base + usize::from(s < extra);
            start += len;
            start - len..start
        })
        .collect())
}

pub fn shard_partition(corpus: &Corpus, shards: usize) -> Result<Vec<Corpus>> {
    Ok(shard_ranges(corpus.num_docs(), shards)?
        .into_iter()
        .map(|r| Corpus::new(corpus.counts().slice_docs(r)))
        .collect())
}

fn diag_co_counts(split: &SplitPair) -> Vec<f64> {
    let mut diag = vec![0.0; split.vocab_size()];
    for m in 0..split.num_docs() {
        let (fw, fc) = split.first.doc(m);
        let (sw, sc) = split.second.doc(m);
        let (mut a, mut b) = (0, 0);
        while a < fw.len() && b < sw.len() {
            match fw[a].cmp(&sw[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    diag[fw[a] as usize] += f64::from(fc[a]) * f64::from(sc[b]);
                    a += 1;
                    b += 1;
                }
            }
        }
    }
    diag
}

/// Co-counts `G_s[i][*]` for each requested word `i`, row-major.
fn row_co_counts(split: &SplitPair, rows: &[u32]) -> Result<Vec<f64>> {
    let w = split.vocab_size();
    let mut slot = vec![usize::MAX; w];
    for (s, &i) in rows.iter().enumerate() {
        let i = i as usize;
        if i >= w {
            return Err(Error::Protocol(format!("requested row {i} outside vocabulary")));
        }
        slot[i] = s;
    }
    let mut out = vec![0.0; rows.len() * w];
    for m in 0..split.num_docs() {
        let (fw, fc) = split.first.doc(m);
        let (sw, sc) = split.second.doc(m);
        for (&i, &xi) in sw.iter().zip(sc) {
            let s = slot[i as usize];
            if s == usize::MAX {
                continue;
            }
            let row = &mut out[s * w..][..w];
            for (&j, &xj) in fw.iter().zip(fc) {
                row[j as usize] += f64::from(xi) * f64::from(xj);
            }
        }
    }
    Ok(out)
}

fn compute_with_split(shard_id: u16, split: &SplitPair, init: &Init, mode: Mode) -> Result<Vec<ShardMessage>> {
    let w = split.vocab_size();
    if init.totals.vocab_size() != w {
        return Err(Error::Protocol(format!(
            "Init has {} words, shard has {w}",
            init.totals.vocab_size()
        )));
    }
    let mut out = Vec::new();
    match mode {
        Mode::Faithful => {
            let g = co_counts(split)?;
            let mut triples = Vec::new();
            for (j, col) in g.column_iter().enumerate() {
                for (i, &v) in col.iter().enumerate() {
                    if v != 0.0 {
                        triples.push((i as u32, j as u32, v));
                    }
                }
            }
            out.push(ShardMessage::PartialCooc {
                shard_id,
                vocab_size: w as u32,
                triples,
            });
        }
        Mode::Light => {
            out.push(ShardMessage::PartialDiag {
                shard_id,
                diag: diag_co_counts(split),
            });
            let p = init.projections as usize;
            let dirs = directions(w, 0, p, init.projection_seed);
            let values = partial_cooc_times(split, &init.totals, init.num_docs as usize, &dirs)?;
            out.push(ShardMessage::PartialProj {
                shard_id,
                projections: init.projections,
                vocab_size: w as u32,
                values: values.as_slice().to_vec(),
            });
        }
    }
    out.push(ShardMessage::Done { shard_id });
    Ok(out)
}

/// One shard's round-one output for an `Init` message.
pub fn shard_compute(fragment: &Corpus, init: &ShardMessage, mode: Mode) -> Result<Vec<ShardMessage>> {
    let ShardMessage::Init { shard_id, init } = init else {
        return Err(Error::Protocol(format!("expected Init, got tag {}", init.tag())));
    };
    let split = split_counts(fragment.counts(), init.split_seed, init.doc_offset as usize);
    compute_with_split(*shard_id, &split, init, mode)
}

/// A shard's state machine.
pub struct ShardWorker {
    id: u16,
    fragment: Corpus,
    mode: Mode,
    split: Option<SplitPair>,
    init: Option<Init>,
}

impl ShardWorker {
    pub fn new(id: u16, fragment: Corpus, mode: Mode) -> Self {
        Self {
            id,
            fragment,
            mode,
            split: None,
            init: None,
        }
    }

    fn ensure_split(&mut self, seed: u64, offset: u64) -> &SplitPair {
        self.split
            .get_or_insert_with(|| split_counts(self.fragment.counts(), seed, offset as usize))
    }

    pub fn handle(&mut self, msg: &ShardMessage) -> Result<Vec<ShardMessage>> {
        if msg.shard_id() != self.id {
            return Err(Error::Protocol(format!(
                "shard {} received a message for shard {}",
                self.id,
                msg.shard_id()
            )));
        }
        let id = self.id;
        match msg {
            ShardMessage::Setup { split_seed, doc_offset, .. } => {
                let split = self.ensure_split(*split_seed, *doc_offset);
                Ok(vec![ShardMessage::RowTotals {
                    shard_id: id,
                    num_docs: split.num_docs() as u64,
                    totals: split.totals(),
                }])
            }
            ShardMessage::Init { init, .. } => {
                let mode = self.mode;
                let split = self.ensure_split(init.split_seed, init.doc_offset);
                let out = compute_with_split(id, split, init, mode)?;
                self.init = Some(init.clone());
                Ok(out)
            }
            ShardMessage::RowRequest { rows, .. } => {
                let (Some(split), Some(_)) = (&self.split, &self.init) else {
                    return Err(Error::Protocol("row request before Init".into()));
                };
                Ok(vec![ShardMessage::PartialRows {
                    shard_id: id,
                    vocab_size: split.vocab_size() as u32,
                    rows: rows.clone(),
                    values: row_co_counts(split, rows)?,
                }])
            }
            other => Err(Error::Protocol(format!("shard cannot handle tag {}", other.tag()))),
        }
    }
}

// ---- transport ----

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ByteCounters {
    pub to_coordinator: u64,
    pub to_shards: u64,
    pub messages: u64,
}

impl ByteCounters {
    pub fn total(&self) -> u64 {
        self.to_coordinator + self.to_shards
    }
}

/// In-process network: one FIFO queue per shard in each direction, carrying
/// serialized frames.
pub struct Network {
    up: Vec<Mutex<VecDeque<Vec<u8>>>>,
    down: Vec<Mutex<VecDeque<Vec<u8>>>>,
    up_bytes: AtomicU64,
    down_bytes: AtomicU64,
    messages: AtomicU64,
}

impl Network {
    pub fn new(shards: usize) -> Self {
        let queues = || (0..shards).map(|_| Mutex::new(VecDeque::new())).collect();
        Self {
            up: queues(),
            down: queues(),
            up_bytes: AtomicU64::new(0),
            down_bytes: AtomicU64::new(0),
            messages: AtomicU64::new(0),
        }
    }

    fn push(queue: &Mutex<VecDeque<Vec<u8>>>, counter: &AtomicU64, frame: Vec<u8>) {
        counter.fetch_add(frame.len() as u64, Ordering::Relaxed);
        queue.lock().expect("queue poisoned").push_back(frame);
    }

    pub fn send_to_shard(&self, shard: usize, msg: &ShardMessage) {
        self.messages.fetch_add(1, Ordering::Relaxed);
        Self::push(&self.down[shard], &self.down_bytes, encode(msg));
    }

    pub fn send_to_coordinator(&self, shard: usize, msg: &ShardMessage) {
        self.messages.fetch_add(1, Ordering::Relaxed);
        Self::push(&self.up[shard], &self.up_bytes, encode(msg));
    }

    pub fn recv_at_shard(&self, shard: usize) -> Option<Vec<u8>> {
        self.down[shard].lock().expect("queue poisoned").pop_front()
    }

    /// Everything queued for the coordinator, in shard-id order and FIFO
    /// within each shard.
    pub fn drain_coordinator(&self) -> Vec<Vec<u8>> {
        self.up
            .iter()
            .flat_map(|q| q.lock().expect("queue poisoned").drain(..).collect::<Vec<_>>())
            .collect()
    }

    pub fn counters(&self) -> ByteCounters {
        ByteCounters {
            to_coordinator: self.up_bytes.load(Ordering::Relaxed),
            to_shards: self.down_bytes.load(Ordering::Relaxed),
            messages: self.messages.load(Ordering::Relaxed),
        }
    }
}

// ---- coordinator ----

/// Collects shard messages and runs selection. The first message of each
/// `(tag, shard)` wins; replays are ignored.
pub struct Coordinator {
    config: DetectorConfig,
    mode: Mode,
    shards: usize,
    inbox: BTreeMap<(u8, u16), ShardMessage>,
    shortlist: Option<Vec<usize>>,
}

impl Coordinator {
    pub fn new(config: DetectorConfig, mode: Mode, shards: usize) -> Result<Self> {
        config.validate()?;
        if shards == 0 {
            return Err(Error::InvalidInput("need at least one shard".into()));
        }
        Ok(Self {
            config,
            mode,
            shards,
            inbox: BTreeMap::new(),
            shortlist: None,
        })
    }

    /// Returns false for a replayed message.
    pub fn receive(&mut self, msg: ShardMessage) -> Result<bool> {
        if !msg.is_from_shard() {
            return Err(Error::Protocol(format!("coordinator cannot accept tag {}", msg.tag())));
        }
        if usize::from(msg.shard_id()) >= self.shards {
            return Err(Error::Protocol(format!("unknown shard {}", msg.shard_id())));
        }
        let key = (msg.tag(), msg.shard_id());
        if self.inbox.contains_key(&key) {
            return Ok(false);
        }
        self.inbox.insert(key, msg);
        Ok(true)
    }

    pub fn receive_frames(&mut self, frames: &[Vec<u8>]) -> Result<()> {
        for f in frames {
            for msg in decode_all(f)? {
                self.receive(msg)?;
            }
        }
        Ok(())
    }

    fn each(&self, tag: u8) -> Result<Vec<&ShardMessage>> {
        (0..self.shards as u16)
            .map(|s| {
                self.inbox
                    .get(&(tag, s))
                    .ok_or(Error::ShardMissing { shard_id: s })
            })
            .collect()
    }

    /// Corpus-wide row totals and document count.
    pub fn global_totals(&self) -> Result<(RowTotals, u64)> {
        let mut sum: Option<RowTotals> = None;
        let mut docs = 0;
        for msg in self.each(TAG_ROW_TOTALS)? {
            let ShardMessage::RowTotals { num_docs, totals, .. } = msg else { unreachable!() };
            match &mut sum {
                None => sum = Some(totals.clone()),
                Some(s) if s.vocab_size() == totals.vocab_size() => s.add(totals),
                Some(_) => return Err(Error::Protocol("shards disagree on vocabulary size".into())),
            }
            docs += num_docs;
        }
        Ok((sum.expect("at least one shard"), docs))
    }

    /// The `Init` message for a shard whose documents start at `doc_offset`.
    pub fn init_message(&self, shard_id: u16, doc_offset: u64) -> Result<ShardMessage> {
        let (totals, num_docs) = self.global_totals()?;
        Ok(ShardMessage::Init {
            shard_id,
            init: Init {
                split_seed: self.config.split_seed(),
                doc_offset,
                projection_seed: self.config.projection_seed(),
                projections: u32::try_from(self.config.projections)
                    .map_err(|_| Error::InvalidInput("too many projections".into()))?,
                num_docs,
                totals,
            },
        })
    }

    fn expect_mode(&self, mode: Mode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::Protocol(format!("coordinator runs in {:?} mode", self.mode)));
        }
        Ok(())
    }

    fn check_done(&self) -> Result<()> {
        self.each(TAG_DONE).map(|_| ())
    }

    fn active(&self, totals: &RowTotals) -> Vec<bool> {
        let mut a = vec![true; totals.vocab_size()];
        for w in totals.zero_rows() {
            a[w] = false;
        }
        for &w in &self.config.exclude {
            if w < a.len() {
                a[w] = false;
            }
        }
        a
    }

    /// Sums co-counts and runs the single-node detector on the rebuilt `C`.
    pub fn faithful_result(&self) -> Result<DetectionResult> {
        self.expect_mode(Mode::Faithful)?;
        self.check_done()?;
        let (totals, num_docs) = self.global_totals()?;
        let w = totals.vocab_size();
        let mut g = DMatrix::<f64>::zeros(w, w);
        for msg in self.each(TAG_COOC)? {
            let ShardMessage::PartialCooc { vocab_size, triples, .. } = msg else { unreachable!() };
            if *vocab_size as usize != w {
                return Err(Error::Protocol("PartialCooc has the wrong vocabulary size".into()));
            }
            for &(i, j, v) in triples {
                let (i, j) = (i as usize, j as usize);
                if i >= w || j >= w {
                    return Err(Error::Protocol("co-count index outside vocabulary".into()));
                }
                g[(i, j)] += v;
            }
        }
        let c = normalize_co_counts(g, &totals, num_docs as usize)?;
        detect_on_cooc(&c, &self.config)
    }

    fn summed_projections(&self, w: usize) -> Result<Vec<f64>> {
        let p = self.config.projections;
        let mut v = vec![0.0; p * w];
        for msg in self.each(TAG_PROJ)? {
            let ShardMessage::PartialProj { projections, vocab_size, values, .. } = msg else {
                unreachable!()
            };
            if *projections as usize != p || *vocab_size as usize != w {
                return Err(Error::Protocol("PartialProj has the wrong shape".into()));
            }
            v.iter_mut().zip(values).for_each(|(a, b)| *a += b);
        }
        Ok(v)
    }

    /// Per-word frequency of being the unrestricted argmax over projections.
    pub fn light_scores(&self) -> Result<Vec<f64>> {
        self.expect_mode(Mode::Light)?;
        self.check_done()?;
        let (totals, _) = self.global_totals()?;
        let w = totals.vocab_size();
        let active = self.active(&totals);
        if !active.contains(&true) {
            return Err(Error::DegenerateGeometry("no candidate words".into()));
        }
        let p = self.config.projections;
        let v = self.summed_projections(w)?;
        let mut hits = vec![0u32; w];
        for r in 0..p {
            let col = &v[r * w..][..w];
            let mut best = usize::MAX;
            for i in (0..w).filter(|&i| active[i]) {
                if best == usize::MAX || col[i] > col[best] {
                    best = i;
                }
            }
            hits[best] += 1;
        }
        Ok(hits.into_iter().map(|h| f64::from(h) / p as f64).collect())
    }

    /// Top `4K` words by light score, ties to the lower index.
    pub fn light_shortlist(&mut self) -> Result<Vec<usize>> {
        let (totals, _) = self.global_totals()?;
        let active = self.active(&totals);
        let phat = self.light_scores()?;
        let mut order: Vec<usize> = (0..phat.len()).filter(|&i| active[i]).collect();
        order.sort_by(|&a, &b| phat[b].total_cmp(&phat[a]).then(a.cmp(&b)));
        order.truncate(SHORTLIST_FACTOR * self.config.k);
        self.shortlist = Some(order.clone());
        Ok(order)
    }

    /// Neighborhoods and selection restricted to the shortlist, using the
    /// rows fetched from every shard.
    pub fn light_result(&self) -> Result<DetectionResult> {
        let shortlist = self
            .shortlist
            .as_ref()
            .ok_or_else(|| Error::Protocol("light_result before light_shortlist".into()))?;
        let (totals, num_docs) = self.global_totals()?;
        let w = totals.vocab_size();
        let phat = self.light_scores()?;
        let mut requested: Vec<u32> = shortlist.iter().map(|&i| i as u32).collect();
        requested.sort_unstable();

        let mut rows = vec![0.0; requested.len() * w];
        for msg in self.each(TAG_ROWS)? {
            let ShardMessage::PartialRows { vocab_size, rows: got, values, .. } = msg else {
                unreachable!()
            };
            if *got != requested || *vocab_size as usize != w {
                return Err(Error::Protocol("PartialRows does not match the request".into()));
            }
            rows.iter_mut().zip(values).for_each(|(a, b)| *a += b);
        }
        let mut diag = vec![0.0; w];
        for msg in self.each(TAG_DIAG)? {
            let ShardMessage::PartialDiag { diag: d, .. } = msg else { unreachable!() };
            if d.len() != w {
                return Err(Error::Protocol("PartialDiag has the wrong length".into()));
            }
            diag.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }

        // Same arithmetic as the dense normalization, entry by entry.
        let inv = |v: u64| if v == 0 { 0.0 } else { 1.0 / v as f64 };
        let m = num_docs as f64;
        let norm = |g: f64, i: usize, j: usize| m * g * inv(totals.second[i]) * inv(totals.first[j]);
        let n = requested.len();
        let sub = DMatrix::from_fn(n, n, |a, b| {
            let (i, j) = (requested[a] as usize, requested[b] as usize);
            if a == b {
                norm(diag[i], i, i)
            } else {
                norm(rows[a * w + j], i, j)
            }
        });
        let all = vec![true; n];
        // The shortlist rows and the full diagonal give the statistic of every
        // (shortlisted, active) pair, a much larger sample for the quantile
        // than the shortlist alone.
        let (d_used, estimated_d) = match self.config.d {
            DPolicy::Given { d } => (d, None),
            DPolicy::Estimated { quantile } => {
                let zero = totals.zero_rows();
                let active: Vec<usize> = (0..w).filter(|j| zero.binary_search(j).is_err()).collect();
                if active.len() < 2 {
                    return Err(Error::DegenerateGeometry("fewer than two candidate words".into()));
                }
                let mut stats = Vec::with_capacity(n * active.len());
                for (a, &i) in requested.iter().enumerate() {
                    let i = i as usize;
                    for &j in active.iter().filter(|&&j| j != i) {
                        stats.push(norm(diag[i], i, i) - 2.0 * norm(rows[a * w + j], i, j) + norm(diag[j], j, j));
                    }
                }
                let d = d_from_statistics(stats, quantile)?;
                (d, Some(d))
            }
        };
        let nbd = neighborhoods_masked(&sub, &all, d_used);
        let local_order: Vec<usize> = shortlist
            .iter()
            .map(|i| requested.binary_search(&(*i as u32)).expect("shortlisted"))
            .collect();
        let sel = select_from_order(&local_order, &nbd, self.config.k).map_err(|e| match e {
            Error::IncompleteRecovery { partial, wanted } => Error::IncompleteRecovery {
                partial: partial.iter().map(|&a| requested[a] as usize).collect(),
                wanted,
            },
            e => e,
        })?;
        let mut nbd_sizes = vec![0; w];
        for (a, &i) in requested.iter().enumerate() {
            nbd_sizes[i as usize] = nbd.size(a);
        }
        Ok(DetectionResult {
            selected: sel.selected.iter().map(|&a| requested[a] as usize).collect(),
            phat,
            nbd_sizes,
            d_used,
            diagnostics: Diagnostics {
                scan_depth: sel.scan_depth,
                estimated_d,
            },
        })
    }
}

/// Runs selection on a complete set of shard messages. In light mode the
/// messages must include the `PartialRows` answering the shortlist.
pub fn aggregate_and_select(
    messages: &[ShardMessage],
    config: &DetectorConfig,
    shards: usize,
    mode: Mode,
) -> Result<DetectionResult> {
    let mut coord = Coordinator::new(config.clone(), mode, shards)?;
    for msg in messages {
        coord.receive(msg.clone())?;
    }
    match mode {
        Mode::Faithful => coord.faithful_result(),
        Mode::Light => {
            coord.light_shortlist()?;
            coord.light_result()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistReport {
    pub result: DetectionResult,
    pub bytes: ByteCounters,
    pub shards: usize,
    pub mode: Mode,
    /// Light mode only.
    pub shortlist: Option<Vec<usize>>,
}

/// Every shard drains its inbox concurrently and replies.
fn pump(net: &Network, workers: &mut [ShardWorker]) -> Result<()> {
    workers.par_iter_mut().enumerate().try_for_each(|(s, worker)| {
        while let Some(frame) = net.recv_at_shard(s) {
            for msg in decode_all(&frame)? {
                for reply in worker.handle(&msg)? {
                    net.send_to_coordinator(s, &reply);
                }
            }
        }
        Ok(())
    })
}

/// Sharded detection over the in-process network.
pub fn run_distributed(corpus: &Corpus, config: &DetectorConfig, shards: usize, mode: Mode) -> Result<DistReport> {
    config.validate()?;
    if corpus.num_docs() == 0 {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    let ranges = shard_ranges(corpus.num_docs(), shards)?;
    let mut workers: Vec<ShardWorker> = ranges
        .iter()
        .enumerate()
        .map(|(s, r)| ShardWorker::new(s as u16, Corpus::new(corpus.counts().slice_docs(r.clone())), mode))
        .collect();
    let net = Network::new(shards);
    let mut coord = Coordinator::new(config.clone(), mode, shards)?;

    for (s, r) in ranges.iter().enumerate() {
        net.send_to_shard(
            s,
            &ShardMessage::Setup {
                shard_id: s as u16,
                split_seed: config.split_seed(),
                doc_offset: r.start as u64,
            },
        );
    }
    pump(&net, &mut workers)?;
    coord.receive_frames(&net.drain_coordinator())?;

    for (s, r) in ranges.iter().enumerate() {
        net.send_to_shard(s, &coord.init_message(s as u16, r.start as u64)?);
    }
    pump(&net, &mut workers)?;
    coord.receive_frames(&net.drain_coordinator())?;

    let (result, shortlist) = match mode {
        Mode::Faithful => (coord.faithful_result()?, None),
        Mode::Light => {
            let shortlist = coord.light_shortlist()?;
            let mut rows: Vec<u32> = shortlist.iter().map(|&i| i as u32).collect();
            rows.sort_unstable();
            for s in 0..shards {
                net.send_to_shard(
                    s,
                    &ShardMessage::RowRequest {
                        shard_id: s as u16,
                        rows: rows.clone(),
                    },
                );
            }
            pump(&net, &mut workers)?;
            coord.receive_frames(&net.drain_coordinator())?;
            (coord.light_result()?, Some(shortlist))
        }
    };
    Ok(DistReport {
        result,
        bytes: net.counters(),
        shards,
        mode,
        shortlist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cooc::{cooc_matrix, split_corpus};
    use crate::detect::detect_novel_words;
    use crate::model::{CountMatrix, PriorModel};
    use crate::synth::{generate_corpus, random_separable, RandomModelSpec};
    use proptest::prelude::*;

    fn corpus(m: usize, seed: u64) -> Corpus {
        let spec = RandomModelSpec {
            vocab_size: 24,
            num_topics: 3,
            novel_per_topic: 2,
        };
        let beta = random_separable(spec, seed).unwrap();
        let prior = PriorModel::symmetric_dirichlet(3, 0.5).unwrap();
        generate_corpus(&beta, &prior, m, 40, seed).unwrap().1
    }

    fn config() -> DetectorConfig {
        DetectorConfig::new(3, 64, 11)
    }

    /// Runs both rounds by hand and returns every shard message.
    fn collect(c: &Corpus, cfg: &DetectorConfig, shards: usize, mode: Mode) -> Vec<ShardMessage> {
        let ranges = shard_ranges(c.num_docs(), shards).unwrap();
        let mut workers: Vec<ShardWorker> = ranges
            .iter()
            .enumerate()
            .map(|(s, r)| ShardWorker::new(s as u16, Corpus::new(c.counts().slice_docs(r.clone())), mode))
            .collect();
        let mut coord = Coordinator::new(cfg.clone(), mode, shards).unwrap();
        let mut all = Vec::new();
        for (s, r) in ranges.iter().enumerate() {
            let setup = ShardMessage::Setup {
                shard_id: s as u16,
                split_seed: cfg.split_seed(),
                doc_offset: r.start as u64,
            };
            for m in workers[s].handle(&setup).unwrap() {
                coord.receive(m.clone()).unwrap();
                all.push(m);
            }
        }
        for (s, r) in ranges.iter().enumerate() {
            let init = coord.init_message(s as u16, r.start as u64).unwrap();
            all.extend(workers[s].handle(&init).unwrap());
        }
        all
    }

    #[test]
    fn partition_examples() {
        let c = corpus(10, 1);
        let one = shard_partition(&c, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].counts(), c.counts());
        let sizes: Vec<usize> = shard_partition(&c, 3).unwrap().iter().map(Corpus::num_docs).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert!(shard_partition(&c, 0).is_err());
    }

    #[test]
    fn faithful_matches_single_node_exactly() {
        let c = corpus(600, 2);
        let cfg = config();
        let single = detect_novel_words(&c, &cfg).unwrap();
        for shards in [1, 2, 3, 7] {
            let dist = run_distributed(&c, &cfg, shards, Mode::Faithful).unwrap();
            assert_eq!(dist.result, single, "S = {shards}");
        }
    }

    #[test]
    fn normalized_partials_sum_to_c() {
        let c = corpus(300, 3);
        let cfg = config();
        let full = cooc_matrix(&split_corpus(&c, cfg.split_seed())).unwrap();
        let msgs = collect(&c, &cfg, 4, Mode::Faithful);
        let mut coord = Coordinator::new(cfg.clone(), Mode::Faithful, 4).unwrap();
        for m in &msgs {
            coord.receive(m.clone()).unwrap();
        }
        let (totals, docs) = coord.global_totals().unwrap();
        let w = totals.vocab_size();
        let mut sum = DMatrix::<f64>::zeros(w, w);
        for m in &msgs {
            if let ShardMessage::PartialCooc { triples, .. } = m {
                let mut g = DMatrix::zeros(w, w);
                for &(i, j, v) in triples {
                    g[(i as usize, j as usize)] = v;
                }
                sum += normalize_co_counts(g, &totals, docs as usize).unwrap().matrix();
            }
        }
        let scale = full.matrix().amax();
        assert!((sum - full.matrix()).amax() <= 1e-9 * scale.max(1.0));
    }

    #[test]
    fn light_projections_sum_to_c_times_u() {
        let c = corpus(300, 4);
        let cfg = config();
        let full = cooc_matrix(&split_corpus(&c, cfg.split_seed())).unwrap();
        let w = full.vocab_size();
        let msgs = collect(&c, &cfg, 3, Mode::Light);
        let mut v = vec![0.0; cfg.projections * w];
        for m in &msgs {
            if let ShardMessage::PartialProj { values, .. } = m {
                v.iter_mut().zip(values).for_each(|(a, b)| *a += b);
            }
        }
        let cu = full.matrix() * directions(w, 0, cfg.projections, cfg.projection_seed());
        let scale = cu.amax().max(1.0);
        for (a, b) in v.iter().zip(cu.as_slice()) {
            assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn light_agrees_with_faithful_on_separated_input() {
        // One novel word per topic, so the correct selection is unique.
        let spec = RandomModelSpec {
            vocab_size: 24,
            num_topics: 3,
            novel_per_topic: 1,
        };
        let beta = random_separable(spec, 5).unwrap();
        let prior = PriorModel::symmetric_dirichlet(3, 0.5).unwrap();
        let c = generate_corpus(&beta, &prior, 3000, 40, 5).unwrap().1;
        let cfg = DetectorConfig::new(3, 200, 5);
        let faithful = run_distributed(&c, &cfg, 3, Mode::Faithful).unwrap();
        let light = run_distributed(&c, &cfg, 3, Mode::Light).unwrap();
        let mut a = faithful.result.selected.clone();
        let mut b = light.result.selected.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_eq!(a, vec![0, 1, 2]);
    }

    #[test]
    fn light_bandwidth_is_linear_in_w_times_p() {
        let c = corpus(400, 6);
        let cfg = config();
        let s = 3u64;
        let report = run_distributed(&c, &cfg, s as usize, Mode::Light).unwrap();
        let (w, p) = (24u64, cfg.projections as u64);
        let shortlist = report.shortlist.unwrap().len() as u64;
        // 8 bytes per value, generous constant for headers and totals
        let bound = s * 8 * (w * p + 6 * w + 2 * shortlist * w) + s * 256;
        assert!(report.bytes.total() <= bound, "{} > {bound}", report.bytes.total());
    }

    #[test]
    fn silent_shard_is_reported() {
        let c = corpus(200, 7);
        let cfg = config();
        let msgs: Vec<ShardMessage> = collect(&c, &cfg, 3, Mode::Faithful)
            .into_iter()
            .filter(|m| m.shard_id() != 1 || m.tag() == TAG_ROW_TOTALS)
            .collect();
        match aggregate_and_select(&msgs, &cfg, 3, Mode::Faithful) {
            Err(Error::ShardMissing { shard_id }) => assert_eq!(shard_id, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn replayed_messages_are_ignored() {
        let c = corpus(200, 8);
        let cfg = config();
        let msgs = collect(&c, &cfg, 2, Mode::Faithful);
        let once = aggregate_and_select(&msgs, &cfg, 2, Mode::Faithful).unwrap();
        let mut twice = msgs.clone();
        twice.extend(msgs.iter().rev().cloned());
        assert_eq!(aggregate_and_select(&twice, &cfg, 2, Mode::Faithful).unwrap(), once);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut frame = encode(&ShardMessage::Done { shard_id: 0 });
        frame[4..6].copy_from_slice(&7u16.to_le_bytes());
        match decode(&frame) {
            Err(Error::VersionMismatch { expected, got }) => assert_eq!((expected, got), (PROTOCOL_VERSION, 7)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_init_is_a_protocol_error() {
        let c = corpus(20, 9);
        let done = ShardMessage::Done { shard_id: 0 };
        assert!(matches!(shard_compute(&c, &done, Mode::Faithful), Err(Error::Protocol(_))));
        let mut worker = ShardWorker::new(0, c, Mode::Light);
        let req = ShardMessage::RowRequest { shard_id: 0, rows: vec![1] };
        assert!(matches!(worker.handle(&req), Err(Error::Protocol(_))));
    }

    #[test]
    fn truncated_and_corrupt_frames_fail_cleanly() {
        let frame = encode(&ShardMessage::PartialDiag { shard_id: 2, diag: vec![1.0, 2.0] });
        for cut in 0..frame.len() {
            assert!(decode(&frame[..cut]).is_err());
        }
        let mut bad = frame.clone();
        bad[6] = 42;
        assert!(matches!(decode(&bad), Err(Error::Protocol(_))));
    }

    #[test]
    fn empty_shards_are_harmless() {
        let c = corpus(3, 10);
        let cfg = DetectorConfig::new(1, 8, 1);
        let single = detect_novel_words(&c, &cfg);
        let dist = run_distributed(&c, &cfg, 5, Mode::Faithful).map(|r| r.result);
        assert_eq!(format!("{single:?}"), format!("{dist:?}"));
    }

    fn any_message() -> impl Strategy<Value = ShardMessage> {
        let id = 0u16..100;
        let f = || prop::collection::vec(-1e6f64..1e6, 0..6);
        prop_oneof![
            (id.clone(), any::<u64>(), any::<u64>())
                .prop_map(|(shard_id, split_seed, doc_offset)| ShardMessage::Setup { shard_id, split_seed, doc_offset }),
            (id.clone(), any::<u64>(), prop::collection::vec((any::<u64>(), any::<u64>()), 0..5)).prop_map(
                |(shard_id, num_docs, t)| ShardMessage::RowTotals {
                    shard_id,
                    num_docs,
                    totals: RowTotals { first: t.iter().map(|x| x.0).collect(), second: t.iter().map(|x| x.1).collect() },
                }
            ),
            (id.clone(), any::<u64>(), any::<u32>(), prop::collection::vec(any::<u64>(), 0..5)).prop_map(
                |(shard_id, s, p, t)| ShardMessage::Init {
                    shard_id,
                    init: Init {
                        split_seed: s,
                        doc_offset: s ^ 1,
                        projection_seed: s.rotate_left(7),
                        projections: p,
                        num_docs: s / 3,
                        totals: RowTotals { first: t.clone(), second: t.iter().map(|x| x / 2).collect() },
                    },
                }
            ),
            (id.clone(), f()).prop_map(|(shard_id, diag)| ShardMessage::PartialDiag { shard_id, diag }),
            (id.clone(), prop::collection::vec((any::<u32>(), any::<u32>(), -1e9f64..1e9), 0..5))
                .prop_map(|(shard_id, triples)| ShardMessage::PartialCooc { shard_id, vocab_size: 9, triples }),
            (id.clone(), 0u32..4, 0u32..4).prop_map(|(shard_id, p, w)| ShardMessage::PartialProj {
                shard_id,
                projections: p,
                vocab_size: w,
                values: (0..p * w).map(|x| f64::from(x) * 0.5).collect(),
            }),
            (id.clone(), prop::collection::vec(any::<u32>(), 0..5))
                .prop_map(|(shard_id, rows)| ShardMessage::RowRequest { shard_id, rows }),
            (id.clone(), prop::collection::vec(any::<u32>(), 0..3), 0u32..4).prop_map(|(shard_id, rows, w)| {
                let values = (0..rows.len() as u32 * w).map(f64::from).collect();
                ShardMessage::PartialRows { shard_id, vocab_size: w, rows, values }
            }),
            id.prop_map(|shard_id| ShardMessage::Done { shard_id }),
        ]
    }

    proptest! {
        #[test]
        fn frames_round_trip(msgs in prop::collection::vec(any_message(), 1..6)) {
            let bytes: Vec<u8> = msgs.iter().flat_map(encode).collect();
            prop_assert_eq!(decode_all(&bytes).unwrap(), msgs);
        }

        #[test]
        fn ranges_cover_documents(m in 0usize..200, s in 1usize..20) {
            let ranges = shard_ranges(m, s).unwrap();
            prop_assert_eq!(ranges.len(), s);
            prop_assert_eq!(ranges[0].start, 0);
            prop_assert_eq!(ranges[s - 1].end, m);
            for pair in ranges.windows(2) {
                prop_assert_eq!(pair[0].end, pair[1].start);
                prop_assert!(pair[0].len() >= pair[1].len());
                prop_assert!(pair[0].len() - pair[1].len() <= 1);
            }
        }

        #[test]
        fn concatenated_fragments_reproduce_corpus(m in 1usize..40, s in 1usize..8, seed in any::<u64>()) {
            let c = corpus(m, seed % 1000);
            let parts = shard_partition(&c, s).unwrap();
            let mut joined = CountMatrix::new(c.vocab_size());
            for p in &parts {
                joined.extend(p.counts()).unwrap();
            }
            prop_assert_eq!(&joined, c.counts());
        }
    }
}
