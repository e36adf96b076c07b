//! The message set and its payload encodings. All integers and floats are
//! little-endian; strings are a `u16` byte length followed by UTF-8.
//!
//! Decoding is strict: booleans must be 0 or 1, enum tags must be known and
//! no trailing bytes are allowed, so any payload that decodes re-encodes to
//! exactly the same bytes.

use xilrl_core::plant::Tier;
use xilrl_core::reward::RewardComponents;
use xilrl_core::signals::StateVector;
use xilrl_core::{EpisodeSummary, Experience, PolicySnapshot, RewardWeights, STATE_DIM};

use crate::error::ProtocolError;
use crate::frame::{decode_frame, encode_frame};

pub mod msg_type {
    pub const HELLO: u8 = 0x01;
    pub const POLICY: u8 = 0x02;
    pub const RUN_CYCLE: u8 = 0x03;
    pub const EXPERIENCES: u8 = 0x04;
    pub const CYCLE_DONE: u8 = 0x05;
    pub const HEARTBEAT: u8 = 0x06;
    pub const ERROR: u8 = 0x07;
    pub const SHUTDOWN: u8 = 0x08;
}

/// Largest number of experience records per EXPERIENCES frame.
pub const MAX_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleMode {
    /// Sample actions and stream every experience.
    Train,
    /// Mean actions, one episode per planned segment, summaries only.
    Validate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentPlan {
    /// Segment starts drawn from the cycle seed.
    Random,
    /// Episodes start at these times, s, in order.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunCycle {
    pub cycle_id: u64,
    pub mode: CycleMode,
    pub experiences_target: u32,
    pub seed: u64,
    pub segment_plan: SegmentPlan,
    /// Weights the Minion scores its steps with.
    pub reward_weights: RewardWeights,
}

/// Wire form of one [`Experience`]: everything in `f32`, no step index.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExperienceRecord {
    pub state: [f32; STATE_DIM],
    pub action: f32,
    pub next_state: [f32; STATE_DIM],
    pub reward: f32,
    pub components: [f32; 5],
    pub terminal: bool,
}

impl ExperienceRecord {
    /// 13 + 1 + 13 + 1 + 5 floats and one flag byte.
    pub const SIZE: usize = 4 * (2 * STATE_DIM + 7) + 1;

    pub fn from_experience(e: &Experience) -> Self {
        Self {
            state: e.state.0.map(|v| v as f32),
            action: e.action as f32,
            next_state: e.next_state.0.map(|v| v as f32),
            reward: e.reward as f32,
            components: e.components.as_array().map(|v| v as f32),
            terminal: e.terminal,
        }
    }

    /// Widens back to `f64`; the step index travels separately (in the
    /// per-episode step counts of CYCLE_DONE).
    pub fn to_experience(&self, step_index: u32) -> Experience {
        Experience {
            state: StateVector(self.state.map(f64::from)),
            action: f64::from(self.action),
            next_state: StateVector(self.next_state.map(f64::from)),
            reward: f64::from(self.reward),
            components: RewardComponents::from_array(self.components.map(f64::from)),
            terminal: self.terminal,
            step_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        peer_id: String,
        tier: Tier,
        protocol_version: u16,
    },
    Policy(PolicySnapshot),
    RunCycle(RunCycle),
    Experiences {
        cycle_id: u64,
        records: Vec<ExperienceRecord>,
    },
    CycleDone {
        cycle_id: u64,
        episodes: Vec<EpisodeSummary>,
    },
    Heartbeat,
    Error {
        code: u16,
        text: String,
    },
    Shutdown,
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        use msg_type::*;
        match self {
            Message::Hello { .. } => HELLO,
            Message::Policy(_) => POLICY,
            Message::RunCycle(_) => RUN_CYCLE,
            Message::Experiences { .. } => EXPERIENCES,
            Message::CycleDone { .. } => CYCLE_DONE,
            Message::Heartbeat => HEARTBEAT,
            Message::Error { .. } => ERROR,
            Message::Shutdown => SHUTDOWN,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::Policy(_) => "POLICY",
            Message::RunCycle(_) => "RUN_CYCLE",
            Message::Experiences { .. } => "EXPERIENCES",
            Message::CycleDone { .. } => "CYCLE_DONE",
            Message::Heartbeat => "HEARTBEAT",
            Message::Error { .. } => "ERROR",
            Message::Shutdown => "SHUTDOWN",
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut w = Vec::new();
        match self {
            Message::Hello {
                peer_id,
                tier,
                protocol_version,
            } => {
                put_str(&mut w, peer_id);
                w.push(tier.tag());
                w.extend_from_slice(&protocol_version.to_le_bytes());
            }
            Message::Policy(snapshot) => w = snapshot.to_bytes(),
            Message::RunCycle(rc) => {
                w.extend_from_slice(&rc.cycle_id.to_le_bytes());
                w.push(match rc.mode {
                    CycleMode::Train => 0,
                    CycleMode::Validate => 1,
                });
                w.extend_from_slice(&rc.experiences_target.to_le_bytes());
                w.extend_from_slice(&rc.seed.to_le_bytes());
                match &rc.segment_plan {
                    SegmentPlan::Random => w.push(0),
                    SegmentPlan::Fixed(starts) => {
                        w.push(1);
                        w.extend_from_slice(&(starts.len() as u32).to_le_bytes());
                        for s in starts {
                            w.extend_from_slice(&s.to_le_bytes());
                        }
                    }
                }
                for f in rc.reward_weights.as_array() {
                    w.extend_from_slice(&f.to_le_bytes());
                }
            }
            Message::Experiences { cycle_id, records } => {
                w.reserve(12 + records.len() * ExperienceRecord::SIZE);
                w.extend_from_slice(&cycle_id.to_le_bytes());
                w.extend_from_slice(&(records.len() as u32).to_le_bytes());
                for r in records {
                    put_record(&mut w, r);
                }
            }
            Message::CycleDone { cycle_id, episodes } => {
                w.extend_from_slice(&cycle_id.to_le_bytes());
                w.extend_from_slice(&(episodes.len() as u32).to_le_bytes());
                for e in episodes {
                    put_summary(&mut w, e);
                }
            }
            Message::Heartbeat | Message::Shutdown => {}
            Message::Error { code, text } => {
                w.extend_from_slice(&code.to_le_bytes());
                put_str(&mut w, text);
            }
        }
        w
    }

    pub fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<Self, ProtocolError> {
        use msg_type::*;
        let kind = match msg_type {
            HELLO => "HELLO",
            POLICY => "POLICY",
            RUN_CYCLE => "RUN_CYCLE",
            EXPERIENCES => "EXPERIENCES",
            CYCLE_DONE => "CYCLE_DONE",
            HEARTBEAT => "HEARTBEAT",
            ERROR => "ERROR",
            SHUTDOWN => "SHUTDOWN",
            other => return Err(ProtocolError::UnknownType(other)),
        };
        if msg_type == POLICY {
            return Ok(Message::Policy(PolicySnapshot::from_bytes(payload)?));
        }
        let mut r = Cursor { buf: payload, pos: 0, kind };
        let msg = match msg_type {
            HELLO => {
                let peer_id = r.string()?;
                let tag = r.u8()?;
                let tier = Tier::from_tag(tag).ok_or_else(|| ProtocolError::malformed(kind, format!("unknown tier tag {tag}")))?;
                Message::Hello {
                    peer_id,
                    tier,
                    protocol_version: r.u16()?,
                }
            }
            RUN_CYCLE => {
                let cycle_id = r.u64()?;
                let mode = match r.u8()? {
                    0 => CycleMode::Train,
                    1 => CycleMode::Validate,
                    m => return Err(ProtocolError::malformed(kind, format!("unknown cycle mode {m}"))),
                };
                let experiences_target = r.u32()?;
                let seed = r.u64()?;
                let segment_plan = match r.u8()? {
                    0 => SegmentPlan::Random,
                    1 => {
                        let n = r.count(8)?;
                        SegmentPlan::Fixed((0..n).map(|_| r.f64()).collect::<Result<_, _>>()?)
                    }
                    p => return Err(ProtocolError::malformed(kind, format!("unknown segment plan {p}"))),
                };
                let reward_weights = RewardWeights {
                    f_nox: r.f64()?,
                    f_soot: r.f64()?,
                    f_boost: r.f64()?,
                    f_safe: r.f64()?,
                    f_fail: r.f64()?,
                };
                Message::RunCycle(RunCycle {
                    cycle_id,
                    mode,
                    experiences_target,
                    seed,
                    segment_plan,
                    reward_weights,
                })
            }
            EXPERIENCES => {
                let cycle_id = r.u64()?;
                let n = r.count(ExperienceRecord::SIZE)?;
                let records = (0..n).map(|_| r.record()).collect::<Result<_, _>>()?;
                Message::Experiences { cycle_id, records }
            }
            CYCLE_DONE => {
                let cycle_id = r.u64()?;
                let n = r.count(SUMMARY_SIZE)?;
                let episodes = (0..n).map(|_| r.summary()).collect::<Result<_, _>>()?;
                Message::CycleDone { cycle_id, episodes }
            }
            HEARTBEAT => Message::Heartbeat,
            ERROR => Message::Error {
                code: r.u16()?,
                text: r.string()?,
            },
            SHUTDOWN => Message::Shutdown,
            _ => unreachable!("type filtered above"),
        };
        if r.pos != payload.len() {
            return Err(ProtocolError::malformed(kind, format!("{} trailing bytes", payload.len() - r.pos)));
        }
        Ok(msg)
    }
}

/// Frames a message.
pub fn encode(msg: &Message) -> Vec<u8> {
    encode_frame(msg.msg_type(), &msg.encode_payload())
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let (t, payload, used) = decode_frame(bytes)?;
    if used != bytes.len() {
        return Err(ProtocolError::malformed("frame", format!("{} bytes after the frame", bytes.len() - used)));
    }
    Message::decode_payload(t, payload)
}

/// Splits experiences into EXPERIENCES messages of at most [`MAX_CHUNK`].
pub fn experience_chunks(cycle_id: u64, experiences: &[Experience]) -> impl Iterator<Item = Message> + '_ {
    experiences.chunks(MAX_CHUNK).map(move |chunk| Message::Experiences {
        cycle_id,
        records: chunk.iter().map(ExperienceRecord::from_experience).collect(),
    })
}

const SUMMARY_SIZE: usize = 8 + 4 + 8 * 5 + 1 + 8 * 5;

fn put_str(w: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    let n = bytes.len().min(u16::MAX as usize);
    w.extend_from_slice(&(n as u16).to_le_bytes());
    w.extend_from_slice(&bytes[..n]);
}

fn put_record(w: &mut Vec<u8>, r: &ExperienceRecord) {
    let floats = r
        .state
        .iter()
        .chain(std::iter::once(&r.action))
        .chain(&r.next_state)
        .chain(std::iter::once(&r.reward))
        .chain(&r.components);
    for f in floats {
        w.extend_from_slice(&f.to_le_bytes());
    }
    w.push(u8::from(r.terminal));
}

fn put_summary(w: &mut Vec<u8>, e: &EpisodeSummary) {
    w.extend_from_slice(&e.segment_start.to_le_bytes());
    w.extend_from_slice(&e.steps.to_le_bytes());
    for f in [e.total_reward, e.cumulative_nox, e.cumulative_soot, e.mean_abs_boost_error, e.mean_abs_speed_error] {
        w.extend_from_slice(&f.to_le_bytes());
    }
    w.push(u8::from(e.failure));
    for f in e.component_totals {
        w.extend_from_slice(&f.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            ProtocolError::malformed(self.kind, format!("needs {n} bytes at offset {}, {} left", self.pos, self.buf.len() - self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, ProtocolError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bool(&mut self) -> Result<bool, ProtocolError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(ProtocolError::malformed(self.kind, format!("flag byte {b}"))),
        }
    }

    /// An element count, checked against the bytes actually present so a
    /// lying count cannot trigger a huge allocation.
    fn count(&mut self, elem_size: usize) -> Result<usize, ProtocolError> {
        let n = self.u32()? as usize;
        let left = self.buf.len() - self.pos;
        if n.saturating_mul(elem_size) > left {
            return Err(ProtocolError::malformed(self.kind, format!("count {n} exceeds the {left} remaining bytes")));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String, ProtocolError> {
        let n = self.u16()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| ProtocolError::malformed(self.kind, "string is not UTF-8"))
    }

    fn floats<const N: usize>(&mut self) -> Result<[f32; N], ProtocolError> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.f32()?;
        }
        Ok(out)
    }

    fn record(&mut self) -> Result<ExperienceRecord, ProtocolError> {
        Ok(ExperienceRecord {
            state: self.floats()?,
            action: self.f32()?,
            next_state: self.floats()?,
            reward: self.f32()?,
            components: self.floats()?,
            terminal: self.bool()?,
        })
    }

    fn summary(&mut self) -> Result<EpisodeSummary, ProtocolError> {
        Ok(EpisodeSummary {
            segment_start: self.f64()?,
            steps: self.u32()?,
            total_reward: self.f64()?,
            cumulative_nox: self.f64()?,
            cumulative_soot: self.f64()?,
            mean_abs_boost_error: self.f64()?,
            mean_abs_speed_error: self.f64()?,
            failure: self.bool()?,
            component_totals: [self.f64()?, self.f64()?, self.f64()?, self.f64()?, self.f64()?],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heartbeat_frame_layout() {
        let bytes = encode(&Message::Heartbeat);
        assert_eq!(bytes.len(), 13);
        assert_eq!(&bytes[4..9], &[msg_type::HEARTBEAT, 0, 0, 0, 0]);
        assert_eq!(decode(&bytes).unwrap(), Message::Heartbeat);
    }

    #[test]
    fn record_size_matches_layout() {
        let msg = Message::Experiences {
            cycle_id: 1,
            records: vec![ExperienceRecord::default(); 3],
        };
        assert_eq!(msg.encode_payload().len(), 12 + 3 * 133);
        assert_eq!(ExperienceRecord::SIZE, 133);
    }

    #[test]
    fn summary_size_matches_layout() {
        let mut w = Vec::new();
        put_summary(
            &mut w,
            &EpisodeSummary {
                segment_start: 0.0,
                steps: 0,
                total_reward: 0.0,
                cumulative_nox: 0.0,
                cumulative_soot: 0.0,
                mean_abs_boost_error: 0.0,
                mean_abs_speed_error: 0.0,
                failure: false,
                component_totals: [0.0; 5],
            },
        );
        assert_eq!(w.len(), SUMMARY_SIZE);
    }

    #[test]
    fn rejects_noncanonical_flag() {
        let msg = Message::Experiences {
            cycle_id: 1,
            records: vec![ExperienceRecord::default()],
        };
        let mut payload = msg.encode_payload();
        *payload.last_mut().unwrap() = 2;
        assert!(matches!(
            Message::decode_payload(msg_type::EXPERIENCES, &payload),
            Err(ProtocolError::Malformed { .. })
        ));
    }

    #[test]
    fn lying_count_does_not_allocate() {
        let mut payload = 7u64.to_le_bytes().to_vec();
        payload.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            Message::decode_payload(msg_type::EXPERIENCES, &payload),
            Err(ProtocolError::Malformed { .. })
        ));
    }

    #[test]
    fn unknown_type() {
        let bytes = encode_frame(0x42, &[]);
        assert!(matches!(decode(&bytes), Err(ProtocolError::UnknownType(0x42))));
    }

    #[test]
    fn chunks_cover_everything_once() {
        let exps = vec![Experience::default(); 9200];
        let sizes: Vec<usize> = experience_chunks(3, &exps)
            .map(|m| match m {
                Message::Experiences { records, .. } => records.len(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(sizes.iter().sum::<usize>(), 9200);
        assert!(sizes.iter().all(|&n| n <= MAX_CHUNK));
    }
}
