//! Decoding of perf ring-buffer records.
//!
//! Only the record kinds the sampler asks for are decoded: samples laid out
//! as `IP | TID | TIME | CPU | CALLCHAIN`, lost-record notifications and
//! executable mmap notifications. Everything else is skipped by size.

use super::{FrameContext, RawSample};

pub const PERF_RECORD_MMAP: u32 = 1;
pub const PERF_RECORD_LOST: u32 = 2;
pub const PERF_RECORD_SAMPLE: u32 = 9;

const HEADER_SIZE: usize = 8;

// Call-chain context sentinels (see `enum perf_callchain_context`).
pub const PERF_CONTEXT_HV: u64 = -32i64 as u64;
pub const PERF_CONTEXT_KERNEL: u64 = -128i64 as u64;
pub const PERF_CONTEXT_USER: u64 = -512i64 as u64;
pub const PERF_CONTEXT_GUEST: u64 = -2048i64 as u64;
pub const PERF_CONTEXT_GUEST_KERNEL: u64 = -2176i64 as u64;
pub const PERF_CONTEXT_GUEST_USER: u64 = -2560i64 as u64;
pub const PERF_CONTEXT_MAX: u64 = -4095i64 as u64;

/// An mmap notification forwarded to the symbolizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MmapEvent {
    pub pid: u32,
    pub tid: u32,
    pub addr: u64,
    pub len: u64,
    pub pgoff: u64,
    pub filename: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    /// A sample; `None` when every call-chain entry was a sentinel.
    Sample(Option<RawSample>),
    Lost { id: u64, lost: u64 },
    Mmap(MmapEvent),
    Other { kind: u32, size: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    pub offset: u64,
    pub reason: &'static str,
}

/// Splits a raw call chain into addresses and per-frame contexts.
///
/// Frames after a context sentinel take that sentinel's context; frames
/// before any sentinel are `Unknown`. Guest and hypervisor frames are kept
/// but marked `Unknown`. At most `max_depth` addresses are returned.
pub fn split_callchain(chain: &[u64], max_depth: usize) -> (Vec<u64>, Vec<FrameContext>) {
    let mut frames = Vec::with_capacity(chain.len().min(max_depth));
    let mut contexts = Vec::with_capacity(chain.len().min(max_depth));
    let mut ctx = FrameContext::Unknown;
    for &ip in chain {
        if ip >= PERF_CONTEXT_MAX {
            ctx = match ip {
                PERF_CONTEXT_KERNEL => FrameContext::Kernel,
                PERF_CONTEXT_USER => FrameContext::User,
                _ => FrameContext::Unknown,
            };
            continue;
        }
        if frames.len() == max_depth {
            break;
        }
        frames.push(ip);
        contexts.push(ctx);
    }
    (frames, contexts)
}

fn u16_at(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes(b[off..off + 2].try_into().unwrap())
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

/// Decodes one record body (header included) laid out contiguously.
pub fn decode_record(rec: &[u8], max_depth: usize) -> Result<Record, &'static str> {
    if rec.len() < HEADER_SIZE {
        return Err("record shorter than header");
    }
    let kind = u32_at(rec, 0);
    let size = u16_at(rec, 6);
    match kind {
        PERF_RECORD_SAMPLE => {
            // ip, pid/tid, time, cpu/res, nr
            if rec.len() < HEADER_SIZE + 40 {
                return Err("truncated sample record");
            }
            let mut off = HEADER_SIZE + 8; // skip ip; the call chain repeats it
            let pid = u32_at(rec, off);
            let tid = u32_at(rec, off + 4);
            off += 8;
            let time = u64_at(rec, off);
            off += 8;
            let cpu = u32_at(rec, off);
            off += 8;
            let nr = u64_at(rec, off) as usize;
            off += 8;
            if nr > (rec.len() - off) / 8 {
                return Err("call chain overruns record");
            }
            let chain: Vec<u64> = (0..nr).map(|i| u64_at(rec, off + 8 * i)).collect();
            let (frames, contexts) = split_callchain(&chain, max_depth);
            if frames.is_empty() {
                return Ok(Record::Sample(None));
            }
            Ok(Record::Sample(Some(RawSample {
                timestamp: time,
                pid,
                tid,
                cpu,
                frames,
                contexts,
            })))
        }
        PERF_RECORD_LOST => {
            if rec.len() < HEADER_SIZE + 16 {
                return Err("truncated lost record");
            }
            Ok(Record::Lost {
                id: u64_at(rec, HEADER_SIZE),
                lost: u64_at(rec, HEADER_SIZE + 8),
            })
        }
        PERF_RECORD_MMAP => {
            if rec.len() < HEADER_SIZE + 32 {
                return Err("truncated mmap record");
            }
            let name = &rec[HEADER_SIZE + 32..];
            let end = name.iter().position(|&c| c == 0).unwrap_or(name.len());
            Ok(Record::Mmap(MmapEvent {
                pid: u32_at(rec, HEADER_SIZE),
                tid: u32_at(rec, HEADER_SIZE + 4),
                addr: u64_at(rec, HEADER_SIZE + 8),
                len: u64_at(rec, HEADER_SIZE + 16),
                pgoff: u64_at(rec, HEADER_SIZE + 24),
                filename: String::from_utf8_lossy(&name[..end]).into_owned(),
            }))
        }
        _ => Ok(Record::Other { kind, size }),
    }
}

/// Decodes every complete record between `tail` and `head` in a ring whose
/// data area is `data` (length a power of two). Positions are the kernel's
/// free-running byte counters.
///
/// Returns the records and the new tail. Decoding stops early at a record
/// whose header size is zero or overruns `head`, leaving the tail there.
pub fn decode_ring(
    data: &[u8],
    mut tail: u64,
    head: u64,
    max_depth: usize,
) -> (Vec<Record>, u64, Option<DecodeError>) {
    let size = data.len() as u64;
    debug_assert!(size.is_power_of_two());
    let mut out = Vec::new();
    let mut scratch = Vec::new();
    while head.saturating_sub(tail) >= HEADER_SIZE as u64 {
        let start = (tail % size) as usize;
        let mut hdr = [0u8; HEADER_SIZE];
        copy_wrapped(data, start, &mut hdr);
        let rec_size = u16::from_le_bytes([hdr[6], hdr[7]]) as u64;
        if rec_size < HEADER_SIZE as u64 || tail + rec_size > head {
            let err = DecodeError {
                offset: tail,
                reason: "record size inconsistent with ring head",
            };
            return (out, tail, Some(err));
        }
        scratch.resize(rec_size as usize, 0);
        copy_wrapped(data, start, &mut scratch);
        match decode_record(&scratch, max_depth) {
            Ok(rec) => out.push(rec),
            Err(reason) => {
                log::debug!("skipping malformed record at {tail}: {reason}");
            }
        }
        tail += rec_size;
    }
    (out, tail, None)
}

fn copy_wrapped(data: &[u8], start: usize, dst: &mut [u8]) {
    let first = dst.len().min(data.len() - start);
    dst[..first].copy_from_slice(&data[start..start + first]);
    let rest = dst.len() - first;
    dst[first..].copy_from_slice(&data[..rest]);
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample_record(pid: u32, tid: u32, time: u64, cpu: u32, chain: &[u64]) -> Vec<u8> {
        let size = HEADER_SIZE + 40 + 8 * chain.len();
        let mut r = Vec::with_capacity(size);
        r.extend_from_slice(&PERF_RECORD_SAMPLE.to_le_bytes());
        r.extend_from_slice(&0u16.to_le_bytes());
        r.extend_from_slice(&(size as u16).to_le_bytes());
        r.extend_from_slice(&chain.first().copied().unwrap_or(0).to_le_bytes());
        r.extend_from_slice(&pid.to_le_bytes());
        r.extend_from_slice(&tid.to_le_bytes());
        r.extend_from_slice(&time.to_le_bytes());
        r.extend_from_slice(&cpu.to_le_bytes());
        r.extend_from_slice(&0u32.to_le_bytes());
        r.extend_from_slice(&(chain.len() as u64).to_le_bytes());
        for ip in chain {
            r.extend_from_slice(&ip.to_le_bytes());
        }
        r
    }

    pub(crate) fn lost_record(lost: u64) -> Vec<u8> {
        let mut r = Vec::new();
        r.extend_from_slice(&PERF_RECORD_LOST.to_le_bytes());
        r.extend_from_slice(&0u16.to_le_bytes());
        r.extend_from_slice(&24u16.to_le_bytes());
        r.extend_from_slice(&7u64.to_le_bytes());
        r.extend_from_slice(&lost.to_le_bytes());
        r
    }

    fn mmap_record(addr: u64, name: &str) -> Vec<u8> {
        let mut name = name.as_bytes().to_vec();
        name.push(0);
        while !name.len().is_multiple_of(8) {
            name.push(0);
        }
        let size = HEADER_SIZE + 32 + name.len();
        let mut r = Vec::new();
        r.extend_from_slice(&PERF_RECORD_MMAP.to_le_bytes());
        r.extend_from_slice(&0u16.to_le_bytes());
        r.extend_from_slice(&(size as u16).to_le_bytes());
        r.extend_from_slice(&42u32.to_le_bytes());
        r.extend_from_slice(&42u32.to_le_bytes());
        r.extend_from_slice(&addr.to_le_bytes());
        r.extend_from_slice(&0x1000u64.to_le_bytes());
        r.extend_from_slice(&0u64.to_le_bytes());
        r.extend_from_slice(&name);
        r
    }

    fn page(records: &[Vec<u8>]) -> (Vec<u8>, u64) {
        let mut data = vec![0u8; 4096];
        let mut pos = 0;
        for r in records {
            data[pos..pos + r.len()].copy_from_slice(r);
            pos += r.len();
        }
        (data, pos as u64)
    }

    #[test]
    fn three_samples_decode_in_order() {
        let recs: Vec<_> = (0..3)
            .map(|i| sample_record(10, 11, 100 + i, 0, &[PERF_CONTEXT_USER, 0x4000 + i, 0x5000]))
            .collect();
        let (data, head) = page(&recs);
        let (out, tail, err) = decode_ring(&data, 0, head, 127);
        assert!(err.is_none());
        assert_eq!(tail, head);
        assert_eq!(out.len(), 3);
        for (i, r) in out.iter().enumerate() {
            let Record::Sample(Some(s)) = r else { panic!("{r:?}") };
            assert_eq!(s.timestamp, 100 + i as u64);
            assert_eq!(s.frames, vec![0x4000 + i as u64, 0x5000]);
            assert_eq!(s.contexts, vec![FrameContext::User; 2]);
        }
    }

    #[test]
    fn lost_notification_decodes_count() {
        let (data, head) = page(&[lost_record(42)]);
        let (out, _, _) = decode_ring(&data, 0, head, 127);
        assert_eq!(out, vec![Record::Lost { id: 7, lost: 42 }]);
    }

    #[test]
    fn empty_ring_yields_nothing() {
        let data = vec![0u8; 4096];
        let (out, tail, err) = decode_ring(&data, 128, 128, 127);
        assert!(out.is_empty() && err.is_none());
        assert_eq!(tail, 128);
    }

    #[test]
    fn mmap_record_carries_filename() {
        let (data, head) = page(&[mmap_record(0x7f00_0000_0000, "/usr/lib/libfoo.so")]);
        let (out, _, _) = decode_ring(&data, 0, head, 127);
        let Record::Mmap(ev) = &out[0] else { panic!() };
        assert_eq!(ev.filename, "/usr/lib/libfoo.so");
        assert_eq!(ev.addr, 0x7f00_0000_0000);
        assert_eq!(ev.pid, 42);
    }

    #[test]
    fn records_straddling_the_wrap_point() {
        let rec = sample_record(1, 2, 3, 0, &[PERF_CONTEXT_KERNEL, 0xffff_ffff_8100_0000, PERF_CONTEXT_USER, 0x1234]);
        let mut data = vec![0u8; 256];
        let tail = 256 - 20 + 256 * 3; // kernel counters run past the ring size
        for (i, b) in rec.iter().enumerate() {
            data[(tail as usize + i) % 256] = *b;
        }
        let head = tail + rec.len() as u64;
        let (out, new_tail, _) = decode_ring(&data, tail, head, 127);
        assert_eq!(new_tail, head);
        let Record::Sample(Some(s)) = &out[0] else { panic!() };
        assert_eq!(s.frames, vec![0xffff_ffff_8100_0000, 0x1234]);
        assert_eq!(s.contexts, vec![FrameContext::Kernel, FrameContext::User]);
    }

    #[test]
    fn all_sentinel_chain_is_dropped() {
        let (data, head) = page(&[sample_record(1, 1, 1, 0, &[PERF_CONTEXT_KERNEL, PERF_CONTEXT_USER])]);
        let (out, _, _) = decode_ring(&data, 0, head, 127);
        assert_eq!(out, vec![Record::Sample(None)]);
    }

    #[test]
    fn truncated_record_stops_decoding() {
        let rec = sample_record(1, 1, 1, 0, &[0x10, 0x20]);
        let (data, _) = page(std::slice::from_ref(&rec));
        let (out, tail, err) = decode_ring(&data, 0, rec.len() as u64 - 8, 127);
        assert!(out.is_empty());
        assert_eq!(tail, 0);
        assert!(err.is_some());
    }

    #[test]
    fn depth_cap_applies_after_sentinels() {
        let chain = [PERF_CONTEXT_USER, 1, 2, 3, 4, 5];
        let (frames, ctx) = split_callchain(&chain, 3);
        assert_eq!(frames, vec![1, 2, 3]);
        assert_eq!(ctx.len(), 3);
    }

    #[test]
    fn guest_and_hv_frames_are_unknown() {
        let chain = [PERF_CONTEXT_HV, 9, PERF_CONTEXT_GUEST_KERNEL, 8, PERF_CONTEXT_GUEST_USER, 7, PERF_CONTEXT_GUEST, 6];
        let (frames, ctx) = split_callchain(&chain, 127);
        assert_eq!(frames, vec![9, 8, 7, 6]);
        assert!(ctx.iter().all(|c| *c == FrameContext::Unknown));
    }
}
