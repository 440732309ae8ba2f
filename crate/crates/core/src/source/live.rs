//! Live sampling through `perf_event_open(2)`.

use std::fs;
use std::io;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::path::Path;
use std::ptr;
use std::sync::atomic::{fence, Ordering};

use super::ring::{decode_ring, Record};
use super::{AttachMode, Batch, SourceConfig, SourceError, SourceStats, Target};

const PERF_TYPE_SOFTWARE: u32 = 1;
const PERF_COUNT_SW_CPU_CLOCK: u64 = 0;

const PERF_SAMPLE_IP: u64 = 1 << 0;
const PERF_SAMPLE_TID: u64 = 1 << 1;
const PERF_SAMPLE_TIME: u64 = 1 << 2;
const PERF_SAMPLE_CALLCHAIN: u64 = 1 << 5;
const PERF_SAMPLE_CPU: u64 = 1 << 7;

const FLAG_DISABLED: u64 = 1 << 0;
const FLAG_INHERIT: u64 = 1 << 1;
const FLAG_MMAP: u64 = 1 << 8;
const FLAG_FREQ: u64 = 1 << 10;
const FLAG_USE_CLOCKID: u64 = 1 << 25;

const PERF_FLAG_FD_CLOEXEC: libc::c_ulong = 1 << 3;
const PERF_FLAG_PID_CGROUP: libc::c_ulong = 1 << 2;

// _IO('$', 0) / _IO('$', 1)
const PERF_EVENT_IOC_ENABLE: libc::c_ulong = 0x2400;
const PERF_EVENT_IOC_DISABLE: libc::c_ulong = 0x2401;

// Offsets into `struct perf_event_mmap_page`.
const DATA_HEAD_OFFSET: usize = 1024;
const DATA_TAIL_OFFSET: usize = 1032;

/// `struct perf_event_attr` up to `PERF_ATTR_SIZE_VER6`.
#[repr(C)]
#[derive(Default)]
struct PerfEventAttr {
    type_: u32,
    size: u32,
    config: u64,
    sample_period_or_freq: u64,
    sample_type: u64,
    read_format: u64,
    flags: u64,
    wakeup_events: u32,
    bp_type: u32,
    config1: u64,
    config2: u64,
    branch_sample_type: u64,
    sample_regs_user: u64,
    sample_stack_user: u32,
    clockid: i32,
    sample_regs_intr: u64,
    aux_watermark: u32,
    sample_max_stack: u16,
    reserved_2: u16,
    aux_sample_size: u32,
    reserved_3: u32,
}

const _: () = assert!(std::mem::size_of::<PerfEventAttr>() == 120);

struct Descriptor {
    fd: OwnedFd,
    base: *mut u8,
    map_len: usize,
    data_len: usize,
    page_size: usize,
}

// The mapping is only touched through `&mut self` by the owning session.
unsafe impl Send for Descriptor {}

impl Descriptor {
    fn head(&self) -> u64 {
        // SAFETY: the metadata page is mapped for the lifetime of `self`.
        let head = unsafe { ptr::read_volatile(self.base.add(DATA_HEAD_OFFSET) as *const u64) };
        fence(Ordering::Acquire);
        head
    }

    fn tail(&self) -> u64 {
        unsafe { ptr::read_volatile(self.base.add(DATA_TAIL_OFFSET) as *const u64) }
    }

    fn set_tail(&mut self, tail: u64) {
        fence(Ordering::SeqCst);
        unsafe { ptr::write_volatile(self.base.add(DATA_TAIL_OFFSET) as *mut u64, tail) };
    }

    fn data(&self) -> &[u8] {
        unsafe { std::slice::from_raw_parts(self.base.add(self.page_size), self.data_len) }
    }
}

impl Drop for Descriptor {
    fn drop(&mut self) {
        unsafe {
            libc::ioctl(self.fd.as_raw_fd(), PERF_EVENT_IOC_DISABLE as _, 0);
            libc::munmap(self.base as *mut libc::c_void, self.map_len);
        }
    }
}

pub(crate) struct LiveBackend {
    descriptors: Vec<Descriptor>,
    mode: AttachMode,
}

fn paranoia() -> String {
    fs::read_to_string("/proc/sys/kernel/perf_event_paranoid")
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|_| "unknown".into())
}

/// Parses the kernel's cpu list syntax, e.g. `0-3,6,8-9`.
pub(crate) fn parse_cpu_list(s: &str) -> Vec<u32> {
    let mut cpus = Vec::new();
    for part in s.trim().split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                if let (Ok(a), Ok(b)) = (a.parse::<u32>(), b.parse::<u32>()) {
                    cpus.extend(a..=b);
                }
            }
            None => {
                if let Ok(c) = part.parse() {
                    cpus.push(c);
                }
            }
        }
    }
    cpus
}

fn online_cpus() -> io::Result<Vec<u32>> {
    let cpus = parse_cpu_list(&fs::read_to_string("/sys/devices/system/cpu/online")?);
    if cpus.is_empty() {
        return Err(io::Error::other("no online cpus"));
    }
    Ok(cpus)
}

fn build_attr(config: &SourceConfig, inherit: bool) -> PerfEventAttr {
    let mut attr = PerfEventAttr {
        type_: PERF_TYPE_SOFTWARE,
        size: std::mem::size_of::<PerfEventAttr>() as u32,
        config: PERF_COUNT_SW_CPU_CLOCK,
        sample_type: PERF_SAMPLE_IP
            | PERF_SAMPLE_TID
            | PERF_SAMPLE_TIME
            | PERF_SAMPLE_CPU
            | PERF_SAMPLE_CALLCHAIN,
        flags: FLAG_DISABLED | FLAG_MMAP | FLAG_USE_CLOCKID,
        clockid: libc::CLOCK_MONOTONIC,
        sample_max_stack: config.max_stack_depth as u16,
        ..Default::default()
    };
    match config.frequency {
        Some(hz) => {
            attr.sample_period_or_freq = hz;
            attr.flags |= FLAG_FREQ;
        }
        // cpu-clock periods are in nanoseconds
        None => attr.sample_period_or_freq = config.period.as_nanos().max(1) as u64,
    }
    if inherit {
        attr.flags |= FLAG_INHERIT;
    }
    attr
}

fn map_error(err: io::Error, what: &str) -> SourceError {
    match err.raw_os_error() {
        Some(libc::EACCES) | Some(libc::EPERM) => SourceError::PermissionDenied(format!(
            "{what}: {err} (kernel.perf_event_paranoid = {})",
            paranoia()
        )),
        Some(libc::ESRCH) | Some(libc::ENOENT) => SourceError::NoSuchTarget(format!("{what}: {err}")),
        Some(libc::ENOSYS) | Some(libc::EOPNOTSUPP) | Some(libc::ENODEV) => {
            SourceError::UnsupportedKernel(format!("{what}: {err}"))
        }
        _ => SourceError::Io(io::Error::new(err.kind(), format!("{what}: {err}"))),
    }
}

fn perf_event_open(
    attr: &PerfEventAttr,
    pid: libc::pid_t,
    cpu: i32,
    flags: libc::c_ulong,
) -> io::Result<OwnedFd> {
    // SAFETY: attr points to a properly sized, initialised attribute struct.
    let fd = unsafe {
        libc::syscall(
            libc::SYS_perf_event_open,
            attr as *const PerfEventAttr,
            pid,
            cpu,
            -1i32,
            flags | PERF_FLAG_FD_CLOEXEC,
        )
    };
    if fd < 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(unsafe { OwnedFd::from_raw_fd(fd as i32) })
}

fn map_descriptor(fd: OwnedFd, ring_pages: usize) -> io::Result<Descriptor> {
    let page_size = unsafe { libc::sysconf(libc::_SC_PAGESIZE) } as usize;
    let map_len = (ring_pages + 1) * page_size;
    let base = unsafe {
        libc::mmap(
            ptr::null_mut(),
            map_len,
            libc::PROT_READ | libc::PROT_WRITE,
            libc::MAP_SHARED,
            fd.as_raw_fd(),
            0,
        )
    };
    if base == libc::MAP_FAILED {
        return Err(io::Error::last_os_error());
    }
    Ok(Descriptor {
        fd,
        base: base as *mut u8,
        map_len,
        data_len: ring_pages * page_size,
        page_size,
    })
}

fn pids_in_cgroup(dir: &Path) -> io::Result<Vec<u32>> {
    Ok(fs::read_to_string(dir.join("cgroup.procs"))?
        .lines()
        .filter_map(|l| l.trim().parse().ok())
        .collect())
}

impl LiveBackend {
    pub(crate) fn open(config: &SourceConfig) -> Result<Self, SourceError> {
        let cpus = online_cpus()?;
        let (descriptors, mode) = match &config.target {
            Target::Cgroup(dir) => {
                if !dir.is_dir() {
                    return Err(SourceError::NoSuchTarget(format!(
                        "control group {} does not exist",
                        dir.display()
                    )));
                }
                match Self::open_cgroup(config, dir, &cpus) {
                    Ok(d) => (d, AttachMode::Cgroup),
                    Err(SourceError::UnsupportedKernel(why)) | Err(SourceError::InvalidConfig(why)) => {
                        log::warn!(
                            "cgroup-scoped sampling unavailable ({why}); attaching to current members of {}",
                            dir.display()
                        );
                        let pids = pids_in_cgroup(dir)?;
                        let mut all = Vec::new();
                        for pid in pids {
                            all.extend(Self::open_pid(config, pid, &cpus)?);
                        }
                        (all, AttachMode::PerPid)
                    }
                    Err(e) => return Err(e),
                }
            }
            Target::Pid(pid) => {
                if !Path::new(&format!("/proc/{pid}")).exists() {
                    return Err(SourceError::NoSuchTarget(format!("pid {pid} does not exist")));
                }
                (Self::open_pid(config, *pid, &cpus)?, AttachMode::PerPid)
            }
            Target::File(p) => {
                return Err(SourceError::InvalidConfig(format!(
                    "cannot sample file {} live",
                    p.display()
                )))
            }
        };
        for d in &descriptors {
            if unsafe { libc::ioctl(d.fd.as_raw_fd(), PERF_EVENT_IOC_ENABLE as _, 0) } < 0 {
                return Err(map_error(io::Error::last_os_error(), "enabling perf event"));
            }
        }
        Ok(LiveBackend { descriptors, mode })
    }

    fn open_cgroup(
        config: &SourceConfig,
        dir: &Path,
        cpus: &[u32],
    ) -> Result<Vec<Descriptor>, SourceError> {
        let group = fs::File::open(dir).map_err(|e| map_error(e, "opening control group"))?;
        let attr = build_attr(config, false);
        let mut out = Vec::with_capacity(cpus.len());
        for &cpu in cpus {
            let fd = perf_event_open(&attr, group.as_raw_fd(), cpu as i32, PERF_FLAG_PID_CGROUP)
                .map_err(|e| match e.raw_os_error() {
                    // EBADF/EINVAL here mean the kernel cannot scope events to a cgroup.
                    Some(libc::EBADF) | Some(libc::EINVAL) => {
                        SourceError::UnsupportedKernel(format!("cgroup perf events: {e}"))
                    }
                    _ => map_error(e, "perf_event_open(cgroup)"),
                })?;
            out.push(map_descriptor(fd, config.ring_pages).map_err(|e| map_error(e, "mmap ring"))?);
        }
        Ok(out)
    }

    fn open_pid(config: &SourceConfig, pid: u32, cpus: &[u32]) -> Result<Vec<Descriptor>, SourceError> {
        let attr = build_attr(config, true);
        let mut out = Vec::with_capacity(cpus.len());
        for &cpu in cpus {
            let fd = perf_event_open(&attr, pid as libc::pid_t, cpu as i32, 0)
                .map_err(|e| map_error(e, "perf_event_open(pid)"))?;
            out.push(map_descriptor(fd, config.ring_pages).map_err(|e| map_error(e, "mmap ring"))?);
        }
        Ok(out)
    }

    pub(crate) fn attach_mode(&self) -> AttachMode {
        self.mode
    }

    pub(crate) fn poll(&mut self, stats: &mut SourceStats, max_depth: u32) -> Result<Batch, SourceError> {
        let mut batch = Batch::default();
        for d in &mut self.descriptors {
            let head = d.head();
            let tail = d.tail();
            if head == tail {
                continue;
            }
            let (records, new_tail, err) = decode_ring(d.data(), tail, head, max_depth as usize);
            if let Some(err) = err {
                // The kernel never publishes partial records; resynchronise at head.
                log::warn!("ring decode stopped at {}: {}", err.offset, err.reason);
                stats.bytes_consumed += head - tail;
                d.set_tail(head);
            } else {
                stats.bytes_consumed += new_tail - tail;
                d.set_tail(new_tail);
            }
            for rec in records {
                match rec {
                    Record::Sample(Some(s)) => batch.samples.push(s),
                    Record::Sample(None) => stats.samples_dropped_empty += 1,
                    Record::Lost { lost, .. } => stats.records_lost += lost,
                    Record::Mmap(ev) => batch.mmap_events.push(ev),
                    Record::Other { .. } => {}
                }
            }
        }
        Ok(batch)
    }
}
