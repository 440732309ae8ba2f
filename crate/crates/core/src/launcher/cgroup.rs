use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use crate::source::cgroup::{is_cgroup_dir, parse_mountinfo};

static NEXT_GROUP: AtomicU64 = AtomicU64::new(0);

/// A control group used to scope sampling. Groups created here are killed
/// and removed on drop; adopted ones are left alone.
#[derive(Debug)]
pub struct ControlGroup {
    path: PathBuf,
    created: bool,
}

impl ControlGroup {
    /// Creates (or adopts) a group in the unified hierarchy. `name` may be a
    /// plain name, a path relative to the mount, or an absolute path to an
    /// existing group directory.
    pub fn create(name: Option<&str>) -> Result<Self, String> {
        let text = std::fs::read_to_string("/proc/self/mountinfo").map_err(|e| format!("mountinfo: {e}"))?;
        let mounts = parse_mountinfo(&text);
        if mounts
            .iter()
            .any(|m| m.version == 1 && m.controllers.iter().any(|c| c == "perf_event"))
        {
            return Err("the perf_event controller is on a legacy hierarchy".into());
        }
        let mount = mounts
            .iter()
            .find(|m| m.version == 2)
            .map(|m| m.mount_point.clone())
            .ok_or("no unified control-group hierarchy mounted")?;
        let path = match name {
            Some(n) if Path::new(n).is_absolute() => PathBuf::from(n),
            Some(n) => mount.join(n),
            None => mount.join(format!(
                "stackscope-{}-{}",
                std::process::id(),
                NEXT_GROUP.fetch_add(1, Ordering::Relaxed)
            )),
        };
        if is_cgroup_dir(&path) {
            return Ok(ControlGroup { path, created: false });
        }
        if !path.starts_with(&mount) {
            return Err(format!("{} is not inside {}", path.display(), mount.display()));
        }
        std::fs::create_dir(&path).map_err(|e| format!("create {}: {e}", path.display()))?;
        Ok(ControlGroup { path, created: true })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn created(&self) -> bool {
        self.created
    }

    /// Path of the group relative to its mount, as seen in `/proc/<pid>/cgroup`.
    pub fn relative(&self) -> Option<String> {
        let text = std::fs::read_to_string("/proc/self/mountinfo").ok()?;
        let m = parse_mountinfo(&text).into_iter().find(|m| m.version == 2)?;
        let rel = self.path.strip_prefix(&m.mount_point).ok()?;
        Some(format!("/{}", rel.display()))
    }

    pub fn procs(&self) -> Vec<u32> {
        std::fs::read_to_string(self.path.join("cgroup.procs"))
            .map(|t| t.lines().filter_map(|l| l.trim().parse().ok()).collect())
            .unwrap_or_default()
    }

    /// Writes raw attribute files; failures are logged, not fatal.
    pub fn apply_attributes(&self, attrs: &BTreeMap<String, String>) {
        for (k, v) in attrs {
            if k.contains('/') {
                log::warn!("ignoring group attribute {k:?}");
                continue;
            }
            if let Err(e) = std::fs::write(self.path.join(k), v) {
                log::warn!("cannot set {k}={v} on {}: {e}", self.path.display());
            }
        }
    }

    /// Kills every process in the group.
    pub fn kill_all(&self) {
        if std::fs::write(self.path.join("cgroup.kill"), "1").is_ok() {
            return;
        }
        for pid in self.procs() {
            // SAFETY: plain syscall on an integer id
            unsafe { libc::kill(pid as i32, libc::SIGKILL) };
        }
    }

    fn remove(&mut self) {
        if !self.created {
            return;
        }
        if !self.procs().is_empty() {
            self.kill_all();
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match std::fs::remove_dir(&self.path) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => break,
                Err(e) if Instant::now() >= deadline => {
                    log::warn!("cannot remove {}: {e}", self.path.display());
                    break;
                }
                Err(_) => std::thread::sleep(Duration::from_millis(10)),
            }
        }
        self.created = false;
    }
}

impl Drop for ControlGroup {
    fn drop(&mut self) {
        self.remove();
    }
}
