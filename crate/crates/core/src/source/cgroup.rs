//! Locating the control group that governs a process.

use std::path::{Path, PathBuf};

use super::SourceError;

/// One line of `/proc/<pid>/cgroup`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CgroupLine {
    pub hierarchy: u32,
    pub controllers: Vec<String>,
    pub path: String,
}

pub fn parse_cgroup_file(text: &str) -> Result<Vec<CgroupLine>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.splitn(3, ':');
            let (Some(h), Some(c), Some(p)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(format!("malformed line {l:?}"));
            };
            let hierarchy = h.parse().map_err(|_| format!("bad hierarchy id in {l:?}"))?;
            let controllers = c
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            Ok(CgroupLine {
                hierarchy,
                controllers,
                path: p.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CgroupMount {
    pub root: String,
    pub mount_point: PathBuf,
    pub version: u8,
    pub controllers: Vec<String>,
}

/// Extracts cgroup mounts from `/proc/self/mountinfo`.
pub fn parse_mountinfo(text: &str) -> Vec<CgroupMount> {
    let mut out = Vec::new();
    for line in text.lines() {
        let Some((pre, post)) = line.split_once(" - ") else { continue };
        let pre: Vec<&str> = pre.split_whitespace().collect();
        let post: Vec<&str> = post.split_whitespace().collect();
        if pre.len() < 5 || post.is_empty() {
            continue;
        }
        let root = pre[3].to_string();
        let mount_point = PathBuf::from(unescape_mount(pre[4]));
        match post[0] {
            "cgroup2" => out.push(CgroupMount {
                root,
                mount_point,
                version: 2,
                controllers: Vec::new(),
            }),
            "cgroup" => {
                let opts = post.get(2).copied().unwrap_or("");
                out.push(CgroupMount {
                    root,
                    mount_point,
                    version: 1,
                    controllers: opts
                        .split(',')
                        .filter(|o| !matches!(*o, "rw" | "ro") && !o.contains('='))
                        .map(str::to_string)
                        .collect(),
                })
            }
            _ => {}
        }
    }
    out
}

fn unescape_mount(s: &str) -> String {
    s.replace("\\040", " ").replace("\\011", "\t").replace("\\134", "\\")
}

fn join_cgroup(mount: &CgroupMount, path: &str) -> PathBuf {
    // Paths in /proc/<pid>/cgroup are relative to the mount's root.
    let rel = path
        .strip_prefix(mount.root.trim_end_matches('/'))
        .unwrap_or(path)
        .trim_start_matches('/');
    if rel.is_empty() {
        mount.mount_point.clone()
    } else {
        mount.mount_point.join(rel)
    }
}

/// Picks the group directory used for perf scoping: the legacy `perf_event`
/// controller hierarchy when one is mounted, otherwise the unified hierarchy.
pub fn select_cgroup_path(lines: &[CgroupLine], mounts: &[CgroupMount]) -> Result<PathBuf, String> {
    let v1_perf = lines
        .iter()
        .find(|l| l.hierarchy != 0 && l.controllers.iter().any(|c| c == "perf_event"));
    if let Some(line) = v1_perf {
        if let Some(m) = mounts
            .iter()
            .find(|m| m.version == 1 && m.controllers.iter().any(|c| c == "perf_event"))
        {
            return Ok(join_cgroup(m, &line.path));
        }
    }
    let unified = lines
        .iter()
        .find(|l| l.hierarchy == 0 && l.controllers.is_empty())
        .ok_or("no unified (0::) entry and no perf_event hierarchy")?;
    let mount = mounts
        .iter()
        .find(|m| m.version == 2)
        .ok_or("unified hierarchy is not mounted")?;
    Ok(join_cgroup(mount, &unified.path))
}

/// Returns the control-group directory governing `pid`.
pub fn resolve_cgroup_of(pid: u32) -> Result<PathBuf, SourceError> {
    let file = format!("/proc/{pid}/cgroup");
    let text = std::fs::read_to_string(&file).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => SourceError::NoSuchTarget(format!("pid {pid} does not exist")),
        _ => SourceError::Io(e),
    })?;
    let lines = parse_cgroup_file(&text).map_err(|reason| SourceError::UnparsableCgroupFile {
        path: file.clone(),
        reason,
    })?;
    let mounts = parse_mountinfo(&std::fs::read_to_string("/proc/self/mountinfo")?);
    select_cgroup_path(&lines, &mounts)
        .map_err(|reason| SourceError::UnparsableCgroupFile { path: file, reason })
}

/// Mount point of the unified hierarchy, if any.
pub fn unified_mount() -> Option<PathBuf> {
    let text = std::fs::read_to_string("/proc/self/mountinfo").ok()?;
    parse_mountinfo(&text)
        .into_iter()
        .find(|m| m.version == 2)
        .map(|m| m.mount_point)
}

pub fn is_cgroup_dir(p: &Path) -> bool {
    p.join("cgroup.procs").is_file()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HYBRID_MOUNTINFO: &str = "\
30 25 0:26 / /sys/fs/cgroup ro,nosuid - tmpfs tmpfs ro,mode=755
32 30 0:28 / /sys/fs/cgroup/unified rw,relatime - cgroup2 cgroup2 rw
35 30 0:31 / /sys/fs/cgroup/perf_event rw,relatime - cgroup cgroup rw,perf_event
36 30 0:32 / /sys/fs/cgroup/cpu,cpuacct rw,relatime - cgroup cgroup rw,cpu,cpuacct
";

    const V2_MOUNTINFO: &str = "25 1 0:22 / /sys/fs/cgroup rw,nosuid - cgroup2 cgroup2 rw,nsdelegate\n";

    #[test]
    fn unified_hierarchy_returns_single_path() {
        let lines = parse_cgroup_file("0::/user.slice/g5run\n").unwrap();
        let p = select_cgroup_path(&lines, &parse_mountinfo(V2_MOUNTINFO)).unwrap();
        assert_eq!(p, PathBuf::from("/sys/fs/cgroup/user.slice/g5run"));
    }

    #[test]
    fn root_group() {
        let lines = parse_cgroup_file("0::/\n").unwrap();
        let p = select_cgroup_path(&lines, &parse_mountinfo(V2_MOUNTINFO)).unwrap();
        assert_eq!(p, PathBuf::from("/sys/fs/cgroup"));
    }

    #[test]
    fn legacy_perf_controller_preferred() {
        let text = "5:perf_event:/g5run\n4:cpu,cpuacct:/\n0::/other\n";
        let lines = parse_cgroup_file(text).unwrap();
        let p = select_cgroup_path(&lines, &parse_mountinfo(HYBRID_MOUNTINFO)).unwrap();
        assert_eq!(p, PathBuf::from("/sys/fs/cgroup/perf_event/g5run"));
    }

    #[test]
    fn hybrid_without_perf_controller_uses_unified() {
        let text = "4:memory:/x\n1:name=systemd:/\n0::/g5run\n";
        let lines = parse_cgroup_file(text).unwrap();
        let p = select_cgroup_path(&lines, &parse_mountinfo(HYBRID_MOUNTINFO)).unwrap();
        assert_eq!(p, PathBuf::from("/sys/fs/cgroup/unified/g5run"));
    }

    #[test]
    fn namespaced_mount_root_is_stripped() {
        let mi = "25 1 0:22 /outer /sys/fs/cgroup rw - cgroup2 cgroup2 rw\n";
        let lines = parse_cgroup_file("0::/outer/inner\n").unwrap();
        let p = select_cgroup_path(&lines, &parse_mountinfo(mi)).unwrap();
        assert_eq!(p, PathBuf::from("/sys/fs/cgroup/inner"));
    }

    #[test]
    fn garbage_is_unparsable() {
        assert!(parse_cgroup_file("nonsense").is_err());
        assert!(parse_cgroup_file("x:y:z").is_err());
    }

    #[test]
    fn stale_pid_is_no_such_target() {
        // pid_max on Linux never reaches u32::MAX - 1
        assert!(matches!(
            resolve_cgroup_of(u32::MAX - 1),
            Err(SourceError::NoSuchTarget(_))
        ));
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn self_resolves_to_existing_directory() {
        let p = resolve_cgroup_of(std::process::id()).unwrap();
        assert!(p.is_dir(), "{}", p.display());
    }
}
