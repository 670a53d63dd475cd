//! Region detectors for image redaction.
//!
//! External detectors speak a minimal protocol: the image bytes arrive on
//! stdin, a single JSON array of `{"x","y","w","h"}` objects is expected on
//! stdout, and the process must exit 0.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{RedactError, Result};

pub const DEFAULT_DETECTOR_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Region {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    /// Intersects the region with a `width` x `height` image.
    pub fn clip(self, width: u32, height: u32) -> Option<Region> {
        let x1 = self.x.saturating_add(self.w).min(width);
        let y1 = self.y.saturating_add(self.h).min(height);
        (self.x < x1 && self.y < y1).then(|| Region::new(self.x, self.y, x1 - self.x, y1 - self.y))
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && py >= self.y && px - self.x < self.w && py - self.y < self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    /// Regions listed in `config["regions"]` as `x,y,w,h;x,y,w,h`.
    BuiltinFixed,
    /// Executable at `config["command"]`, optional `config["timeout_secs"]`.
    ExternalProcess,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionDetector {
    pub name: String,
    pub mode: DetectorMode,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

fn parse_regions(list: &str) -> std::result::Result<Vec<Region>, String> {
    list.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|part| {
            let nums: Vec<u32> = part
                .split(',')
                .map(|n| n.trim().parse::<u32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("region {part:?}: {e}"))?;
            match nums[..] {
                [x, y, w, h] if w > 0 && h > 0 => Ok(Region::new(x, y, w, h)),
                _ => Err(format!("region {part:?} must be x,y,w,h with w,h > 0")),
            }
        })
        .collect()
}

impl RegionDetector {
    pub fn fixed(name: &str, regions: &[Region]) -> Self {
        let list = regions
            .iter()
            .map(|r| format!("{},{},{},{}", r.x, r.y, r.w, r.h))
            .collect::<Vec<_>>()
            .join(";");
        Self {
            name: name.to_owned(),
            mode: DetectorMode::BuiltinFixed,
            config: BTreeMap::from([("regions".to_owned(), list)]),
        }
    }

    pub fn external(name: &str, command: &str) -> Self {
        Self {
            name: name.to_owned(),
            mode: DetectorMode::ExternalProcess,
            config: BTreeMap::from([("command".to_owned(), command.to_owned())]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| RedactError::Configuration(format!("detector {:?}: {msg}", self.name));
        if self.name.is_empty() {
            return Err(cfg("name is empty".into()));
        }
        match self.mode {
            DetectorMode::BuiltinFixed => {
                let list = self
                    .config
                    .get("regions")
                    .ok_or_else(|| cfg("missing regions".into()))?;
                parse_regions(list).map_err(cfg)?;
            }
            DetectorMode::ExternalProcess => {
                if self.config.get("command").is_none_or(String::is_empty) {
                    return Err(cfg("missing command".into()));
                }
                self.timeout().map_err(cfg)?;
            }
        }
        Ok(())
    }

    fn timeout(&self) -> std::result::Result<Duration, String> {
        match self.config.get("timeout_secs") {
            None => Ok(DEFAULT_DETECTOR_TIMEOUT),
            Some(s) => s
                .parse::<f64>()
                .ok()
                .filter(|t| t.is_finite() && *t > 0.0)
                .map(Duration::from_secs_f64)
                .ok_or_else(|| format!("bad timeout_secs {s:?}")),
        }
    }

    pub fn detect(&self, image: &[u8]) -> Result<Vec<Region>> {
        match self.mode {
            DetectorMode::BuiltinFixed => {
                let list = self.config.get("regions").map(String::as_str).unwrap_or("");
                parse_regions(list).map_err(RedactError::Configuration)
            }
            DetectorMode::ExternalProcess => run_external_detector(self, image),
        }
    }
}

pub fn run_external_detector(detector: &RegionDetector, image: &[u8]) -> Result<Vec<Region>> {
    let fail = |msg: String| RedactError::Detector(format!("{}: {msg}", detector.name));
    if detector.mode != DetectorMode::ExternalProcess {
        return Err(RedactError::Configuration(format!(
            "detector {:?} is not an external process",
            detector.name
        )));
    }
    let command = detector
        .config
        .get("command")
        .ok_or_else(|| RedactError::Configuration(format!("detector {:?} has no command", detector.name)))?;
    let timeout = detector.timeout().map_err(RedactError::Configuration)?;

    let mut child = Command::new(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| fail(format!("spawn {command:?}: {e}")))?;

    let mut stdin = child.stdin.take().expect("stdin piped");
    let input = image.to_vec();
    // Detectors may exit without draining stdin; a broken pipe is not an error.
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(&input);
    });
    let mut stdout = child.stdout.take().expect("stdout piped");
    let reader = thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });

    let status = match child.wait_timeout(timeout) {
        Ok(Some(status)) => status,
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(fail(format!("timed out after {timeout:?}")));
        }
        Err(e) => return Err(fail(e.to_string())),
    };
    let _ = writer.join();
    let output = reader
        .join()
        .map_err(|_| fail("stdout reader panicked".into()))?
        .map_err(|e| fail(format!("reading stdout: {e}")))?;
    if !status.success() {
        return Err(fail(format!("exited with {status}")));
    }
    let regions: Vec<Region> =
        serde_json::from_slice(output.trim_ascii()).map_err(|e| fail(format!("malformed output: {e}")))?;
    if let Some(r) = regions.iter().find(|r| r.w == 0 || r.h == 0) {
        return Err(fail(format!("empty region {r:?}")));
    }
    Ok(regions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;
    use std::path::PathBuf;

    fn script(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detector.sh");
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        (dir, path)
    }

    fn external(path: &std::path::Path) -> RegionDetector {
        RegionDetector::external("ext", path.to_str().unwrap())
    }

    #[test]
    fn clipping() {
        assert_eq!(
            Region::new(60, 60, 20, 20).clip(64, 64),
            Some(Region::new(60, 60, 4, 4))
        );
        assert_eq!(Region::new(0, 0, 32, 32).clip(64, 64), Some(Region::new(0, 0, 32, 32)));
        assert_eq!(Region::new(70, 0, 5, 5).clip(64, 64), None);
        assert_eq!(Region::new(u32::MAX, 0, u32::MAX, 5).clip(64, 64), None);
    }

    #[test]
    fn fixed_detector() {
        let d = RegionDetector::fixed("faces", &[Region::new(1, 2, 3, 4), Region::new(0, 0, 8, 8)]);
        d.validate().unwrap();
        assert_eq!(
            d.detect(b"").unwrap(),
            vec![Region::new(1, 2, 3, 4), Region::new(0, 0, 8, 8)]
        );
        let mut bad = d.clone();
        bad.config.insert("regions".into(), "1,2,0,4".into());
        assert!(bad.validate().is_err());
    }

    #[test]
    fn external_empty_list() {
        let (_d, path) = script("cat >/dev/null; echo '[]'");
        assert_eq!(run_external_detector(&external(&path), b"img").unwrap(), vec![]);
    }

    #[test]
    fn external_regions() {
        let (_d, path) = script(r#"cat >/dev/null; echo '[{"x":1,"y":2,"w":3,"h":4}]'"#);
        assert_eq!(
            run_external_detector(&external(&path), b"img").unwrap(),
            vec![Region::new(1, 2, 3, 4)]
        );
    }

    #[test]
    fn external_receives_stdin() {
        // Echo back the byte count as the x coordinate.
        let (_d, path) = script(r#"n=$(wc -c | tr -d ' '); echo "[{\"x\":$n,\"y\":0,\"w\":1,\"h\":1}]""#);
        let regions = run_external_detector(&external(&path), &[7u8; 1000]).unwrap();
        assert_eq!(regions[0].x, 1000);
    }

    #[test]
    fn external_failures() {
        let (_d, path) = script("exit 1");
        assert!(matches!(
            run_external_detector(&external(&path), b""),
            Err(RedactError::Detector(_))
        ));

        let (_d2, path) = script("echo 'not json'");
        assert!(matches!(
            run_external_detector(&external(&path), b""),
            Err(RedactError::Detector(_))
        ));

        let (_d3, path) = script(r#"echo '[{"x":-1,"y":0,"w":1,"h":1}]'"#);
        assert!(matches!(
            run_external_detector(&external(&path), b""),
            Err(RedactError::Detector(_))
        ));

        let missing = RegionDetector::external("gone", "/nonexistent/detector");
        assert!(matches!(
            run_external_detector(&missing, b""),
            Err(RedactError::Detector(_))
        ));
    }

    #[test]
    fn external_timeout() {
        let (_d, path) = script("sleep 5; echo '[]'");
        let mut det = external(&path);
        det.config.insert("timeout_secs".into(), "0.3".into());
        let started = std::time::Instant::now();
        assert!(matches!(
            run_external_detector(&det, b""),
            Err(RedactError::Detector(_))
        ));
        assert!(started.elapsed() < Duration::from_secs(4));
    }
}
