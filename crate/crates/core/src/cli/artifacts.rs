//! Run directory layout, current files and the run manifest.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::CurrentFormat;
use crate::integrator::TrajectoryRecord;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_JSON: &str = "config.json";
pub const ME_TRACES: &str = "me_traces.csv";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const METRICS: &str = "metrics.json";
pub const ROC: &str = "roc.csv";

const BINARY_MAGIC: &[u8; 8] = b"PDSIMJ01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    TruncationBreach,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Provenance of one output directory. Timestamps are the only field that differs
/// between reruns of the same configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub tool_version: String,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
    pub status: RunStatus,
    pub files: Vec<FileEntry>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn begin(dir: &Path, command: &str, config_hash: &str, base_seed: u64) -> io::Result<Self> {
        let m = Self {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            base_seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: Utc::now(),
            finished: None,
            status: RunStatus::Running,
            files: Vec::new(),
            notes: Vec::new(),
        };
        m.write(dir)?;
        Ok(m)
    }

    /// Records the status and the inventory of every other file under `dir`.
    pub fn finish(&mut self, dir: &Path, status: RunStatus) -> io::Result<()> {
        self.status = status;
        self.finished = Some(Utc::now());
        self.files = inventory(dir)?;
        self.write(dir)
    }

    fn write(&self, dir: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(dir.join(MANIFEST), text + "\n")
    }

    pub fn read(dir: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Every file under `dir` except the manifest, sorted by relative path.
pub fn inventory(dir: &Path) -> io::Result<Vec<FileEntry>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
            if rel == MANIFEST {
                continue;
            }
            out.push(FileEntry {
                bytes: fs::metadata(&path)?.len(),
                sha256: sha256_file(&path)?,
                path: rel,
            });
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

pub fn create(path: &Path) -> io::Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Homodyne currents of one ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentSet {
    pub dt: f64,
    pub seeds: Vec<u64>,
    pub currents: Vec<Vec<f64>>,
}

impl CurrentSet {
    pub fn from_records(records: &[TrajectoryRecord], dt: f64) -> Self {
        Self {
            dt,
            seeds: records.iter().map(|r| r.seed).collect(),
            currents: records.iter().map(|r| r.current.clone()).collect(),
        }
    }

    pub fn file_name(ensemble: &str, format: CurrentFormat) -> String {
        match format {
            CurrentFormat::Binary => format!("currents/{ensemble}.bin"),
            CurrentFormat::Csv => format!("currents/{ensemble}.csv"),
        }
    }

    pub fn write(&self, path: &Path, format: CurrentFormat) -> io::Result<()> {
        let mut w = create(path)?;
        match format {
            CurrentFormat::Binary => self.write_binary(&mut w)?,
            CurrentFormat::Csv => self.write_csv(&mut w)?,
        }
        w.flush()
    }

    /// Layout: magic, trajectory count and samples per trajectory (u64), sample spacing
    /// (f64), then per trajectory its seed (u64) and samples (f64), all little-endian.
    fn write_binary<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let len = self.currents.first().map_or(0, Vec::len);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.currents.len() as u64).to_le_bytes())?;
        w.write_all(&(len as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        for (seed, j) in self.seeds.iter().zip(&self.currents) {
            w.write_all(&seed.to_le_bytes())?;
            for v in j {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// `traj,t,J` rows; the seeds go in a leading comment line.
    fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        writeln!(w, "# dt={:e} seeds={}", self.dt, seeds.join(" "))?;
        writeln!(w, "traj,t,J")?;
        for (k, j) in self.currents.iter().enumerate() {
            for (i, v) in j.iter().enumerate() {
                writeln!(w, "{k},{:.9e},{:.17e}", i as f64 * self.dt, v)?;
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::parse_binary(&bytes)
        } else {
            Self::parse_csv(std::str::from_utf8(&bytes).map_err(|e| invalid(e.to_string()))?)
        }
    }

    fn parse_binary(bytes: &[u8]) -> io::Result<Self> {
        let word = |k: usize| -> io::Result<[u8; 8]> {
            bytes
                .get(8 * k..8 * k + 8)
                .map(|s| s.try_into().unwrap())
                .ok_or_else(|| invalid("truncated current file".into()))
        };
        let n = u64::from_le_bytes(word(1)?) as usize;
        let len = u64::from_le_bytes(word(2)?) as usize;
        let dt = f64::from_le_bytes(word(3)?);
        if bytes.len() != 8 * (4 + n * (len + 1)) {
            return Err(invalid(format!("current file size does not match {n} × {len} samples")));
        }
        let mut set = Self {
            dt,
            seeds: Vec::with_capacity(n),
            currents: Vec::with_capacity(n),
        };
        for k in 0..n {
            let base = 4 + k * (len + 1);
            set.seeds.push(u64::from_le_bytes(word(base)?));
            set.currents
                .push((0..len).map(|i| word(base + 1 + i).map(f64::from_le_bytes)).collect::<io::Result<_>>()?);
        }
        Ok(set)
    }

    fn parse_csv(text: &str) -> io::Result<Self> {
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| invalid("empty current file".into()))?;
        let mut dt = None;
        let mut seeds = Vec::new();
        for field in head.trim_start_matches('#').split_whitespace() {
            if let Some(v) = field.strip_prefix("dt=") {
                dt = Some(v.parse::<f64>().map_err(|e| invalid(e.to_string()))?);
            } else if let Some(v) = field.strip_prefix("seeds=") {
                seeds.push(v.parse::<u64>().map_err(|e| invalid(e.to_string()))?);
            } else {
                seeds.push(field.parse::<u64>().map_err(|e| invalid(e.to_string()))?);
            }
        }
        let dt = dt.ok_or_else(|| invalid("current file header lacks dt".into()))?;
        let mut currents: Vec<Vec<f64>> = vec![Vec::new(); seeds.len()];
        for (i, line) in lines.skip(1).enumerate() {
            let mut parts = line.split(',');
            let (Some(k), Some(_), Some(v)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(invalid(format!("row {}: expected traj,t,J", i + 1)));
            };
            let k: usize = k.parse().map_err(|_| invalid(format!("row {}: bad trajectory index", i + 1)))?;
            let v: f64 = v.parse().map_err(|_| invalid(format!("row {}: bad current value", i + 1)))?;
            currents
                .get_mut(k)
                .ok_or_else(|| invalid(format!("row {}: trajectory {k} not in header", i + 1)))?
                .push(v);
        }
        Ok(Self { dt, seeds, currents })
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Per-trajectory diagnostics: `ensemble,index,seed,top_level_pop,top_level_peak`.
pub fn write_trajectory_summary(path: &Path, runs: &[(&str, &[TrajectoryRecord])]) -> io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "ensemble,index,seed,top_level_pop,top_level_peak")?;
    for (name, records) in runs {
        for r in *records {
            writeln!(w, "{name},{},{},{:.6e},{:.6e}", r.index, r.seed, r.top_level_pop, r.top_level_peak)?;
        }
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::other)?;
    writeln!(w)?;
    w.flush()
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))
}

/// Existing paths among `names` inside `dir`.
pub fn find_existing(dir: &Path, names: &[String]) -> Vec<PathBuf> {
    names.iter().map(|n| dir.join(n)).filter(|p| p.exists()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CurrentSet {
        CurrentSet {
            dt: 0.05,
            seeds: vec![3, 99],
            currents: vec![vec![0.1, -2.5, 1e-17], vec![4.0, 0.0, -0.3333333333333333]],
        }
    }

    #[test]
    fn current_files_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for format in [CurrentFormat::Binary, CurrentFormat::Csv] {
            let path = dir.path().join(CurrentSet::file_name("signal", format));
            sample().write(&path, format).unwrap();
            assert_eq!(CurrentSet::read(&path).unwrap(), sample());
        }
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        sample().write(&path, CurrentFormat::Binary).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(CurrentSet::read(&path).is_err());
    }

    #[test]
    fn manifest_lists_files_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::begin(dir.path(), "simulate", "abc", 1).unwrap();
        fs::write(dir.path().join("a.txt"), "hello").unwrap();
        m.finish(dir.path(), RunStatus::Complete).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back.status, RunStatus::Complete);
        assert_eq!(back.files.len(), 1);
        assert_eq!(
            back.files[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }
}
