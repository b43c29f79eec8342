//! Dataset manifest: users, sessions and where their files live.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose_ingest::POSE_RATE;
use crate::skeleton::Placement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct User {
    pub id: String,
    /// 1 is the best user. Only train users are ranked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
    /// Unlabelled motion recorded to train the signal regressors.
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Video with measured sensor data.
    Real,
    /// Video only, from a local user.
    SimulatedLocal,
    /// Video only, from outside the user pool.
    SimulatedExternal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    pub role: Role,
    pub source: Source,
    pub video_fps: f64,
    /// Keypoint document or directory of per-frame keypoint files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<PathBuf>,
    /// Frame size in pixels, used for the tracking gate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub imu: BTreeMap<Placement, PathBuf>,
    /// CSV of `start,end,label` intervals in video seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Video frames of the sync gesture's impacts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sync_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: Vec<String>,
    #[serde(default)]
    pub users: Vec<User>,
    pub sessions: Vec<Session>,
}

fn bad(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Manifest {
        field: field.into(),
        message: message.into(),
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let m: Manifest = toml::from_str(text).map_err(|e| bad("<document>", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Reads and validates a manifest; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<(Manifest, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Manifest::parse(&text)?, base))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(bad("classes", "at least one class is required"));
        }
        let mut names = BTreeSet::new();
        for c in &self.classes {
            if c.is_empty() || !names.insert(c) {
                return Err(bad("classes", format!("class name `{c}` is empty or repeated")));
            }
        }
        let mut users = BTreeMap::new();
        for u in &self.users {
            if users.insert(u.id.as_str(), u).is_some() {
                return Err(bad("users.id", format!("user `{}` listed twice", u.id)));
            }
        }
        let mut ids = BTreeSet::new();
        for s in &self.sessions {
            let field = |f: &str| format!("sessions[{}].{f}", s.id);
            if !ids.insert(s.id.as_str()) {
                return Err(bad("sessions.id", format!("session `{}` listed twice", s.id)));
            }
            if !(s.video_fps > 0.0) {
                return Err(bad(field("video_fps"), "must be positive"));
            }
            match (&s.user, s.source) {
                (None, Source::Real | Source::SimulatedLocal) => {
                    return Err(bad(field("user"), "local sessions need a user"));
                }
                (Some(u), _) if !users.contains_key(u.as_str()) => {
                    return Err(bad(field("user"), format!("unknown user `{u}`")));
                }
                _ => {}
            }
            let needs_imu = s.source == Source::Real || s.role == Role::Generic;
            if needs_imu && s.imu.is_empty() {
                return Err(bad(field("imu"), "sensor files are required for this session"));
            }
            if s.source != Source::Real && !s.imu.is_empty() {
                return Err(bad(field("imu"), "simulated sessions carry no sensor files"));
            }
            if (s.source != Source::Real || s.role == Role::Generic) && s.poses.is_none() {
                return Err(bad(field("poses"), "video keypoints are required for this session"));
            }
            if s.role != Role::Generic && s.labels.is_none() {
                return Err(bad(field("labels"), "train and test sessions need labels"));
            }
            if s.role == Role::Test && s.source != Source::Real {
                return Err(bad(field("source"), "test sessions must be real"));
            }
            if s.role == Role::Generic && s.source != Source::Real {
                return Err(bad(field("source"), "generic sessions must be real"));
            }
            if s.source == Source::SimulatedExternal && s.role != Role::Train {
                return Err(bad(field("role"), "external sessions are training data"));
            }
        }

        let train_users: BTreeSet<&str> = self
            .sessions
            .iter()
            .filter(|s| s.role == Role::Train && s.source != Source::SimulatedExternal)
            .filter_map(|s| s.user.as_deref())
            .collect();
        let mut ranks: Vec<usize> = Vec::new();
        for u in &self.users {
            match (u.rank, train_users.contains(u.id.as_str())) {
                (Some(r), true) => ranks.push(r),
                (None, true) => return Err(bad("users.rank", format!("train user `{}` has no rank", u.id))),
                (Some(_), false) => {
                    return Err(bad("users.rank", format!("`{}` has no train sessions but is ranked", u.id)))
                }
                (None, false) => {}
            }
        }
        ranks.sort_unstable();
        if ranks.iter().enumerate().any(|(i, &r)| r != i + 1) {
            return Err(bad("users.rank", "ranks must be a permutation of 1..=n over train users"));
        }
        Ok(())
    }

    pub fn session(&self, id: &str) -> Option<&Session> {
        self.sessions.iter().find(|s| s.id == id)
    }

    /// Train users, best first.
    pub fn ranked_users(&self) -> Vec<&str> {
        let mut ranked: Vec<(usize, &str)> = self
            .users
            .iter()
            .filter_map(|u| u.rank.map(|r| (r, u.id.as_str())))
            .collect();
        ranked.sort_unstable();
        ranked.into_iter().map(|(_, id)| id).collect()
    }

    pub fn test_sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.iter().filter(|s| s.role == Role::Test)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }
}

/// Converts `start,end,label` intervals to one label per grid sample.
/// Every sample must be covered; later rows win where intervals overlap.
pub fn parse_label_intervals(raw: &[u8], classes: &[String], grid_start: f64, rate: f64, n: usize) -> Result<Vec<usize>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(raw);
    let headers = reader
        .headers()
        .map_err(|e| Error::CsvParse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["start", "end", "label"] {
        return Err(Error::CsvParse {
            row: 1,
            message: "expected header `start,end,label`".into(),
        });
    }
    let mut out: Vec<Option<usize>> = vec![None; n];
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::CsvParse {
            row,
            message: e.to_string(),
        })?;
        let num = |k: usize| {
            record[k].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::CsvParse {
                row,
                message: format!("invalid time `{}`", &record[k]),
            })
        };
        let (start, end) = (num(0)?, num(1)?);
        let class = classes.iter().position(|c| c == &record[2]).ok_or_else(|| Error::CsvParse {
            row,
            message: format!("unknown class `{}`", &record[2]),
        })?;
        for (k, slot) in out.iter_mut().enumerate() {
            let t = grid_start + k as f64 / rate;
            if t >= start - 1e-9 && t < end + 1e-9 {
                *slot = Some(class);
            }
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(k, l)| {
            l.ok_or_else(|| {
                Error::invalid(format!(
                    "no label covers t = {:.3} s",
                    grid_start + k as f64 / rate
                ))
            })
        })
        .collect()
}

/// Writes per-sample labels back as run-length intervals.
pub fn write_label_intervals(labels: &[usize], classes: &[String], grid_start: f64) -> String {
    let mut out = String::from("start,end,label\n");
    let mut k = 0;
    while k < labels.len() {
        let mut e = k;
        while e + 1 < labels.len() && labels[e + 1] == labels[k] {
            e += 1;
        }
        let t0 = grid_start + k as f64 / POSE_RATE;
        let t1 = grid_start + e as f64 / POSE_RATE;
        out.push_str(&format!("{t0},{t1},{}\n", classes[labels[k]]));
        k = e + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
classes = ["walk", "run"]

[[users]]
id = "a"
rank = 2

[[users]]
id = "b"
rank = 1

[[users]]
id = "t"

[[sessions]]
id = "a1"
user = "a"
role = "train"
source = "real"
video_fps = 30.0
poses = "a1.jsonl"
labels = "a1.csv"
imu = { left_wrist = "a1_lw.csv" }

[[sessions]]
id = "b1"
user = "b"
role = "train"
source = "simulated_local"
video_fps = 30.0
poses = "b1.jsonl"
labels = "b1.csv"

[[sessions]]
id = "t1"
user = "t"
role = "test"
source = "real"
video_fps = 30.0
labels = "t1.csv"
imu = { left_wrist = "t1_lw.csv" }
"#;

    #[test]
    fn parses_and_ranks() {
        let m = Manifest::parse(BASE).unwrap();
        assert_eq!(m.ranked_users(), ["b", "a"]);
        assert_eq!(m.test_sessions().count(), 1);
        assert_eq!(Manifest::parse(&m.to_toml()).unwrap(), m);
    }

    #[test]
    fn rejects_broken_rankings_and_roles() {
        let field = |text: &str| match Manifest::parse(text) {
            Err(Error::Manifest { field, .. }) => field,
            other => panic!("expected manifest error, got {other:?}"),
        };
        assert_eq!(field(&BASE.replace("rank = 2", "rank = 3")), "users.rank");
        assert_eq!(field(&BASE.replace("rank = 2", "")), "users.rank");
        assert!(field(&BASE.replace("role = \"test\"\nsource = \"real\"", "role = \"test\"\nsource = \"simulated_local\""))
            .starts_with("sessions[t1]"));
        assert_eq!(field(&BASE.replace("id = \"b1\"", "id = \"a1\"")), "sessions.id");
        assert!(Manifest::parse(&BASE.replace("video_fps = 30.0\nlabels", "video_fps = 30.0\ncolour = 1\nlabels")).is_err());
    }

    #[test]
    fn label_intervals_roundtrip() {
        let classes = vec!["x".to_string(), "y".to_string()];
        let labels = [0, 0, 0, 1, 1, 0, 1];
        let text = write_label_intervals(&labels, &classes, 0.2);
        let back = parse_label_intervals(text.as_bytes(), &classes, 0.2, POSE_RATE, labels.len()).unwrap();
        assert_eq!(back, labels);
        assert!(parse_label_intervals(text.as_bytes(), &classes, 0.2, POSE_RATE, labels.len() + 1).is_err());
    }
}
