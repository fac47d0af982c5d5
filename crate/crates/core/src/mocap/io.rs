//! Pose database files.
//!
//! JSON lines: `{"id": "...", "skeleton": "...", "joints_mm": [[x, y, z], ...]}`.
//! CSV: header `id,j0x,j0y,j0z,j1x,...`; every row uses the given skeleton.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Pose3D, Skeleton, SkeletonId};

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub id: String,
    pub pose: Pose3D,
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    skeleton: String,
    joints_mm: Vec<[f64; 3]>,
}

/// Reads a pose file, choosing the format from the extension (`.csv` or
/// JSON lines otherwise).
pub fn read_pose_file(path: &Path, skeleton: &Skeleton) -> Result<Vec<PoseRecord>> {
    let file = std::fs::File::open(path)?;
    let name = path.display().to_string();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_pose_csv(file, &name, skeleton)
    } else {
        read_pose_jsonl(file, &name, skeleton)
    }
}

pub fn read_pose_jsonl<R: Read>(reader: R, name: &str, skeleton: &Skeleton) -> Result<Vec<PoseRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Input {
            path: name.to_owned(),
            line: line_no,
            message,
        };
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if rec.skeleton != skeleton.id().as_str() {
            return Err(err(format!(
                "skeleton `{}` does not match `{}`",
                rec.skeleton,
                skeleton.id()
            )));
        }
        let pose = to_pose(&rec.joints_mm, skeleton).map_err(err)?;
        out.push(PoseRecord { id: rec.id, pose });
    }
    Ok(out)
}

pub fn read_pose_csv<R: Read>(reader: R, name: &str, skeleton: &Skeleton) -> Result<Vec<PoseRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let expected = 1 + 3 * skeleton.num_joints();
    let header_len = rdr.headers()?.len();
    if header_len != expected {
        return Err(Error::Input {
            path: name.to_owned(),
            line: 1,
            message: format!("header has {header_len} columns, expected {expected}"),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line_no = i + 2;
        let err = |message: String| Error::Input {
            path: name.to_owned(),
            line: line_no,
            message,
        };
        let row = row.map_err(|e| err(e.to_string()))?;
        let values = row
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|e| err(format!("`{v}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        let joints: Vec<[f64; 3]> = values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let pose = to_pose(&joints, skeleton).map_err(err)?;
        out.push(PoseRecord {
            id: row.get(0).unwrap_or_default().to_owned(),
            pose,
        });
    }
    Ok(out)
}

fn to_pose(joints: &[[f64; 3]], skeleton: &Skeleton) -> std::result::Result<Pose3D, String> {
    if joints.len() != skeleton.num_joints() {
        return Err(format!(
            "expected {} joints, found {}",
            skeleton.num_joints(),
            joints.len()
        ));
    }
    if joints.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    Ok(Pose3D::new(
        SkeletonId::clone(skeleton.id()),
        joints.iter().map(|j| Vector3::new(j[0], j[1], j[2])).collect(),
    ))
}

pub fn write_pose_jsonl<W: Write>(mut w: W, records: &[PoseRecord]) -> Result<()> {
    for r in records {
        let rec = JsonRecord {
            id: r.id.clone(),
            skeleton: r.pose.skeleton.to_string(),
            joints_mm: r.pose.joints.iter().map(|j| [j.x, j.y, j.z]).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(sk: &Skeleton, id: &str) -> PoseRecord {
        PoseRecord {
            id: id.into(),
            pose: Pose3D::new(
                sk.id().clone(),
                (0..14).map(|i| Vector3::new(i as f64, -2.0 * i as f64, 0.5)).collect(),
            ),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let sk = Skeleton::default_14();
        let recs = vec![record(&sk, "a"), record(&sk, "b")];
        let mut buf = Vec::new();
        write_pose_jsonl(&mut buf, &recs).unwrap();
        assert_eq!(read_pose_jsonl(&buf[..], "x", &sk).unwrap(), recs);
    }

    #[test]
    fn csv_rows() {
        let sk = Skeleton::default_14();
        let mut text = String::from("id");
        for j in 0..14 {
            text.push_str(&format!(",j{j}x,j{j}y,j{j}z"));
        }
        text.push('\n');
        text.push_str("p0");
        for j in 0..14 {
            text.push_str(&format!(",{},{},0.5", j, -2 * j));
        }
        text.push('\n');
        let recs = read_pose_csv(text.as_bytes(), "x.csv", &sk).unwrap();
        assert_eq!(recs, vec![record(&sk, "p0")]);
    }

    #[test]
    fn errors_are_line_numbered() {
        let sk = Skeleton::default_14();
        let mut buf = Vec::new();
        write_pose_jsonl(&mut buf, &[record(&sk, "a")]).unwrap();
        buf.extend_from_slice(b"{\"id\": \"b\", \"skeleton\": \"default14\", \"joints_mm\": [[1,2,3]]}\n");
        match read_pose_jsonl(&buf[..], "db.jsonl", &sk).unwrap_err() {
            Error::Input { line, path, .. } => {
                assert_eq!(line, 2);
                assert_eq!(path, "db.jsonl");
            }
            e => panic!("{e}"),
        }
        let bad = b"not json\n";
        assert!(matches!(
            read_pose_jsonl(&bad[..], "db", &sk),
            Err(Error::Input { line: 1, .. })
        ));
    }
}
