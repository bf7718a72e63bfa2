//! Trajectory text files and binary PLY point clouds.
//!
//! Trajectory lines read `timestamp tx ty tz qx qy qz qw`: the camera
//! position and orientation in the world (camera-to-world), the layout used
//! by common benchmark tools. In memory poses are world-to-camera.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::metrics::{PointCloud, Trajectory};
use crate::se3::Pose;

/// Quaternion norms further than this from one are rejected on read.
pub const QUATERNION_TOLERANCE: f64 = 1e-3;

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, pose) in traj.iter() {
        let c2w = pose.inverse();
        let q = c2w.quaternion();
        let p = c2w.translation;
        s.push_str(&format!(
            "{t} {} {} {} {} {} {} {}\n",
            p.x, p.y, p.z, q.i, q.j, q.k, q.w
        ));
    }
    s
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    fs::write(path, format_trajectory(traj)).map_err(|e| Error::io(path, e))
}

pub fn parse_trajectory(text: &str, name: &str) -> Result<Trajectory> {
    let mut stamps = Vec::new();
    let mut poses = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: name.to_string(),
            line: line_no,
            msg,
        };
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(format!("'{f}' is not a number"))))
            .collect::<Result<_>>()?;
        if fields.len() != 8 {
            return Err(parse_err(format!("expected 8 fields, found {}", fields.len())));
        }
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(parse_err("non-finite value".into()));
        }
        let q = Quaternion::new(fields[7], fields[4], fields[5], fields[6]);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(Error::NonUnitQuaternion {
                path: name.to_string(),
                line: line_no,
                norm,
            });
        }
        let c2w = Pose::from_quaternion(
            &UnitQuaternion::from_quaternion(q),
            Vector3::new(fields[1], fields[2], fields[3]),
        );
        if let Some(&last) = stamps.last() {
            if !(fields[0] > last) {
                return Err(parse_err("timestamps must be strictly increasing".into()));
            }
        }
        stamps.push(fields[0]);
        poses.push(c2w.inverse());
    }
    Trajectory::new(stamps, poses)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, &path.display().to_string())
}

/// Binary little-endian PLY with float32 `x y z` vertices.
pub fn encode_ply(cloud: &PointCloud) -> Result<Vec<u8>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    let mut out = header.into_bytes();
    out.reserve(cloud.len() * 12);
    for p in &cloud.points {
        for c in p.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn export_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let bytes = encode_ply(cloud)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Reads vertices written by [`export_ply`], or any binary little-endian or
/// ASCII PLY whose vertex element starts with float or double `x y z`.
pub fn decode_ply(bytes: &[u8], name: &str) -> Result<PointCloud> {
    let mut reader = BufReader::new(bytes);
    let mut line = String::new();
    let mut line_no = 0;
    let mut format = None;
    let mut count = None;
    let mut props: Vec<(String, String)> = Vec::new();
    let mut in_vertex = false;
    let err = |line: usize, msg: &str| Error::Parse {
        path: name.to_string(),
        line,
        msg: msg.to_string(),
    };
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(name, e))?;
        line_no += 1;
        if n == 0 {
            return Err(err(line_no, "missing end_header"));
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(err(1, "not a PLY file")),
            ["format", f, _] => format = Some(f.to_string()),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", c] => {
                count = Some(c.parse::<usize>().map_err(|_| err(line_no, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => props.push((ty.to_string(), name.to_string())),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(err(line_no, "unrecognized header line")),
        }
    }
    let count = count.ok_or_else(|| err(line_no, "no vertex element"))?;
    let names: Vec<&str> = props.iter().take(3).map(|(_, n)| n.as_str()).collect();
    if names != ["x", "y", "z"] {
        return Err(err(line_no, "vertex element must start with x y z"));
    }
    let mut points = Vec::with_capacity(count);
    match format.as_deref() {
        Some("binary_little_endian") => {
            let sizes: Vec<usize> = props
                .iter()
                .map(|(ty, _)| match ty.as_str() {
                    "float" | "float32" | "int" | "int32" | "uint" | "uint32" => Ok(4),
                    "double" | "float64" => Ok(8),
                    "uchar" | "char" | "uint8" | "int8" => Ok(1),
                    "short" | "ushort" | "int16" | "uint16" => Ok(2),
                    _ => Err(err(line_no, "unsupported property type")),
                })
                .collect::<Result<_>>()?;
            let stride: usize = sizes.iter().sum();
            let mut buf = vec![0u8; stride];
            for v in 0..count {
                reader
                    .read_exact(&mut buf)
                    .map_err(|_| err(line_no, &format!("truncated at vertex {v}")))?;
                let mut off = 0;
                let mut xyz = [0.0; 3];
                for (c, slot) in xyz.iter_mut().enumerate() {
                    *slot = match sizes[c] {
                        4 => f32::from_le_bytes(buf[off..off + 4].try_into().expect("4 bytes")) as f64,
                        8 => f64::from_le_bytes(buf[off..off + 8].try_into().expect("8 bytes")),
                        _ => return Err(err(line_no, "coordinates must be float or double")),
                    };
                    off += sizes[c];
                }
                points.push(Vector3::from(xyz));
            }
        }
        Some("ascii") => {
            let mut rest = String::new();
            reader.read_to_string(&mut rest).map_err(|e| Error::io(name, e))?;
            let mut lines = rest.lines().filter(|l| !l.trim().is_empty());
            for v in 0..count {
                let l = lines.next().ok_or_else(|| err(line_no, &format!("missing vertex {v}")))?;
                let c: Vec<f64> = l
                    .split_whitespace()
                    .take(3)
                    .map(|x| x.parse().map_err(|_| err(line_no + v + 1, "bad coordinate")))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(err(line_no + v + 1, "vertex needs three coordinates"));
                }
                points.push(Vector3::new(c[0], c[1], c[2]));
            }
        }
        _ => return Err(err(line_no, "unsupported PLY format")),
    }
    Ok(PointCloud::new(points))
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ply(&bytes, &path.display().to_string())
}
