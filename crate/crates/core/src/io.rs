//! File formats: a JSON sidecar header plus raw little-endian binary
//! payloads in sibling files (row-major, x fastest).
//!
//! A scalar volume has one payload; a vector field has three (ux, uy, uz);
//! a correspondence model has one payload per marker coefficient grid.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{VectorField3, Volume3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U16,
    F32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: DType,
    pub byte_order: String,
    /// Payload file names, relative to the header's directory.
    pub payload: Vec<String>,
}

impl GridHeader {
    fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::MalformedHeader(format!(
                "zero dimension in dims {:?}",
                self.dims
            )));
        }
        if self.byte_order != "little" {
            return Err(Error::MalformedHeader(format!(
                "unsupported byte_order `{}`",
                self.byte_order
            )));
        }
        if self.payload.is_empty() {
            return Err(Error::MalformedHeader("empty payload list".into()));
        }
        Ok(())
    }

    fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

fn read_header(path: &Path) -> Result<GridHeader> {
    let text = fs::read_to_string(path)?;
    let header: GridHeader = serde_json::from_str(&text)
        .map_err(|e| Error::MalformedHeader(format!("{}: {e}", path.display())))?;
    header.validate()?;
    Ok(header)
}

fn payload_path(header_path: &Path, name: &str) -> PathBuf {
    header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(name)
}

fn read_payload(path: &Path, dtype: DType, expected: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let width = match dtype {
        DType::U16 => 2,
        DType::F32 => 4,
    };
    let actual = bytes.len() / width;
    if actual != expected || bytes.len() % width != 0 {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    let data = match dtype {
        DType::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    };
    Ok(data)
}

fn write_payload(path: &Path, dtype: DType, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    match dtype {
        DType::U16 => {
            for &v in data {
                let q = v.round();
                if !(0.0..=65535.0).contains(&q) {
                    return Err(Error::InvalidParam(format!(
                        "value {v} does not fit in u16 payload"
                    )));
                }
                bytes.extend_from_slice(&(q as u16).to_le_bytes());
            }
        }
        DType::F32 => {
            for &v in data {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "grid".into())
}

fn write_header(path: &Path, header: &GridHeader) -> Result<()> {
    let text = serde_json::to_string_pretty(header)?;
    fs::write(path, text)?;
    Ok(())
}

/// Saves a volume: JSON header at `path`, payload at `<stem>.raw` alongside.
pub fn save_volume(vol: &Volume3, path: &Path, dtype: DType) -> Result<()> {
    let name = format!("{}.raw", stem_of(path));
    let header = GridHeader {
        dims: vol.dims(),
        spacing: vol.spacing(),
        dtype,
        byte_order: "little".into(),
        payload: vec![name.clone()],
    };
    write_payload(&payload_path(path, &name), dtype, vol.data())?;
    write_header(path, &header)
}

pub fn load_volume(path: &Path) -> Result<Volume3> {
    let header = read_header(path)?;
    if header.payload.len() != 1 {
        return Err(Error::MalformedHeader(format!(
            "volume header must list exactly one payload, found {}",
            header.payload.len()
        )));
    }
    let data = read_payload(
        &payload_path(path, &header.payload[0]),
        header.dtype,
        header.voxels(),
    )?;
    Volume3::new(header.dims, header.spacing, data)
}

/// Saves a vector field as three component payloads plus one header.
pub fn save_field(field: &VectorField3, spacing: [f64; 3], path: &Path) -> Result<()> {
    let stem = stem_of(path);
    let names: Vec<String> = ["ux", "uy", "uz"]
        .iter()
        .map(|c| format!("{stem}.{c}.raw"))
        .collect();
    for (c, name) in names.iter().enumerate() {
        let comp: Vec<f64> = field.data().iter().map(|v| v[c]).collect();
        write_payload(&payload_path(path, name), DType::F32, &comp)?;
    }
    let header = GridHeader {
        dims: field.dims(),
        spacing,
        dtype: DType::F32,
        byte_order: "little".into(),
        payload: names,
    };
    write_header(path, &header)
}

pub fn load_field(path: &Path) -> Result<VectorField3> {
    let header = read_header(path)?;
    if header.payload.len() != 3 {
        return Err(Error::MalformedHeader(format!(
            "field header must list three payloads, found {}",
            header.payload.len()
        )));
    }
    let n = header.voxels();
    let mut comps = Vec::with_capacity(3);
    for name in &header.payload {
        comps.push(read_payload(&payload_path(path, name), header.dtype, n)?);
    }
    let data = (0..n).map(|i| [comps[0][i], comps[1][i], comps[2][i]]).collect();
    VectorField3::new(header.dims, data)
}

/// Saves per-voxel coefficient grids (one payload per marker).
pub fn save_coefficient_grids(
    grids: &[Vec<f64>],
    dims: [usize; 3],
    spacing: [f64; 3],
    path: &Path,
) -> Result<()> {
    let stem = stem_of(path);
    let n = dims[0] * dims[1] * dims[2];
    let mut names = Vec::with_capacity(grids.len());
    for (p, grid) in grids.iter().enumerate() {
        if grid.len() != n {
            return Err(Error::DimMismatch(format!(
                "coefficient grid {p} has {} values, expected {n}",
                grid.len()
            )));
        }
        let name = format!("{stem}.g{p}.raw");
        write_payload(&payload_path(path, &name), DType::F32, grid)?;
        names.push(name);
    }
    let header = GridHeader {
        dims,
        spacing,
        dtype: DType::F32,
        byte_order: "little".into(),
        payload: names,
    };
    write_header(path, &header)
}

pub fn load_coefficient_grids(path: &Path) -> Result<(Vec<Vec<f64>>, [usize; 3], [f64; 3])> {
    let header = read_header(path)?;
    let n = header.voxels();
    let mut grids = Vec::with_capacity(header.payload.len());
    for name in &header.payload {
        grids.push(read_payload(&payload_path(path, name), header.dtype, n)?);
    }
    Ok((grids, header.dims, header.spacing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn volume_round_trip_f32_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // f32-representable values so the round trip is exact
        let data: Vec<f64> = (0..64).map(|_| rng.gen_range(-100.0f32..100.0) as f64).collect();
        let vol = Volume3::new([4, 4, 4], [1.0, 1.0, 2.0], data).unwrap();
        let path = dir.path().join("vol.json");
        save_volume(&vol, &path, DType::F32).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn volume_round_trip_u16() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..8).map(|i| (i * 100) as f64).collect();
        let vol = Volume3::new([2, 2, 2], [1.0; 3], data).unwrap();
        let path = dir.path().join("vol16.json");
        save_volume(&vol, &path, DType::U16).unwrap();
        assert_eq!(load_volume(&path).unwrap(), vol);
    }

    #[test]
    fn truncated_payload_is_diagnosed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let header = GridHeader {
            dims: [2, 2, 2],
            spacing: [1.0; 3],
            dtype: DType::F32,
            byte_order: "little".into(),
            payload: vec!["bad.raw".into()],
        };
        write_header(&path, &header).unwrap();
        // 7 values instead of 8
        write_payload(&dir.path().join("bad.raw"), DType::F32, &[0.0; 7]).unwrap();
        match load_volume(&path) {
            Err(Error::TruncatedPayload { expected, actual, .. }) => {
                assert_eq!(expected, 8);
                assert_eq!(actual, 7);
            }
            other => panic!("expected truncated-payload error, got {other:?}"),
        }
    }

    #[test]
    fn zero_dim_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.json");
        fs::write(
            &path,
            r#"{"dims":[0,2,2],"spacing":[1,1,1],"dtype":"f32","byte_order":"little","payload":["zero.raw"]}"#,
        )
        .unwrap();
        assert!(matches!(load_volume(&path), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn garbage_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.json");
        fs::write(&path, "not json at all").unwrap();
        assert!(matches!(load_volume(&path), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<[f64; 3]> = (0..27)
            .map(|_| {
                [
                    rng.gen_range(-2.0f32..2.0) as f64,
                    rng.gen_range(-2.0f32..2.0) as f64,
                    rng.gen_range(-2.0f32..2.0) as f64,
                ]
            })
            .collect();
        let field = VectorField3::new([3, 3, 3], data).unwrap();
        let path = dir.path().join("dvf.json");
        save_field(&field, [1.0; 3], &path).unwrap();
        assert_eq!(load_field(&path).unwrap(), field);
    }

    #[test]
    fn coefficient_grids_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grids = vec![vec![0.5f64; 8], vec![-1.25f64; 8]];
        let path = dir.path().join("gamma.json");
        save_coefficient_grids(&grids, [2, 2, 2], [1.0; 3], &path).unwrap();
        let (back, dims, _) = load_coefficient_grids(&path).unwrap();
        assert_eq!(back, grids);
        assert_eq!(dims, [2, 2, 2]);
    }
}
