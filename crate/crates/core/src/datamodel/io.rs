//! On-disk formats.
//!
//! `SSLMREPR v1` layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "SSLMREPR"
//! 8       4           version (u32) = 1
//! 12      4           n_samples (u32)
//! 16      4           n_views (u32)
//! 20      4           dim (u32)
//! 24      8*n         sample ids (u64)
//! 24+8n   4*n*k*d     values (f32), row-major [sample][view][dim]
//! ```
//!
//! Sidecars and split manifests are TOML documents.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RepresentationSet, SampleId, SplitManifest};
use crate::error::{Error, Result};

pub const REPR_MAGIC: &[u8; 8] = b"SSLMREPR";
pub const REPR_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_repr(set: &RepresentationSet) -> Result<Vec<u8>> {
    let to_u32 = |v: usize, field: &'static str| {
        u32::try_from(v).map_err(|_| Error::MalformedHeader {
            field,
            detail: format!("{v} does not fit in u32"),
        })
    };
    let n = to_u32(set.n_samples(), "n_samples")?;
    let k = to_u32(set.n_views(), "n_views")?;
    let d = to_u32(set.dim(), "dim")?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * set.n_samples() + 4 * set.data().len());
    out.extend_from_slice(REPR_MAGIC);
    out.extend_from_slice(&REPR_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for id in set.sample_ids() {
        out.extend_from_slice(&id.0.to_le_bytes());
    }
    for &v in set.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_repr(bytes: &[u8], encoder_id: &str) -> Result<RepresentationSet> {
    if bytes.len() < 8 || &bytes[..8] != REPR_MAGIC {
        if bytes.len() < 8 && REPR_MAGIC.starts_with(bytes) {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        return Err(Error::MalformedHeader {
            field: "magic",
            detail: format!("expected \"SSLMREPR\", found {:?}", &bytes[..bytes.len().min(8)]),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = read_u32(bytes, 8);
    if version != REPR_VERSION {
        return Err(Error::MalformedHeader {
            field: "version",
            detail: format!("unsupported version {version}"),
        });
    }
    let n = read_u32(bytes, 12) as usize;
    let k = read_u32(bytes, 16) as usize;
    let d = read_u32(bytes, 20) as usize;
    if k == 0 {
        return Err(Error::MalformedHeader {
            field: "n_views",
            detail: "must be at least 1".into(),
        });
    }
    if d == 0 {
        return Err(Error::MalformedHeader {
            field: "dim",
            detail: "must be at least 1".into(),
        });
    }
    let n_values = n
        .checked_mul(k)
        .and_then(|v| v.checked_mul(d))
        .ok_or(Error::MalformedHeader {
            field: "n_samples",
            detail: "payload size overflows".into(),
        })?;
    let expected = n_values
        .checked_mul(4)
        .and_then(|v| v.checked_add(HEADER_LEN + 8 * n))
        .ok_or(Error::MalformedHeader {
            field: "n_samples",
            detail: "payload size overflows".into(),
        })?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingData {
            offset: expected,
            extra: bytes.len() - expected,
        });
    }
    let ids: Vec<SampleId> = bytes[HEADER_LEN..HEADER_LEN + 8 * n]
        .chunks_exact(8)
        .map(|c| SampleId(u64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let data: Vec<f64> = bytes[HEADER_LEN + 8 * n..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    RepresentationSet::new(encoder_id, ids, k, d, data)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Load a binary representation file. The encoder id is the file stem.
pub fn read_repr(path: &Path) -> Result<RepresentationSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_repr(&bytes, &stem(path))
}

pub fn write_repr(set: &RepresentationSet, path: &Path) -> Result<()> {
    fs::write(path, encode_repr(set)?).map_err(|e| Error::io(path, e))
}

/// Read the CSV fixture format: header `sample_id,view,dim0,...,dimN`, one
/// row per (sample, view), views of a sample listed consecutively from 0.
pub fn read_csv_repr(path: &Path) -> Result<RepresentationSet> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse("csv header", e))?
        .clone();
    if headers.len() < 3 || &headers[0] != "sample_id" || &headers[1] != "view" {
        return Err(Error::MalformedHeader {
            field: "csv header",
            detail: "expected sample_id,view,dim0..dimN".into(),
        });
    }
    let dim = headers.len() - 2;
    for (j, h) in headers.iter().skip(2).enumerate() {
        if h != format!("dim{j}") {
            return Err(Error::MalformedHeader {
                field: "csv header",
                detail: format!("column {} should be dim{j}, found {h}", j + 2),
            });
        }
    }
    let mut ids: Vec<SampleId> = Vec::new();
    let mut views_per: Vec<usize> = Vec::new();
    let mut data = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("csv row {row}"), e))?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let id: u64 = field(0)
            .parse()
            .map_err(|e| Error::parse(format!("csv row {row} sample_id"), e))?;
        let view: usize = field(1)
            .parse()
            .map_err(|e| Error::parse(format!("csv row {row} view"), e))?;
        if ids.last() != Some(&SampleId(id)) {
            ids.push(SampleId(id));
            views_per.push(0);
        }
        let count = views_per.last_mut().unwrap();
        if view != *count {
            return Err(Error::Shape(format!(
                "csv row {row}: sample {id} view {view} out of order (expected {count})"
            )));
        }
        *count += 1;
        if rec.len() != dim + 2 {
            return Err(Error::Shape(format!("csv row {row} has {} fields, expected {}", rec.len(), dim + 2)));
        }
        for j in 0..dim {
            let v: f64 = field(j + 2)
                .parse()
                .map_err(|e| Error::parse(format!("csv row {row} dim{j}"), e))?;
            data.push(v);
        }
    }
    let k = views_per.first().copied().unwrap_or(1);
    if let Some(bad) = views_per.iter().position(|&c| c != k) {
        return Err(Error::Shape(format!(
            "sample {} has {} views, expected {k}",
            ids[bad], views_per[bad]
        )));
    }
    RepresentationSet::new(stem(path), ids, k, dim, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderRole {
    F,
    G,
}

/// Provenance written next to every representation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub encoder_id: String,
    pub role: EncoderRole,
    pub seed: u64,
    pub augmentation: String,
    pub dataset_hash: String,
}

pub fn write_sidecar(sidecar: &Sidecar, path: &Path) -> Result<()> {
    let text = toml::to_string(sidecar).map_err(|e| Error::parse("sidecar", e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

pub fn write_manifest(manifest: &SplitManifest, path: &Path) -> Result<()> {
    let text = toml::to_string(manifest).map_err(|e| Error::parse("manifest", e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<SplitManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// FNV-1a, used to fingerprint dataset files in sidecars.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> RepresentationSet {
        RepresentationSet::new(
            "fx",
            vec![SampleId(10), SampleId(3)],
            2,
            3,
            vec![0.5, -1.0, 2.0, 0.25, 0.0, 1.5, -0.75, 3.0, 1.0, 0.125, 2.5, -2.0],
        )
        .unwrap()
    }

    #[test]
    fn round_trips_fixture() {
        let set = fixture();
        let bytes = encode_repr(&set).unwrap();
        assert_eq!(bytes.len(), 24 + 16 + 48);
        let back = decode_repr(&bytes, "fx").unwrap();
        assert_eq!((back.n_samples(), back.n_views(), back.dim()), (2, 2, 3));
        assert_eq!(back, set);
    }

    #[test]
    fn short_payload_is_truncation() {
        let set = fixture();
        let mut bytes = encode_repr(&set).unwrap();
        // declare three samples while the payload holds two
        bytes[12..16].copy_from_slice(&3u32.to_le_bytes());
        match decode_repr(&bytes, "fx") {
            Err(Error::Truncated { expected, found }) => {
                assert_eq!(expected, 24 + 24 + 72);
                assert_eq!(found, bytes.len());
            }
            other => panic!("unexpected {other:?}"),
        }
        let short = &encode_repr(&set).unwrap()[..60];
        assert!(matches!(decode_repr(short, "fx"), Err(Error::Truncated { .. })));
    }

    #[test]
    fn non_finite_value_reports_index() {
        let set = fixture();
        let mut bytes = encode_repr(&set).unwrap();
        let at = 24 + 16 + 4 * 7;
        bytes[at..at + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        match decode_repr(&bytes, "fx") {
            Err(Error::NonFinite { index, sample, view, dim }) => {
                assert_eq!((index, sample, view, dim), (7, 1, 0, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_repr(&fixture()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_repr(&bytes, "fx"),
            Err(Error::MalformedHeader { field: "magic", .. })
        ));
        let mut bytes = encode_repr(&fixture()).unwrap();
        bytes[8] = 2;
        assert!(matches!(
            decode_repr(&bytes, "fx"),
            Err(Error::MalformedHeader { field: "version", .. })
        ));
        let mut bytes = encode_repr(&fixture()).unwrap();
        bytes.push(0);
        assert!(matches!(decode_repr(&bytes, "fx"), Err(Error::TrailingData { extra: 1, .. })));
    }

    #[test]
    fn manifest_and_sidecar_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = SplitManifest {
            shared: vec![SampleId(1), SampleId(2)],
            candidates: vec![SampleId(3)],
            independent: vec![SampleId(4)],
            extra: vec![],
        };
        let p = dir.path().join("split.toml");
        write_manifest(&m, &p).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), m);

        let s = Sidecar {
            encoder_id: "f0".into(),
            role: EncoderRole::F,
            seed: 0,
            augmentation: "gaussian-noise:0.15".into(),
            dataset_hash: format!("{:016x}", fnv1a64(b"abc")),
        };
        let p = dir.path().join("f0.toml");
        write_sidecar(&s, &p).unwrap();
        assert_eq!(read_sidecar(&p).unwrap(), s);
    }

    #[test]
    fn csv_fixture_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("small.csv");
        fs::write(
            &p,
            "sample_id,view,dim0,dim1\n5,0,1.0,0.0\n5,1,0.0,1.0\n9,0,0.5,0.5\n9,1,-1,2\n",
        )
        .unwrap();
        let set = read_csv_repr(&p).unwrap();
        assert_eq!(set.encoder_id(), "small");
        assert_eq!(set.sample_ids(), &[SampleId(5), SampleId(9)]);
        assert_eq!((set.n_views(), set.dim()), (2, 2));
        assert_eq!(set.view(1, 1), &[-1.0, 2.0]);

        fs::write(&p, "sample_id,view,dim0\n5,0,1.0\n5,2,0.0\n").unwrap();
        assert!(matches!(read_csv_repr(&p), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_exact(
            vals in prop::collection::vec(-1e6f32..1e6, 1..4usize).prop_flat_map(|v| {
                let n = v.len();
                (Just(n), prop::collection::vec(-1e6f32..1e6, n * 2 * 3))
            }),
        ) {
            let (n, data) = vals;
            let set = RepresentationSet::new(
                "p",
                (0..n as u64).map(|i| SampleId(i * 31 + 7)).collect(),
                2,
                3,
                data.into_iter().map(|v| v as f64).collect(),
            ).unwrap();
            let back = decode_repr(&encode_repr(&set).unwrap(), "p").unwrap();
            prop_assert_eq!(back, set);
        }
    }
}
