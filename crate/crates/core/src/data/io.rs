//! Dataset container format (`FSARDS1`).
//!
//! ```text
//! FSARDS1\n
//! frame_dim = <D>\n
//! classes = <n>\n
//! class = <id> <base|novel> <name>\n        (n lines, ids 0..n in order)
//! descriptors = <0|1>\n
//! records = <R>\n
//! end_header\n
//! [descriptors: n * D  f32 LE]               (only when descriptors = 1)
//! R records, each:  u32 LE video_id | u32 LE class_id | u32 LE L | L * D f32 LE
//! ```
//!
//! All numbers in the body are 32-bit little-endian words, so a round trip of
//! `f32` frame data is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{ClassTable, Dataset, Split, VideoSample};
use crate::error::{FsarError, Result};

pub const DATASET_MAGIC: &str = "FSARDS1";

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(dataset);
    let mut f = fs::File::create(path).map_err(|e| FsarError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| FsarError::io(path, e))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FsarError::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn encode(dataset: &Dataset) -> Vec<u8> {
    let classes = dataset.classes();
    let mut header = format!("{DATASET_MAGIC}\nframe_dim = {}\nclasses = {}\n", dataset.frame_dim(), classes.len());
    for (id, name) in classes.names().iter().enumerate() {
        header.push_str(&format!("class = {id} {} {name}\n", classes.split_of(id)));
    }
    header.push_str(&format!(
        "descriptors = {}\nrecords = {}\nend_header\n",
        dataset.descriptors().is_some() as u8,
        dataset.samples().len()
    ));
    let mut out = header.into_bytes();
    if let Some(d) = dataset.descriptors() {
        for v in d.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for s in dataset.samples() {
        out.extend_from_slice(&s.video_id.to_le_bytes());
        out.extend_from_slice(&(s.class_id as u32).to_le_bytes());
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        for v in s.frames.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| FsarError::malformed(format!("offset {}", self.pos), "unterminated header line"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| FsarError::malformed(format!("offset {}", self.pos), "header is not UTF-8"))?;
        self.pos += end + 1;
        Ok(line)
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let at = self.pos;
        let line = self.line()?;
        match line.split_once('=') {
            Some((k, v)) if k.trim() == key => Ok(v.trim()),
            _ => Err(FsarError::malformed(format!("offset {at}"), format!("expected `{key} = ...`"))),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let at = self.pos;
        self.field(key)?
            .parse()
            .map_err(|_| FsarError::malformed(format!("offset {at}"), format!("bad number for `{key}`")))
    }

    fn word(&mut self, what: &str) -> Result<[u8; 4]> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(FsarError::malformed(
                format!("offset {}", self.pos),
                format!("truncated {what}"),
            ));
        }
        let w = self.bytes[self.pos..end].try_into().unwrap();
        self.pos = end;
        Ok(w)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let need = n.checked_mul(4).and_then(|b| b.checked_add(self.pos));
        match need {
            Some(end) if end <= self.bytes.len() => {}
            _ => {
                return Err(FsarError::malformed(
                    format!("offset {}", self.pos),
                    format!("truncated {what}"),
                ))
            }
        }
        Ok((0..n)
            .map(|_| f32::from_le_bytes(self.word(what).unwrap()))
            .collect())
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.line()? != DATASET_MAGIC {
        return Err(FsarError::malformed("offset 0", "missing FSARDS1 magic"));
    }
    let frame_dim: usize = cur.number("frame_dim")?;
    let n_classes: usize = cur.number("classes")?;
    let mut names = Vec::with_capacity(n_classes);
    let mut base = Vec::new();
    let mut novel = Vec::new();
    for expected in 0..n_classes {
        let at = cur.pos;
        let v = cur.field("class")?;
        let parts: Vec<&str> = v.split_whitespace().collect();
        let bad = || FsarError::malformed(format!("offset {at}"), format!("bad class entry `{v}`"));
        if parts.len() != 3 || parts[0].parse::<usize>().ok() != Some(expected) {
            return Err(bad());
        }
        match parts[1].parse::<Split>().map_err(|_| bad())? {
            Split::Base => base.push(expected),
            Split::Novel => novel.push(expected),
        }
        names.push(parts[2].to_string());
    }
    let has_desc: u8 = cur.number("descriptors")?;
    let n_records: usize = cur.number("records")?;
    let at = cur.pos;
    if cur.line()? != "end_header" {
        return Err(FsarError::malformed(format!("offset {at}"), "expected end_header"));
    }
    let classes = ClassTable::new(names, base, novel)
        .map_err(|e| FsarError::malformed("header", e.to_string()))?;

    let descriptors = match has_desc {
        0 => None,
        1 => {
            let v = cur.floats(n_classes * frame_dim, "descriptor table")?;
            Some(Array2::from_shape_vec((n_classes, frame_dim), v).unwrap())
        }
        _ => return Err(FsarError::malformed("header", "descriptors flag must be 0 or 1")),
    };

    let mut samples = Vec::with_capacity(n_records);
    for r in 0..n_records {
        let what = format!("record {r}");
        let video_id = u32::from_le_bytes(cur.word(&what)?);
        let class_id = u32::from_le_bytes(cur.word(&what)?) as usize;
        let len = u32::from_le_bytes(cur.word(&what)?) as usize;
        let v = cur.floats(len * frame_dim, &what)?;
        samples.push(VideoSample {
            video_id,
            class_id,
            frames: Array2::from_shape_vec((len, frame_dim), v).unwrap(),
        });
    }
    if cur.pos != bytes.len() {
        return Err(FsarError::malformed(
            format!("offset {}", cur.pos),
            "trailing bytes after last record",
        ));
    }
    Dataset::new(frame_dim, classes, samples, descriptors)
        .map_err(|e| FsarError::malformed("body", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn ds() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            num_classes: 5,
            samples_per_class: 3,
            frame_dim: 6,
            min_frames: 1,
            max_frames: 5,
            seed: 3,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = ds();
        let back = decode(&encode(&d)).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.classes().base_ids(), d.classes().base_ids());
        assert_eq!(back.classes().novel_ids(), d.classes().novel_ids());
    }

    #[test]
    fn round_trip_through_file() {
        let d = ds();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.fsards");
        save_dataset(&d, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), d);
        assert!(matches!(load_dataset(dir.path().join("nope")), Err(FsarError::Io { .. })));
    }

    #[test]
    fn truncation_is_reported_with_record() {
        let bytes = encode(&ds());
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            FsarError::Malformed { reason, .. } => assert!(reason.contains("record 14"), "{reason}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode(&bytes[..20]), Err(FsarError::Malformed { .. })));
        assert!(matches!(decode(b"NOPE\n"), Err(FsarError::Malformed { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&ds());
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(FsarError::Malformed { .. })));
    }
}
