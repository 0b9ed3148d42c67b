//! On-disk dataset layout: 8-bit binary PGM images plus a CheXpert-schema
//! labels CSV (`Path` column + 14 pathology columns, blanks allowed).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::distill::{parse_label_cell, u1_map, RawLabel, LABEL_NAMES, NUM_LABELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::synth::{synth_dataset, SyntheticSpec};

pub fn write_pgm(path: &Path, w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != w * h {
        return Err(Error::Shape(format!("pgm: {w}x{h} needs {} bytes, got {}", w * h, pixels.len())));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write!(f, "P5\n{w} {h}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let data = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let bad = |m: &str| Error::Parse(format!("{}: {m}", path.display()));
    // header: magic, width, height, maxval as whitespace-separated tokens,
    // with '#' comments allowed
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 && pos < data.len() {
        let b = data[pos];
        if b == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            pos += 1;
        } else {
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
        }
    }
    if tokens.len() < 4 || tokens[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let w: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = tokens[3].parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    if data.len() < pos + w * h {
        return Err(bad("truncated pixel data"));
    }
    Ok((w, h, data[pos..pos + w * h].to_vec()))
}

fn label_cell(l: RawLabel) -> &'static str {
    match l {
        RawLabel::Positive => "1.0",
        RawLabel::Negative => "0.0",
        RawLabel::Uncertain => "-1.0",
        RawLabel::Blank => "",
    }
}

/// In-memory dataset: images as [0,1] pixel rows plus U-1 binary targets.
pub struct Dataset {
    pub sample_ids: Vec<String>,
    pub image_size: usize,
    /// One row of image_size² pixels per sample.
    pub images: Vec<Vec<f64>>,
    pub labels_raw: Vec<Vec<RawLabel>>,
    /// U-1 targets, one row of 14 zeros/ones per sample.
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    /// In-memory dataset straight from generated samples (no disk trip).
    pub fn from_synth(samples: &[super::synth::SynthSample], image_size: usize) -> Dataset {
        Dataset {
            sample_ids: (0..samples.len()).map(|i| format!("sample_{i:05}")).collect(),
            image_size,
            images: samples.iter().map(|s| s.image.clone()).collect(),
            labels_raw: samples.iter().map(|s| s.labels.clone()).collect(),
            targets: samples.iter().map(|s| u1_map(&s.labels)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// Stack a batch of samples into a [B,1,S,S] tensor plus [B,14] targets.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let s = self.image_size;
        let mut pixels = Vec::with_capacity(indices.len() * s * s);
        let mut targets = Vec::with_capacity(indices.len() * NUM_LABELS);
        for &i in indices {
            pixels.extend_from_slice(&self.images[i]);
            targets.extend_from_slice(&self.targets[i]);
        }
        Ok((
            Tensor::new(vec![indices.len(), 1, s, s], pixels)?,
            Tensor::new(vec![indices.len(), NUM_LABELS], targets)?,
        ))
    }
}

/// Write a generated dataset: `images/sample_#####.pgm`, `labels.csv`, and a
/// `spec.json` echo. Byte-identical for identical (spec, n, seed).
pub fn write_synth_dataset(dir: &Path, spec: &SyntheticSpec, n: usize, seed: u64) -> Result<()> {
    let samples = synth_dataset(spec, n, seed)?;
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::Io(format!("{}: {e}", img_dir.display())))?;
    let mut csv = String::new();
    csv.push_str("Path,");
    csv.push_str(&LABEL_NAMES.join(","));
    csv.push('\n');
    let s = spec.image_size;
    for (i, sample) in samples.iter().enumerate() {
        let name = format!("sample_{i:05}");
        let rel = format!("images/{name}.pgm");
        let bytes: Vec<u8> = sample.image.iter().map(|&p| (p * 255.0).round() as u8).collect();
        write_pgm(&dir.join(&rel), s, s, &bytes)?;
        let cells: Vec<&str> = sample.labels.iter().map(|&l| label_cell(l)).collect();
        csv.push_str(&format!("{rel},{}\n", cells.join(",")));
    }
    fs::write(dir.join("labels.csv"), csv)?;
    let spec_json =
        serde_json::to_string_pretty(spec).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join("spec.json"), spec_json)?;
    Ok(())
}

/// Load a dataset directory (labels.csv + referenced PGMs).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let labels_path = dir.join("labels.csv");
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(&labels_path)
        .map_err(|e| Error::Io(format!("{}: {e}", labels_path.display())))?;
    {
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("{}: {e}", labels_path.display())))?;
        if headers.len() != NUM_LABELS + 1 || &headers[0] != "Path" {
            return Err(Error::Parse(format!(
                "{}: expected header Path + {NUM_LABELS} pathology columns",
                labels_path.display()
            )));
        }
        for (i, name) in LABEL_NAMES.iter().enumerate() {
            if &headers[i + 1] != *name {
                return Err(Error::Parse(format!(
                    "{}: column {} is '{}', expected '{name}'",
                    labels_path.display(),
                    i + 1,
                    &headers[i + 1]
                )));
            }
        }
    }
    let mut sample_ids = Vec::new();
    let mut images = Vec::new();
    let mut labels_raw = Vec::new();
    let mut targets = Vec::new();
    let mut image_size = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", labels_path.display())))?;
        let rel = PathBuf::from(&rec[0]);
        let id = rel
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Parse(format!("bad image path '{}'", &rec[0])))?
            .to_string();
        let mut row = Vec::with_capacity(NUM_LABELS);
        for i in 0..NUM_LABELS {
            row.push(parse_label_cell(&rec[i + 1]).map_err(|e| {
                Error::Parse(format!("{}: sample '{id}': {e}", labels_path.display()))
            })?);
        }
        let (w, h, bytes) = read_pgm(&dir.join(&rel))?;
        if w != h {
            return Err(Error::Parse(format!("{}: image must be square, got {w}x{h}", rel.display())));
        }
        if image_size == 0 {
            image_size = w;
        } else if w != image_size {
            return Err(Error::Parse(format!(
                "{}: image size {w} differs from {image_size}",
                rel.display()
            )));
        }
        images.push(bytes.iter().map(|&b| b as f64 / 255.0).collect());
        targets.push(u1_map(&row));
        labels_raw.push(row);
        sample_ids.push(id);
    }
    if sample_ids.is_empty() {
        return Err(Error::Config(format!("{}: dataset is empty", dir.display())));
    }
    Ok(Dataset { sample_ids, image_size, images, labels_raw, targets })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let pixels: Vec<u8> = (0..32).map(|i| (i * 8) as u8).collect();
        write_pgm(&path, 8, 4, &pixels).unwrap();
        let (w, h, back) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (8, 4));
        assert_eq!(back, pixels);
    }

    #[test]
    fn pgm_reader_accepts_comments_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 2\n255\n\x01\x02\x03\x04").unwrap();
        let (w, h, px) = read_pgm(&path).unwrap();
        assert_eq!((w, h, px), (2, 2, vec![1, 2, 3, 4]));

        let bad = dir.path().join("bad.pgm");
        std::fs::write(&bad, b"P2\n2 2\n255\n....").unwrap();
        assert!(read_pgm(&bad).is_err());
    }

    #[test]
    fn synth_dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SyntheticSpec::default_desk();
        spec.image_size = 16;
        write_synth_dataset(dir.path(), &spec, 6, 42).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.image_size, 16);
        assert_eq!(ds.sample_ids[0], "sample_00000");
        assert!(ds.images[0].iter().all(|&p| (0.0..=1.0).contains(&p)));
        // targets follow U-1: uncertain counts as positive
        for (raw, tgt) in ds.labels_raw.iter().zip(&ds.targets) {
            for (r, t) in raw.iter().zip(tgt) {
                let expect = matches!(r, RawLabel::Positive | RawLabel::Uncertain);
                assert_eq!(*t == 1.0, expect);
            }
        }
    }

    #[test]
    fn identical_seeds_write_identical_bytes() {
        let mut spec = SyntheticSpec::default_desk();
        spec.image_size = 16;
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_synth_dataset(d1.path(), &spec, 4, 7).unwrap();
        write_synth_dataset(d2.path(), &spec, 4, 7).unwrap();
        let a = std::fs::read(d1.path().join("labels.csv")).unwrap();
        let b = std::fs::read(d2.path().join("labels.csv")).unwrap();
        assert_eq!(a, b);
        for i in 0..4 {
            let rel = format!("images/sample_{i:05}.pgm");
            assert_eq!(
                std::fs::read(d1.path().join(&rel)).unwrap(),
                std::fs::read(d2.path().join(&rel)).unwrap()
            );
        }
    }

    #[test]
    fn loader_rejects_wrong_headers() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("labels.csv"), "Path,Wrong\nx.pgm,1\n").unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
