//! Frame sequence files and CSV outputs.
//!
//! Sequences are read from a directory of 8-bit PGM/PPM files (sorted by file
//! name) or from a `CFV1` container: the magic bytes `CFV1`, then width,
//! height and frame count as little-endian `u32`, then the frames as
//! row-major bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::eval::{FbeReport, ThroughputReport};
use crate::imaging::{Frame, VideoSequence};
use crate::scalar::Scalar;
use crate::synth::GroundTruth;

pub const RAW_MAGIC: &[u8; 4] = b"CFV1";
const RAW_HEADER: usize = 16;

fn input_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Input(format!("{}: {msg}", path.display()))
}

/// Loads a frame directory or a raw container, scaling bytes to `[0, 1]`.
pub fn load_sequence<T: Scalar>(path: &Path, frame_rate: f64) -> Result<VideoSequence<T>> {
    let meta = fs::metadata(path).map_err(|e| input_err(path, e))?;
    if meta.is_dir() {
        load_frame_dir(path, frame_rate)
    } else {
        load_raw(path, frame_rate)
    }
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

fn load_frame_dir<T: Scalar>(dir: &Path, frame_rate: f64) -> Result<VideoSequence<T>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| input_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_pnm(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(input_err(dir, "no .pgm/.ppm frames found"));
    }
    let mut frames = Vec::with_capacity(files.len());
    let mut dims = None;
    for (index, file) in files.iter().enumerate() {
        let (w, h, bytes) = read_pnm(file)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(input_err(
                    file,
                    format!("frame is {w}x{h}, earlier frames are {}x{}", d.0, d.1),
                ))
            }
            Some(_) => {}
        }
        frames.push(frame_from_bytes(w, h, &bytes, index)?);
    }
    VideoSequence::new(frames, frame_rate)
}

fn read_pnm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| input_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bytes = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw(),
        DynamicImage::ImageRgb8(rgb) => rgb
            .pixels()
            .map(|p| ((p[0] as u16 + p[1] as u16 + p[2] as u16) as f64 / 3.0).round() as u8)
            .collect(),
        other => return Err(input_err(path, format!("unsupported pixel format {:?}", other.color()))),
    };
    Ok((w, h, bytes))
}

fn frame_from_bytes<T: Scalar>(w: usize, h: usize, bytes: &[u8], index: usize) -> Result<Frame<T>> {
    Frame::new(w, h, bytes.iter().map(|&b| T::lit(b as f64 / 255.0)).collect(), index)
}

fn load_raw<T: Scalar>(path: &Path, frame_rate: f64) -> Result<VideoSequence<T>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| input_err(path, e))?;
    if buf.len() < RAW_HEADER {
        return Err(input_err(path, format!("{} bytes, shorter than the 16-byte header", buf.len())));
    }
    if &buf[..4] != RAW_MAGIC {
        return Err(input_err(path, "missing CFV1 magic at offset 0"));
    }
    let field = |k: usize| u32::from_le_bytes(buf[4 * k..4 * k + 4].try_into().expect("4 bytes")) as usize;
    let (w, h, n) = (field(1), field(2), field(3));
    if w == 0 || h == 0 {
        return Err(input_err(path, format!("zero frame dimension {w}x{h}")));
    }
    if n == 0 {
        return Err(input_err(path, "frame count is 0"));
    }
    let frame_bytes = w * h;
    let expected = RAW_HEADER + frame_bytes * n;
    if buf.len() < expected {
        let complete = (buf.len() - RAW_HEADER) / frame_bytes;
        return Err(input_err(
            path,
            format!(
                "truncated payload: frame {complete} incomplete at offset {} ({} of {expected} bytes)",
                RAW_HEADER + complete * frame_bytes,
                buf.len()
            ),
        ));
    }
    let frames = (0..n)
        .map(|i| {
            let start = RAW_HEADER + i * frame_bytes;
            frame_from_bytes(w, h, &buf[start..start + frame_bytes], i)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, frame_rate)
}

/// Writes the sequence as a `CFV1` container of quantised bytes.
pub fn save_raw<T: Scalar>(path: &Path, seq: &VideoSequence<T>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(RAW_MAGIC)?;
    for v in [seq.width(), seq.height(), seq.len()] {
        let v = u32::try_from(v).map_err(|_| Error::Domain(format!("{v} exceeds the u32 header field")))?;
        out.write_all(&v.to_le_bytes())?;
    }
    for f in seq.frames() {
        out.write_all(&f.to_u8())?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a binary PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(bytes, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Writes `frame_00000.pgm`, `frame_00001.pgm`, ... into `dir`.
pub fn save_frame_dir<T: Scalar>(dir: &Path, seq: &VideoSequence<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in seq.frames() {
        write_pgm(&dir.join(format!("frame_{:05}.pgm", f.index())), f.width(), f.height(), &f.to_u8())?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Shortest round-trip representation, so printed summaries match CSV values exactly.
pub fn fmt_f(v: f64) -> String {
    format!("{v}")
}

/// Rows `anchor_id, frame, x, y`; `tracks[i]` starts at `first_frame`.
pub fn write_tracks_csv(path: &Path, tracks: &[(usize, Vec<crate::Point2<f64>>)], first_frame: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["anchor_id", "frame", "x", "y"]).map_err(csv_err)?;
    for (id, track) in tracks {
        for (t, p) in track.iter().enumerate() {
            w.write_record([id.to_string(), (first_frame + t).to_string(), fmt_f(p.x), fmt_f(p.y)])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ground_truth_csv(path: &Path, gt: &GroundTruth) -> Result<()> {
    let tracks: Vec<_> = gt.trajectories.iter().cloned().enumerate().collect();
    write_tracks_csv(path, &tracks, 0)
}

/// Rows `anchor_id, cx, cy, fbe_norm, fbe_raw, diverged, gt_error`.
pub fn write_report_csv(path: &Path, report: &FbeReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["anchor_id", "cx", "cy", "fbe_norm", "fbe_raw", "diverged", "gt_error"])
        .map_err(csv_err)?;
    for a in &report.per_anchor {
        w.write_record([
            a.anchor_id.to_string(),
            fmt_f(a.center.x),
            fmt_f(a.center.y),
            fmt_f(a.fbe_norm),
            fmt_f(a.fbe_raw),
            u8::from(a.diverged).to_string(),
            a.gt_error.map(fmt_f).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the pipeline comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub pipeline: String,
    pub fps: f64,
    pub fbe_ae: f64,
    pub fbe_pe: f64,
    pub fbe_total: f64,
}

/// Rows `pipeline, fps, fbe_ae, fbe_pe, fbe_total`. The fps column is a
/// wall-clock measurement and is the only column that varies between reruns.
pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["pipeline", "fps", "fbe_ae", "fbe_pe", "fbe_total"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.pipeline.clone(),
            format!("{:.2}", r.fps),
            fmt_f(r.fbe_ae),
            fmt_f(r.fbe_pe),
            fmt_f(r.fbe_total),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `pipeline, anchors, frames, workers, wall_seconds, fps, per_anchor_ms`.
pub fn write_throughput_csv(path: &Path, reports: &[ThroughputReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["pipeline", "anchors", "frames", "workers", "wall_seconds", "fps", "per_anchor_ms"])
        .map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.pipeline.clone(),
            r.anchors.to_string(),
            r.frames.to_string(),
            r.workers.to_string(),
            fmt_f(r.wall_seconds),
            format!("{:.2}", r.fps),
            fmt_f(r.per_anchor_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::smooth_texture;

    fn sample_sequence() -> VideoSequence<f64> {
        let frames = (0..3)
            .map(|i| smooth_texture(20, 12, i as u64).quantized().with_index(i))
            .collect();
        VideoSequence::new(frames, 25.0).unwrap()
    }

    #[test]
    fn raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.cfv");
        let seq = sample_sequence();
        save_raw(&path, &seq).unwrap();
        let back: VideoSequence<f64> = load_sequence(&path, 25.0).unwrap();
        assert_eq!(back, seq);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CFV1");
        assert_eq!(bytes.len(), 16 + 3 * 240);
    }

    #[test]
    fn pgm_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seq = sample_sequence();
        save_frame_dir(dir.path(), &seq).unwrap();
        let back: VideoSequence<f64> = load_sequence(dir.path(), 25.0).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn colour_frames_are_channel_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let file = BufWriter::new(File::create(dir.path().join("a.ppm")).unwrap());
        PnmEncoder::new(file)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&[30, 60, 90, 255, 0, 0], 2, 1, ExtendedColorType::Rgb8)
            .unwrap();
        let seq: VideoSequence<f64> = load_sequence(dir.path(), 25.0).unwrap();
        assert_eq!(seq.frame(0).data(), &[60.0 / 255.0, 85.0 / 255.0]);
    }

    #[test]
    fn malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.cfv");
        let mut header = RAW_MAGIC.to_vec();
        for v in [4u32, 4, 0] {
            header.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&empty, &header).unwrap();
        assert!(matches!(load_sequence::<f64>(&empty, 25.0), Err(Error::Input(_))));

        let short = dir.path().join("short.cfv");
        let mut bytes = RAW_MAGIC.to_vec();
        for v in [4u32, 4, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 20]);
        fs::write(&short, &bytes).unwrap();
        let msg = load_sequence::<f64>(&short, 25.0).unwrap_err().to_string();
        assert!(msg.contains("offset 32"), "{msg}");

        fs::write(dir.path().join("bad.cfv"), b"NOPE0000000000000000").unwrap();
        assert!(matches!(load_sequence::<f64>(&dir.path().join("bad.cfv"), 25.0), Err(Error::Input(_))));
        assert!(matches!(load_sequence::<f64>(&dir.path().join("missing"), 25.0), Err(Error::Input(_))));

        let frames = dir.path().join("frames");
        fs::create_dir(&frames).unwrap();
        assert!(matches!(load_sequence::<f64>(&frames, 25.0), Err(Error::Input(_))));
        write_pgm(&frames.join("0.pgm"), 4, 4, &[0; 16]).unwrap();
        write_pgm(&frames.join("1.pgm"), 5, 4, &[0; 20]).unwrap();
        let msg = load_sequence::<f64>(&frames, 25.0).unwrap_err().to_string();
        assert!(msg.contains("1.pgm"), "{msg}");
    }

    #[test]
    fn csv_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cmp.csv");
        write_comparison_csv(
            &path,
            &[ComparisonRow {
                pipeline: "raw-ncc".into(),
                fps: 12.345,
                fbe_ae: 1.0,
                fbe_pe: 2.0,
                fbe_total: 1.5,
            }],
        )
        .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "pipeline,fps,fbe_ae,fbe_pe,fbe_total\nraw-ncc,12.35,1,2,1.5\n");
    }
}
