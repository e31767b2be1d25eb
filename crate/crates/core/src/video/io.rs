// PNG frame directories and the raw planar container.
//
// Raw layout (little-endian):
//   "MNVR" | u32 N | u32 H | u32 W | N * (R plane, G plane, B plane) as f32

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};

use super::Video;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RAW_MAGIC: &[u8; 4] = b"MNVR";

fn video_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into())
}

/// Loads a directory of numbered PNG frames or a raw `MNVR` file.
pub fn load_video(path: impl AsRef<Path>) -> Result<Video> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    if path.is_dir() {
        load_png_dir(path)
    } else {
        load_raw(path)
    }
}

/// Writes raw when the path ends in `.mnvr`, otherwise a PNG directory.
pub fn save_video(video: &Video, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "mnvr") {
        save_raw(video, path)
    } else {
        save_png_dir(video, path)
    }
}

fn load_png_dir(dir: &Path) -> Result<Video> {
    let mut files: Vec<(u64, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .filter_map(|p| {
            let n = p.file_stem()?.to_str()?.parse::<u64>().ok()?;
            Some((n, p))
        })
        .collect();
    if files.is_empty() {
        return Err(Error::EmptyVideo);
    }
    files.sort();
    let mut frames = Vec::with_capacity(files.len());
    let mut dims = None;
    for (_, p) in &files {
        let img = image::open(p)
            .map_err(|source| Error::Image {
                path: p.clone(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        if *dims.get_or_insert((h, w)) != (h, w) {
            return Err(Error::MixedResolutions(dir.to_path_buf()));
        }
        let (h, w) = (h as usize, w as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = px[c] as f64 / 255.0;
            }
        }
        frames.push(Tensor::new(vec![3, h, w], data)?);
    }
    Video::new(video_id(dir), frames)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `000001.png`, `000002.png`, ... into `dir`.
pub fn save_png_dir(video: &Video, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = video.resolution();
    for (n, f) in video.frames().iter().enumerate() {
        let d = f.data();
        let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let at = |c: usize| to_u8(d[(c * h + y as usize) * w + x as usize]);
            Rgb([at(0), at(1), at(2)])
        });
        let p = dir.join(format!("{:06}.png", n + 1));
        img.save(&p).map_err(|source| Error::Image {
            path: p.clone(),
            source,
        })?;
    }
    Ok(())
}

pub fn save_raw(video: &Video, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = video.resolution();
    let mut buf = Vec::with_capacity(16 + video.len() * 3 * h * w * 4);
    buf.extend_from_slice(RAW_MAGIC);
    for v in [video.len(), h, w] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in video.frames() {
        for &v in f.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn load_raw(path: &Path) -> Result<Video> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::BadHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
        return Err(bad("missing MNVR magic"));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w) = (word(0), word(1), word(2));
    if n == 0 || h == 0 || w == 0 {
        return Err(bad("zero dimension"));
    }
    let plane = 3 * h * w;
    if bytes.len() != 16 + n * plane * 4 {
        return Err(bad("payload length does not match N x 3 x H x W"));
    }
    let frames = bytes[16..]
        .chunks_exact(plane * 4)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            Tensor::new(vec![3, h, w], data)
        })
        .collect::<Result<Vec<_>>>()?;
    Video::new(video_id(path), frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::{generate_synthetic, Family, SyntheticSpec};

    fn sample() -> Video {
        generate_synthetic(&SyntheticSpec::new(Family::BouncingBall, (12, 10), 3, 5))
    }

    #[test]
    fn raw_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample();
        let p = dir.path().join("clip.mnvr");
        save_video(&v, &p).unwrap();
        let back = load_video(&p).unwrap();
        for (a, b) in v.frames().iter().zip(back.frames()) {
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn png_round_trip_within_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample();
        save_png_dir(&v, dir.path().join("clip")).unwrap();
        assert!(dir.path().join("clip/000001.png").exists());
        let back = load_video(dir.path().join("clip")).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in v.frames().iter().zip(back.frames()) {
            let err = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1.0 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn mixed_resolutions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = generate_synthetic(&SyntheticSpec::new(Family::MovingBox, (8, 8), 1, 1));
        let b = generate_synthetic(&SyntheticSpec::new(Family::MovingBox, (8, 6), 1, 1));
        save_png_dir(&a, dir.path()).unwrap();
        let img = image::open(dir.path().join("000001.png")).unwrap();
        img.save(dir.path().join("000003.png")).unwrap();
        save_png_dir(&b, dir.path().join("other")).unwrap();
        fs::copy(
            dir.path().join("other/000001.png"),
            dir.path().join("000002.png"),
        )
        .unwrap();
        assert!(matches!(
            load_video(dir.path()),
            Err(Error::MixedResolutions(_))
        ));
    }

    #[test]
    fn missing_and_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_video(dir.path().join("nope")),
            Err(Error::NotFound(_))
        ));
        let p = dir.path().join("bad.mnvr");
        fs::write(&p, b"XXXX0000000000000").unwrap();
        assert!(matches!(load_video(&p), Err(Error::BadHeader { .. })));
    }
}
