//! Dataset ingestion: the standard IDX image/label format plus a synthetic
//! separable dataset for fast, network-free runs.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `(n, 1, h, h)` pixel values in `[0, 1]`
    pub images: Array4<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.images.dim().2
    }

    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images.slice(ndarray::s![..n, .., .., ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn read_be_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated IDX file".into()))?;
    Ok(u32::from_be_bytes(buf))
}

/// Load an IDX image/label file pair (big-endian magic 0x803 / 0x801),
/// keeping at most `limit` examples.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let mut ir = BufReader::new(File::open(images_path)?);
    if read_be_u32(&mut ir)? != IMAGE_MAGIC {
        return Err(Error::Format(format!("{}: bad IDX image magic", images_path.display())));
    }
    let count = read_be_u32(&mut ir)? as usize;
    let rows = read_be_u32(&mut ir)? as usize;
    let cols = read_be_u32(&mut ir)? as usize;
    if rows != cols {
        return Err(Error::Format("non-square images are not supported".into()));
    }
    let n = limit.map_or(count, |l| l.min(count));
    let mut pixels = vec![0u8; n * rows * cols];
    ir.read_exact(&mut pixels).map_err(|_| Error::Format("truncated IDX image data".into()))?;

    let mut lr = BufReader::new(File::open(labels_path)?);
    if read_be_u32(&mut lr)? != LABEL_MAGIC {
        return Err(Error::Format(format!("{}: bad IDX label magic", labels_path.display())));
    }
    let lcount = read_be_u32(&mut lr)? as usize;
    if lcount != count {
        return Err(Error::Format("image/label counts disagree".into()));
    }
    let mut labels = vec![0u8; n];
    lr.read_exact(&mut labels).map_err(|_| Error::Format("truncated IDX label data".into()))?;

    let images = Array4::from_shape_fn((n, 1, rows, cols), |(k, _, r, c)| {
        pixels[(k * rows + r) * cols + c] as f64 / 255.0
    });
    Ok(Dataset { images, labels })
}

/// 3x3 box blur with clamped borders, used to give the class templates the
/// smooth, low-frequency character of handwritten-digit images.
fn box_blur(img: &[f64], h: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * h];
    for r in 0..h {
        for c in 0..h {
            let mut sum = 0.0;
            let mut count = 0.0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let rr = r as i64 + dr;
                    let cc = c as i64 + dc;
                    if rr >= 0 && rr < h as i64 && cc >= 0 && cc < h as i64 {
                        sum += img[rr as usize * h + cc as usize];
                        count += 1.0;
                    }
                }
            }
            out[r * h + c] = sum / count;
        }
    }
    out
}

/// Synthetic 10-class dataset of `h x h` images: each class has a fixed
/// smooth random template (drawn once from a class-independent seed, then
/// blurred so its spectrum concentrates at low frequencies like natural
/// images) and samples are the template plus pixel noise. Linearly separable
/// by construction.
pub fn synthetic(n_samples: usize, h: usize, seed: u64) -> Dataset {
    let mut template_rng = ChaCha8Rng::seed_from_u64(0x5EED_7E3A);
    let templates: Vec<Vec<f64>> = (0..10)
        .map(|_| {
            let mut t: Vec<f64> =
                (0..h * h).map(|_| template_rng.gen_range(0.0..1.0)).collect();
            for _ in 0..2 {
                t = box_blur(&t, h);
            }
            // stretch back to full contrast after blurring
            let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            t.iter().map(|v| (v - lo) / (hi - lo).max(1e-12)).collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Array4::<f64>::zeros((n_samples, 1, h, h));
    let mut labels = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let class = (k % 10) as u8;
        labels.push(class);
        for r in 0..h {
            for c in 0..h {
                let v = templates[class as usize][r * h + c] + rng.gen_range(-0.15..0.15);
                images[[k, 0, r, c]] = v.clamp(0.0, 1.0);
            }
        }
    }
    Dataset { images, labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_pair(dir: &Path, images: &[u8], labels: &[u8], h: usize) {
        let n = labels.len();
        let mut f = File::create(dir.join("imgs.idx")).unwrap();
        f.write_all(&IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(n as u32).to_be_bytes()).unwrap();
        f.write_all(&(h as u32).to_be_bytes()).unwrap();
        f.write_all(&(h as u32).to_be_bytes()).unwrap();
        f.write_all(images).unwrap();
        let mut f = File::create(dir.join("lbls.idx")).unwrap();
        f.write_all(&LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(n as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images: Vec<u8> = (0..2 * 4 * 4).map(|i| (i * 3) as u8).collect();
        write_idx_pair(dir.path(), &images, &[7, 2], 4);
        let ds = load_idx(&dir.path().join("imgs.idx"), &dir.path().join("lbls.idx"), None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![7, 2]);
        assert!((ds.images[[1, 0, 0, 0]] - 48.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn idx_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = File::create(dir.path().join("imgs.idx")).unwrap();
        f.write_all(&0xdeadbeefu32.to_be_bytes()).unwrap();
        drop(f);
        std::fs::write(dir.path().join("lbls.idx"), b"").unwrap();
        assert!(load_idx(&dir.path().join("imgs.idx"), &dir.path().join("lbls.idx"), None).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = synthetic(100, 8, 3);
        let b = synthetic(100, 8, 3);
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
        for class in 0..10u8 {
            assert_eq!(a.labels.iter().filter(|&&l| l == class).count(), 10);
        }
    }
}
