use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

/// How a grid state is turned into an image.
#[derive(Clone, Debug, PartialEq)]
pub enum ObservationMap {
    /// One-hot `[1, H, W]` image of the agent cell.
    Plain,
    /// Plain image with pixels moved by a fixed bijection: pixel `i` lands at `perm[i]`.
    Shuffled { perm: Vec<usize> },
    /// One image per cell, row-major cell index.
    ImageBank(ImageBank),
}

impl ObservationMap {
    pub fn shuffled(n_pixels: usize, rng: &mut Rng) -> Self {
        let mut perm: Vec<usize> = (0..n_pixels).collect();
        perm.shuffle(rng);
        ObservationMap::Shuffled { perm }
    }

    pub fn shape(&self, width: usize, height: usize) -> [usize; 3] {
        match self {
            ObservationMap::Plain | ObservationMap::Shuffled { .. } => [1, height, width],
            ObservationMap::ImageBank(bank) => bank.shape,
        }
    }

    pub fn render(&self, width: usize, height: usize, cell: usize) -> Tensor<f32> {
        let mut plain = Tensor::zeros(&[1, height, width]);
        match self {
            ObservationMap::Plain => {
                plain.data_mut()[cell] = 1.0;
                plain
            }
            ObservationMap::Shuffled { perm } => {
                plain.data_mut()[perm[cell]] = 1.0;
                plain
            }
            ObservationMap::ImageBank(bank) => bank.images[cell].clone(),
        }
    }

    /// Undoes the pixel shuffle of an observation.
    pub fn unshuffle(&self, obs: &Tensor<f32>) -> Tensor<f32> {
        match self {
            ObservationMap::Shuffled { perm } => {
                let mut out = obs.clone();
                for (i, p) in perm.iter().enumerate() {
                    out.data_mut()[i] = obs.data()[*p];
                }
                out
            }
            _ => obs.clone(),
        }
    }
}

/// Per-state images read from a directory.
///
/// The directory holds `index.txt` with one `x,y,filename` line per cell and
/// raw image files of `width * height * 3` bytes (interleaved RGB, row-major,
/// square images). Pixel values are scaled to `[0, 1]` and stored
/// channel-first.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBank {
    pub shape: [usize; 3],
    pub images: Vec<Tensor<f32>>,
}

impl ImageBank {
    pub fn load(dir: &Path, grid_width: usize, grid_height: usize) -> Result<Self> {
        let index_path = dir.join("index.txt");
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let mut slots: Vec<Option<Tensor<f32>>> = vec![None; grid_width * grid_height];
        let mut shape: Option<[usize; 3]> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.splitn(3, ',').map(str::trim).collect();
            let bad = || {
                Error::Config(format!(
                    "{}:{}: expected x,y,filename",
                    index_path.display(),
                    lineno + 1
                ))
            };
            if parts.len() != 3 {
                return Err(bad());
            }
            let x: usize = parts[0].parse().map_err(|_| bad())?;
            let y: usize = parts[1].parse().map_err(|_| bad())?;
            if x >= grid_width || y >= grid_height {
                return Err(Error::Config(format!(
                    "image bank cell ({x},{y}) is outside the grid"
                )));
            }
            let path = dir.join(parts[2]);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let img = decode_rgb(&bytes).ok_or_else(|| {
                Error::Config(format!(
                    "{} is not a square width*height*3 raw RGB image",
                    path.display()
                ))
            })?;
            match shape {
                None => shape = Some(img.shape().try_into().unwrap()),
                Some(s) if s[..] != *img.shape() => {
                    return Err(Error::Config(format!(
                        "{} has a different size than earlier images",
                        path.display()
                    )))
                }
                _ => {}
            }
            slots[y * grid_width + x] = Some(img);
        }
        let missing: Vec<String> = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| format!("({},{})", i % grid_width, i / grid_width))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "image bank has no image for cells {}",
                missing.join(" ")
            )));
        }
        Ok(ImageBank {
            shape: shape.unwrap(),
            images: slots.into_iter().map(Option::unwrap).collect(),
        })
    }
}

fn decode_rgb(bytes: &[u8]) -> Option<Tensor<f32>> {
    if !bytes.len().is_multiple_of(3) {
        return None;
    }
    let n = bytes.len() / 3;
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || side < 4 {
        return None;
    }
    let mut data = vec![0.0f32; 3 * n];
    for (i, px) in bytes.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, side, side], data).ok()
}

/// Writes a synthetic bank of random-noise images, one per cell.
pub fn write_noise_bank(
    dir: &Path,
    grid_width: usize,
    grid_height: usize,
    side: usize,
    rng: &mut Rng,
) -> Result<()> {
    use rand::Rng as _;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::new();
    for y in 0..grid_height {
        for x in 0..grid_width {
            let name = format!("img_{x}_{y}.rgb");
            let bytes: Vec<u8> = (0..side * side * 3).map(|_| rng.gen()).collect();
            let path = dir.join(&name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            index.push_str(&format!("{x},{y},{name}\n"));
        }
    }
    let path = dir.join("index.txt");
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}
