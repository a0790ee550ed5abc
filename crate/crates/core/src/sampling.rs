//! Boundary-aware pixel selection and label downsampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Tensor2D;
use crate::repr_loss::LabelMatrix;

/// Binary background (0) / object (1) mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    values: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, values: Vec<u8>) -> Result<Self> {
        if h.checked_mul(w) != Some(values.len()) {
            return Err(Error::Shape(format!("{h}x{w} mask with {} values", values.len())));
        }
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            return Err(Error::invalid(format!("mask value {} at pixel {pos}; expected 0 or 1", values[pos])));
        }
        Ok(Self { h, w, values })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, values: vec![0; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                values.push(f(i, j) as u8);
            }
        }
        Self { h, w, values }
    }

    /// Reads a mask stored as an `h × w` tensor of zeros and ones.
    pub fn from_tensor(t: &Tensor2D) -> Result<Self> {
        let values = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                v => Err(Error::invalid(format!("mask value {v} at pixel {i}; expected 0 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(t.rows(), t.cols(), values)
    }

    pub fn to_tensor(&self) -> Tensor2D {
        Tensor2D::from_fn(self.h, self.w, |i, j| self.get(i, j) as f64)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.w + j]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Flattened indices of set pixels, ascending.
    pub fn set_indices(&self) -> Vec<usize> {
        self.values.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect()
    }

    /// Nearest-neighbour subsample at the top-left of each `stride × stride` cell.
    pub fn downsample(&self, stride: usize) -> Result<Mask> {
        if stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        if !self.h.is_multiple_of(stride) || !self.w.is_multiple_of(stride) {
            return Err(Error::invalid(format!(
                "{}x{} mask is not divisible by stride {stride}; crop it to a multiple first",
                self.h, self.w
            )));
        }
        let (h, w) = (self.h / stride, self.w / stride);
        Ok(Mask::from_fn(h, w, |i, j| self.get(i * stride, j * stride) == 1))
    }
}

/// Where a [`PixelIndexSet`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    Boundary,
    RandomFallback,
}

impl SampleSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleSource::Boundary => "boundary",
            SampleSource::RandomFallback => "random-fallback",
        }
    }
}

/// Strictly increasing flattened pixel indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelIndexSet {
    pub indices: Vec<usize>,
    pub source: SampleSource,
}

impl PixelIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

const SOBEL_X: [[i32; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
const SOBEL_Y: [[i32; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];

/// Replicate-padded 3×3 window around `(i, j)`.
fn window(m: &Mask, i: usize, j: usize) -> [[i32; 3]; 3] {
    let mut out = [[0; 3]; 3];
    for (di, row) in out.iter_mut().enumerate() {
        let r = (i + di).saturating_sub(1).min(m.h - 1);
        for (dj, v) in row.iter_mut().enumerate() {
            let c = (j + dj).saturating_sub(1).min(m.w - 1);
            *v = m.get(r, c) as i32;
        }
    }
    out
}

fn check_kernel_size(m: &Mask) -> Result<()> {
    if m.h < 3 || m.w < 3 {
        return Err(Error::invalid(format!("{}x{} mask is smaller than the 3x3 Sobel kernel", m.h, m.w)));
    }
    Ok(())
}

/// Raw Sobel responses `(G_x, G_y)` of the mask, replicate-padded.
pub fn sobel_gradients(m: &Mask) -> Result<(Vec<i32>, Vec<i32>)> {
    check_kernel_size(m)?;
    let mut gx = Vec::with_capacity(m.len());
    let mut gy = Vec::with_capacity(m.len());
    for i in 0..m.h {
        for j in 0..m.w {
            let win = window(m, i, j);
            let mut sx = 0;
            let mut sy = 0;
            for a in 0..3 {
                for b in 0..3 {
                    sx += SOBEL_X[a][b] * win[a][b];
                    sy += SOBEL_Y[a][b] * win[a][b];
                }
            }
            gx.push(sx);
            gy.push(sy);
        }
    }
    Ok((gx, gy))
}

/// Edge pixels of a binary mask.
///
/// A pixel is marked when its Sobel response `|G_x| + |G_y|` is non-zero, or
/// when it differs from one of its 8 neighbours. The second clause covers the
/// patterns the zero-centre Sobel kernels cannot see (isolated pixels,
/// one-pixel lines); on a binary mask the union is exactly the set of pixels
/// whose 3×3 window is not constant.
pub fn sobel_boundary(m: &Mask) -> Result<Mask> {
    let (gx, gy) = sobel_gradients(m)?;
    let mut values = Vec::with_capacity(m.len());
    for i in 0..m.h {
        for j in 0..m.w {
            let k = i * m.w + j;
            let centre = m.get(i, j) as i32;
            let edge = gx[k].abs() + gy[k].abs() > 0 || window(m, i, j).iter().flatten().any(|&v| v != centre);
            values.push(edge as u8);
        }
    }
    Ok(Mask { h: m.h, w: m.w, values })
}

/// Chebyshev-ball dilation: square structuring element of side `2·radius + 1`.
pub fn dilate(b: &Mask, radius: usize) -> Mask {
    if radius == 0 || b.is_empty() {
        return b.clone();
    }
    // Separable: max over rows, then over columns.
    let mut horizontal = vec![0u8; b.len()];
    for i in 0..b.h {
        for j in 0..b.w {
            let lo = j.saturating_sub(radius);
            let hi = (j + radius).min(b.w - 1);
            horizontal[i * b.w + j] = (lo..=hi).any(|c| b.get(i, c) == 1) as u8;
        }
    }
    let mut values = vec![0u8; b.len()];
    for i in 0..b.h {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(b.h - 1);
        for j in 0..b.w {
            values[i * b.w + j] = (lo..=hi).any(|r| horizontal[r * b.w + j] == 1) as u8;
        }
    }
    Mask { h: b.h, w: b.w, values }
}

/// Sobel edges dilated by `radius`: the pixels "around and near" the object boundary.
pub fn boundary_band(m: &Mask, radius: usize) -> Result<Mask> {
    Ok(dilate(&sobel_boundary(m)?, radius))
}

/// One-hot labels of the stride-downsampled mask, row-major.
pub fn downsample_labels(m: &Mask, stride: usize) -> Result<LabelMatrix> {
    LabelMatrix::from_classes(m.downsample(stride)?.values())
}

/// Picks at most `cap` boundary pixels.
///
/// Boundaries with at least `cap` pixels are subsampled uniformly; smaller
/// ones are returned whole. With fewer than two boundary pixels the loss is
/// undefined, so `cap` pixels are drawn uniformly from the whole grid instead.
pub fn select_pixels(boundary: &Mask, cap: usize, seed: u64) -> Result<PixelIndexSet> {
    if cap < 2 {
        return Err(Error::invalid(format!("pixel cap must be at least 2, got {cap}")));
    }
    let set = boundary.set_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if set.len() >= 2 {
        if set.len() <= cap {
            return Ok(PixelIndexSet { indices: set, source: SampleSource::Boundary });
        }
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, set.len(), cap).into_iter().map(|k| set[k]).collect();
        picked.sort_unstable();
        return Ok(PixelIndexSet { indices: picked, source: SampleSource::Boundary });
    }
    Ok(PixelIndexSet {
        indices: uniform_indices(boundary.len(), cap, &mut rng),
        source: SampleSource::RandomFallback,
    })
}

/// `min(count, len)` distinct indices below `len`, sorted.
pub fn uniform_indices(len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picked = rand::seq::index::sample(rng, len, count.min(len)).into_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_rows(rows: &[&[u8]]) -> Mask {
        Mask::new(rows.len(), rows[0].len(), rows.concat()).unwrap()
    }

    #[test]
    fn constant_mask_has_no_boundary() {
        assert_eq!(sobel_boundary(&Mask::zeros(5, 4)).unwrap().count(), 0);
        let ones = Mask::from_fn(4, 4, |_, _| true);
        assert_eq!(sobel_boundary(&ones).unwrap().count(), 0);
    }

    #[test]
    fn half_split_marks_centre_columns() {
        let m = Mask::from_fn(4, 4, |_, j| j >= 2);
        let b = sobel_boundary(&m).unwrap();
        assert_eq!(b, Mask::from_fn(4, 4, |_, j| j == 1 || j == 2));
        // The literal Sobel response agrees here.
        let (gx, gy) = sobel_gradients(&m).unwrap();
        let literal: Vec<u8> = gx.iter().zip(&gy).map(|(x, y)| (x.abs() + y.abs() > 0) as u8).collect();
        assert_eq!(literal, b.values());
    }

    #[test]
    fn single_pixel_marks_its_neighbourhood() {
        let m = Mask::from_fn(5, 5, |i, j| i == 2 && j == 2);
        let b = sobel_boundary(&m).unwrap();
        assert_eq!(b, Mask::from_fn(5, 5, |i, j| (1..=3).contains(&i) && (1..=3).contains(&j)));
    }

    #[test]
    fn too_small_for_kernel() {
        assert!(sobel_boundary(&Mask::zeros(2, 5)).is_err());
        assert!(sobel_boundary(&Mask::zeros(5, 2)).is_err());
    }

    #[test]
    fn dilate_examples() {
        let m = from_rows(&[&[0, 1, 0, 0], &[0, 0, 0, 1], &[1, 0, 0, 0]]);
        assert_eq!(dilate(&m, 0), m);
        let single = Mask::from_fn(5, 5, |i, j| i == 2 && j == 2);
        let block = Mask::from_fn(5, 5, |i, j| (1..=3).contains(&i) && (1..=3).contains(&j));
        assert_eq!(dilate(&single, 1), block);
        let corner = Mask::from_fn(4, 4, |i, j| i == 0 && j == 0);
        assert_eq!(dilate(&corner, 2), Mask::from_fn(4, 4, |i, j| i <= 2 && j <= 2));
    }

    #[test]
    fn downsample_blocks() {
        let m = Mask::from_fn(4, 4, |i, j| (i / 2 + j / 2) % 2 == 1);
        let y = downsample_labels(&m, 2).unwrap();
        assert_eq!(y.classes(), vec![0, 1, 1, 0]);
        let id = downsample_labels(&m, 1).unwrap();
        assert_eq!(id.classes(), m.values());
        assert!(downsample_labels(&Mask::zeros(5, 4), 2).unwrap_err().to_string().contains("crop"));
        assert!(downsample_labels(&m, 0).is_err());
    }

    #[test]
    fn select_small_boundary_returns_all() {
        let b = Mask::from_fn(6, 6, |i, j| i == 3 && j < 5);
        let s = select_pixels(&b, 8, 1).unwrap();
        assert_eq!(s.source, SampleSource::Boundary);
        assert_eq!(s.indices, vec![18, 19, 20, 21, 22]);
    }

    #[test]
    fn select_empty_boundary_falls_back() {
        let s = select_pixels(&Mask::zeros(8, 8), 4, 3).unwrap();
        assert_eq!(s.source, SampleSource::RandomFallback);
        assert_eq!(s.len(), 4);
        assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(s.indices.iter().all(|&i| i < 64));
        // A single pixel is not enough for a correlation matrix either.
        let one = Mask::from_fn(8, 8, |i, j| i == 1 && j == 1);
        assert_eq!(select_pixels(&one, 4, 3).unwrap().source, SampleSource::RandomFallback);
    }

    #[test]
    fn select_subsamples_deterministically() {
        let b = Mask::from_fn(25, 40, |i, j| (i * 40 + j) % 2 == 0);
        assert_eq!(b.count(), 500);
        let a = select_pixels(&b, 128, 42).unwrap();
        let again = select_pixels(&b, 128, 42).unwrap();
        assert_eq!(a, again);
        assert_eq!(a.len(), 128);
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(a.indices.iter().all(|&i| b.values()[i] == 1));
        assert_ne!(a, select_pixels(&b, 128, 43).unwrap());
        assert!(select_pixels(&b, 1, 0).is_err());
    }

    #[test]
    fn mask_validation() {
        assert!(Mask::new(2, 2, vec![0, 1, 2, 0]).is_err());
        assert!(Mask::new(2, 2, vec![0, 1, 1]).is_err());
        let t = Tensor2D::from_rows(&[vec![0.0, 0.5]]).unwrap();
        assert!(Mask::from_tensor(&t).is_err());
    }
}
