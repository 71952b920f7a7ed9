//! Heatmaps as binary PPM (P6) images: spectrograms on a fixed
//! viridis-like colour table, pianorolls as grey levels on black. Row 0 of
//! the matrix is the bottom row of the image.

use ndarray::Array2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major from the top-left pixel.
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    #[cfg(test)]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }
}

/// Anchor colours from dark purple through teal to yellow; brightness
/// (channel sum) increases monotonically along the table.
const LUT_ANCHORS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [72, 40, 120],
    [62, 74, 137],
    [49, 104, 142],
    [38, 130, 142],
    [31, 158, 137],
    [53, 183, 121],
    [109, 205, 89],
    [253, 231, 37],
];

/// Colour of `x` in `[0,1]` (clamped), linearly interpolated between anchors.
pub fn colormap(x: f64) -> [u8; 3] {
    let pos = x.clamp(0.0, 1.0) * (LUT_ANCHORS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(LUT_ANCHORS.len() - 2);
    let frac = pos - i as f64;
    let (a, b) = (LUT_ANCHORS[i], LUT_ANCHORS[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 + frac * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// Image of an `rows x cols` matrix: `cols` wide, `rows` tall, matrix row
/// 0 at the bottom.
fn heatmap(values: &Array2<f64>, colour: impl Fn(f64) -> [u8; 3]) -> Image {
    let (rows, cols) = values.dim();
    let mut pixels = Vec::with_capacity(rows * cols);
    for y in 0..rows {
        let r = rows - 1 - y;
        pixels.extend((0..cols).map(|x| colour(values[[r, x]])));
    }
    Image { width: cols, height: rows, pixels }
}

/// Dynamic range shown for spectrograms, in dB below the peak.
pub const SPECTROGRAM_RANGE_DB: f64 = 80.0;

/// Log-magnitude heatmap: `20 log10(|x| / peak)` mapped from
/// `-SPECTROGRAM_RANGE_DB` (bottom of the table) to 0 dB (top). An all-zero
/// input is uniformly the bottom colour.
pub fn spectrogram_image(magnitude: &Array2<f64>) -> Image {
    let peak = magnitude.iter().copied().fold(0.0, f64::max);
    heatmap(magnitude, |v| {
        if peak <= 0.0 || v <= 0.0 {
            return colormap(0.0);
        }
        let db = 20.0 * (v / peak).log10();
        colormap(1.0 + db / SPECTROGRAM_RANGE_DB)
    })
}

/// Grey-level pianoroll: black where inactive, `value * 255` grey where
/// active (values clamped to `[0,1]`).
pub fn roll_image(roll: &Array2<f64>) -> Image {
    heatmap(roll, |v| {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        [g, g, g]
    })
}
