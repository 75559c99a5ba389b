//! Benchmark fixtures shared by the criterion benches.

use decseg::data::render_sample;
use decseg::ImageBatch;

/// A batch of `n` synthetic images and their masks.
pub fn synthetic_batch(n: usize, size: usize) -> (ImageBatch, Vec<u8>) {
    let mut images = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n * size * size);
    for i in 0..n {
        let (rgb, mask) = render_sample(size, i as u64);
        let chw: Vec<u8> = (0..3).flat_map(|c| rgb.iter().skip(c).step_by(3).copied()).collect();
        images.push(chw);
        masks.extend(mask);
    }
    let views: Vec<&[u8]> = images.iter().map(Vec::as_slice).collect();
    let batch = ImageBatch::from_u8(size, size, &views).expect("sized buffer");
    (batch, masks)
}
