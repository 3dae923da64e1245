//! Per-strip latency of `extract_strip` on random frames.

use std::time::Instant;

use motion_profile::ingest::Frame;
use motion_profile::profile::{extract_strip_into, PixelBelt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// One frame interval at 60 fps.
pub const FRAME_BUDGET_MS: f64 = 1000.0 / 60.0;

/// Distinct frames cycled through, so the belt is not always cache resident.
const POOL: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub width: usize,
    pub belt_height: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub strips_per_second: f64,
    pub budget_ms: f64,
    /// `mean_ms / budget_ms`; below 1 is faster than real time.
    pub budget_ratio: f64,
    pub within_budget: bool,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `iterations` strip extractions after `warmup` untimed ones.
///
/// Frames are 720 rows high with the belt at rows `[335, 335 + belt_height)`
/// clipped to the frame, which is the medium belt under a horizon at row 300.
pub fn bench_strip(
    width: usize,
    belt_height: usize,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport, String> {
    if iterations < 100 {
        return Err(format!("iterations must be >= 100, got {iterations}"));
    }
    if width == 0 || belt_height == 0 {
        return Err("width and belt height must be positive".into());
    }
    let height = 720.max(belt_height);
    let row_start = 335.min(height - belt_height);
    let belt = PixelBelt {
        row_start,
        row_end: row_start + belt_height,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Frame> = (0..POOL)
        .map(|i| {
            let mut data = vec![0u8; width * height];
            rng.fill(&mut data[..]);
            Frame::new(i, width, height, 1, data)
        })
        .collect();

    let mut acc = Vec::with_capacity(width);
    let mut sink = 0u64;
    for i in 0..warmup {
        sink += extract_strip_into(&frames[i % POOL], belt, &mut acc).data[0] as u64;
    }
    let mut times = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let start = Instant::now();
        let strip = extract_strip_into(&frames[i % POOL], belt, &mut acc);
        times.push(start.elapsed().as_secs_f64() * 1e3);
        sink += strip.data[0] as u64;
    }
    std::hint::black_box(sink);

    let mean_ms = times.iter().sum::<f64>() / iterations as f64;
    times.sort_by(f64::total_cmp);
    Ok(BenchReport {
        width,
        belt_height,
        iterations,
        warmup,
        mean_ms,
        p95_ms: percentile(&times, 95.0),
        min_ms: times[0],
        max_ms: times[iterations - 1],
        strips_per_second: 1e3 / mean_ms,
        budget_ms: FRAME_BUDGET_MS,
        budget_ratio: mean_ms / FRAME_BUDGET_MS,
        within_budget: mean_ms <= FRAME_BUDGET_MS,
    })
}
