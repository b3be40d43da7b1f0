//! Video manifest, size accounting and trace ingestion.
//!
//! File formats (whitespace separated, `#` starts a comment):
//!
//! * manifest: `rows cols segments duration_s`, then the ladder (N bitrates in
//!   Mbps), then one line per `(segment, tile)` in segment-major order holding
//!   N tile sizes in megabits.
//! * trace: `time_s throughput_mbps` per line.
//! * viewpoint log: `time_s x y z` per line.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sphere::Vec3;
use crate::text;

/// Default bitrate ladder in Mbps.
pub const DEFAULT_LADDER: [f64; 6] = [1.0, 2.5, 5.0, 8.0, 16.0, 35.0];

/// Tiling grid, bitrate ladder and per-tile size table of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoManifest {
    rows: usize,
    cols: usize,
    segments: usize,
    segment_duration_s: f64,
    ladder: Vec<f64>,
    // [segment][tile][rung], flattened
    tile_sizes: Vec<f64>,
}

impl VideoManifest {
    pub fn new(
        rows: usize,
        cols: usize,
        segments: usize,
        segment_duration_s: f64,
        ladder: Vec<f64>,
        tile_sizes: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("grid", "rows and cols must be positive"));
        }
        if segments == 0 {
            return Err(Error::invalid("segments", "at least one segment required"));
        }
        if !(segment_duration_s.is_finite() && segment_duration_s > 0.0) {
            return Err(Error::invalid("duration_s", "segment duration must be positive"));
        }
        if ladder.is_empty() {
            return Err(Error::invalid("ladder", "ladder is empty"));
        }
        if ladder.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("ladder", "bitrates must be positive"));
        }
        if ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("ladder", "ladder not increasing"));
        }
        let n = ladder.len();
        let expected = segments * rows * cols * n;
        if tile_sizes.len() != expected {
            return Err(Error::invalid(
                "tile_sizes",
                format!("expected {expected} entries, found {}", tile_sizes.len()),
            ));
        }
        for (i, row) in tile_sizes.chunks(n).enumerate() {
            if row.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::invalid(
                    "tile_sizes",
                    format!("non-positive size at segment {} tile {}", i / (rows * cols), i % (rows * cols)),
                ));
            }
            if row.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::invalid(
                    "tile_sizes",
                    format!(
                        "sizes decrease with rung at segment {} tile {}",
                        i / (rows * cols),
                        i % (rows * cols)
                    ),
                ));
            }
        }
        Ok(Self {
            rows,
            cols,
            segments,
            segment_duration_s,
            ladder,
            tile_sizes,
        })
    }

    /// Synthetic manifest: each tile gets `rung * duration / M` megabits times
    /// seeded noise in [0.8, 1.2]. The noise is renormalised per
    /// (segment, rung) so tile sizes sum to exactly `rung * duration`, then
    /// made monotone in the rung index.
    pub fn generate(
        rows: usize,
        cols: usize,
        segments: usize,
        segment_duration_s: f64,
        ladder: &[f64],
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rows * cols;
        let n = ladder.len();
        let mut sizes = vec![0.0; segments * m * n];
        for s in 0..segments {
            for (j, &rate) in ladder.iter().enumerate() {
                let noise: Vec<f64> = (0..m).map(|_| rng.random_range(0.8..=1.2)).collect();
                let mean = noise.iter().sum::<f64>() / m as f64;
                for (tile, w) in noise.iter().enumerate() {
                    sizes[(s * m + tile) * n + j] = rate * segment_duration_s / m as f64 * w / mean;
                }
            }
            for tile in 0..m {
                let row = &mut sizes[(s * m + tile) * n..(s * m + tile + 1) * n];
                for j in 1..n {
                    row[j] = row[j].max(row[j - 1]);
                }
            }
        }
        Self::new(rows, cols, segments, segment_duration_s, ladder.to_vec(), sizes)
    }

    /// Every tile of every segment at rung `j` has size `ladder[j] * duration / M`.
    pub fn uniform(
        rows: usize,
        cols: usize,
        segments: usize,
        segment_duration_s: f64,
        ladder: &[f64],
    ) -> Result<Self> {
        let m = rows * cols;
        let row: Vec<f64> = ladder
            .iter()
            .map(|r| r * segment_duration_s / m as f64)
            .collect();
        let sizes = row.repeat(segments * m);
        Self::new(rows, cols, segments, segment_duration_s, ladder.to_vec(), sizes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let recs = text::read_records(path)?;
        Self::parse_records(&path.display().to_string(), &recs)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_records("manifest", &text::records(text))
    }

    fn parse_records(ctx: &str, recs: &[(usize, Vec<String>)]) -> Result<Self> {
        let mut it = recs.iter();
        let (line, header) = it
            .next()
            .ok_or_else(|| Error::parse(ctx, 0, "empty manifest"))?;
        if header.len() != 4 {
            return Err(Error::parse(ctx, *line, "header must be `rows cols segments duration_s`"));
        }
        let dims: Vec<usize> = text::parse_tokens(ctx, *line, &header[..3], None)?;
        let duration: Vec<f64> = text::parse_tokens(ctx, *line, &header[3..], None)?;
        let (line, ladder_tokens) = it
            .next()
            .ok_or_else(|| Error::parse(ctx, *line, "missing ladder line"))?;
        let ladder: Vec<f64> = text::parse_tokens(ctx, *line, ladder_tokens, None)?;
        let n = ladder.len();
        let mut sizes = Vec::new();
        for (line, tokens) in it {
            sizes.extend(text::parse_tokens::<f64>(ctx, *line, tokens, Some(n))?);
        }
        Self::new(dims[0], dims[1], dims[2], duration[0], ladder, sizes)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {}",
            self.rows, self.cols, self.segments, self.segment_duration_s
        );
        let ladder: Vec<String> = self.ladder.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", ladder.join(" "));
        for row in self.tile_sizes.chunks(self.ladder.len()) {
            let row: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        text::write_file(path.as_ref(), &self.to_text())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of tiles M.
    pub fn num_tiles(&self) -> usize {
        self.rows * self.cols
    }

    /// Number of segments F.
    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn segment_duration_s(&self) -> f64 {
        self.segment_duration_s
    }

    pub fn ladder(&self) -> &[f64] {
        &self.ladder
    }

    pub fn num_rungs(&self) -> usize {
        self.ladder.len()
    }

    pub fn grid(&self) -> crate::region::TileGrid {
        crate::region::TileGrid::new(self.rows, self.cols)
    }

    fn check_segment(&self, t: usize) -> Result<()> {
        if t >= self.segments {
            return Err(Error::OutOfRange {
                what: "segment",
                index: t,
                limit: self.segments,
            });
        }
        Ok(())
    }

    /// Size in megabits of one tile at one rung.
    pub fn tile_size(&self, t: usize, tile: usize, rung: usize) -> Result<f64> {
        self.check_segment(t)?;
        let m = self.num_tiles();
        if tile >= m {
            return Err(Error::OutOfRange {
                what: "tile",
                index: tile,
                limit: m,
            });
        }
        let n = self.num_rungs();
        if rung >= n {
            return Err(Error::OutOfRange {
                what: "rung",
                index: rung,
                limit: n,
            });
        }
        Ok(self.tile_sizes[(t * m + tile) * n + rung])
    }

    /// Total size of segment `t` when tile `m` is fetched at rung `assignment[m]`.
    pub fn segment_size(&self, t: usize, assignment: &[usize]) -> Result<f64> {
        self.check_segment(t)?;
        if assignment.len() != self.num_tiles() {
            return Err(Error::Shape(format!(
                "assignment has {} entries, manifest has {} tiles",
                assignment.len(),
                self.num_tiles()
            )));
        }
        assignment
            .iter()
            .enumerate()
            .map(|(tile, &rung)| self.tile_size(t, tile, rung))
            .sum()
    }

    /// Size in megabits of a tile set fetched uniformly at `rung`.
    pub fn region_size(&self, t: usize, region: &[usize], rung: usize) -> Result<f64> {
        self.check_segment(t)?;
        region
            .iter()
            .map(|&tile| self.tile_size(t, tile, rung))
            .sum()
    }
}

/// A throughput trace with sample-and-hold interpolation.
///
/// The trace repeats with period `last_time + last_gap`; a single-sample
/// trace is constant forever.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTrace {
    samples: Vec<(f64, f64)>,
    offset_mbps: f64,
}

impl NetworkTrace {
    pub fn new(samples: Vec<(f64, f64)>, offset_mbps: f64) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::invalid("trace", "trace has no samples"));
        };
        if first.0 != 0.0 {
            return Err(Error::invalid("trace", "trace must start at time 0"));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::invalid("trace", "timestamps not strictly increasing"));
        }
        if !offset_mbps.is_finite() {
            return Err(Error::invalid("offset_mbps", "offset must be finite"));
        }
        for &(t, bw) in &samples {
            if !(t.is_finite() && bw.is_finite()) || bw + offset_mbps <= 0.0 {
                return Err(Error::invalid(
                    "trace",
                    format!("throughput at {t}s must be positive after offset"),
                ));
            }
        }
        Ok(Self {
            samples,
            offset_mbps,
        })
    }

    pub fn constant(mbps: f64) -> Result<Self> {
        Self::new(vec![(0.0, mbps)], 0.0)
    }

    /// A seeded synthetic trace: one sample per second following a
    /// mean-reverting log-space random walk around `mean_mbps`, clamped to
    /// `[mean / 8, mean * 4]`.
    pub fn synthetic(duration_s: usize, mean_mbps: f64, seed: u64) -> Result<Self> {
        if duration_s == 0 || !(mean_mbps > 0.0) {
            return Err(Error::invalid("synthetic trace", "duration and mean must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut level: f64 = 0.0;
        let samples = (0..duration_s)
            .map(|t| {
                level = 0.8 * level + rng.random_range(-0.35..0.35);
                let bw = (mean_mbps * level.exp()).clamp(mean_mbps / 8.0, mean_mbps * 4.0);
                (t as f64, bw)
            })
            .collect();
        Self::new(samples, 0.0)
    }

    pub fn load(path: impl AsRef<Path>, offset_mbps: f64) -> Result<Self> {
        let path = path.as_ref();
        let ctx = path.display().to_string();
        let mut samples = Vec::new();
        for (line, tokens) in text::read_records(path)? {
            let v: Vec<f64> = text::parse_tokens(&ctx, line, &tokens, Some(2))?;
            samples.push((v[0], v[1]));
        }
        Self::new(samples, offset_mbps)
    }

    /// Writes the raw samples (without the offset).
    pub fn to_text(&self) -> String {
        let mut out = String::from("# time_s throughput_mbps\n");
        for (t, bw) in &self.samples {
            let _ = writeln!(out, "{t} {bw}");
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        text::write_file(path.as_ref(), &self.to_text())
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn offset_mbps(&self) -> f64 {
        self.offset_mbps
    }

    pub fn with_offset(mut self, offset_mbps: f64) -> Result<Self> {
        self.offset_mbps = offset_mbps;
        Self::new(self.samples, offset_mbps)
    }

    /// Length of one pass through the trace; infinite for a single sample.
    pub fn period(&self) -> f64 {
        match self.samples.len() {
            1 => f64::INFINITY,
            n => {
                let last = self.samples[n - 1].0;
                last + (last - self.samples[n - 2].0)
            }
        }
    }

    /// Index of the active sample and the local time within the period.
    fn locate(&self, time_s: f64) -> (usize, f64) {
        let period = self.period();
        let mut local = if period.is_finite() {
            time_s - (time_s / period).floor() * period
        } else {
            time_s
        };
        if local < 0.0 {
            local = 0.0;
        }
        let idx = self.samples.partition_point(|&(t, _)| t <= local) - 1;
        (idx, local)
    }

    /// Throughput in Mbps (offset included) at absolute time `time_s`.
    pub fn throughput_at(&self, time_s: f64) -> f64 {
        let (idx, _) = self.locate(time_s.max(0.0));
        self.samples[idx].1 + self.offset_mbps
    }

    /// Time needed to download `size_mb` megabits starting at `start_s`:
    /// the smallest `tau` with the integral of throughput over
    /// `[start, start + tau]` equal to the size.
    pub fn download_time(&self, size_mb: f64, start_s: f64) -> f64 {
        if size_mb <= 0.0 {
            return 0.0;
        }
        let start = start_s.max(0.0);
        let period = self.period();
        let mut now = start;
        let mut remaining = size_mb;
        loop {
            let (idx, local) = self.locate(now);
            let rate = self.samples[idx].1 + self.offset_mbps;
            let local_end = self
                .samples
                .get(idx + 1)
                .map_or(period, |&(t, _)| t);
            let span = local_end - local;
            if !span.is_finite() || rate * span >= remaining {
                return now + remaining / rate - start;
            }
            remaining -= rate * span;
            // step exactly onto the next boundary
            now = if idx + 1 < self.samples.len() {
                now + span
            } else {
                ((now / period).floor() + 1.0) * period
            };
        }
    }
}

/// A head-movement log: timestamped unit viewpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewpointLog {
    samples: Vec<(f64, Vec3)>,
    sample_rate_hz: f64,
}

impl ViewpointLog {
    pub fn new(samples: Vec<(f64, Vec3)>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("viewpoints", "log has no samples"));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::invalid("viewpoints", "timestamps not strictly increasing"));
        }
        if let Some((t, _)) = samples.iter().find(|(_, p)| (p.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::invalid("viewpoints", format!("non-unit vector at {t}s")));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample_rate_hz", "must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Loads a log; the sample rate is inferred from the median spacing.
    /// Vectors are renormalised when within 1e-6 of unit length.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ctx = path.display().to_string();
        let mut samples = Vec::new();
        for (line, tokens) in text::read_records(path)? {
            let v: Vec<f64> = text::parse_tokens(&ctx, line, &tokens, Some(4))?;
            let p = Vec3::new(v[1], v[2], v[3]);
            if (p.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::parse(&ctx, line, "viewpoint is not a unit vector"));
            }
            samples.push((v[0], p.normalized()));
        }
        let mut gaps: Vec<f64> = samples.windows(2).map(|w| w[1].0 - w[0].0).collect();
        gaps.sort_by(f64::total_cmp);
        let rate = gaps.get(gaps.len() / 2).map_or(1.0, |g| 1.0 / g);
        Self::new(samples, rate)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# time_s x y z\n");
        for (t, p) in &self.samples {
            let _ = writeln!(out, "{t} {} {} {}", p.x, p.y, p.z);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        text::write_file(path.as_ref(), &self.to_text())
    }

    pub fn samples(&self) -> &[(f64, Vec3)] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn points(&self) -> Vec<Vec3> {
        self.samples.iter().map(|(_, p)| *p).collect()
    }

    /// The last `count` points recorded strictly before `time_s`, oldest first.
    /// Falls back to the first sample when nothing precedes `time_s`.
    pub fn history_before(&self, time_s: f64, count: usize) -> Vec<Vec3> {
        let end = self.samples.partition_point(|(t, _)| *t < time_s).max(1);
        let start = end.saturating_sub(count);
        self.samples[start..end].iter().map(|(_, p)| *p).collect()
    }

    /// The first `count` points at or after `time_s`.
    pub fn window_from(&self, time_s: f64, count: usize) -> Vec<Vec3> {
        let start = self.samples.partition_point(|(t, _)| *t < time_s);
        self.samples[start.min(self.samples.len())..]
            .iter()
            .take(count)
            .map(|(_, p)| *p)
            .collect()
    }
}
