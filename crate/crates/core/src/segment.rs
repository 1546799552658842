//! SLIC superpixel segmentation of spectrograms.
//!
//! Localized k-means in joint intensity-position space: centers start on a
//! ceil(sqrt(k))-per-side lattice, each assignment round searches a 2S x 2S
//! window per center under D = sqrt(d_int^2 + (compactness * d_sp / S)^2),
//! centers move to cluster means, and a final pass merges disconnected
//! orphan regions into their largest adjacent segment.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::data::Spectrogram;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("requested {requested} segments for {pixels} pixels")]
    BadSegmentCount { requested: usize, pixels: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct SlicConfig {
    /// Requested segment count; connectivity enforcement may merge some away.
    pub segments: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicConfig {
    fn default() -> Self {
        SlicConfig {
            segments: 32,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

/// Dense per-pixel segment labels 0..n_segments-1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    pub labels: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
    pub n_segments: usize,
}

impl SegmentMap {
    pub fn label_at(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.cols + col]
    }
}

/// Per-label pixel counts; they always sum to rows*cols and every label is
/// non-empty.
pub fn segment_pixel_counts(map: &SegmentMap) -> Vec<usize> {
    let mut counts = vec![0usize; map.n_segments];
    for &l in &map.labels {
        counts[l as usize] += 1;
    }
    counts
}

#[derive(Clone, Copy)]
struct Center {
    y: f64,
    x: f64,
    intensity: f64,
}

/// Segment a spectrogram's value grid.
pub fn slic(spec: &Spectrogram, cfg: &SlicConfig) -> Result<SegmentMap, SegmentError> {
    slic_values(&spec.values, spec.freq_bins, spec.time_frames, cfg)
}

/// Segment an arbitrary rows x cols intensity grid.
pub fn slic_values(
    values: &[f32],
    rows: usize,
    cols: usize,
    cfg: &SlicConfig,
) -> Result<SegmentMap, SegmentError> {
    Ok(slic_with_history(values, rows, cols, cfg)?.0)
}

/// Like [`slic_values`], additionally returning the post-assignment objective
/// (sum of squared SLIC distances) per iteration, for monotonicity checks.
pub fn slic_with_history(
    values: &[f32],
    rows: usize,
    cols: usize,
    cfg: &SlicConfig,
) -> Result<(SegmentMap, Vec<f64>), SegmentError> {
    let pixels = rows * cols;
    assert_eq!(values.len(), pixels, "value count vs shape");
    let k = cfg.segments;
    if k == 0 || k > pixels {
        return Err(SegmentError::BadSegmentCount {
            requested: k,
            pixels,
        });
    }

    // Min-max normalize intensities so compactness is scale-free.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        let v = f64::from(v);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = if hi > lo { hi - lo } else { 1.0 };
    let intensity: Vec<f64> = values
        .iter()
        .map(|&v| (f64::from(v) - lo) / range)
        .collect();

    // Lattice init: ceil(sqrt(k)) cells per side, first k cell centers.
    // Pixel i sits at coordinate i, so a cell's geometric center lands at
    // (g + 0.5) * extent / grid - 0.5; the offset keeps uniform images free
    // of distance ties across cell boundaries.
    let grid = (k as f64).sqrt().ceil() as usize;
    let mut centers = Vec::with_capacity(k);
    'outer: for gy in 0..grid {
        for gx in 0..grid {
            if centers.len() == k {
                break 'outer;
            }
            let y =
                ((gy as f64 + 0.5) * rows as f64 / grid as f64 - 0.5).clamp(0.0, rows as f64 - 1.0);
            let x =
                ((gx as f64 + 0.5) * cols as f64 / grid as f64 - 0.5).clamp(0.0, cols as f64 - 1.0);
            let iy = y.round() as usize;
            let ix = x.round() as usize;
            centers.push(Center {
                y,
                x,
                intensity: intensity[iy * cols + ix],
            });
        }
    }

    let spacing = ((pixels as f64) / k as f64).sqrt();
    let window = (2.0 * spacing).ceil() as isize;
    let ratio = cfg.compactness / spacing;

    let mut labels = vec![u32::MAX; pixels];
    let mut best_dist = vec![f64::INFINITY; pixels];
    let mut history = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        best_dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        labels.iter_mut().for_each(|l| *l = u32::MAX);
        for (ci, center) in centers.iter().enumerate() {
            let cy = center.y.round() as isize;
            let cx = center.x.round() as isize;
            let y0 = (cy - window).max(0) as usize;
            let y1 = ((cy + window + 1).min(rows as isize)) as usize;
            let x0 = (cx - window).max(0) as usize;
            let x1 = ((cx + window + 1).min(cols as isize)) as usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let idx = y * cols + x;
                    let d = slic_distance(center, y, x, intensity[idx], ratio);
                    // Strict `<` keeps the lowest center index on ties.
                    if d < best_dist[idx] {
                        best_dist[idx] = d;
                        labels[idx] = ci as u32;
                    }
                }
            }
        }
        // Pixels outside every window fall back to a full scan.
        for idx in 0..pixels {
            if labels[idx] == u32::MAX {
                let (y, x) = (idx / cols, idx % cols);
                let mut best = f64::INFINITY;
                for (ci, center) in centers.iter().enumerate() {
                    let d = slic_distance(center, y, x, intensity[idx], ratio);
                    if d < best {
                        best = d;
                        labels[idx] = ci as u32;
                    }
                }
                best_dist[idx] = best;
            }
        }
        history.push(best_dist.iter().map(|d| d * d).sum());

        // Move centers to cluster means; empty clusters stay put.
        let mut sums = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); centers.len()];
        for idx in 0..pixels {
            let s = &mut sums[labels[idx] as usize];
            s.0 += (idx / cols) as f64;
            s.1 += (idx % cols) as f64;
            s.2 += intensity[idx];
            s.3 += 1;
        }
        for (center, (sy, sx, si, n)) in centers.iter_mut().zip(sums) {
            if n > 0 {
                center.y = sy / n as f64;
                center.x = sx / n as f64;
                center.intensity = si / n as f64;
            }
        }
    }

    let map = enforce_connectivity(labels, rows, cols);
    Ok((map, history))
}

fn slic_distance(center: &Center, y: usize, x: usize, intensity: f64, ratio: f64) -> f64 {
    let di = intensity - center.intensity;
    let dy = y as f64 - center.y;
    let dx = x as f64 - center.x;
    let ds = (dy * dy + dx * dx).sqrt();
    (di * di + (ratio * ds).powi(2)).sqrt()
}

/// Split every label into 4-connected components, keep the largest component
/// per label as its main region, merge every other (orphan) component into
/// the largest adjacent region, then relabel densely in scan order.
fn enforce_connectivity(labels: Vec<u32>, rows: usize, cols: usize) -> SegmentMap {
    let pixels = rows * cols;
    let mut component = vec![usize::MAX; pixels];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut stack = Vec::new();
    for start in 0..pixels {
        if component[start] != usize::MAX {
            continue;
        }
        let cid = comp_label.len();
        let label = labels[start];
        comp_label.push(label);
        let mut size = 0usize;
        stack.push(start);
        component[start] = cid;
        while let Some(idx) = stack.pop() {
            size += 1;
            let (y, x) = (idx / cols, idx % cols);
            let mut visit = |n: usize| {
                if component[n] == usize::MAX && labels[n] == label {
                    component[n] = cid;
                    stack.push(n);
                }
            };
            if y > 0 {
                visit(idx - cols);
            }
            if y + 1 < rows {
                visit(idx + cols);
            }
            if x > 0 {
                visit(idx - 1);
            }
            if x + 1 < cols {
                visit(idx + 1);
            }
        }
        comp_size.push(size);
    }

    // Largest component per label wins; ties go to the earliest in scan order.
    let n_comps = comp_label.len();
    let mut main_of_label: Vec<Option<usize>> =
        vec![None; labels.iter().map(|&l| l as usize).max().unwrap_or(0) + 1];
    for cid in 0..n_comps {
        let l = comp_label[cid] as usize;
        match main_of_label[l] {
            Some(best) if comp_size[best] >= comp_size[cid] => {}
            _ => main_of_label[l] = Some(cid),
        }
    }

    // Merge orphans into the largest adjacent component, repeating until all
    // orphans are absorbed (an orphan may first merge into another orphan).
    let mut target: Vec<usize> = (0..n_comps).collect();
    let resolve = |target: &[usize], mut c: usize| -> usize {
        while target[c] != c {
            c = target[c];
        }
        c
    };
    let mut orphans: Vec<usize> = (0..n_comps)
        .filter(|&c| main_of_label[comp_label[c] as usize] != Some(c))
        .collect();
    // Largest orphans merge last so sizes stay meaningful; order is fixed.
    orphans.sort_by_key(|&c| (comp_size[c], c));
    let mut sizes = comp_size.clone();
    for &orphan in &orphans {
        let mut best: Option<(usize, usize)> = None; // (size, component)
        for idx in 0..pixels {
            if resolve(&target, component[idx]) != orphan {
                continue;
            }
            let (y, x) = (idx / cols, idx % cols);
            let mut consider = |n: usize| {
                let c = resolve(&target, component[n]);
                if c != orphan {
                    let candidate = (sizes[c], c);
                    best = Some(match best {
                        // Prefer larger; break size ties on the lower id.
                        Some(b)
                            if b.0 > candidate.0 || (b.0 == candidate.0 && b.1 < candidate.1) =>
                        {
                            b
                        }
                        _ => candidate,
                    });
                }
            };
            if y > 0 {
                consider(idx - cols);
            }
            if y + 1 < rows {
                consider(idx + cols);
            }
            if x > 0 {
                consider(idx - 1);
            }
            if x + 1 < cols {
                consider(idx + 1);
            }
        }
        if let Some((_, into)) = best {
            sizes[into] += sizes[orphan];
            target[orphan] = into;
        }
    }

    // Dense relabel in scan order of first appearance.
    let mut dense: Vec<u32> = vec![u32::MAX; n_comps];
    let mut next = 0u32;
    let mut out = vec![0u32; pixels];
    for idx in 0..pixels {
        let c = resolve(&target, component[idx]);
        if dense[c] == u32::MAX {
            dense[c] = next;
            next += 1;
        }
        out[idx] = dense[c];
    }
    SegmentMap {
        labels: out,
        rows,
        cols,
        n_segments: next as usize,
    }
}

/// Emit a segment map as a binary PGM (P5) with labels scaled to gray levels.
pub fn write_pgm(map: &SegmentMap, path: impl AsRef<Path>) -> Result<(), SegmentError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| SegmentError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut bytes = format!("P5\n{} {}\n255\n", map.cols, map.rows).into_bytes();
    let scale = if map.n_segments > 1 {
        255.0 / (map.n_segments - 1) as f64
    } else {
        0.0
    };
    bytes.extend(
        map.labels
            .iter()
            .map(|&l| (f64::from(l) * scale).round() as u8),
    );
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(&bytes).map_err(io)
}

/// Emit a binary mask PGM highlighting the given segments (255 inside, 0
/// outside); used for top-k explanation overlays.
pub fn write_mask_pgm(
    map: &SegmentMap,
    segments: &[usize],
    path: impl AsRef<Path>,
) -> Result<(), SegmentError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| SegmentError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut bytes = format!("P5\n{} {}\n255\n", map.cols, map.rows).into_bytes();
    bytes.extend(map.labels.iter().map(|&l| {
        if segments.contains(&(l as usize)) {
            255u8
        } else {
            0
        }
    }));
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(&bytes).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(rows: usize, cols: usize) -> Vec<f32> {
        vec![0.5; rows * cols]
    }

    #[test]
    fn k1_is_a_single_segment() {
        let cfg = SlicConfig {
            segments: 1,
            ..SlicConfig::default()
        };
        let map = slic_values(&uniform(5, 7), 5, 7, &cfg).unwrap();
        assert_eq!(map.n_segments, 1);
        assert!(map.labels.iter().all(|&l| l == 0));
        assert_eq!(segment_pixel_counts(&map), vec![35]);
    }

    #[test]
    fn bad_segment_counts_are_rejected() {
        let cfg = SlicConfig {
            segments: 0,
            ..SlicConfig::default()
        };
        assert!(slic_values(&uniform(4, 4), 4, 4, &cfg).is_err());
        let cfg = SlicConfig {
            segments: 17,
            ..SlicConfig::default()
        };
        assert!(slic_values(&uniform(4, 4), 4, 4, &cfg).is_err());
    }

    /// Brute-force assignment oracle: label each pixel with its nearest
    /// center under the same distance, no windowing.
    fn assignment_oracle(
        intensity: &[f64],
        rows: usize,
        cols: usize,
        centers: &[(f64, f64, f64)],
        compactness: f64,
        k: usize,
    ) -> Vec<u32> {
        let spacing = ((rows * cols) as f64 / k as f64).sqrt();
        let ratio = compactness / spacing;
        (0..rows * cols)
            .map(|idx| {
                let (y, x) = (idx / cols, idx % cols);
                let mut best = (f64::INFINITY, 0u32);
                for (ci, &(cy, cx, cint)) in centers.iter().enumerate() {
                    let di = intensity[idx] - cint;
                    let ds = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                    let d = (di * di + (ratio * ds).powi(2)).sqrt();
                    if d < best.0 {
                        best = (d, ci as u32);
                    }
                }
                best.1
            })
            .collect()
    }

    #[test]
    fn uniform_4x4_k4_gives_four_quadrant_blocks() {
        let cfg = SlicConfig {
            segments: 4,
            compactness: 10.0,
            iterations: 10,
        };
        let map = slic_values(&uniform(4, 4), 4, 4, &cfg).unwrap();
        assert_eq!(map.n_segments, 4);
        // With zero intensity contrast the objective is spatial k-means; the
        // lattice init is its fixed point. The oracle confirms the blocks.
        let centers = [
            (0.5, 0.5, 0.0),
            (0.5, 2.5, 0.0),
            (2.5, 0.5, 0.0),
            (2.5, 2.5, 0.0),
        ];
        let oracle = assignment_oracle(&[0.0; 16], 4, 4, &centers, 10.0, 4);
        for y in 0..4 {
            for x in 0..4 {
                let expected = oracle[(y / 2 * 2 + 1) * 4 + (x / 2 * 2 + 1)];
                assert_eq!(map.label_at(y, x), expected, "pixel ({y},{x})");
            }
        }
        assert_eq!(segment_pixel_counts(&map), vec![4, 4, 4, 4]);
    }

    #[test]
    fn bright_dark_halves_split_at_the_intensity_edge() {
        // 8x8: bright left half, dark right half, k = 2.
        let mut values = vec![0.0f32; 64];
        for y in 0..8 {
            for x in 0..4 {
                values[y * 8 + x] = 1.0;
            }
        }
        let cfg = SlicConfig {
            segments: 2,
            compactness: 10.0,
            iterations: 10,
        };
        let map = slic_values(&values, 8, 8, &cfg).unwrap();
        assert_eq!(map.n_segments, 2);
        let left = map.label_at(0, 0);
        let right = map.label_at(0, 7);
        assert_ne!(left, right);
        for y in 0..8 {
            for x in 0..8 {
                let expected = if x < 4 { left } else { right };
                assert_eq!(map.label_at(y, x), expected, "pixel ({y},{x})");
            }
        }

        // Independent 2-center Lloyd oracle converges to the same boundary.
        let intensity: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        let mut centers = vec![(3.5, 1.5, 1.0), (3.5, 5.5, 0.0)];
        for _ in 0..10 {
            let labels = assignment_oracle(&intensity, 8, 8, &centers, 10.0, 2);
            let mut sums = [(0.0, 0.0, 0.0, 0usize); 2];
            for (idx, &l) in labels.iter().enumerate() {
                let s = &mut sums[l as usize];
                s.0 += (idx / 8) as f64;
                s.1 += (idx % 8) as f64;
                s.2 += intensity[idx];
                s.3 += 1;
            }
            for (c, s) in centers.iter_mut().zip(sums) {
                if s.3 > 0 {
                    *c = (s.0 / s.3 as f64, s.1 / s.3 as f64, s.2 / s.3 as f64);
                }
            }
        }
        let oracle_labels = assignment_oracle(&intensity, 8, 8, &centers, 10.0, 2);
        for x in 0..8 {
            let expected = if x < 4 {
                oracle_labels[0]
            } else {
                oracle_labels[7]
            };
            assert_eq!(oracle_labels[3 * 8 + x], expected);
        }
    }

    #[test]
    fn objective_is_monotone_non_increasing() {
        // Structured small image; windows cover the full image so Lloyd
        // monotonicity applies exactly.
        let values: Vec<f32> = (0..64)
            .map(|i| (i / 8) as f32 * 0.1 + ((i % 8) as f32 * 0.37).sin().abs())
            .collect();
        let cfg = SlicConfig {
            segments: 4,
            compactness: 5.0,
            iterations: 8,
        };
        let (_, history) = slic_with_history(&values, 8, 8, &cfg).unwrap();
        assert_eq!(history.len(), 8);
        for pair in history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "objective rose: {pair:?}");
        }
    }

    #[test]
    fn determinism() {
        let values: Vec<f32> = (0..256).map(|i| ((i as f32) * 0.11).sin().abs()).collect();
        let cfg = SlicConfig::default();
        let a = slic_values(&values, 16, 16, &cfg).unwrap();
        let b = slic_values(&values, 16, 16, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn connectivity_each_segment_is_one_region() {
        let values: Vec<f32> = (0..256)
            .map(|i| {
                let (y, x) = (i / 16, i % 16);
                ((y as f32 * 0.7).sin() + (x as f32 * 1.3).cos()).abs()
            })
            .collect();
        let cfg = SlicConfig {
            segments: 9,
            compactness: 4.0,
            iterations: 6,
        };
        let map = slic_values(&values, 16, 16, &cfg).unwrap();
        // Flood-fill each label once; a second disjoint start means a split
        // region.
        let mut seen = vec![false; map.labels.len()];
        let mut regions_per_label = vec![0usize; map.n_segments];
        for start in 0..map.labels.len() {
            if seen[start] {
                continue;
            }
            let label = map.labels[start];
            regions_per_label[label as usize] += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(idx) = stack.pop() {
                let (y, x) = (idx / 16, idx % 16);
                let mut visit = |n: usize| {
                    if !seen[n] && map.labels[n] == label {
                        seen[n] = true;
                        stack.push(n);
                    }
                };
                if y > 0 {
                    visit(idx - 16);
                }
                if y + 1 < 16 {
                    visit(idx + 16);
                }
                if x > 0 {
                    visit(idx - 1);
                }
                if x + 1 < 16 {
                    visit(idx + 1);
                }
            }
        }
        for (label, &regions) in regions_per_label.iter().enumerate() {
            assert_eq!(regions, 1, "segment {label} split into {regions} regions");
        }
    }

    proptest! {
        /// Partition invariant: labels are dense 0..n-1, every label
        /// non-empty, counts sum to the pixel count.
        #[test]
        fn partition_invariants(
            rows in 4usize..12,
            cols in 4usize..12,
            k in 1usize..8,
            seed in any::<u64>(),
        ) {
            let mut rng = crate::rng::Rng::seed_from(seed);
            let values: Vec<f32> =
                (0..rows * cols).map(|_| rng.next_f64() as f32).collect();
            let cfg = SlicConfig { segments: k.min(rows * cols), compactness: 10.0, iterations: 4 };
            let map = slic_values(&values, rows, cols, &cfg).unwrap();
            prop_assert!(map.n_segments >= 1);
            prop_assert!(map.n_segments <= cfg.segments);
            let counts = segment_pixel_counts(&map);
            prop_assert_eq!(counts.len(), map.n_segments);
            prop_assert!(counts.iter().all(|&c| c >= 1));
            prop_assert_eq!(counts.iter().sum::<usize>(), rows * cols);
            prop_assert!(map.labels.iter().all(|&l| (l as usize) < map.n_segments));
        }
    }
}
