//! Event-stream ingest: parsing, temporal splitting, rasterization into
//! polarity-count frames, bilinear resizing, and a synthetic moving-bar
//! generator for desk-scale experiments.
//!
//! The on-disk format is plain text (".evs"): a header line
//! `EVS1 width height num_events`, then one event per line as
//! `t x y p` with integer fields, polarity written as `1` or `-1`,
//! ASCII with LF line endings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::DataError;
use crate::rng::SeedRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Event polarity: sign of the intensity change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Pos,
    Neg,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Pos => 1,
            Polarity::Neg => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(Polarity::Pos),
            -1 => Some(Polarity::Neg),
            _ => None,
        }
    }
}

/// One asynchronous camera event: pixel, microsecond timestamp, polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventPoint {
    pub x: u32,
    pub y: u32,
    pub t: u64,
    pub p: Polarity,
}

/// Time-sorted event sequence from one sensor, with an optional class label.
#[derive(Debug, Clone)]
pub struct EventStream {
    pub sensor_width: u32,
    pub sensor_height: u32,
    pub events: Vec<EventPoint>,
    pub label: Option<usize>,
}

impl EventStream {
    /// Validates bounds and timestamp ordering (ties allowed, order stable).
    pub fn new(
        sensor_width: u32,
        sensor_height: u32,
        events: Vec<EventPoint>,
        label: Option<usize>,
    ) -> Result<Self, DataError> {
        let mut prev = 0u64;
        for (i, e) in events.iter().enumerate() {
            if e.x >= sensor_width || e.y >= sensor_height {
                return Err(DataError::EventOutOfBounds {
                    x: e.x,
                    y: e.y,
                    t: e.t,
                    p: e.p.as_i8(),
                    width: sensor_width,
                    height: sensor_height,
                });
            }
            if e.t < prev {
                return Err(DataError::Unsorted { index: i });
            }
            prev = e.t;
        }
        Ok(EventStream {
            sensor_width,
            sensor_height,
            events,
            label,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration(&self) -> u64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0,
        }
    }
}

/// Stack of M rasterized event frames: tensor shaped (M, 2, H, W) with
/// channel 0 holding positive-event counts and channel 1 negative, each
/// frame normalized by its own max count.
#[derive(Debug, Clone)]
pub struct FrameStack<S: Scalar> {
    pub tensor: Tensor<S>,
    pub frame_duration_us: f64,
}

impl<S: Scalar> FrameStack<S> {
    pub fn num_frames(&self) -> usize {
        self.tensor.shape()[0]
    }
}

// ── Splitting ─────────────────────────────────────────────────────────

/// Split a stream into `m` equal-duration windows over `[t_first, t_last]`.
/// Windows are half-open; the final window is closed on the right, so every
/// event lands in exactly one window. A zero-duration stream puts all
/// events into the first window.
pub fn split_stream(s: &EventStream, m: usize) -> Result<Vec<Vec<EventPoint>>, DataError> {
    assert!(m >= 1, "split count must be >= 1");
    if s.events.is_empty() {
        return Err(DataError::EmptyStream);
    }
    let t0 = s.events.first().expect("non-empty").t;
    let dur = s.duration();
    let mut windows: Vec<Vec<EventPoint>> = vec![Vec::new(); m];
    for e in &s.events {
        let idx = if dur == 0 {
            0
        } else {
            // floor(((t - t0) * m) / dur) clamped to the last window; the
            // widened arithmetic cannot overflow for microsecond stamps.
            let k = ((e.t - t0) as u128 * m as u128) / dur as u128;
            (k as usize).min(m - 1)
        };
        windows[idx].push(*e);
    }
    Ok(windows)
}

// ── Rasterization ─────────────────────────────────────────────────────

/// Per-pixel polarity counts for one window: (counts shaped (2, h, w) in
/// row-major order, max single-pixel count).
pub fn rasterize_counts(
    tube: &[EventPoint],
    h: usize,
    w: usize,
) -> Result<(Vec<u32>, u32), DataError> {
    let mut counts = vec![0u32; 2 * h * w];
    let mut max = 0u32;
    for e in tube {
        if e.x as usize >= w || e.y as usize >= h {
            return Err(DataError::EventOutOfBounds {
                x: e.x,
                y: e.y,
                t: e.t,
                p: e.p.as_i8(),
                width: w as u32,
                height: h as u32,
            });
        }
        let ch = match e.p {
            Polarity::Pos => 0,
            Polarity::Neg => 1,
        };
        let idx = (ch * h + e.y as usize) * w + e.x as usize;
        counts[idx] += 1;
        if counts[idx] > max {
            max = counts[idx];
        }
    }
    Ok((counts, max))
}

/// Rasterize one window into a (2, h, w) frame of counts normalized to
/// [0, 1] by the per-frame max count (at least 1).
pub fn rasterize<S: Scalar>(
    tube: &[EventPoint],
    h: usize,
    w: usize,
) -> Result<Tensor<S>, DataError> {
    let (counts, max) = rasterize_counts(tube, h, w)?;
    let scale = S::from_f64(1.0 / max.max(1) as f64);
    let data: Vec<S> = counts
        .iter()
        .map(|&c| S::from_f64(c as f64) * scale)
        .collect();
    Ok(Tensor::from_vec(vec![2, h, w], data).expect("shape matches"))
}

// ── Resizing ──────────────────────────────────────────────────────────

/// Bilinear resize of every frame and channel to (h, w), using half-pixel
/// centers with edge clamping. Values stay non-negative.
pub fn resize_frames<S: Scalar>(f: &FrameStack<S>, h: usize, w: usize) -> FrameStack<S> {
    assert!(h >= 1 && w >= 1, "target extents must be >= 1");
    let shape = f.tensor.shape();
    let (m, c, sh, sw) = (shape[0], shape[1], shape[2], shape[3]);
    if (sh, sw) == (h, w) {
        return f.clone();
    }
    let src = f.tensor.data();
    let mut out = vec![S::zero(); m * c * h * w];
    for fi in 0..m {
        for ci in 0..c {
            let sbase = (fi * c + ci) * sh * sw;
            let dbase = (fi * c + ci) * h * w;
            for dy in 0..h {
                let (y0, y1, fy) = bilinear_coords(dy, h, sh);
                for dx in 0..w {
                    let (x0, x1, fx) = bilinear_coords(dx, w, sw);
                    let v00 = src[sbase + y0 * sw + x0].as_f64();
                    let v01 = src[sbase + y0 * sw + x1].as_f64();
                    let v10 = src[sbase + y1 * sw + x0].as_f64();
                    let v11 = src[sbase + y1 * sw + x1].as_f64();
                    let top = v00 + (v01 - v00) * fx;
                    let bot = v10 + (v11 - v10) * fx;
                    out[dbase + dy * w + dx] = S::from_f64(top + (bot - top) * fy);
                }
            }
        }
    }
    drop(src);
    FrameStack {
        tensor: Tensor::from_vec(vec![m, c, h, w], out).expect("shape matches"),
        frame_duration_us: f.frame_duration_us,
    }
}

/// Source interpolation coordinates for destination index `d` when mapping
/// `dst_len` samples onto `src_len`, half-pixel convention, edge-clamped.
fn bilinear_coords(d: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let center = (d as f64 + 0.5) * scale - 0.5;
    let clamped = center.clamp(0.0, (src_len - 1) as f64);
    let lo = clamped.floor();
    let frac = clamped - lo;
    let lo = lo as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, frac)
}

// ── Full ingest pipeline ──────────────────────────────────────────────

/// Split, rasterize at sensor resolution, resize, and stack into the
/// (M, 2, H, W) tensor the stem consumes.
pub fn stack_events<S: Scalar>(
    s: &EventStream,
    m: usize,
    h: usize,
    w: usize,
) -> Result<FrameStack<S>, DataError> {
    let windows = split_stream(s, m)?;
    let sh = s.sensor_height as usize;
    let sw = s.sensor_width as usize;
    let mut frames: Vec<Tensor<S>> = Vec::with_capacity(m);
    for win in &windows {
        frames.push(rasterize(win, sh, sw)?);
    }
    let mut data = Vec::with_capacity(m * 2 * sh * sw);
    for f in &frames {
        data.extend_from_slice(&f.data());
    }
    let native = FrameStack {
        tensor: Tensor::from_vec(vec![m, 2, sh, sw], data).expect("shape matches"),
        frame_duration_us: s.duration() as f64 / m as f64,
    };
    Ok(resize_frames(&native, h, w))
}

// ── Synthetic generator ───────────────────────────────────────────────

/// Moving-bar generator settings. Classes 0..3 move the bar up, down,
/// left, right; `num_classes` may restrict to a prefix of those.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub sensor_width: u32,
    pub sensor_height: u32,
    pub duration_us: u64,
    pub bar_width: u32,
    pub noise_rate: f64,
    pub num_classes: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            sensor_width: 64,
            sensor_height: 64,
            duration_us: 100_000,
            bar_width: 6,
            noise_rate: 0.002,
            num_classes: 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Direction {
    Up,
    Down,
    Left,
    Right,
}

/// Generate a labeled stream: a bright bar sweeps across the sensor once,
/// emitting +1 events along its leading edge and -1 along its trailing
/// edge at each step, plus Bernoulli noise events of random polarity.
/// Deterministic in (class_id, seed).
pub fn synth_stream(
    class_id: usize,
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<EventStream, DataError> {
    if class_id >= cfg.num_classes || class_id >= 4 {
        return Err(DataError::UnknownClass {
            class_id,
            num_classes: cfg.num_classes.min(4),
        });
    }
    let dir = match class_id {
        0 => Direction::Up,
        1 => Direction::Down,
        2 => Direction::Left,
        _ => Direction::Right,
    };
    let w = cfg.sensor_width;
    let h = cfg.sensor_height;
    let travel = match dir {
        Direction::Up | Direction::Down => h,
        Direction::Left | Direction::Right => w,
    };
    // One step per pixel of travel; the bar fully crosses the sensor.
    let steps = travel + cfg.bar_width;
    let mut rng = SeedRng::new(seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(class_id as u64 + 1));
    let mut events: Vec<EventPoint> = Vec::new();

    // Bar occupies positions [k - bar_width, k) along the travel axis at
    // step k; position `k` turns on (+1) and `k - bar_width` turns off (-1).
    for k in 0..steps {
        let t = (k as u64 * cfg.duration_us) / steps as u64;
        let lead = k;
        let trail = k.checked_sub(cfg.bar_width);
        let span = match dir {
            Direction::Up | Direction::Down => w,
            Direction::Left | Direction::Right => h,
        };
        let emit_line = |pos: u32, p: Polarity, events: &mut Vec<EventPoint>| {
            for s in 0..span {
                let (x, y) = match dir {
                    Direction::Right => (pos, s),
                    Direction::Left => (w - 1 - pos, s),
                    Direction::Down => (s, pos),
                    Direction::Up => (s, h - 1 - pos),
                };
                events.push(EventPoint { x, y, t, p });
            }
        };
        if lead < travel {
            emit_line(lead, Polarity::Pos, &mut events);
        }
        if let Some(tr) = trail {
            if tr < travel {
                emit_line(tr, Polarity::Neg, &mut events);
            }
        }
        // Bernoulli noise: each pixel may fire once per step.
        if cfg.noise_rate > 0.0 {
            for y in 0..h {
                for x in 0..w {
                    if rng.bernoulli(cfg.noise_rate) {
                        let p = if rng.bernoulli(0.5) {
                            Polarity::Pos
                        } else {
                            Polarity::Neg
                        };
                        events.push(EventPoint { x, y, t, p });
                    }
                }
            }
        }
    }
    // Stable sort keeps same-timestamp events in emission order.
    events.sort_by_key(|e| e.t);
    EventStream::new(w, h, events, Some(class_id))
}

// ── .evs text format ──────────────────────────────────────────────────

pub fn to_evs_text(s: &EventStream) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "EVS1 {} {} {}",
        s.sensor_width,
        s.sensor_height,
        s.events.len()
    )
    .expect("string write");
    for e in &s.events {
        writeln!(out, "{} {} {} {}", e.t, e.x, e.y, e.p.as_i8()).expect("string write");
    }
    out
}

pub fn write_evs(s: &EventStream, path: &Path) -> Result<(), DataError> {
    fs::write(path, to_evs_text(s)).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn parse_evs_text(text: &str, path: &str) -> Result<EventStream, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| DataError::Parse {
        path: path.to_string(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let head: Vec<&str> = header.split_ascii_whitespace().collect();
    if head.len() != 4 || head[0] != "EVS1" {
        return Err(DataError::Parse {
            path: path.to_string(),
            line: 1,
            msg: format!("bad header {header:?}, expected \"EVS1 width height num_events\""),
        });
    }
    let parse_u64 = |s: &str, line: usize, what: &str| -> Result<u64, DataError> {
        s.parse().map_err(|_| DataError::Parse {
            path: path.to_string(),
            line,
            msg: format!("bad {what}: {s:?}"),
        })
    };
    let width = parse_u64(head[1], 1, "width")? as u32;
    let height = parse_u64(head[2], 1, "height")? as u32;
    let count = parse_u64(head[3], 1, "event count")? as usize;
    let mut events = Vec::with_capacity(count);
    for (lineno0, line) in lines {
        let lineno = lineno0 + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        if fields.len() != 4 {
            return Err(DataError::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("expected \"t x y p\", got {line:?}"),
            });
        }
        let t = parse_u64(fields[0], lineno, "timestamp")?;
        let x = parse_u64(fields[1], lineno, "x")? as u32;
        let y = parse_u64(fields[2], lineno, "y")? as u32;
        let p_raw: i8 = fields[3].parse().map_err(|_| DataError::Parse {
            path: path.to_string(),
            line: lineno,
            msg: format!("bad polarity {:?}", fields[3]),
        })?;
        let p = Polarity::from_i8(p_raw).ok_or_else(|| DataError::Parse {
            path: path.to_string(),
            line: lineno,
            msg: format!("polarity must be 1 or -1, got {p_raw}"),
        })?;
        events.push(EventPoint { x, y, t, p });
    }
    if events.len() != count {
        return Err(DataError::Parse {
            path: path.to_string(),
            line: 1,
            msg: format!("header declares {count} events, file has {}", events.len()),
        });
    }
    EventStream::new(width, height, events, None)
}

pub fn read_evs(path: &Path) -> Result<EventStream, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_evs_text(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(x: u32, y: u32, t: u64, p: i8) -> EventPoint {
        EventPoint {
            x,
            y,
            t,
            p: Polarity::from_i8(p).unwrap(),
        }
    }

    #[test]
    fn split_equal_duration_windows() {
        let s = EventStream::new(
            8,
            8,
            vec![ev(0, 0, 0, 1), ev(1, 0, 1, 1), ev(2, 0, 2, 1), ev(3, 0, 3, 1)],
            None,
        )
        .unwrap();
        let w = split_stream(&s, 2).unwrap();
        assert_eq!(w[0].iter().map(|e| e.t).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(w[1].iter().map(|e| e.t).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn split_single_window_holds_everything() {
        let s = EventStream::new(8, 8, vec![ev(0, 0, 5, 1), ev(1, 0, 9, -1)], None).unwrap();
        let w = split_stream(&s, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 2);
    }

    #[test]
    fn split_empty_stream_is_error() {
        let s = EventStream::new(8, 8, vec![], None).unwrap();
        assert!(matches!(split_stream(&s, 4), Err(DataError::EmptyStream)));
    }

    #[test]
    fn split_zero_duration_goes_to_first_window() {
        let s = EventStream::new(8, 8, vec![ev(0, 0, 7, 1), ev(1, 1, 7, -1)], None).unwrap();
        let w = split_stream(&s, 4).unwrap();
        assert_eq!(w[0].len(), 2);
        assert!(w[1..].iter().all(|v| v.is_empty()));
    }

    #[test]
    fn split_matches_bruteforce_window_bounds() {
        let mut rng = SeedRng::new(21);
        let mut events: Vec<EventPoint> = (0..1000)
            .map(|_| {
                ev(
                    rng.below(32) as u32,
                    rng.below(32) as u32,
                    rng.below(100_000) as u64,
                    1,
                )
            })
            .collect();
        events.sort_by_key(|e| e.t);
        let s = EventStream::new(32, 32, events.clone(), None).unwrap();
        let m = 8;
        let windows = split_stream(&s, m).unwrap();
        let t0 = events.first().unwrap().t as u128;
        let dur = s.duration() as u128;
        // Event t belongs to window i iff i*dur <= (t - t0)*m < (i+1)*dur,
        // with the last window closed on the right.
        for (i, w) in windows.iter().enumerate() {
            for e in w {
                let lhs = (e.t as u128 - t0) * m as u128;
                assert!(lhs >= i as u128 * dur);
                if i + 1 < m {
                    assert!(lhs < (i as u128 + 1) * dur);
                } else {
                    assert!(lhs <= m as u128 * dur);
                }
            }
        }
        // Partition: concatenation reproduces the original sequence.
        let rejoined: Vec<EventPoint> = windows.concat();
        assert_eq!(rejoined, events);
    }

    #[test]
    fn rasterize_empty_tube_is_zero() {
        let f: Tensor<f32> = rasterize(&[], 4, 4).unwrap();
        assert!(f.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rasterize_single_positive_event() {
        let f: Tensor<f64> = rasterize(&[ev(3, 2, 0, 1)], 4, 5).unwrap();
        let d = f.to_vec();
        // Channel 0 (positive), row 2, column 3.
        assert_eq!(d[2 * 5 + 3], 1.0);
        assert_eq!(d.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn rasterize_out_of_bounds_cites_point() {
        let err = rasterize_counts(&[ev(7, 1, 3, -1)], 4, 4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('7') && msg.contains("t=3"), "{msg}");
    }

    #[test]
    fn rasterize_matches_bruteforce_tally() {
        let mut rng = SeedRng::new(3);
        let tube: Vec<EventPoint> = (0..50)
            .map(|i| {
                ev(
                    rng.below(6) as u32,
                    rng.below(5) as u32,
                    i,
                    if rng.bernoulli(0.5) { 1 } else { -1 },
                )
            })
            .collect();
        let (counts, max) = rasterize_counts(&tube, 5, 6).unwrap();
        let mut expect = vec![0u32; 2 * 5 * 6];
        for e in &tube {
            let ch = if e.p == Polarity::Pos { 0 } else { 1 };
            expect[(ch * 5 + e.y as usize) * 6 + e.x as usize] += 1;
        }
        assert_eq!(counts, expect);
        assert_eq!(max, *expect.iter().max().unwrap());
        let total: u32 = counts.iter().sum();
        assert_eq!(total, 50);
    }

    #[test]
    fn resize_identity_and_constant() {
        let f = FrameStack::<f64> {
            tensor: Tensor::from_vec(vec![1, 2, 2, 2], vec![1.0; 8]).unwrap(),
            frame_duration_us: 1.0,
        };
        let same = resize_frames(&f, 2, 2);
        assert_eq!(same.tensor.to_vec(), f.tensor.to_vec());
        let up = resize_frames(&f, 4, 4);
        assert!(up.tensor.to_vec().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn resize_downsample_matches_reference() {
        // 4x4 ramp downsampled to 2x2. Expected values frozen from the
        // textbook bilinear formula with half-pixel centers: destination
        // (r, c) samples source (2r + 0.5, 2c + 0.5), the average of a
        // 2x2 source block. Ramp v = 4*row + col.
        let ramp: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let f = FrameStack::<f64> {
            tensor: Tensor::from_vec(vec![1, 1, 4, 4], ramp).unwrap(),
            frame_duration_us: 1.0,
        };
        let down = resize_frames(&f, 2, 2);
        assert_eq!(down.tensor.to_vec(), vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = GeneratorConfig::default();
        let a = synth_stream(2, 99, &cfg).unwrap();
        let b = synth_stream(2, 99, &cfg).unwrap();
        assert_eq!(to_evs_text(&a), to_evs_text(&b));
        let c = synth_stream(2, 100, &cfg).unwrap();
        assert_ne!(to_evs_text(&a), to_evs_text(&c));
    }

    #[test]
    fn synth_unknown_class_is_error() {
        let cfg = GeneratorConfig::default();
        assert!(matches!(
            synth_stream(4, 0, &cfg),
            Err(DataError::UnknownClass { .. })
        ));
    }

    #[test]
    fn right_moving_bar_mean_x_increases_across_windows() {
        let cfg = GeneratorConfig {
            noise_rate: 0.0,
            ..GeneratorConfig::default()
        };
        let s = synth_stream(3, 5, &cfg).unwrap();
        let windows = split_stream(&s, 8).unwrap();
        let mut prev = -1.0f64;
        for w in &windows {
            let pos: Vec<f64> = w
                .iter()
                .filter(|e| e.p == Polarity::Pos)
                .map(|e| e.x as f64)
                .collect();
            if pos.is_empty() {
                continue;
            }
            let mean = pos.iter().sum::<f64>() / pos.len() as f64;
            assert!(mean > prev, "mean x {mean} did not increase past {prev}");
            prev = mean;
        }
        assert!(prev > 0.0);
    }

    #[test]
    fn noiseless_pixels_alternate_polarity_starting_positive() {
        let cfg = GeneratorConfig {
            sensor_width: 16,
            sensor_height: 16,
            noise_rate: 0.0,
            ..GeneratorConfig::default()
        };
        for class in 0..4 {
            let s = synth_stream(class, 11, &cfg).unwrap();
            let mut per_pixel: std::collections::HashMap<(u32, u32), Vec<Polarity>> =
                std::collections::HashMap::new();
            for e in &s.events {
                per_pixel.entry((e.x, e.y)).or_default().push(e.p);
            }
            for ((x, y), ps) in per_pixel {
                for (i, p) in ps.iter().enumerate() {
                    let expect = if i % 2 == 0 {
                        Polarity::Pos
                    } else {
                        Polarity::Neg
                    };
                    assert_eq!(*p, expect, "pixel ({x},{y}) event {i} in class {class}");
                }
            }
        }
    }

    #[test]
    fn rasterize_is_permutation_invariant() {
        let mut rng = SeedRng::new(17);
        let mut tube: Vec<EventPoint> = (0..200)
            .map(|i| {
                ev(
                    rng.below(8) as u32,
                    rng.below(8) as u32,
                    i,
                    if rng.bernoulli(0.5) { 1 } else { -1 },
                )
            })
            .collect();
        let a: Tensor<f32> = rasterize(&tube, 8, 8).unwrap();
        let perm = rng.permutation(tube.len());
        let shuffled: Vec<EventPoint> = perm.iter().map(|&i| tube[i]).collect();
        tube = shuffled;
        let b: Tensor<f32> = rasterize(&tube, 8, 8).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn evs_roundtrip_is_bit_exact() {
        let cfg = GeneratorConfig {
            sensor_width: 16,
            sensor_height: 12,
            ..GeneratorConfig::default()
        };
        let s = synth_stream(1, 33, &cfg).unwrap();
        let text = to_evs_text(&s);
        assert!(text.starts_with("EVS1 16 12 "));
        assert!(!text.contains('\r'));
        let parsed = parse_evs_text(&text, "mem").unwrap();
        assert_eq!(parsed.events, s.events);
        assert_eq!(to_evs_text(&parsed), text);
    }

    #[test]
    fn evs_parse_errors() {
        assert!(parse_evs_text("BAD 1 2 3\n", "m").is_err());
        assert!(parse_evs_text("EVS1 4 4 1\n0 0 0 2\n", "m").is_err());
        assert!(parse_evs_text("EVS1 4 4 2\n0 0 0 1\n", "m").is_err());
        // Out-of-bounds event.
        assert!(parse_evs_text("EVS1 4 4 1\n0 9 0 1\n", "m").is_err());
    }

    #[test]
    fn stack_pipeline_is_deterministic_and_counts_preserved() {
        let cfg = GeneratorConfig {
            sensor_width: 32,
            sensor_height: 32,
            ..GeneratorConfig::default()
        };
        let s = synth_stream(0, 4, &cfg).unwrap();
        let a: FrameStack<f32> = stack_events(&s, 8, 32, 32).unwrap();
        let b: FrameStack<f32> = stack_events(&s, 8, 32, 32).unwrap();
        let av = a.tensor.to_vec();
        assert!(av
            .iter()
            .zip(b.tensor.to_vec())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.tensor.shape(), &[8, 2, 32, 32]);
        assert!(av.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Pre-normalization counts across frames and channels equal the
        // stream's event count.
        let windows = split_stream(&s, 8).unwrap();
        let mut total = 0u32;
        for w in &windows {
            let (counts, _) = rasterize_counts(w, 32, 32).unwrap();
            total += counts.iter().sum::<u32>();
        }
        assert_eq!(total as usize, s.events.len());
    }
}
