//! Procedural generator of AVM-like parking scenes with exact ground truth.
//!
//! A scene is one parking bay: a guiding line with evenly spaced separating
//! lines, rotated and translated at random, over a styled background. Labels
//! are derived analytically from the layout, never from pixels. Generation is
//! deterministic per (seed, index), so corpus generation parallelizes freely.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    Occupancy, ParkingSlot, Point2, SlotType, UnitVec2, DEFAULT_NMS_DIST,
};
use crate::{Error, Result};

/// Label schema version written into every label document.
pub const LABEL_SCHEMA_VERSION: u32 = 1;

/// Background rendering styles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundStyle {
    Asphalt,
    Brick,
    Reflective,
    Night,
}

impl BackgroundStyle {
    pub const ALL: [BackgroundStyle; 4] = [
        BackgroundStyle::Asphalt,
        BackgroundStyle::Brick,
        BackgroundStyle::Reflective,
        BackgroundStyle::Night,
    ];
}

/// Scene generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub image_w: usize,
    pub image_h: usize,
    /// Probability of a (perpendicular, parallel, slanted) bay.
    pub slot_type_mix: [f64; 3],
    pub occupied_prob: f64,
    /// Entrance length bounds in pixels, across all types.
    pub entrance_length_range: (f64, f64),
    /// Separating-line angle bounds for slanted bays, degrees from the entrance.
    pub slant_angle_range: (f64, f64),
    pub line_width_range: (f64, f64),
    /// Photometric noise amount in [0, 1].
    pub noise_level: f64,
    pub background_styles: Vec<BackgroundStyle>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_w: 128,
            image_h: 128,
            slot_type_mix: [0.5, 0.25, 0.25],
            occupied_prob: 0.35,
            entrance_length_range: (48.0, 90.0),
            slant_angle_range: (45.0, 70.0),
            line_width_range: (3.0, 5.0),
            noise_level: 0.25,
            background_styles: BackgroundStyle::ALL.to_vec(),
            seed: 1,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.slot_type_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.slot_type_mix.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig(
                "slot_type_mix must be nonnegative and sum to 1".into(),
            ));
        }
        let (lmin, lmax) = self.entrance_length_range;
        if !(lmin > 2.0 * DEFAULT_NMS_DIST) {
            return Err(Error::InvalidConfig(format!(
                "minimum entrance length {} must exceed twice the NMS threshold ({})",
                lmin,
                2.0 * DEFAULT_NMS_DIST
            )));
        }
        if lmax < lmin {
            return Err(Error::InvalidConfig("entrance length range is inverted".into()));
        }
        let margin = 8.0 + self.line_width_range.1;
        if (self.image_w.min(self.image_h) as f64) < lmin + 2.0 * margin {
            return Err(Error::InvalidConfig(format!(
                "image {}x{} cannot fit one slot of minimum entrance {}",
                self.image_w, self.image_h, lmin
            )));
        }
        if !(0.0..=1.0).contains(&self.occupied_prob) || !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::InvalidConfig("probabilities must be in [0,1]".into()));
        }
        if self.background_styles.is_empty() {
            return Err(Error::InvalidConfig("need at least one background style".into()));
        }
        Ok(())
    }
}

/// One generated scene: the rendered image and its exact labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major, 8-bit.
    pub pixels: Vec<u8>,
    pub slots: Vec<ParkingSlot>,
}

struct Bay {
    slots: Vec<ParkingSlot>,
    depth: f64,
    line_width: f64,
    eo: UnitVec2,
    sep: UnitVec2,
}

fn sample_type(rng: &mut ChaCha12Rng, mix: &[f64; 3]) -> SlotType {
    let x: f64 = rng.gen();
    if x < mix[0] {
        SlotType::Perpendicular
    } else if x < mix[0] + mix[1] {
        SlotType::Parallel
    } else {
        SlotType::Slanted
    }
}

fn layout_bay(cfg: &SceneConfig, rng: &mut ChaCha12Rng) -> Bay {
    let (lmin, lmax) = cfg.entrance_length_range;
    let span = lmax - lmin;
    let slot_type = sample_type(rng, &cfg.slot_type_mix);
    // Parallel slots get the long entrances, perpendicular the short ones.
    let length = match slot_type {
        SlotType::Perpendicular => rng.gen_range(lmin..=lmin + 0.40 * span),
        SlotType::Parallel => rng.gen_range(lmax - 0.35 * span..=lmax),
        SlotType::Slanted => rng.gen_range(lmin + 0.05 * span..=lmin + 0.60 * span),
    };
    let depth = match slot_type {
        SlotType::Parallel => (0.55 * length).max(48.0).min(0.62 * length.max(80.0)),
        _ => rng.gen_range(1.3..=1.6) * length,
    };
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let eo = UnitVec2::from_angle_rad(theta);
    let phi = match slot_type {
        SlotType::Slanted => rng
            .gen_range(cfg.slant_angle_range.0..=cfg.slant_angle_range.1)
            .to_radians(),
        _ => std::f64::consts::FRAC_PI_2,
    };
    // Rotating eo by +phi keeps the interior on the canonical side.
    let sep = eo.rotate_rad(phi);
    let line_width = rng.gen_range(cfg.line_width_range.0..=cfg.line_width_range.1);
    let margin = 6.0 + line_width;
    let (w, h) = (cfg.image_w as f64, cfg.image_h as f64);

    // Anchor near the image center, clamped (with headroom against float
    // roundoff) so the central slot always fits.
    let half_x = 0.5 * length * eo.cx.abs() + 0.5;
    let half_y = 0.5 * length * eo.cy.abs() + 0.5;
    let jitter_x = rng.gen_range(-0.15..0.15) * w;
    let jitter_y = rng.gen_range(-0.15..0.15) * h;
    let anchor = Point2::new(
        (0.5 * w + jitter_x).clamp(margin + half_x, w - margin - half_x),
        (0.5 * h + jitter_y).clamp(margin + half_y, h - margin - half_y),
    );

    let inside = |p: Point2| -> bool {
        p.x >= margin && p.x <= w - margin && p.y >= margin && p.y <= h - margin
    };
    let mut slots = Vec::new();
    for m in -2i32..=2 {
        let c = anchor.offset(eo, m as f64 * length);
        let j1 = c.offset(eo, -0.5 * length);
        let j2 = c.offset(eo, 0.5 * length);
        if !(inside(j1) && inside(j2)) {
            continue;
        }
        // Only keep a contiguous run through the anchor slot.
        if m != 0
            && !slots
                .iter()
                .any(|s: &ParkingSlot| {
                    s.j1.distance(&j2) < 1e-9 || s.j2.distance(&j1) < 1e-9
                })
            && !slots.is_empty()
        {
            continue;
        }
        let occupancy = if rng.gen_bool(cfg.occupied_prob) {
            Occupancy::Occupied
        } else {
            Occupancy::Vacant
        };
        slots.push(ParkingSlot {
            j1,
            j2,
            sep1: sep,
            sep2: sep,
            slot_type,
            occupancy,
        });
        if slots.len() == 3 {
            break;
        }
    }
    Bay {
        slots,
        depth,
        line_width,
        eo,
        sep,
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            px: vec![0.0; w * h * 3],
        }
    }

    fn blend(&mut self, x: usize, y: usize, color: [f64; 3], alpha: f64) {
        let i = (y * self.w + x) * 3;
        for c in 0..3 {
            self.px[i + c] = self.px[i + c] * (1.0 - alpha) + color[c] * alpha;
        }
    }

    fn set(&mut self, x: usize, y: usize, color: [f64; 3]) {
        let i = (y * self.w + x) * 3;
        self.px[i..i + 3].copy_from_slice(&color);
    }

    /// Thick segment with ~1 px soft edges.
    fn draw_segment(&mut self, a: Point2, b: Point2, width: f64, color: [f64; 3]) {
        let half = 0.5 * width;
        let pad = half + 1.0;
        let x0 = ((a.x.min(b.x) - pad).floor().max(0.0)) as usize;
        let x1 = ((a.x.max(b.x) + pad).ceil().min(self.w as f64 - 1.0)) as usize;
        let y0 = ((a.y.min(b.y) - pad).floor().max(0.0)) as usize;
        let y1 = ((a.y.max(b.y) + pad).ceil().min(self.h as f64 - 1.0)) as usize;
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let len2 = dx * dx + dy * dy;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let cx = a.x + t * dx;
                let cy = a.y + t * dy;
                let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let cover = (half + 0.5 - d).clamp(0.0, 1.0);
                if cover > 0.0 {
                    self.blend(x, y, color, cover);
                }
            }
        }
    }

    fn fill_quad(&mut self, quad: [Point2; 4], color: [f64; 3]) {
        let xs: Vec<f64> = quad.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = quad.iter().map(|p| p.y).collect();
        let x0 = xs.iter().cloned().fold(f64::MAX, f64::min).floor().max(0.0) as usize;
        let x1 = (xs.iter().cloned().fold(f64::MIN, f64::max).ceil()).min(self.w as f64 - 1.0) as usize;
        let y0 = ys.iter().cloned().fold(f64::MAX, f64::min).floor().max(0.0) as usize;
        let y1 = (ys.iter().cloned().fold(f64::MIN, f64::max).ceil()).min(self.h as f64 - 1.0) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
                let mut pos = false;
                let mut neg = false;
                for i in 0..4 {
                    let a = quad[i];
                    let b = quad[(i + 1) % 4];
                    let cr = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
                    if cr > 0.0 {
                        pos = true;
                    }
                    if cr < 0.0 {
                        neg = true;
                    }
                }
                if !(pos && neg) {
                    self.set(x, y, color);
                }
            }
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.px
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

fn render_background(canvas: &mut Canvas, style: BackgroundStyle, rng: &mut ChaCha12Rng) {
    let (w, h) = (canvas.w, canvas.h);
    match style {
        BackgroundStyle::Asphalt => {
            for y in 0..h {
                for x in 0..w {
                    let v = 100.0 + rng.gen_range(-14.0..14.0);
                    canvas.set(x, y, [v, v, v + rng.gen_range(-3.0..3.0)]);
                }
            }
        }
        BackgroundStyle::Brick => {
            for y in 0..h {
                for x in 0..w {
                    let mortar = y % 14 < 2 || (x + if (y / 14) % 2 == 0 { 0 } else { 8 }) % 18 < 2;
                    let base = if mortar { 70.0 } else { 112.0 };
                    let v = base + rng.gen_range(-8.0..8.0);
                    canvas.set(x, y, [v + 10.0, v - 2.0, v - 8.0]);
                }
            }
        }
        BackgroundStyle::Reflective => {
            for y in 0..h {
                for x in 0..w {
                    let band = 18.0 * ((x as f64 + 2.0 * y as f64) * 0.05).sin();
                    let v = 120.0 + band + rng.gen_range(-6.0..6.0) + 20.0 * (y as f64 / h as f64);
                    canvas.set(x, y, [v, v + 4.0, v + 8.0]);
                }
            }
        }
        BackgroundStyle::Night => {
            let cx = 0.5 * w as f64;
            let cy = 0.5 * h as f64;
            let rmax = (cx * cx + cy * cy).sqrt();
            for y in 0..h {
                for x in 0..w {
                    let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() / rmax;
                    let v = 46.0 * (1.0 - 0.55 * r) + rng.gen_range(-5.0..5.0);
                    canvas.set(x, y, [v, v, v + 6.0]);
                }
            }
        }
    }
}

/// Generates one scene, deterministic per (cfg.seed, index).
pub fn generate_scene(cfg: &SceneConfig, index: u64) -> Result<SceneSample> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index.wrapping_add(1));

    let style = cfg.background_styles[rng.gen_range(0..cfg.background_styles.len())];
    let bay = layout_bay(cfg, &mut rng);
    debug_assert!(!bay.slots.is_empty());

    let mut canvas = Canvas::new(cfg.image_w, cfg.image_h);
    render_background(&mut canvas, style, &mut rng);

    let bright = if style == BackgroundStyle::Night { 185.0 } else { 232.0 };
    let line_color = if rng.gen_bool(0.3) {
        [bright, bright * 0.88, bright * 0.38] // worn yellow paint
    } else {
        [bright, bright, bright * 0.97]
    };

    // Guiding line through every junction, extended past the end slots.
    let mut junctions: Vec<Point2> = Vec::new();
    for s in &bay.slots {
        if !junctions.iter().any(|j| j.distance(&s.j1) < 1e-9) {
            junctions.push(s.j1);
        }
        if !junctions.iter().any(|j| j.distance(&s.j2) < 1e-9) {
            junctions.push(s.j2);
        }
    }
    let proj = |p: &Point2| p.x * bay.eo.cx + p.y * bay.eo.cy;
    let first = *junctions
        .iter()
        .min_by(|a, b| proj(a).partial_cmp(&proj(b)).unwrap())
        .unwrap();
    let last = *junctions
        .iter()
        .max_by(|a, b| proj(a).partial_cmp(&proj(b)).unwrap())
        .unwrap();
    let ext = 0.25 * bay.slots[0].j1.distance(&bay.slots[0].j2);
    canvas.draw_segment(
        first.offset(bay.eo, -ext),
        last.offset(bay.eo, ext),
        bay.line_width,
        line_color,
    );
    for j in &junctions {
        canvas.draw_segment(*j, j.offset(bay.sep, bay.depth), bay.line_width, line_color);
    }

    // Occupied slots carry a filled vehicle-like quad inset from the lines.
    for s in &bay.slots {
        if s.occupancy == Occupancy::Occupied {
            let len = s.j1.distance(&s.j2);
            let inset = 0.16 * len;
            let front = 0.18 * bay.depth;
            let back = 0.92 * bay.depth;
            let a = s.j1.offset(bay.eo, inset).offset(bay.sep, front);
            let b = s.j2.offset(bay.eo, -inset).offset(bay.sep, front);
            let c = s.j2.offset(bay.eo, -inset).offset(bay.sep, back);
            let d = s.j1.offset(bay.eo, inset).offset(bay.sep, back);
            let shade = rng.gen_range(28.0..58.0);
            canvas.fill_quad([a, b, c, d], [shade, shade + 6.0, shade + 14.0]);
            // Windshield highlight keeps the quad from being a flat block.
            let wa = s.j1.offset(bay.eo, inset * 1.8).offset(bay.sep, front + 0.18 * bay.depth);
            let wb = s.j2.offset(bay.eo, -inset * 1.8).offset(bay.sep, front + 0.18 * bay.depth);
            let wc = s.j2.offset(bay.eo, -inset * 1.8).offset(bay.sep, front + 0.30 * bay.depth);
            let wd = s.j1.offset(bay.eo, inset * 1.8).offset(bay.sep, front + 0.30 * bay.depth);
            canvas.fill_quad([wa, wb, wc, wd], [shade + 40.0, shade + 44.0, shade + 52.0]);
        }
    }

    // Photometric noise.
    if cfg.noise_level > 0.0 {
        let sigma = cfg.noise_level * 16.0;
        for v in canvas.px.iter_mut() {
            // Box-Muller would burn two draws per value; a uniform triple
            // sum is close enough to gaussian for texture noise.
            let n: f64 = (0..3).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() / 3.0;
            *v += sigma * n;
        }
    }

    Ok(SceneSample {
        width: cfg.image_w,
        height: cfg.image_h,
        pixels: canvas.to_bytes(),
        slots: bay.slots,
    })
}

// ---- sample I/O ----

#[derive(Debug, Serialize, Deserialize)]
struct LabelDoc {
    version: u32,
    image: ImageMeta,
    slots: Vec<SlotRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageMeta {
    w: u32,
    h: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct SlotRecord {
    j1: [f64; 2],
    j2: [f64; 2],
    sep1: [f64; 2],
    sep2: [f64; 2],
    #[serde(rename = "type")]
    slot_type: String,
    occupancy: String,
}

impl SlotRecord {
    fn from_slot(s: &ParkingSlot) -> Self {
        Self {
            j1: [s.j1.x, s.j1.y],
            j2: [s.j2.x, s.j2.y],
            sep1: [s.sep1.cx, s.sep1.cy],
            sep2: [s.sep2.cx, s.sep2.cy],
            slot_type: s.slot_type.as_str().to_string(),
            occupancy: s.occupancy.as_str().to_string(),
        }
    }

    fn to_slot(&self) -> Result<ParkingSlot> {
        Ok(ParkingSlot {
            j1: Point2::new(self.j1[0], self.j1[1]),
            j2: Point2::new(self.j2[0], self.j2[1]),
            sep1: UnitVec2 {
                cx: self.sep1[0],
                cy: self.sep1[1],
            },
            sep2: UnitVec2 {
                cx: self.sep2[0],
                cy: self.sep2[1],
            },
            slot_type: SlotType::from_str(&self.slot_type).ok_or_else(|| {
                Error::Parse {
                    offset: 0,
                    message: format!("unknown slot type {:?}", self.slot_type),
                }
            })?,
            occupancy: Occupancy::from_str(&self.occupancy).ok_or_else(|| Error::Parse {
                offset: 0,
                message: format!("unknown occupancy {:?}", self.occupancy),
            })?,
        })
    }
}

/// Serializes labels to the schema-versioned JSON document.
pub fn labels_to_json(sample_w: usize, sample_h: usize, slots: &[ParkingSlot]) -> Result<String> {
    let doc = LabelDoc {
        version: LABEL_SCHEMA_VERSION,
        image: ImageMeta {
            w: sample_w as u32,
            h: sample_h as u32,
        },
        slots: slots.iter().map(SlotRecord::from_slot).collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parses a label document, rejecting unknown schema versions.
pub fn labels_from_json(json: &str) -> Result<(usize, usize, Vec<ParkingSlot>)> {
    let doc: LabelDoc = serde_json::from_str(json)?;
    if doc.version != LABEL_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: doc.version,
            expected: LABEL_SCHEMA_VERSION,
        });
    }
    let slots = doc
        .slots
        .iter()
        .map(|r| r.to_slot())
        .collect::<Result<Vec<_>>>()?;
    Ok((doc.image.w as usize, doc.image.h as usize, slots))
}

/// Writes an 8-bit binary P6 pixmap.
pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    debug_assert_eq!(pixels.len(), width * height * 3);
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads an 8-bit binary P6 pixmap; parse failures report the byte offset.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_ppm(&bytes)
}

pub fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(Error::Parse {
            offset: 0,
            message: "expected P6 magic".into(),
        });
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and # comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_digit() => break,
                _ => {
                    return Err(Error::Parse {
                        offset: pos,
                        message: "expected header integer".into(),
                    })
                }
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Parse {
                offset: start,
                message: "bad header integer".into(),
            })?;
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Parse {
            offset: pos,
            message: format!("unsupported max value {maxval} (expected 255)"),
        });
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Parse {
            offset: pos,
            message: "expected single whitespace after header".into(),
        });
    }
    pos += 1;
    let need = w * h * 3;
    let have = bytes.len() - pos;
    if have != need {
        return Err(Error::Parse {
            offset: pos,
            message: format!("pixel payload: expected {need} bytes, got {have}"),
        });
    }
    Ok((w, h, bytes[pos..].to_vec()))
}

/// Writes one sample as an image/label file pair; `read_sample` restores it
/// bit-exactly.
pub fn write_sample(sample: &SceneSample, ppm_path: &Path, json_path: &Path) -> Result<()> {
    write_ppm(ppm_path, sample.width, sample.height, &sample.pixels)?;
    fs::write(json_path, labels_to_json(sample.width, sample.height, &sample.slots)?)?;
    Ok(())
}

pub fn read_sample(ppm_path: &Path, json_path: &Path) -> Result<SceneSample> {
    let (w, h, pixels) = read_ppm(ppm_path)?;
    let (lw, lh, slots) = labels_from_json(&fs::read_to_string(json_path)?)?;
    if (w, h) != (lw, lh) {
        return Err(Error::Parse {
            offset: 0,
            message: format!("label image size {lw}x{lh} does not match pixmap {w}x{h}"),
        });
    }
    Ok(SceneSample {
        width: w,
        height: h,
        pixels,
        slots,
    })
}

// ---- corpus layout ----

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub count: u64,
    pub seed: u64,
    pub config: SceneConfig,
}

pub fn sample_name(index: u64) -> String {
    format!("{index:06}")
}

/// Generates `count` samples under `dir` (images/NNNNNN.ppm,
/// labels/NNNNNN.json, manifest.json). Parallel across samples; the result
/// is byte-identical regardless of thread count.
pub fn write_corpus(cfg: &SceneConfig, count: u64, dir: &Path) -> Result<()> {
    use rayon::prelude::*;
    if count == 0 {
        return Err(Error::InvalidConfig("empty corpus requested".into()));
    }
    cfg.validate()?;
    let images = dir.join("images");
    let labels = dir.join("labels");
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&labels)?;
    (0..count)
        .into_par_iter()
        .try_for_each(|i| -> Result<()> {
            let sample = generate_scene(cfg, i)?;
            let name = sample_name(i);
            write_sample(
                &sample,
                &images.join(format!("{name}.ppm")),
                &labels.join(format!("{name}.json")),
            )
        })?;
    let manifest = Manifest {
        version: 1,
        count,
        seed: cfg.seed,
        config: cfg.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Opens a corpus directory and reads samples by index.
pub struct Corpus {
    pub dir: std::path::PathBuf,
    pub manifest: Manifest,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_path(&self, index: u64) -> std::path::PathBuf {
        self.dir.join("images").join(format!("{}.ppm", sample_name(index)))
    }

    pub fn label_path(&self, index: u64) -> std::path::PathBuf {
        self.dir.join("labels").join(format!("{}.json", sample_name(index)))
    }

    pub fn read(&self, index: u64) -> Result<SceneSample> {
        read_sample(&self.image_path(index), &self.label_path(index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::entrance_from_slot;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&cfg, 0).unwrap();
        let b = generate_scene(&cfg, 0).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&cfg, 1).unwrap();
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn forced_mix_yields_perpendicular_only() {
        let cfg = SceneConfig {
            slot_type_mix: [1.0, 0.0, 0.0],
            ..SceneConfig::default()
        };
        for i in 0..40 {
            let s = generate_scene(&cfg, i).unwrap();
            assert!(!s.slots.is_empty());
            for slot in &s.slots {
                assert_eq!(slot.slot_type, SlotType::Perpendicular);
                let e = entrance_from_slot(slot).unwrap();
                assert!(e.eo.dot(&e.so).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scene_invariants_hold() {
        let cfg = SceneConfig::default();
        for i in 0..60 {
            let s = generate_scene(&cfg, i).unwrap();
            let mut cells = std::collections::HashSet::new();
            for slot in &s.slots {
                let e = entrance_from_slot(slot).unwrap();
                assert!(e.center.x > 0.0 && e.center.x < cfg.image_w as f64);
                assert!(e.center.y > 0.0 && e.center.y < cfg.image_h as f64);
                let cell = ((e.center.y / 32.0) as usize, (e.center.x / 32.0) as usize);
                assert!(cells.insert(cell), "two entrance centers share a cell");
                assert!(e.length > 2.0 * DEFAULT_NMS_DIST);
            }
        }
    }

    #[test]
    fn type_frequencies_match_mix() {
        let cfg = SceneConfig {
            noise_level: 0.0,
            ..SceneConfig::default()
        };
        let mut counts = [0usize; 3];
        let n = 10_000u64;
        use rayon::prelude::*;
        let types: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| {
                // Only the layout matters here; rendering is exercised elsewhere.
                let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i.wrapping_add(1));
                let _ = rng.gen_range(0..cfg.background_styles.len());
                let bay = layout_bay(&cfg, &mut rng);
                bay.slots[0].slot_type.index()
            })
            .collect();
        for t in types {
            counts[t] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - cfg.slot_type_mix[i]).abs() < 0.02,
                "type {i}: frequency {freq} vs mix {}",
                cfg.slot_type_mix[i]
            );
        }
    }

    #[test]
    fn junction_pixels_are_painted() {
        let cfg = SceneConfig {
            noise_level: 0.0,
            ..SceneConfig::default()
        };
        for i in 0..20 {
            let s = generate_scene(&cfg, i).unwrap();
            for slot in &s.slots {
                for j in [slot.j1, slot.j2] {
                    // Some pixel within the line width of the junction must be
                    // clearly brighter than the mid-tone backgrounds.
                    let r = 5.0f64;
                    let mut best = 0u8;
                    for dy in -(r as i32)..=(r as i32) {
                        for dx in -(r as i32)..=(r as i32) {
                            let x = (j.x as i32 + dx).clamp(0, cfg.image_w as i32 - 1) as usize;
                            let y = (j.y as i32 + dy).clamp(0, cfg.image_h as i32 - 1) as usize;
                            let px = &s.pixels[(y * cfg.image_w + x) * 3..][..3];
                            best = best.max(*px.iter().max().unwrap());
                        }
                    }
                    assert!(best > 150, "no painted pixel near junction at scene {i}");
                }
            }
        }
    }

    #[test]
    fn sample_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig::default();
        for i in 0..100 {
            let s = generate_scene(&cfg, i).unwrap();
            let ppm = dir.path().join("img.ppm");
            let json = dir.path().join("lab.json");
            write_sample(&s, &ppm, &json).unwrap();
            let back = read_sample(&ppm, &json).unwrap();
            assert_eq!(s, back);
        }
    }

    #[test]
    fn truncated_pixmap_reports_counts() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_scene(&SceneConfig::default(), 0).unwrap();
        let ppm = dir.path().join("img.ppm");
        write_ppm(&ppm, s.width, s.height, &s.pixels).unwrap();
        let mut bytes = fs::read(&ppm).unwrap();
        bytes.truncate(bytes.len() - 100);
        fs::write(&ppm, &bytes).unwrap();
        match read_ppm(&ppm) {
            Err(Error::Parse { message, .. }) => {
                assert!(message.contains("expected") && message.contains("got"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_schema_version_rejected() {
        let s = generate_scene(&SceneConfig::default(), 0).unwrap();
        let json = labels_to_json(s.width, s.height, &s.slots).unwrap();
        let bumped = json.replacen("\"version\": 1", "\"version\": 9", 1);
        match labels_from_json(&bumped) {
            Err(Error::SchemaVersion { found: 9, expected: 1 }) => {}
            other => panic!("expected schema version error, got {other:?}"),
        }
    }

    #[test]
    fn unfittable_config_rejected() {
        let cfg = SceneConfig {
            image_w: 64,
            image_h: 64,
            entrance_length_range: (60.0, 90.0),
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&cfg, 0), Err(Error::InvalidConfig(_))));
    }
}
