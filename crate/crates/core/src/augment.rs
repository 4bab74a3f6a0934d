//! Image augmentation operators, soft-label algebra and MaxUp view selection.
//!
//! Every operator takes its randomness from an explicit `rng` argument and
//! keeps pixel values in `[0, 1]`. The `*_with_*` / `apply_*` variants take the
//! sampled parameters directly so the geometry of a draw can be inspected.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

/// `C×H×W` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Values outside `[0, 1]` are clamped; non-finite values are rejected.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::geometry(format!(
                "image {channels}×{height}×{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("image contains non-finite values".into()));
        }
        let mut img = Self {
            channels,
            height,
            width,
            data,
        };
        img.clamp();
        Ok(img)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); channels * height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    fn same_shape(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::geometry(format!(
                "image shapes differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Probability vector over episode-local classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("soft label entries must be finite and non-negative"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("soft label sums to {sum}, expected 1")));
        }
        Ok(Self(p))
    }

    pub fn one_hot(class: usize, classes: usize) -> Self {
        let mut p = vec![0.0; classes];
        p[class] = 1.0;
        Self(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest weight (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// `w·a + (1 − w)·b`.
    pub fn mix(a: &SoftLabel, b: &SoftLabel, w: f64) -> Result<SoftLabel> {
        if a.len() != b.len() {
            return Err(Error::geometry(format!(
                "label dimensions differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        Ok(SoftLabel(
            a.0.iter().zip(&b.0).map(|(x, y)| w * x + (1.0 - w) * y).collect(),
        ))
    }
}

/// Half-open pixel rectangle `[y0, y1) × [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }
}

fn beta_sample<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::invalid(format!("Beta parameter must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(beta.sample(rng))
}

/// CutMix box for an `h×w` image: `λ ~ Beta(α, α)`, sides `H·√(1−λ)` and
/// `W·√(1−λ)` around a uniform centre, clipped to the image.
pub fn cutmix_box<R: Rng + ?Sized>(h: usize, w: usize, alpha: f64, rng: &mut R) -> Result<Rect> {
    let lambda = beta_sample(alpha, rng)?;
    let ratio = (1.0 - lambda).sqrt();
    let cut_h = (h as f64 * ratio) as usize;
    let cut_w = (w as f64 * ratio) as usize;
    let cy = rng.random_range(0..h);
    let cx = rng.random_range(0..w);
    Ok(Rect {
        y0: cy.saturating_sub(cut_h / 2),
        y1: (cy + cut_h / 2).min(h),
        x0: cx.saturating_sub(cut_w / 2),
        x1: (cx + cut_w / 2).min(w),
    })
}

/// Pastes `b` into `a` inside `rect`; the label weight of `a` is the exact
/// fraction of pixels left untouched.
pub fn apply_cutmix(
    a: &Image,
    la: &SoftLabel,
    b: &Image,
    lb: &SoftLabel,
    rect: Rect,
) -> Result<(Image, SoftLabel)> {
    a.same_shape(b)?;
    if rect.y1 > a.height || rect.x1 > a.width || rect.y0 > rect.y1 || rect.x0 > rect.x1 {
        return Err(Error::geometry(format!("box {rect:?} outside image")));
    }
    let mut out = a.clone();
    for c in 0..a.channels {
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                out.set(c, y, x, b.get(c, y, x));
            }
        }
    }
    let total = a.height * a.width;
    let rho = (total - rect.area()) as f64 / total as f64;
    Ok((out, SoftLabel::mix(la, lb, rho)?))
}

pub fn cutmix<R: Rng + ?Sized>(
    a: &Image,
    la: &SoftLabel,
    b: &Image,
    lb: &SoftLabel,
    rng: &mut R,
) -> Result<(Image, SoftLabel)> {
    cutmix_with_alpha(a, la, b, lb, 1.0, rng)
}

pub fn cutmix_with_alpha<R: Rng + ?Sized>(
    a: &Image,
    la: &SoftLabel,
    b: &Image,
    lb: &SoftLabel,
    alpha: f64,
    rng: &mut R,
) -> Result<(Image, SoftLabel)> {
    a.same_shape(b)?;
    let rect = cutmix_box(a.height, a.width, alpha, rng)?;
    apply_cutmix(a, la, b, lb, rect)
}

/// `(λa + (1−λ)b, λla + (1−λ)lb)`.
pub fn mixup(
    a: &Image,
    la: &SoftLabel,
    b: &Image,
    lb: &SoftLabel,
    lambda: f64,
) -> Result<(Image, SoftLabel)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("mixup weight {lambda} outside [0, 1]")));
    }
    a.same_shape(b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect();
    let img = Image::new(a.channels, a.height, a.width, data)?;
    Ok((img, SoftLabel::mix(la, lb, lambda)?))
}

pub fn sample_mixup<R: Rng + ?Sized>(
    a: &Image,
    la: &SoftLabel,
    b: &Image,
    lb: &SoftLabel,
    alpha: f64,
    rng: &mut R,
) -> Result<(Image, SoftLabel)> {
    let lambda = beta_sample(alpha, rng)?;
    mixup(a, la, b, lb, lambda)
}

/// Source and destination of a SelfMix copy; both rectangles share one size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfMixPatch {
    pub source: Rect,
    pub dest: Rect,
}

/// Patch side lengths uniform in `[H/8, H/2] × [W/8, W/2]` (at least 1);
/// source and destination corners uniform over valid placements.
pub fn selfmix_patch<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Result<SelfMixPatch> {
    if h < 2 || w < 2 {
        return Err(Error::geometry(format!("SelfMix needs at least 2×2 pixels, got {h}×{w}")));
    }
    let ph = rng.random_range((h / 8).max(1)..=(h / 2).max(1));
    let pw = rng.random_range((w / 8).max(1)..=(w / 2).max(1));
    let sy = rng.random_range(0..=h - ph);
    let sx = rng.random_range(0..=w - pw);
    let dy = rng.random_range(0..=h - ph);
    let dx = rng.random_range(0..=w - pw);
    Ok(SelfMixPatch {
        source: Rect {
            y0: sy,
            y1: sy + ph,
            x0: sx,
            x1: sx + pw,
        },
        dest: Rect {
            y0: dy,
            y1: dy + ph,
            x0: dx,
            x1: dx + pw,
        },
    })
}

pub fn apply_selfmix(a: &Image, patch: SelfMixPatch) -> Image {
    let mut out = a.clone();
    let (ph, pw) = (patch.source.y1 - patch.source.y0, patch.source.x1 - patch.source.x0);
    for c in 0..a.channels {
        for y in 0..ph {
            for x in 0..pw {
                let v = a.get(c, patch.source.y0 + y, patch.source.x0 + x);
                out.set(c, patch.dest.y0 + y, patch.dest.x0 + x, v);
            }
        }
    }
    out
}

/// Copies a random patch of `a` onto another location of the same image.
/// The label is unchanged; callers keep their own.
pub fn selfmix<R: Rng + ?Sized>(a: &Image, rng: &mut R) -> Result<Image> {
    let patch = selfmix_patch(a.height, a.width, rng)?;
    Ok(apply_selfmix(a, patch))
}

pub fn horizontal_flip(a: &Image) -> Image {
    let mut out = a.clone();
    for c in 0..a.channels {
        for y in 0..a.height {
            for x in 0..a.width {
                out.set(c, y, x, a.get(c, y, a.width - 1 - x));
            }
        }
    }
    out
}

/// Rotates counter-clockwise by `quarter_turns · 90°`. Odd turns swap height and width.
pub fn rotate90(a: &Image, quarter_turns: u32) -> Image {
    let mut cur = a.clone();
    for _ in 0..quarter_turns % 4 {
        let (h, w) = (cur.height, cur.width);
        let mut next = Image {
            channels: cur.channels,
            height: w,
            width: h,
            data: vec![0.0; cur.data.len()],
        };
        for c in 0..cur.channels {
            for y in 0..w {
                for x in 0..h {
                    // new (y, x) takes old (x, w − 1 − y)
                    next.set(c, y, x, cur.get(c, x, w - 1 - y));
                }
            }
        }
        cur = next;
    }
    cur
}

pub fn erase_rect(a: &Image, rect: Rect) -> Image {
    let mut out = a.clone();
    for c in 0..a.channels {
        for y in rect.y0..rect.y1.min(a.height) {
            for x in rect.x0..rect.x1.min(a.width) {
                out.set(c, y, x, 0.0);
            }
        }
    }
    out
}

/// Zeroes a random rectangle covering 2%–33% of the image with aspect ratio in [0.3, 3.3].
pub fn random_erase<R: Rng + ?Sized>(a: &Image, rng: &mut R) -> Image {
    let area = (a.height * a.width) as f64 * rng.random_range(0.02..0.33);
    let log_ratio = rng.random_range((0.3f64).ln()..(3.3f64).ln());
    let ratio = log_ratio.exp();
    let eh = ((area * ratio).sqrt().round() as usize).clamp(1, a.height);
    let ew = ((area / ratio).sqrt().round() as usize).clamp(1, a.width);
    let y0 = rng.random_range(0..=a.height - eh);
    let x0 = rng.random_range(0..=a.width - ew);
    erase_rect(
        a,
        Rect {
            y0,
            y1: y0 + eh,
            x0,
            x1: x0 + ew,
        },
    )
}

/// Per-channel `clamp(g·x + o)`.
pub fn apply_color_jitter(a: &Image, gains: &[f64], offsets: &[f64]) -> Result<Image> {
    if gains.len() != a.channels || offsets.len() != a.channels {
        return Err(Error::geometry("color jitter needs one gain and offset per channel"));
    }
    let mut out = a.clone();
    let plane = a.height * a.width;
    for c in 0..a.channels {
        for v in &mut out.data[c * plane..(c + 1) * plane] {
            *v = (gains[c] * *v + offsets[c]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Gains in `[0.8, 1.2]`, offsets in `[−0.1, 0.1]`.
pub fn color_jitter<R: Rng + ?Sized>(a: &Image, rng: &mut R) -> Image {
    let gains: Vec<f64> = (0..a.channels).map(|_| rng.random_range(0.8..=1.2)).collect();
    let offsets: Vec<f64> = (0..a.channels).map(|_| rng.random_range(-0.1..=0.1)).collect();
    apply_color_jitter(a, &gains, &offsets).expect("per-channel parameters match")
}

/// Index of the view with the largest loss; ties go to the lowest index.
pub fn maxup_select<T>(mut loss_fn: impl FnMut(&T) -> f64, views: &[T]) -> Result<usize> {
    if views.is_empty() {
        return Err(Error::invalid("MaxUp needs at least one view"));
    }
    let mut best = 0;
    let mut best_loss = loss_fn(&views[0]);
    for (i, v) in views.iter().enumerate().skip(1) {
        let l = loss_fn(v);
        if l > best_loss || (best_loss.is_nan() && !l.is_nan()) {
            best = i;
            best_loss = l;
        }
    }
    Ok(best)
}

/// One sample-level augmentation with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugOp {
    CutMix { alpha: f64, p: f64 },
    MixUp { alpha: f64, p: f64 },
    SelfMix { p: f64 },
    HorizontalFlip { p: f64 },
    /// Random multiple of 90° (square images only).
    Rotation { p: f64 },
    RandomErase { p: f64 },
    ColorJitter { p: f64 },
}

/// Dataset-level augmentations applied once before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskOp {
    /// Adds 90°/180°/270° rotated copies of every class as new classes.
    Rotation,
}

/// Whether MaxUp picks the worst view per query sample or per whole query set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaxUpGranularity {
    #[default]
    Sample,
    Task,
}

/// Which operators apply to support, query and task data, and the MaxUp pool size.
#[derive(Debug, Clone, PartialEq)]
pub struct AugPolicy {
    pub support_ops: Vec<AugOp>,
    pub query_ops: Vec<AugOp>,
    pub task_ops: Vec<TaskOp>,
    /// Number of augmented views MaxUp scores; 1 disables MaxUp.
    pub maxup_pool: usize,
    pub maxup_granularity: MaxUpGranularity,
}

impl Default for AugPolicy {
    fn default() -> Self {
        Self {
            support_ops: Vec::new(),
            query_ops: Vec::new(),
            task_ops: Vec::new(),
            maxup_pool: 1,
            maxup_granularity: MaxUpGranularity::Sample,
        }
    }
}

impl AugPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.maxup_pool == 0 {
            return Err(Error::Config("maxup_pool must be at least 1".into()));
        }
        for op in self.support_ops.iter().chain(&self.query_ops) {
            op.validate()?;
        }
        Ok(())
    }

    pub fn uses_maxup(&self) -> bool {
        self.maxup_pool > 1
    }
}

impl AugOp {
    fn probability(&self) -> f64 {
        match *self {
            AugOp::CutMix { p, .. }
            | AugOp::MixUp { p, .. }
            | AugOp::SelfMix { p }
            | AugOp::HorizontalFlip { p }
            | AugOp::Rotation { p }
            | AugOp::RandomErase { p }
            | AugOp::ColorJitter { p } => p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.probability();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("operator probability {p} outside [0, 1]")));
        }
        match *self {
            AugOp::CutMix { alpha, .. } | AugOp::MixUp { alpha, .. } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::Config(format!("Beta alpha must be positive, got {alpha}")))
            }
            _ => Ok(()),
        }
    }
}

fn parse_params(name: &str, body: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for part in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{name}: expected key=value, got '{part}'")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{name}: '{}' is not a number", v.trim())))?;
        out.push((k.trim().to_string(), v));
    }
    Ok(out)
}

fn take_param(params: &mut Vec<(String, f64)>, key: &str, default: f64) -> f64 {
    match params.iter().position(|(k, _)| k == key) {
        Some(i) => params.remove(i).1,
        None => default,
    }
}

/// Splits `"name(args)"` into `("name", "args")`.
fn split_call(item: &str) -> Result<(&str, &str)> {
    match item.find('(') {
        Some(open) => {
            let close = item
                .rfind(')')
                .filter(|&c| c > open && c == item.len() - 1)
                .ok_or_else(|| Error::Config(format!("unbalanced parentheses in '{item}'")))?;
            Ok((item[..open].trim(), &item[open + 1..close]))
        }
        None => Ok((item.trim(), "")),
    }
}

/// Parses `"cutmix(alpha=1.0) + hflip(p=0.5)"`; `"none"` or an empty string is the empty list.
pub fn parse_ops(spec: &str) -> Result<Vec<AugOp>> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "none" {
        return Ok(Vec::new());
    }
    spec.split('+')
        .map(|item| {
            let item = item.trim();
            let (name, body) = split_call(item)?;
            let mut params = parse_params(name, body)?;
            let p = take_param(&mut params, "p", 1.0);
            let op = match name {
                "cutmix" => AugOp::CutMix {
                    alpha: take_param(&mut params, "alpha", 1.0),
                    p,
                },
                "mixup" => AugOp::MixUp {
                    alpha: take_param(&mut params, "alpha", 1.0),
                    p,
                },
                "selfmix" => AugOp::SelfMix { p },
                "hflip" | "horizontal_flip" => AugOp::HorizontalFlip { p },
                "rotation" | "rotate" => AugOp::Rotation { p },
                "random_erase" | "erase" => AugOp::RandomErase { p },
                "color_jitter" | "jitter" => AugOp::ColorJitter { p },
                other => return Err(Error::Config(format!("unknown augmentation '{other}'"))),
            };
            if let Some((k, _)) = params.first() {
                return Err(Error::Config(format!("{name}: unknown parameter '{k}'")));
            }
            op.validate()?;
            Ok(op)
        })
        .collect()
}

pub fn parse_task_ops(spec: &str) -> Result<Vec<TaskOp>> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "none" {
        return Ok(Vec::new());
    }
    spec.split('+')
        .map(|item| {
            let (name, body) = split_call(item.trim())?;
            if !body.trim().is_empty() {
                return Err(Error::Config(format!("task op '{name}' takes no parameters")));
            }
            match name {
                "rotation" | "rotate" => Ok(TaskOp::Rotation),
                other => Err(Error::Config(format!("unknown task augmentation '{other}'"))),
            }
        })
        .collect()
}

/// Applies `ops` in order to every sample. Pairwise operators draw their
/// partner from the set as it stood before that operator ran.
pub fn apply_ops<R: Rng + ?Sized>(
    samples: &[(Image, SoftLabel)],
    ops: &[AugOp],
    rng: &mut R,
) -> Result<Vec<(Image, SoftLabel)>> {
    let mut cur = samples.to_vec();
    for op in ops {
        let snapshot = cur.clone();
        let n = snapshot.len();
        for (i, slot) in cur.iter_mut().enumerate() {
            if rng.random::<f64>() >= op.probability() {
                continue;
            }
            let partner = |rng: &mut R| {
                if n > 1 {
                    let j = rng.random_range(0..n - 1);
                    if j >= i {
                        j + 1
                    } else {
                        j
                    }
                } else {
                    i
                }
            };
            *slot = match *op {
                AugOp::CutMix { alpha, .. } => {
                    let j = partner(rng);
                    let (b, lb) = &snapshot[j];
                    cutmix_with_alpha(&slot.0, &slot.1, b, lb, alpha, rng)?
                }
                AugOp::MixUp { alpha, .. } => {
                    let j = partner(rng);
                    let (b, lb) = &snapshot[j];
                    sample_mixup(&slot.0, &slot.1, b, lb, alpha, rng)?
                }
                AugOp::SelfMix { .. } => (selfmix(&slot.0, rng)?, slot.1.clone()),
                AugOp::HorizontalFlip { .. } => (horizontal_flip(&slot.0), slot.1.clone()),
                AugOp::Rotation { .. } => {
                    let turns = if slot.0.height == slot.0.width {
                        rng.random_range(1..4)
                    } else {
                        2
                    };
                    (rotate90(&slot.0, turns), slot.1.clone())
                }
                AugOp::RandomErase { .. } => (random_erase(&slot.0, rng), slot.1.clone()),
                AugOp::ColorJitter { .. } => (color_jitter(&slot.0, rng), slot.1.clone()),
            };
        }
    }
    Ok(cur)
}
