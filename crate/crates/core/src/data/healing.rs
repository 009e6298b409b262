//! Healing-MNIST style sequences: a digit rotated by per-step actions, a
//! three-step square motif in the upper-left quadrant, and per-sequence
//! bit-flip noise.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::idx;
use super::SequenceDataset;
use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamKey};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GlyphSource {
    /// Built-in block digits 0, 1, 2 and 5.
    Procedural,
    /// MNIST-format image and label files.
    Idx { images: PathBuf, labels: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ActionPolicy {
    /// Independent `U[-1, 1]` per step.
    Uniform,
    /// The same action at every step.
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealingConfig {
    pub glyphs: GlyphSource,
    pub classes: Vec<u8>,
    pub glyphs_per_class: usize,
    pub sequences: usize,
    pub steps: usize,
    /// Degrees of rotation per unit action.
    pub max_angle: f64,
    pub square_size: usize,
    /// Per-sequence flip probability is drawn from `U[0, max_noise]`.
    pub max_noise: f64,
    pub threshold: f64,
    pub side: usize,
    pub policy: ActionPolicy,
    pub seed: u64,
    /// Store the noise-free frames as the `clean` extra.
    pub keep_clean: bool,
}

impl Default for HealingConfig {
    fn default() -> Self {
        HealingConfig {
            glyphs: GlyphSource::Procedural,
            classes: vec![1, 5],
            glyphs_per_class: 1,
            sequences: 1000,
            steps: 5,
            max_angle: 45.0,
            square_size: 4,
            max_noise: 0.2,
            threshold: 0.5,
            side: 28,
            policy: ActionPolicy::Uniform,
            seed: 0,
            keep_clean: false,
        }
    }
}

impl HealingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 3 {
            return Err(Error::invalid("healing sequences need at least 3 steps for the square motif"));
        }
        if self.side < 8 || self.square_size == 0 || self.square_size > self.side / 2 {
            return Err(Error::invalid("square must fit in the upper-left quadrant"));
        }
        if self.sequences == 0 || self.glyphs_per_class == 0 || self.classes.is_empty() {
            return Err(Error::invalid("sequences, glyphs per class and classes must be non-empty"));
        }
        if !(0.0..=1.0).contains(&self.max_noise) {
            return Err(Error::invalid("max_noise must lie in [0, 1]"));
        }
        if let ActionPolicy::Constant(a) = self.policy {
            if !(-1.0..=1.0).contains(&a) {
                return Err(Error::invalid("actions must lie in [-1, 1]"));
            }
        }
        Ok(())
    }
}

// 5×7 block font, one string per row.
const FONT: [(u8, [&str; 7]); 4] = [
    (0, [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    (1, ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    (2, [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    (5, ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
];

/// Procedural glyph `instance` of `digit` on a `side × side` canvas.
/// Instance 0 is the canonical glyph; later instances are shifted,
/// rescaled and optionally thickened.
pub fn procedural_glyph(digit: u8, instance: usize, side: usize, seed: u64) -> Result<Vec<f64>> {
    let rows = FONT
        .iter()
        .find(|(d, _)| *d == digit)
        .map(|(_, r)| r)
        .ok_or_else(|| Error::invalid(format!("no procedural glyph for digit {digit}; available: 0, 1, 2, 5")))?;
    let mut rng = StreamKey::new(seed, Purpose::Glyph).sequence(digit as u64).step(instance as u32).rng();
    let base_scale = (side as f64 * 0.75 / 7.0).floor().max(1.0);
    let (scale, dx, dy, thick) = if instance == 0 {
        (base_scale, 0i64, 0i64, false)
    } else {
        let s = (base_scale + rng.uniform_in(-0.6, 0.6)).max(1.0);
        (s, rng.below(5) as i64 - 2, rng.below(5) as i64 - 2, rng.bernoulli(0.5))
    };
    let (gw, gh) = (5.0 * scale, 7.0 * scale);
    let ox = (side as f64 - gw) / 2.0 + dx as f64;
    let oy = (side as f64 - gh) / 2.0 + dy as f64;
    let mut img = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let fx = ((c as f64 + 0.5 - ox) / scale).floor();
            let fy = ((r as f64 + 0.5 - oy) / scale).floor();
            if (0.0..5.0).contains(&fx) && (0.0..7.0).contains(&fy) && rows[fy as usize].as_bytes()[fx as usize] == b'#' {
                img[r * side + c] = 1.0;
            }
        }
    }
    if thick {
        let orig = img.clone();
        for r in 0..side {
            for c in 1..side {
                if orig[r * side + c - 1] == 1.0 {
                    img[r * side + c] = 1.0;
                }
            }
        }
    }
    Ok(img)
}

/// Rotates an `h × w` image counter-clockwise by `degrees` about its
/// center: inverse mapping with nearest-neighbor sampling, zero outside.
pub fn rotate_image(img: &[f64], h: usize, w: usize, degrees: f64) -> Vec<f64> {
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64 - cx, cy - r as f64);
            let sx = x * cos + y * sin;
            let sy = -x * sin + y * cos;
            let (sc, sr) = ((cx + sx).round(), (cy - sy).round());
            if sc >= 0.0 && sr >= 0.0 && (sc as usize) < w && (sr as usize) < h {
                out[r * w + c] = img[sr as usize * w + sc as usize];
            }
        }
    }
    out
}

fn wrap_degrees(a: f64) -> f64 {
    let mut a = a % 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a < -180.0 {
        a += 360.0;
    }
    a
}

/// The glyph bank: `(class, image)` pairs.
pub fn load_glyphs(cfg: &HealingConfig) -> Result<Vec<(u8, Vec<f64>)>> {
    let side = cfg.side;
    match &cfg.glyphs {
        GlyphSource::Procedural => {
            let mut out = Vec::new();
            for &class in &cfg.classes {
                for j in 0..cfg.glyphs_per_class {
                    out.push((class, procedural_glyph(class, j, side, cfg.seed)?));
                }
            }
            Ok(out)
        }
        GlyphSource::Idx { images, labels } => {
            let imgs = idx::load_idx(images)?;
            let labels = idx::load_idx_labels(labels)?;
            if imgs.rank() != 3 || imgs.shape()[1] != side || imgs.shape()[2] != side || imgs.shape()[0] != labels.len() {
                return Err(Error::format(format!("IDX images must be [N,{side},{side}] with one label each")));
            }
            let mut out = Vec::new();
            for &class in &cfg.classes {
                let picked: Vec<_> = labels.iter().enumerate().filter(|(_, l)| **l == class).take(cfg.glyphs_per_class).collect();
                if picked.len() < cfg.glyphs_per_class {
                    return Err(Error::invalid(format!("IDX file has only {} glyphs of class {class}", picked.len())));
                }
                for (i, _) in picked {
                    out.push((class, imgs.data()[i * side * side..(i + 1) * side * side].to_vec()));
                }
            }
            Ok(out)
        }
    }
}

/// Generates the dataset. Extras: `noise_level [N]`, `square_start [N]`
/// (0-based step), `square_anchor [N,2]` (row, col), `glyph [N]` (bank
/// index), `class [N]` and optionally `clean [N,T,d]`.
pub fn gen_healing(cfg: &HealingConfig) -> Result<SequenceDataset> {
    cfg.validate()?;
    let bank = load_glyphs(cfg)?;
    let (n, t, side, sq) = (cfg.sequences, cfg.steps, cfg.side, cfg.square_size);
    let d = side * side;
    let key = |p: Purpose, i: usize| StreamKey::new(cfg.seed, p).sequence(i as u64).rng();
    let mut x = Vec::with_capacity(n * t * d);
    let mut clean = Vec::with_capacity(if cfg.keep_clean { n * t * d } else { 0 });
    let mut u = Vec::with_capacity(n * (t - 1));
    let (mut noise, mut start, mut anchor, mut glyph, mut class) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..n {
        let g = key(Purpose::Glyph, i).below(bank.len());
        let mut arng = key(Purpose::Action, i);
        let actions: Vec<f64> = (0..t - 1)
            .map(|_| match cfg.policy {
                ActionPolicy::Uniform => arng.uniform_in(-1.0, 1.0),
                ActionPolicy::Constant(a) => a,
            })
            .collect();
        let mut srng = key(Purpose::Square, i);
        let t0 = srng.below(t - 2);
        let limit = side / 2 - sq + 1;
        let (ar, ac) = (srng.below(limit), srng.below(limit));
        let mut frng = key(Purpose::BitFlip, i);
        let level = frng.uniform_in(0.0, cfg.max_noise);

        let mut angle = 0.0;
        for s in 0..t {
            if s > 0 {
                angle += cfg.max_angle * actions[s - 1];
            }
            let rotated = rotate_image(&bank[g].1, side, side, wrap_degrees(angle));
            let mut frame: Vec<f64> = rotated.iter().map(|v| if *v > cfg.threshold { 1.0 } else { 0.0 }).collect();
            if (t0..t0 + 3).contains(&s) {
                for r in ar..ar + sq {
                    frame[r * side + ac..r * side + ac + sq].iter_mut().for_each(|v| *v = 1.0);
                }
            }
            if cfg.keep_clean {
                clean.extend_from_slice(&frame);
            }
            for v in &mut frame {
                if frng.bernoulli(level) {
                    *v = 1.0 - *v;
                }
            }
            x.extend(frame);
        }
        u.extend(actions);
        noise.push(level);
        start.push(t0 as f64);
        anchor.extend([ar as f64, ac as f64]);
        glyph.push(g as f64);
        class.push(bank[g].0 as f64);
    }
    let mut ds = SequenceDataset::dense(t, d, 1, x, u)?;
    ds.extras = vec![
        ("noise_level".into(), Tensor::vector(noise)),
        ("square_start".into(), Tensor::vector(start)),
        ("square_anchor".into(), Tensor::matrix(n, 2, anchor)?),
        ("glyph".into(), Tensor::vector(glyph)),
        ("class".into(), Tensor::vector(class)),
    ];
    if cfg.keep_clean {
        ds.extras.push(("clean".into(), Tensor::new(vec![n, t, d], clean)?));
    }
    ds.metadata = json!({ "generator": "healing", "side": side, "config": cfg });
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_identity_and_quarter_turn() {
        let img: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        assert_eq!(rotate_image(&img, 3, 3, 0.0), img);
        assert_eq!(rotate_image(&img, 3, 3, 90.0), vec![3.0, 6.0, 9.0, 2.0, 5.0, 8.0, 1.0, 4.0, 7.0]);
        assert_eq!(rotate_image(&img, 3, 3, -90.0), vec![7.0, 4.0, 1.0, 8.0, 5.0, 2.0, 9.0, 6.0, 3.0]);
    }

    #[test]
    fn two_quarter_turns_make_a_half_turn() {
        let img = procedural_glyph(5, 0, 28, 0).unwrap();
        let twice = rotate_image(&rotate_image(&img, 28, 28, 90.0), 28, 28, 90.0);
        assert_eq!(twice, rotate_image(&img, 28, 28, 180.0));
        let rev: Vec<f64> = img.iter().rev().copied().collect();
        assert_eq!(twice, rev);
    }

    #[test]
    fn glyphs_are_distinct_and_binary() {
        let a = procedural_glyph(1, 0, 28, 0).unwrap();
        let b = procedural_glyph(5, 0, 28, 0).unwrap();
        let c = procedural_glyph(5, 1, 28, 0).unwrap();
        assert!(a != b && b != c);
        assert!(a.iter().all(|v| *v == 0.0 || *v == 1.0));
        assert!(a.iter().sum::<f64>() > 20.0);
        assert!(procedural_glyph(7, 0, 28, 0).is_err());
    }

    fn square_mask(ds: &SequenceDataset, i: usize, s: usize) -> bool {
        let side = 28;
        let t0 = ds.extra("square_start").unwrap().data()[i] as usize;
        let a = ds.extra("square_anchor").unwrap();
        let (ar, ac) = (a.at(i, 0) as usize, a.at(i, 1) as usize);
        let on = (t0..t0 + 3).contains(&s);
        let full = (ar..ar + 4).all(|r| (ac..ac + 4).all(|c| ds.obs(i, s)[r * side + c] == 1.0));
        on == full || !on
    }

    #[test]
    fn noiseless_still_frames_differ_only_by_the_motif() {
        let cfg = HealingConfig {
            sequences: 20,
            max_noise: 0.0,
            policy: ActionPolicy::Constant(0.0),
            seed: 3,
            ..HealingConfig::default()
        };
        let ds = gen_healing(&cfg).unwrap();
        assert!(ds.is_binary());
        for i in 0..ds.len {
            let t0 = ds.extra("square_start").unwrap().data()[i] as usize;
            assert!(t0 <= 2);
            let a = ds.extra("square_anchor").unwrap();
            let (ar, ac) = (a.at(i, 0) as usize, a.at(i, 1) as usize);
            assert!(ar + 4 <= 14 && ac + 4 <= 14);
            let in_square = |p: usize| (ar..ar + 4).contains(&(p / 28)) && (ac..ac + 4).contains(&(p % 28));
            for s in 0..5 {
                assert!(square_mask(&ds, i, s));
                for p in 0..784 {
                    if !in_square(p) {
                        assert_eq!(ds.obs(i, s)[p], ds.obs(i, 0)[p]);
                    }
                }
            }
        }
    }

    #[test]
    fn flipped_fraction_matches_noise_levels() {
        let cfg = HealingConfig { sequences: 400, keep_clean: true, seed: 11, ..HealingConfig::default() };
        let ds = gen_healing(&cfg).unwrap();
        let clean = ds.extra("clean").unwrap();
        let flipped = ds.x.iter().zip(clean.data()).filter(|(a, b)| a != b).count() as f64 / ds.x.len() as f64;
        let levels = ds.extra("noise_level").unwrap().data();
        let expected = levels.iter().sum::<f64>() / levels.len() as f64;
        assert!((flipped - expected).abs() < 0.005, "{flipped} vs {expected}");
        assert!(levels.iter().all(|l| (0.0..=0.2).contains(l)));
    }

    #[test]
    fn cumulative_rotation_follows_actions() {
        let cfg = HealingConfig { sequences: 5, max_noise: 0.0, seed: 2, ..HealingConfig::default() };
        let ds = gen_healing(&cfg).unwrap();
        let bank = load_glyphs(&cfg).unwrap();
        for i in 0..ds.len {
            let g = ds.extra("glyph").unwrap().data()[i] as usize;
            let t0 = ds.extra("square_start").unwrap().data()[i] as usize;
            let mut angle = 0.0;
            for s in 0..5 {
                if s > 0 {
                    angle += 45.0 * ds.action(i, s - 1)[0];
                }
                if (t0..t0 + 3).contains(&s) {
                    continue;
                }
                let direct: Vec<f64> = rotate_image(&bank[g].1, 28, 28, angle)
                    .iter()
                    .map(|v| if *v > 0.5 { 1.0 } else { 0.0 })
                    .collect();
                assert_eq!(ds.obs(i, s), &direct[..]);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = HealingConfig { sequences: 10, seed: 5, ..HealingConfig::default() };
        assert_eq!(gen_healing(&cfg).unwrap(), gen_healing(&cfg).unwrap());
        let other = HealingConfig { seed: 6, ..cfg.clone() };
        assert_ne!(gen_healing(&cfg).unwrap().x, gen_healing(&other).unwrap().x);
    }

    #[test]
    fn short_sequences_rejected() {
        assert!(gen_healing(&HealingConfig { steps: 2, ..HealingConfig::default() }).is_err());
    }
}
