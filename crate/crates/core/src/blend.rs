//! Gradient-domain compositing: pastes a generated region into a frame by
//! solving a Dirichlet Poisson problem whose guidance field is the source
//! patch's gradient.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clip::VideoClip;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;

/// One frame, row-major `H × W × C`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width}x{channels} frame",
                data.len()
            )));
        }
        Ok(Frame {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Frame {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn of_clip(clip: &VideoClip, t: usize) -> Self {
        Frame {
            height: clip.height(),
            width: clip.width(),
            channels: clip.channels(),
            data: clip.frame(t).iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// The `height × width` window at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({top}, {left}) leaves the {}x{} frame",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in top..top + height {
            let row = (y * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[row..row + width * self.channels]);
        }
        Frame::new(height, width, self.channels, data)
    }
}

/// A rectangle of the frame and the interior mask Ω inside it. The mask's
/// outer rim must be empty, so every neighbor of Ω lies in the rectangle
/// where the source patch defines the guidance field. An empty mask is
/// allowed and leaves the frame unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major `height × width`; true marks Ω.
    pub mask: Vec<bool>,
}

impl BlendRegion {
    /// Ω is the rectangle minus its one-pixel rim; the rim is the boundary.
    pub fn rect(top: usize, left: usize, height: usize, width: usize) -> Self {
        let mask = (0..height * width)
            .map(|i| {
                let (y, x) = (i / width.max(1), i % width.max(1));
                y > 0 && x > 0 && y + 1 < height && x + 1 < width
            })
            .collect();
        BlendRegion {
            top,
            left,
            height,
            width,
            mask,
        }
    }

    pub fn with_mask(
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::shape(format!(
                "mask has {} entries for a {height}x{width} region",
                mask.len()
            )));
        }
        let r = BlendRegion {
            top,
            left,
            height,
            width,
            mask,
        };
        let on_rim = (0..height * width).any(|i| {
            let (y, x) = (i / width, i % width);
            r.mask[i] && (y == 0 || x == 0 || y + 1 == height || x + 1 == width)
        });
        if on_rim {
            return Err(Error::invalid(
                "blend mask touches the region rim; boundary pixels would be missing",
            ));
        }
        Ok(r)
    }

    pub fn interior_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn validate(&self, frame_height: usize, frame_width: usize) -> Result<()> {
        if self.top + self.height > frame_height || self.left + self.width > frame_width {
            return Err(Error::invalid(format!(
                "region {}x{} at ({}, {}) exceeds the {frame_height}x{frame_width} frame",
                self.height, self.width, self.top, self.left
            )));
        }
        if self.mask.len() != self.height * self.width {
            return Err(Error::shape("mask size differs from the region"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Sparse 5-point system over Ω: `|N_p| f_p − Σ_{q ∈ N_p ∩ Ω} f_q = b_p`.
struct Laplacian {
    diag: Vec<f64>,
    /// Ω-neighbors of each unknown.
    nbrs: Vec<Vec<usize>>,
}

impl Laplacian {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.diag[i] * x[i] - self.nbrs[i].iter().map(|&j| x[j]).sum::<f64>();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient from `x`. Stops when the
/// residual 2-norm drops below `tol`; fails after `max_iter` iterations.
/// `on_iter` sees every iterate.
fn pcg(
    a: &Laplacian,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    mut on_iter: impl FnMut(&[f64]),
) -> Result<SolveStats> {
    let n = b.len();
    let mut ax = vec![0.0; n];
    a.apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut res = dot(&r, &r).sqrt();
    if res < tol {
        return Ok(SolveStats {
            iterations: 0,
            residual: res,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&a.diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        on_iter(x);
        res = dot(&r, &r).sqrt();
        if res < tol {
            return Ok(SolveStats {
                iterations: it,
                residual: res,
            });
        }
        for i in 0..n {
            z[i] = r[i] / a.diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// Unknowns of Ω in frame coordinates, their system, and the per-channel
/// right-hand sides.
struct System {
    cells: Vec<(usize, usize)>,
    lap: Laplacian,
    rhs: Vec<Vec<f64>>,
}

fn build_system(target: &Frame, source: &Frame, region: &BlendRegion) -> System {
    let (h, w) = (target.height, target.width);
    let mut index = vec![usize::MAX; region.height * region.width];
    let mut cells = Vec::new();
    for (i, &m) in region.mask.iter().enumerate() {
        if m {
            index[i] = cells.len();
            cells.push((
                region.top + i / region.width,
                region.left + i % region.width,
            ));
        }
    }
    let local = |y: usize, x: usize| -> Option<usize> {
        let (ly, lx) = (y.checked_sub(region.top)?, x.checked_sub(region.left)?);
        (ly < region.height && lx < region.width).then(|| ly * region.width + lx)
    };
    let mut diag = Vec::with_capacity(cells.len());
    let mut nbrs = Vec::with_capacity(cells.len());
    let mut rhs = vec![vec![0.0; cells.len()]; target.channels];
    for (k, &(y, x)) in cells.iter().enumerate() {
        let mut neighbors = Vec::with_capacity(4);
        let mut inside = Vec::with_capacity(4);
        if y > 0 {
            neighbors.push((y - 1, x));
        }
        if y + 1 < h {
            neighbors.push((y + 1, x));
        }
        if x > 0 {
            neighbors.push((y, x - 1));
        }
        if x + 1 < w {
            neighbors.push((y, x + 1));
        }
        let lp = local(y, x).expect("cell inside region");
        for &(qy, qx) in &neighbors {
            let lq = local(qy, qx).expect("rim keeps neighbors inside the region");
            let q_in = index[lq] != usize::MAX;
            if q_in {
                inside.push(index[lq]);
            }
            for (c, b) in rhs.iter_mut().enumerate() {
                let gp = source.data[lp * source.channels + c];
                let gq = source.data[lq * source.channels + c];
                b[k] += gp - gq;
                if !q_in {
                    b[k] += target.get(qy, qx, c);
                }
            }
        }
        diag.push(neighbors.len() as f64);
        nbrs.push(inside);
    }
    System {
        cells,
        lap: Laplacian { diag, nbrs },
        rhs,
    }
}

fn check_inputs(target: &Frame, source: &Frame, region: &BlendRegion) -> Result<()> {
    region.validate(target.height, target.width)?;
    if source.height != region.height || source.width != region.width {
        return Err(Error::shape(format!(
            "source patch {}x{} differs from the {}x{} region",
            source.height, source.width, region.height, region.width
        )));
    }
    if source.channels != target.channels {
        return Err(Error::shape(format!(
            "source has {} channels, target {}",
            source.channels, target.channels
        )));
    }
    Ok(())
}

/// Solves, per channel, the discrete Poisson equation over Ω with Dirichlet
/// values from `target` on ∂Ω and the gradient of `source` as guidance.
/// Pixels outside Ω are copied from `target`. The solve starts from the
/// target values and runs to residual 2-norm below `tol`, at most 10·|Ω|
/// iterations.
pub fn poisson_blend_frame(
    target: &Frame,
    source: &Frame,
    region: &BlendRegion,
    tol: f64,
) -> Result<(Frame, SolveStats)> {
    check_inputs(target, source, region)?;
    let mut out = target.clone();
    let sys = build_system(target, source, region);
    let n = sys.cells.len();
    let mut worst = SolveStats {
        iterations: 0,
        residual: 0.0,
    };
    if n == 0 {
        return Ok((out, worst));
    }
    for (c, b) in sys.rhs.iter().enumerate() {
        let mut x: Vec<f64> = sys
            .cells
            .iter()
            .map(|&(y, xx)| target.get(y, xx, c))
            .collect();
        let stats = pcg(&sys.lap, b, &mut x, tol, 10 * n, |_| {})?;
        worst.iterations = worst.iterations.max(stats.iterations);
        worst.residual = worst.residual.max(stats.residual);
        for (k, &(y, xx)) in sys.cells.iter().enumerate() {
            out.set(y, xx, c, x[k]);
        }
    }
    Ok((out, worst))
}

/// Blends frame `t` of `generated` (restricted to the region) into frame `t`
/// of `original` for every frame with a region; frames without one are
/// copied. Output values are clamped to [-1, 1].
pub fn blend_clip(
    original: &VideoClip,
    generated: &VideoClip,
    regions: &BTreeMap<usize, BlendRegion>,
    tol: f64,
) -> Result<VideoClip> {
    if original.frames() != generated.frames() || original.dims() != generated.dims() {
        return Err(Error::shape(format!(
            "original {:?} and generated {:?} clips differ",
            original.dims(),
            generated.dims()
        )));
    }
    if let Some(&t) = regions.keys().find(|&&t| t >= original.frames()) {
        return Err(Error::IndexOutOfRange {
            index: t,
            size: original.frames(),
        });
    }
    let frames: Vec<Vec<f32>> = (0..original.frames())
        .into_par_iter()
        .map(|t| {
            let Some(region) = regions.get(&t) else {
                return Ok(original.frame(t).to_vec());
            };
            let target = Frame::of_clip(original, t);
            let wrap = |e: Error| Error::Frame {
                frame: t,
                source: Box::new(e),
            };
            let source = Frame::of_clip(generated, t)
                .crop(region.top, region.left, region.height, region.width)
                .map_err(wrap)?;
            let (out, _) = poisson_blend_frame(&target, &source, region, tol).map_err(wrap)?;
            Ok(out
                .data
                .iter()
                .map(|&v| v.clamp(-1.0, 1.0) as f32)
                .collect())
        })
        .collect::<Result<_>>()?;
    let [t, h, w, c] = original.dims();
    VideoClip::new(t, h, w, c, frames.concat())
}

/// Sidecar form: `{"<frame index>": [top, left, height, width], ...}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionSidecar(pub BTreeMap<String, [usize; 4]>);

impl RegionSidecar {
    pub fn regions(&self) -> Result<BTreeMap<usize, BlendRegion>> {
        self.0
            .iter()
            .map(|(k, &[top, left, h, w])| {
                let t: usize = k.parse().map_err(|_| {
                    Error::invalid(format!("region key {k:?} is not a frame index"))
                })?;
                Ok((t, BlendRegion::rect(top, left, h, w)))
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn ramp(h: usize, w: usize, c: usize, seed: f64) -> Frame {
        let data = (0..h * w * c)
            .map(|i| (i as f64 * 0.37 + seed).sin() * 0.8)
            .collect();
        Frame::new(h, w, c, data).unwrap()
    }

    #[test]
    fn identical_source_reproduces_target() {
        let target = ramp(9, 10, 3, 0.0);
        let region = BlendRegion::rect(2, 3, 6, 5);
        let source = target.crop(2, 3, 6, 5).unwrap();
        let (out, _) = poisson_blend_frame(&target, &source, &region, 1e-12).unwrap();
        for (a, b) in out.data.iter().zip(&target.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_boundary_and_flat_source_give_constant_interior() {
        let target = Frame::filled(8, 8, 2, 0.3);
        let region = BlendRegion::rect(1, 1, 6, 6);
        let source = Frame::filled(6, 6, 2, -0.9);
        let (out, _) = poisson_blend_frame(&target, &source, &region, 1e-10).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn four_by_four_interior_matches_dense_solve() {
        let target = ramp(8, 8, 1, 1.0);
        let source = ramp(6, 6, 1, 2.0);
        let region = BlendRegion::rect(1, 2, 6, 6);
        assert_eq!(region.interior_len(), 16);
        let (out, _) = poisson_blend_frame(&target, &source, &region, 1e-13).unwrap();

        // Dense oracle assembled independently from the stencil definition.
        let cells: Vec<(usize, usize)> = (0..4)
            .flat_map(|y| (0..4).map(move |x| (2 + y, 3 + x)))
            .collect();
        let idx = |y: usize, x: usize| cells.iter().position(|&c| c == (y, x));
        let g = |y: usize, x: usize| source.get(y - 1, x - 2, 0);
        let mut a = DMatrix::<f64>::zeros(16, 16);
        let mut b = DVector::<f64>::zeros(16);
        for (k, &(y, x)) in cells.iter().enumerate() {
            for (qy, qx) in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
                a[(k, k)] += 1.0;
                b[k] += g(y, x) - g(qy, qx);
                match idx(qy, qx) {
                    Some(j) => a[(k, j)] -= 1.0,
                    None => b[k] += target.get(qy, qx, 0),
                }
            }
        }
        let f = a.lu().solve(&b).unwrap();
        for (k, &(y, x)) in cells.iter().enumerate() {
            assert!((out.get(y, x, 0) - f[k]).abs() < 1e-8);
        }
        // outside Ω untouched
        assert_eq!(out.get(1, 2, 0), target.get(1, 2, 0));
        assert_eq!(out.get(0, 0, 0), target.get(0, 0, 0));
    }

    #[test]
    fn maximum_principle_without_guidance() {
        let target = ramp(10, 10, 1, 3.0);
        let region = BlendRegion::rect(1, 1, 8, 8);
        let source = Frame::filled(8, 8, 1, 0.0);
        let (out, _) = poisson_blend_frame(&target, &source, &region, 1e-10).unwrap();
        let rim: Vec<f64> = (0..8)
            .flat_map(|i| [(1, 1 + i), (8, 1 + i), (1 + i, 1), (1 + i, 8)])
            .map(|(y, x)| target.get(y, x, 0))
            .collect();
        let (lo, hi) = rim
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        for y in 2..8 {
            for x in 2..8 {
                let v = out.get(y, x, 0);
                assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn linear_in_the_guidance() {
        let target = ramp(9, 9, 1, 0.5);
        let region = BlendRegion::rect(1, 1, 7, 7);
        let s1 = ramp(7, 7, 1, 4.0);
        let s2 = ramp(7, 7, 1, 9.0);
        let sum = Frame::new(
            7,
            7,
            1,
            s1.data.iter().zip(&s2.data).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let zero = Frame::filled(7, 7, 1, 0.0);
        let solve = |s: &Frame| poisson_blend_frame(&target, s, &region, 1e-12).unwrap().0;
        let (a, b, c, z) = (solve(&sum), solve(&s1), solve(&s2), solve(&zero));
        for i in 0..a.data.len() {
            assert!((a.data[i] - (b.data[i] + c.data[i] - z.data[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_error_energy_never_increases() {
        let target = ramp(12, 12, 1, 0.1);
        let source = ramp(10, 10, 1, 5.0);
        let region = BlendRegion::rect(1, 1, 10, 10);
        let sys = build_system(&target, &source, &region);
        let n = sys.cells.len();
        let mut exact = vec![0.0; n];
        pcg(&sys.lap, &sys.rhs[0], &mut exact, 1e-14, 10 * n, |_| {}).unwrap();
        let energy = |x: &[f64]| {
            let e: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
            let mut ae = vec![0.0; n];
            sys.lap.apply(&e, &mut ae);
            dot(&e, &ae)
        };
        let mut history = Vec::new();
        let mut x = vec![0.0; n];
        history.push(energy(&x));
        pcg(&sys.lap, &sys.rhs[0], &mut x, 1e-12, 10 * n, |xi| {
            history.push(energy(xi))
        })
        .unwrap();
        assert!(history.len() > 3);
        for w in history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-20, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let target = ramp(8, 8, 1, 0.0);
        let source = ramp(6, 6, 1, 1.0);
        let region = BlendRegion::rect(1, 1, 6, 6);
        let sys = build_system(&target, &source, &region);
        let mut x = vec![0.0; sys.cells.len()];
        let err = pcg(&sys.lap, &sys.rhs[0], &mut x, 1e-300, 2, |_| {}).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 2, .. }));
        assert!(!err.is_user_error());
    }

    #[test]
    fn region_validation() {
        assert!(BlendRegion::rect(0, 0, 4, 4).validate(4, 4).is_ok());
        assert!(BlendRegion::rect(1, 0, 4, 4).validate(4, 4).is_err());
        assert_eq!(BlendRegion::rect(0, 0, 2, 5).interior_len(), 0);
        let mut mask = vec![false; 9];
        mask[4] = true;
        assert!(BlendRegion::with_mask(0, 0, 3, 3, mask.clone()).is_ok());
        mask[0] = true;
        assert!(BlendRegion::with_mask(0, 0, 3, 3, mask).is_err());
    }

    fn clip_from(f: impl Fn(usize, usize, usize, usize) -> f32) -> VideoClip {
        let (t, h, w, c) = (4, 8, 8, 3);
        let mut data = Vec::new();
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    for ci in 0..c {
                        data.push(f(ti, y, x, ci));
                    }
                }
            }
        }
        VideoClip::new(t, h, w, c, data).unwrap()
    }

    #[test]
    fn clip_blending_is_per_frame() {
        let orig = clip_from(|t, y, x, c| ((t * 7 + y * 3 + x + c) as f32 * 0.1).sin() * 0.5);
        let generated = clip_from(|t, y, x, c| ((t + y * 5 + x * 2 + c) as f32 * 0.2).cos() * 0.5);
        let regions: BTreeMap<usize, BlendRegion> =
            (0..4).map(|t| (t, BlendRegion::rect(1, 2, 5, 5))).collect();
        let base = blend_clip(&orig, &generated, &regions, 1e-9).unwrap();
        let mut changed = generated.clone();
        let frame2: Vec<f32> = changed.frame(2).iter().map(|v| -v).collect();
        changed.set_frame(2, &frame2).unwrap();
        let other = blend_clip(&orig, &changed, &regions, 1e-9).unwrap();
        for t in 0..4 {
            assert_eq!(base.frame(t) == other.frame(t), t != 2, "frame {t}");
        }
        let empty: BTreeMap<usize, BlendRegion> =
            (0..4).map(|t| (t, BlendRegion::rect(1, 1, 2, 2))).collect();
        assert_eq!(blend_clip(&orig, &generated, &empty, 1e-9).unwrap(), orig);
        let same = blend_clip(&orig, &orig, &regions, 1e-9).unwrap();
        for (a, b) in same.data().iter().zip(orig.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sidecar_parsing() {
        let s: RegionSidecar =
            serde_json::from_str(r#"{"0": [1, 2, 5, 6], "3": [0, 0, 4, 4]}"#).unwrap();
        let r = s.regions().unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[&0].height, 5);
        assert_eq!(r[&3].interior_len(), 4);
        let bad: RegionSidecar = serde_json::from_str(r#"{"x": [1, 2, 5, 6]}"#).unwrap();
        assert!(bad.regions().is_err());
    }
}
