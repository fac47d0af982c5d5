use std::io::{Read, Write};

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::skeleton::Pose2D;

const MAGIC: &[u8; 4] = b"DSUM";
pub const UNARY_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Loaded,
    Synthetic,
}

/// Per-joint score grids over the image.
///
/// Cell `(u, v)` sits at pixel `(u * stride, v * stride)`. Scores are
/// non-negative and unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryMap {
    width: usize,
    height: usize,
    stride: f64,
    grids: Vec<Vec<f32>>,
    provenance: Provenance,
}

/// How synthetic score maps are rendered around known joint locations.
#[derive(Debug, Clone, PartialEq)]
pub struct UnarySynthesis {
    pub width: usize,
    pub height: usize,
    pub stride: f64,
    /// Gaussian spread in pixels; zero renders a single hot cell.
    pub sigma_px: f64,
    /// Constant added to every cell.
    pub background: f64,
    /// Joints whose peak is displaced, and the displacement in pixels.
    pub corrupted: Vec<usize>,
    pub corruption_offset: Vector2<f64>,
    /// Spurious peaks: joint, centre in pixels, amplitude relative to the
    /// true peak.
    pub distractors: Vec<(usize, Vector2<f64>, f64)>,
}

impl Default for UnarySynthesis {
    fn default() -> Self {
        UnarySynthesis {
            width: 160,
            height: 120,
            stride: 4.0,
            sigma_px: 2.0,
            background: 1e-3,
            corrupted: Vec::new(),
            corruption_offset: Vector2::zeros(),
            distractors: Vec::new(),
        }
    }
}

/// Adds one Gaussian bump (or a single hot cell when `sigma_px` is zero).
fn splat(grid: &mut [f32], spec: &UnarySynthesis, center: Vector2<f64>, amplitude: f64) {
    if spec.sigma_px > 0.0 {
        let inv = 1.0 / (2.0 * spec.sigma_px * spec.sigma_px);
        for v in 0..spec.height {
            for u in 0..spec.width {
                let d = Vector2::new(u as f64, v as f64) * spec.stride - center;
                grid[v * spec.width + u] += (amplitude * (-d.norm_squared() * inv).exp()) as f32;
            }
        }
    } else {
        let u = (center.x / spec.stride).round();
        let v = (center.y / spec.stride).round();
        if u >= 0.0 && v >= 0.0 && (u as usize) < spec.width && (v as usize) < spec.height {
            grid[v as usize * spec.width + u as usize] += amplitude as f32;
        }
    }
}

impl UnaryMap {
    pub fn new(
        width: usize,
        height: usize,
        stride: f64,
        grids: Vec<Vec<f32>>,
        provenance: Provenance,
    ) -> Result<UnaryMap> {
        if width == 0 || height == 0 || !(stride > 0.0) {
            return Err(Error::InvalidParameter("unary grid must be non-empty with positive stride".into()));
        }
        for (j, g) in grids.iter().enumerate() {
            if g.len() != width * height {
                return Err(Error::Format(format!("joint {j}: grid has {} cells", g.len())));
            }
            if g.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Format(format!("joint {j}: scores must be finite and >= 0")));
            }
            if !g.iter().any(|v| *v > 0.0) {
                return Err(Error::DeadJoint(j));
            }
        }
        Ok(UnaryMap {
            width,
            height,
            stride,
            grids,
            provenance,
        })
    }

    /// Renders Gaussian score maps around `joints`.
    pub fn synthesize(joints: &Pose2D, spec: &UnarySynthesis) -> Result<UnaryMap> {
        let mut grids = Vec::with_capacity(joints.len());
        for (j, &p) in joints.joints.iter().enumerate() {
            let center = if spec.corrupted.contains(&j) {
                p + spec.corruption_offset
            } else {
                p
            };
            let mut grid = vec![spec.background as f32; spec.width * spec.height];
            splat(&mut grid, spec, center, 1.0);
            for &(_, c, a) in spec.distractors.iter().filter(|d| d.0 == j) {
                splat(&mut grid, spec, c, a);
            }
            grids.push(grid);
        }
        UnaryMap::new(spec.width, spec.height, spec.stride, grids, Provenance::Synthetic)
    }

    pub fn num_joints(&self) -> usize {
        self.grids.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn grid(&self, joint: usize) -> &[f32] {
        &self.grids[joint]
    }

    pub fn cell(&self, joint: usize, u: usize, v: usize) -> f64 {
        f64::from(self.grids[joint][v * self.width + u])
    }

    pub fn cell_position(&self, u: usize, v: usize) -> Vector2<f64> {
        Vector2::new(u as f64, v as f64) * self.stride
    }

    /// Bilinear interpolation at pixel `p`, zero outside the grid.
    pub fn sample(&self, joint: usize, p: Vector2<f64>) -> f64 {
        let gx = p.x / self.stride;
        let gy = p.y / self.stride;
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        if !(gx >= 0.0 && gy >= 0.0 && gx <= max_u && gy <= max_v) {
            return 0.0;
        }
        let u0 = gx.floor() as usize;
        let v0 = gy.floor() as usize;
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let fx = gx - u0 as f64;
        let fy = gy - v0 as f64;
        let top = self.cell(joint, u0, v0) * (1.0 - fx) + self.cell(joint, u1, v0) * fx;
        let bottom = self.cell(joint, u0, v1) * (1.0 - fx) + self.cell(joint, u1, v1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Highest-scoring cell position (first in row-major order on ties).
    pub fn argmax(&self, joint: usize) -> Vector2<f64> {
        let g = &self.grids[joint];
        let mut best = 0;
        for (i, v) in g.iter().enumerate() {
            if *v > g[best] {
                best = i;
            }
        }
        self.cell_position(best % self.width, best / self.width)
    }

    /// Up to `n` local maxima (8-neighbourhood, plateaus keep their first
    /// cell) with positive score above the grid minimum, best first.
    pub fn local_maxima(&self, joint: usize, n: usize) -> Vec<Vector2<f64>> {
        let g = &self.grids[joint];
        let (w, h) = (self.width as isize, self.height as isize);
        let floor = g.iter().copied().fold(f32::INFINITY, f32::min);
        let constant = g.iter().all(|v| *v == floor);
        let mut peaks: Vec<(f32, usize)> = Vec::new();
        for v in 0..h {
            for u in 0..w {
                let idx = (v * w + u) as usize;
                let val = g[idx];
                if val <= 0.0 || (val <= floor && !constant) {
                    continue;
                }
                let mut is_peak = true;
                'nb: for dv in -1..=1 {
                    for du in -1..=1 {
                        if du == 0 && dv == 0 {
                            continue;
                        }
                        let (nu, nv) = (u + du, v + dv);
                        if nu < 0 || nv < 0 || nu >= w || nv >= h {
                            continue;
                        }
                        let other = g[(nv * w + nu) as usize];
                        let earlier = (nv, nu) < (v, u);
                        if other > val || (other == val && earlier) {
                            is_peak = false;
                            break 'nb;
                        }
                    }
                }
                if is_peak {
                    peaks.push((val, idx));
                }
            }
        }
        peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        peaks
            .into_iter()
            .take(n)
            .map(|(_, i)| self.cell_position(i % self.width, i / self.width))
            .collect()
    }

    /// Cells whose score is at or above the given quantile of the joint's
    /// grid and strictly above its minimum, best first, capped at `max`.
    /// A constant grid yields its first cell.
    pub fn cells_above_quantile(&self, joint: usize, quantile: f64, max: usize) -> Vec<Vector2<f64>> {
        let g = &self.grids[joint];
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
        let floor = g[order[order.len() - 1]];
        let q_rank = ((1.0 - quantile.clamp(0.0, 1.0)) * (g.len() - 1) as f64).round() as usize;
        let threshold = g[order[q_rank.min(g.len() - 1)]];
        let mut out: Vec<Vector2<f64>> = order
            .iter()
            .take_while(|&&i| g[i] >= threshold && g[i] > floor)
            .take(max.max(1))
            .map(|&i| self.cell_position(i % self.width, i / self.width))
            .collect();
        if out.is_empty() {
            out.push(self.cell_position(order[0] % self.width, order[0] / self.width));
        }
        out
    }

    /// Writes the `DSUM` layout: magic, u16 version, u16 joints, u32 width,
    /// u32 height, f32 stride, then row-major f32 grids per joint, all
    /// little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&UNARY_VERSION.to_le_bytes())?;
        let joints = u16::try_from(self.grids.len()).map_err(|_| Error::Format("too many joints".into()))?;
        w.write_all(&joints.to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.stride as f32).to_le_bytes())?;
        for g in &self.grids {
            for v in g {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<UnaryMap> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a unary map file (bad magic)".into()));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != UNARY_VERSION {
            return Err(Error::Version {
                what: "unary map",
                found: version,
                expected: UNARY_VERSION,
            });
        }
        r.read_exact(&mut b2)?;
        let joints = u16::from_le_bytes(b2) as usize;
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let width = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let height = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let stride = f64::from(f32::from_le_bytes(b4));
        if width.saturating_mul(height) > 1 << 28 {
            return Err(Error::Format("grid too large".into()));
        }
        let mut grids = Vec::with_capacity(joints);
        let mut buf = vec![0u8; width * height * 4];
        for _ in 0..joints {
            r.read_exact(&mut buf)?;
            grids.push(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
        UnaryMap::new(width, height, stride, grids, Provenance::Loaded)
    }
}
