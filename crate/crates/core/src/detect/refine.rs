//! Quadratic subpixel refinement with contrast and edge rejection.

use super::extrema::{Candidate, JointVolume};

const MAX_OFFSET: f64 = 0.6;
const RECENTER_STEPS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineParams {
    pub peak_threshold: f64,
    pub edge_threshold: f64,
}

/// Refined position in the octave's sampling grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refined {
    pub x: f64,
    pub y: f64,
    /// Fractional level.
    pub level: f64,
    /// Integer sample the fit converged on.
    pub at: Candidate,
    pub response: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rejection {
    Singular,
    Unstable,
    LowContrast,
    Edge,
    Masked,
}

struct Fit {
    value: f64,
    grad: [f64; 3],
    hess: [[f64; 3]; 3],
}

fn fit_at(vol: &JointVolume, c: &Candidate) -> Option<Fit> {
    let (iu, iv) = (c.slope_u, c.slope_v);
    let mut n = [[[0.0f64; 3]; 3]; 3];
    for (dl, plane) in n.iter_mut().enumerate() {
        for (dy, row) in plane.iter_mut().enumerate() {
            for (dx, v) in row.iter_mut().enumerate() {
                let (x, y, l) = (c.x + dx - 1, c.y + dy - 1, c.level + dl - 1);
                if !vol.is_valid(x, y, l, iu, iv) {
                    return None;
                }
                *v = vol.get(x, y, l, iu, iv) as f64;
            }
        }
    }
    let d = |dx: usize, dy: usize, dl: usize| n[dl][dy][dx];
    let v = d(1, 1, 1);
    let grad = [
        0.5 * (d(2, 1, 1) - d(0, 1, 1)),
        0.5 * (d(1, 2, 1) - d(1, 0, 1)),
        0.5 * (d(1, 1, 2) - d(1, 1, 0)),
    ];
    let dxx = d(2, 1, 1) + d(0, 1, 1) - 2.0 * v;
    let dyy = d(1, 2, 1) + d(1, 0, 1) - 2.0 * v;
    let dll = d(1, 1, 2) + d(1, 1, 0) - 2.0 * v;
    let dxy = 0.25 * (d(2, 2, 1) - d(2, 0, 1) - d(0, 2, 1) + d(0, 0, 1));
    let dxl = 0.25 * (d(2, 1, 2) - d(2, 1, 0) - d(0, 1, 2) + d(0, 1, 0));
    let dyl = 0.25 * (d(1, 2, 2) - d(1, 2, 0) - d(1, 0, 2) + d(1, 0, 0));
    Some(Fit {
        value: v,
        grad,
        hess: [[dxx, dxy, dxl], [dxy, dyy, dyl], [dxl, dyl, dll]],
    })
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub(crate) fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..3 {
        let p = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[p][col].abs() <= 1e-10 * scale {
            return None;
        }
        m.swap(col, p);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for k in col..4 {
                    m[r][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Fits a quadratic over `(x, y, level)` at fixed slope and re-centers on
/// the neighboring sample up to three times.
pub fn refine_and_filter(cand: &Candidate, vol: &JointVolume, params: &RefineParams) -> Result<Refined, Rejection> {
    let mut c = *cand;
    let bounds = [vol.width(), vol.height(), vol.levels()];
    for step in 0..=RECENTER_STEPS {
        let fit = fit_at(vol, &c).ok_or(Rejection::Masked)?;
        let g = fit.grad;
        let off = solve3(fit.hess, [-g[0], -g[1], -g[2]]).ok_or(Rejection::Singular)?;
        if off.iter().all(|o| o.abs() <= MAX_OFFSET) {
            let response = fit.value + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
            if response.abs() < params.peak_threshold {
                return Err(Rejection::LowContrast);
            }
            let h = fit.hess;
            let tr = h[0][0] + h[1][1];
            let det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
            let r = params.edge_threshold;
            if det <= 0.0 || tr * tr / det >= (r + 1.0) * (r + 1.0) / r {
                return Err(Rejection::Edge);
            }
            return Ok(Refined {
                x: c.x as f64 + off[0],
                y: c.y as f64 + off[1],
                level: c.level as f64 + off[2],
                at: c,
                response,
            });
        }
        if step == RECENTER_STEPS {
            break;
        }
        let mut pos = [c.x, c.y, c.level];
        let mut moved = false;
        for k in 0..3 {
            if off[k] > MAX_OFFSET && pos[k] + 2 < bounds[k] {
                pos[k] += 1;
                moved = true;
            } else if off[k] < -MAX_OFFSET && pos[k] > 1 {
                pos[k] -= 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        c = Candidate {
            x: pos[0],
            y: pos[1],
            level: pos[2],
            ..c
        };
    }
    Err(Rejection::Unstable)
}
