//! Strict extrema over the joint (space, scale, slope) neighborhood.

/// DoG samples of one octave indexed by `(x, y, level, slope_u, slope_v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointVolume {
    width: usize,
    height: usize,
    levels: usize,
    n_u: usize,
    n_v: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl JointVolume {
    pub fn new(width: usize, height: usize, levels: usize, n_u: usize, n_v: usize) -> Self {
        let n = width * height * levels * n_u * n_v;
        JointVolume {
            width,
            height,
            levels,
            n_u,
            n_v,
            data: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        levels: usize,
        n_u: usize,
        n_v: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize) -> (f32, bool),
    ) -> Self {
        let mut vol = Self::new(width, height, levels, n_u, n_v);
        for iv in 0..n_v {
            for iu in 0..n_u {
                for l in 0..levels {
                    for y in 0..height {
                        for x in 0..width {
                            let i = vol.index(x, y, l, iu, iv);
                            let (v, ok) = f(x, y, l, iu, iv);
                            vol.data[i] = v;
                            vol.valid[i] = ok;
                        }
                    }
                }
            }
        }
        vol
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn slopes_u(&self) -> usize {
        self.n_u
    }

    pub fn slopes_v(&self) -> usize {
        self.n_v
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, l: usize, iu: usize, iv: usize) -> usize {
        (((iv * self.n_u + iu) * self.levels + l) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, l: usize, iu: usize, iv: usize) -> f32 {
        self.data[self.index(x, y, l, iu, iv)]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize, l: usize, iu: usize, iv: usize) -> bool {
        self.valid[self.index(x, y, l, iu, iv)]
    }

    /// Mutable `(data, valid)` slices of one `width x height` slice.
    #[cfg(test)]
    pub(crate) fn slice_mut(&mut self, l: usize, iu: usize, iv: usize) -> (&mut [f32], &mut [bool]) {
        let n = self.width * self.height;
        let start = self.index(0, 0, l, iu, iv);
        (&mut self.data[start..start + n], &mut self.valid[start..start + n])
    }

    /// Per slope cell `(data, valid)` slices, row-major over `(iv, iu)`.
    pub(crate) fn cells_mut(&mut self) -> Vec<(&mut [f32], &mut [bool])> {
        let cell = self.levels * self.width * self.height;
        self.data.chunks_mut(cell).zip(self.valid.chunks_mut(cell)).collect()
    }
}

/// Integer sample location in a [`JointVolume`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Candidate {
    pub x: usize,
    pub y: usize,
    pub level: usize,
    pub slope_u: usize,
    pub slope_v: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtremaOptions {
    /// Allow extrema on the first/last slope of an axis, comparing only
    /// against the neighbors that exist.
    pub slope_boundary: bool,
    /// Skip samples with `|value| < min_abs`.
    pub min_abs: f32,
}

impl Default for ExtremaOptions {
    fn default() -> Self {
        ExtremaOptions {
            slope_boundary: false,
            min_abs: 0.0,
        }
    }
}

fn axis_range(n: usize, boundary: bool) -> std::ops::Range<usize> {
    match (n, boundary) {
        (1, _) => 0..1,
        (_, true) => 0..n,
        (_, false) => 1..n - 1,
    }
}

/// Returns samples that are strictly greater (or strictly smaller) than
/// every neighbor in the `3 x 3` spatial, 3-level, 3-per-active-slope-axis
/// neighborhood. Slope axes with a single sample are inactive. Level and
/// spatial boundaries never host extrema. Any masked sample in the
/// neighborhood disqualifies the candidate.
pub fn find_joint_extrema(vol: &JointVolume, opts: &ExtremaOptions) -> Vec<Candidate> {
    let (w, h, levels) = (vol.width, vol.height, vol.levels);
    if w < 3 || h < 3 || levels < 3 {
        return Vec::new();
    }
    if (vol.n_u == 2 || vol.n_v == 2) && !opts.slope_boundary {
        return Vec::new();
    }
    let stride_x = 1isize;
    let stride_y = w as isize;
    let stride_l = (w * h) as isize;
    let stride_u = stride_l * levels as isize;
    let stride_v = stride_u * vol.n_u as isize;

    let mut out = Vec::new();
    for iv in axis_range(vol.n_v, opts.slope_boundary) {
        for iu in axis_range(vol.n_u, opts.slope_boundary) {
            let du: Vec<isize> = match vol.n_u {
                1 => vec![0],
                n => (-1isize..=1).filter(|d| (0..n as isize).contains(&(iu as isize + d))).collect(),
            };
            let dv: Vec<isize> = match vol.n_v {
                1 => vec![0],
                n => (-1isize..=1).filter(|d| (0..n as isize).contains(&(iv as isize + d))).collect(),
            };
            // Same-slice spatial neighbors first: they reject most samples.
            let mut offsets = Vec::with_capacity(242);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx != 0 || dy != 0 {
                        offsets.push(dx * stride_x + dy * stride_y);
                    }
                }
            }
            for &a in &dv {
                for &b in &du {
                    for dl in -1isize..=1 {
                        if a == 0 && b == 0 && dl == 0 {
                            continue;
                        }
                        for dy in -1isize..=1 {
                            for dx in -1isize..=1 {
                                offsets.push(
                                    a * stride_v + b * stride_u + dl * stride_l + dy * stride_y + dx * stride_x,
                                );
                            }
                        }
                    }
                }
            }
            for l in 1..levels - 1 {
                for y in 1..h - 1 {
                    let row = vol.index(0, y, l, iu, iv);
                    for x in 1..w - 1 {
                        let c = row + x;
                        let v = vol.data[c];
                        if !vol.valid[c] || v.abs() < opts.min_abs {
                            continue;
                        }
                        let first = vol.data[(c as isize + offsets[0]) as usize];
                        let is_max = if v > first {
                            true
                        } else if v < first {
                            false
                        } else {
                            continue;
                        };
                        let strict = offsets.iter().all(|&o| {
                            let j = (c as isize + o) as usize;
                            let n = vol.data[j];
                            vol.valid[j] && if is_max { v > n } else { v < n }
                        });
                        if strict {
                            out.push(Candidate {
                                x,
                                y,
                                level: l,
                                slope_u: iu,
                                slope_v: iv,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}
