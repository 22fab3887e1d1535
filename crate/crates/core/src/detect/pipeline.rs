//! Construction of per-octave joint DoG volumes in either operator order.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use super::extrema::JointVolume;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::motion::{accumulate_frames, SlopeGrid};
use crate::scale_space::{dog_planes, octave_planes, Plane, ScaleSpaceParams, VALID_CERTAINTY};

/// Frames with their signed offsets to the reference frame.
pub(crate) struct Frames<'a> {
    pub frames: &'a [Image],
    pub offsets: Vec<i64>,
}

impl Frames<'_> {
    fn len(&self) -> usize {
        self.frames.len()
    }
}

/// Shift-sum along `slope` where only pixels covered by every frame are
/// certain.
pub(crate) fn full_coverage_plane(frames: &Frames, slope: (f64, f64)) -> Plane {
    let (w, h) = frames.frames[0].dims();
    let sum = accumulate_frames(frames.frames, &frames.offsets, slope);
    let n = frames.len() as u16;
    Plane {
        w,
        h,
        cert: sum.counts.iter().map(|&c| if c == n { 1.0 } else { 0.0 }).collect(),
        data: sum.data,
    }
}

pub(crate) fn seed_from_plane(mut p: Plane, params: &ScaleSpaceParams) -> Plane {
    if params.upsample {
        p = p.upsample2();
    }
    p.blur(params.initial_blur())
}

fn write_dogs(dogs: &[Plane], data: &mut [f32], valid: &mut [bool]) {
    let n = dogs[0].w * dogs[0].h;
    for (l, d) in dogs.iter().enumerate() {
        data[l * n..(l + 1) * n].copy_from_slice(&d.data);
        for (v, &c) in valid[l * n..(l + 1) * n].iter_mut().zip(&d.cert) {
            *v = c >= VALID_CERTAINTY;
        }
    }
}

fn cells(grid: &SlopeGrid) -> Vec<(f64, f64)> {
    grid.iter().map(|(_, _, s)| s).collect()
}

fn check_cells(cells: &[Plane], grid: &SlopeGrid) -> Result<()> {
    for (p, (_, _, s)) in cells.iter().zip(grid.iter()) {
        if p.cert.iter().all(|&c| c < VALID_CERTAINTY) {
            return Err(Error::NoValidPixels(s.0, s.1));
        }
    }
    Ok(())
}

/// Motion first: shift-sum every slope, then build each slope's pyramid.
pub(crate) fn motion_first(
    frames: &Frames,
    grid: &SlopeGrid,
    params: &ScaleSpaceParams,
    mut visit: impl FnMut(usize, &JointVolume) -> Result<()>,
) -> Result<()> {
    let slopes = cells(grid);
    let raw: Vec<Plane> = slopes.par_iter().map(|&s| full_coverage_plane(frames, s)).collect();
    check_cells(&raw, grid)?;
    let mut seeds: Vec<Plane> = raw.into_par_iter().map(|p| seed_from_plane(p, params)).collect();
    let (nu, nv) = (grid.slopes_u().len(), grid.slopes_v().len());
    for o in 0..params.octaves {
        let (w, h) = (seeds[0].w, seeds[0].h);
        let mut vol = JointVolume::new(w, h, params.dog_levels(), nu, nv);
        vol.cells_mut()
            .into_par_iter()
            .zip(seeds.par_iter_mut())
            .for_each(|((data, valid), seed)| {
                let planes = octave_planes(std::mem::replace(seed, Plane::empty()), params);
                write_dogs(&dog_planes(&planes), data, valid);
                *seed = planes[params.levels_per_octave].decimate(0, 0);
            });
        visit(o, &vol)?;
    }
    Ok(())
}

/// One tap of a shift decomposed onto the polyphase grid of an octave:
/// base-grid shift `b` maps to phase `b mod M` at index offset `b div M`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Tap {
    phase: usize,
    offset: i64,
    weight: f64,
}

fn taps(d: f64, m: i64) -> Vec<Tap> {
    let b = d.floor();
    let f = d - b;
    let b = b as i64;
    let tap = |b: i64, weight: f64| Tap {
        phase: b.rem_euclid(m) as usize,
        offset: b.div_euclid(m),
        weight,
    };
    if f > 0.0 {
        vec![tap(b, 1.0 - f), tap(b + 1, f)]
    } else {
        vec![tap(b, 1.0)]
    }
}

struct PhaseOctave {
    dogs: Vec<Plane>,
    next: Plane,
}

/// Scale first: every frame gets its own polyphase pyramid; the DoG
/// slices are shift-summed per slope at each octave's resolution.
///
/// At octave `o` a base-grid shift `b` of a frame lands on the phase
/// `b mod 2^o` decimation chain of that frame. For integer slopes this
/// reproduces the motion-first volume in the image interior; fractional
/// shifts interpolate linearly between adjacent phases.
pub(crate) fn scale_first(
    frames: &Frames,
    grid: &SlopeGrid,
    params: &ScaleSpaceParams,
    mut visit: impl FnMut(usize, &JointVolume) -> Result<()>,
) -> Result<()> {
    let slopes = cells(grid);
    let base_scale = if params.upsample { 2.0 } else { 1.0 };
    let n = frames.len();
    // Base-grid shift per (cell, frame).
    let shifts: Vec<Vec<(f64, f64)>> = slopes
        .iter()
        .map(|s| {
            frames
                .offsets
                .iter()
                .map(|&k| (s.0 * k as f64 * base_scale, s.1 * k as f64 * base_scale))
                .collect()
        })
        .collect();
    {
        let raw: Vec<Plane> = slopes.par_iter().map(|&s| full_coverage_plane(frames, s)).collect();
        check_cells(&raw, grid)?;
    }
    let (nu, nv) = (grid.slopes_u().len(), grid.slopes_v().len());
    let mut prev: Vec<HashMap<(usize, usize), Plane>> = frames
        .frames
        .par_iter()
        .map(|f| HashMap::from([((0, 0), seed_from_plane(Plane::from_image(f), params))]))
        .collect();
    let (mut w, mut h) = (prev[0][&(0, 0)].w, prev[0][&(0, 0)].h);
    for o in 0..params.octaves {
        let m = 1i64 << o;
        let needed: Vec<BTreeSet<(usize, usize)>> = (0..n)
            .map(|t| {
                let mut set = BTreeSet::new();
                for cell in &shifts {
                    let (dx, dy) = cell[t];
                    for tx in taps(dx, m) {
                        for ty in taps(dy, m) {
                            set.insert((tx.phase, ty.phase));
                        }
                    }
                }
                set
            })
            .collect();
        let half = (m / 2).max(1) as usize;
        let current: Vec<HashMap<(usize, usize), PhaseOctave>> = needed
            .par_iter()
            .zip(prev.par_iter())
            .map(|(set, parents)| {
                set.iter()
                    .map(|&(rx, ry)| {
                        let seed = if o == 0 {
                            parents[&(0, 0)].clone()
                        } else {
                            let parent = &parents[&(rx % half, ry % half)];
                            parent.decimate((rx >> (o - 1)) & 1, (ry >> (o - 1)) & 1)
                        };
                        let planes = octave_planes(seed, params);
                        let dogs = dog_planes(&planes);
                        let next = planes.into_iter().nth(params.levels_per_octave).unwrap();
                        ((rx, ry), PhaseOctave { dogs, next })
                    })
                    .collect()
            })
            .collect();
        drop(prev);

        let mut vol = JointVolume::new(w, h, params.dog_levels(), nu, nv);
        let plane_n = w * h;
        vol.cells_mut()
            .into_par_iter()
            .zip(shifts.par_iter())
            .for_each(|((data, valid), cell)| {
                let mut acc = vec![0.0f64; plane_n];
                for l in 0..params.dog_levels() {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    let vd = &mut valid[l * plane_n..(l + 1) * plane_n];
                    vd.iter_mut().for_each(|v| *v = true);
                    for (t, &(dx, dy)) in cell.iter().enumerate() {
                        for tx in taps(dx, m) {
                            for ty in taps(dy, m) {
                                let p = &current[t][&(tx.phase, ty.phase)].dogs[l];
                                accumulate_tap(p, tx.offset, ty.offset, tx.weight * ty.weight, w, h, &mut acc, vd);
                            }
                        }
                    }
                    let dd = &mut data[l * plane_n..(l + 1) * plane_n];
                    for (d, a) in dd.iter_mut().zip(&acc) {
                        *d = (a / n as f64) as f32;
                    }
                }
            });
        visit(o, &vol)?;

        prev = current
            .into_iter()
            .map(|phases| phases.into_iter().map(|(k, v)| (k, v.next)).collect())
            .collect();
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn accumulate_tap(p: &Plane, ex: i64, ey: i64, weight: f64, w: usize, h: usize, acc: &mut [f64], valid: &mut [bool]) {
    for y in 0..h {
        let sy = y as i64 + ey;
        let row = &mut valid[y * w..(y + 1) * w];
        let arow = &mut acc[y * w..(y + 1) * w];
        if sy < 0 || sy >= p.h as i64 {
            row.iter_mut().for_each(|v| *v = false);
            continue;
        }
        let base = sy as usize * p.w;
        for x in 0..w {
            let sx = x as i64 + ex;
            if sx < 0 || sx >= p.w as i64 {
                row[x] = false;
                continue;
            }
            let i = base + sx as usize;
            if p.cert[i] < VALID_CERTAINTY {
                row[x] = false;
            } else {
                arow[x] += weight * p.data[i] as f64;
            }
        }
    }
}
