//! Independent reference implementations used as test oracles. Each one is
//! written the slow, obvious way and shares no code with the library paths
//! it checks.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};

use biliseg::phantom::PhantomParams;
use biliseg::{Dims, Mask, Spacing, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dims(nx: usize, ny: usize, nz: usize) -> Dims {
    Dims::new(nx, ny, nz).unwrap()
}

pub fn random_mask(r: &mut impl Rng, d: Dims, spacing: Spacing, density: f64) -> Mask {
    let data = (0..d.len()).map(|_| r.random::<f64>() < density).collect();
    Mask::new(d, spacing, data).unwrap()
}

pub fn random_nonempty_mask(r: &mut impl Rng, d: Dims, spacing: Spacing, density: f64) -> Mask {
    loop {
        let m = random_mask(r, d, spacing, density);
        if !m.is_empty() {
            return m;
        }
    }
}

pub fn coords(d: Dims, i: usize) -> [usize; 3] {
    [i % d.nx, (i / d.nx) % d.ny, i / (d.nx * d.ny)]
}

pub fn lin(d: Dims, c: [usize; 3]) -> usize {
    c[0] + d.nx * (c[1] + d.ny * c[2])
}

pub fn world(m: &Mask, i: usize) -> [f64; 3] {
    let c = coords(m.dims(), i);
    let s = m.spacing();
    [c[0] as f64 * s.dx, c[1] as f64 * s.dy, c[2] as f64 * s.dz]
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn members(m: &Mask) -> Vec<usize> {
    (0..m.data().len()).filter(|&i| m.data()[i]).collect()
}

/// Neighbour test by coordinate difference.
pub fn adjacent(a: [usize; 3], b: [usize; 3], max_l1: usize, planar: bool) -> bool {
    let d: Vec<usize> = (0..3).map(|k| a[k].abs_diff(b[k])).collect();
    if d.iter().any(|&x| x > 1) || d.iter().all(|&x| x == 0) {
        return false;
    }
    if planar && d[2] != 0 {
        return false;
    }
    d.iter().sum::<usize>() <= max_l1
}

/// Component partition via union-find over all pairs of foreground voxels.
pub fn union_find_components(m: &Mask, max_l1: usize) -> Vec<BTreeSet<usize>> {
    let fg = members(m);
    let mut parent: Vec<usize> = (0..fg.len()).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let n = p[c];
            p[c] = r;
            c = n;
        }
        r
    }
    let d = m.dims();
    for i in 0..fg.len() {
        for j in i + 1..fg.len() {
            if adjacent(coords(d, fg[i]), coords(d, fg[j]), max_l1, false) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: HashMap<usize, BTreeSet<usize>> = HashMap::new();
    for i in 0..fg.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().insert(fg[i]);
    }
    let mut out: Vec<_> = groups.into_values().collect();
    out.sort();
    out
}

pub fn set_dice(x: &Mask, y: &Mask) -> f64 {
    let a: BTreeSet<usize> = members(x).into_iter().collect();
    let b: BTreeSet<usize> = members(y).into_iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64
}

pub fn set_rvd(x: &Mask, y: &Mask) -> f64 {
    let a = members(x).len() as f64;
    let b = members(y).len() as f64;
    (a - b).abs() / b
}

/// O(|X|·|Y|) directed Hausdorff distance.
pub fn brute_directed_hd(x: &Mask, y: &Mask) -> f64 {
    let ys: Vec<[f64; 3]> = members(y).into_iter().map(|i| world(y, i)).collect();
    members(x)
        .into_iter()
        .map(|i| {
            let p = world(x, i);
            ys.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

pub fn brute_hd(x: &Mask, y: &Mask) -> f64 {
    brute_directed_hd(x, y).max(brute_directed_hd(y, x))
}

/// Distance from every voxel to the nearest foreground voxel, by exhaustive search.
pub fn brute_distance_field(m: &Mask) -> Vec<f64> {
    let fg: Vec<[f64; 3]> = members(m).into_iter().map(|i| world(m, i)).collect();
    (0..m.data().len())
        .map(|i| {
            let p = world(m, i);
            fg.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Breadth-first flood fill with an explicit visited set.
pub fn bfs_flood_fill(v: &Volume, seed: [usize; 3], tol: f64, max_l1: usize) -> BTreeSet<usize> {
    let d = v.dims();
    let data = v.data();
    let s = lin(d, seed);
    let reference = data[s] as f64;
    let mut seen = BTreeSet::from([s]);
    let mut queue = VecDeque::from([s]);
    while let Some(cur) = queue.pop_front() {
        let c = coords(d, cur);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let n = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                    if n.iter().zip(d.as_array()).any(|(&x, e)| x < 0 || x >= e as i64) {
                        continue;
                    }
                    let n = [n[0] as usize, n[1] as usize, n[2] as usize];
                    if !adjacent(c, n, max_l1, false) {
                        continue;
                    }
                    let ni = lin(d, n);
                    if !seen.contains(&ni) && (data[ni] as f64 - reference).abs() <= tol {
                        seen.insert(ni);
                        queue.push_back(ni);
                    }
                }
            }
        }
    }
    seen
}

/// Overlap-matrix topology counts: (outliers, missed, false_communicating, false_non_communicating).
pub fn overlap_counts(pred: &Mask, gt: &Mask) -> (usize, usize, usize, usize) {
    let p = union_find_components(pred, 3);
    let g = union_find_components(gt, 3);
    let mut o = vec![vec![0usize; g.len()]; p.len()];
    for (i, pc) in p.iter().enumerate() {
        for (j, gc) in g.iter().enumerate() {
            o[i][j] = pc.intersection(gc).count();
        }
    }
    let outliers = (0..p.len()).filter(|&i| o[i].iter().sum::<usize>() == 0).count();
    let missed = (0..g.len()).filter(|&j| (0..p.len()).all(|i| o[i][j] == 0)).count();
    let fc = (0..p.len())
        .map(|i| o[i].iter().filter(|&&x| x > 0).count().saturating_sub(1))
        .sum();
    let fnc = (0..g.len())
        .map(|j| (0..p.len()).filter(|&i| o[i][j] > 0).count().saturating_sub(1))
        .sum();
    (outliers, missed, fc, fnc)
}

/// Distance from point p to segment [a, b], computed via the closest point.
pub fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]])
}

/// Straight tube along z through (cx, cy) with the given voxel radius.
pub fn tube_truth(d: Dims, cx: f64, cy: f64, radius: f64) -> Mask {
    let data = (0..d.len())
        .map(|i| {
            let c = coords(d, i);
            (c[0] as f64 - cx).powi(2) + (c[1] as f64 - cy).powi(2) <= radius * radius
        })
        .collect();
    Mask::new(d, Spacing::default(), data).unwrap()
}

pub fn two_level_volume(m: &Mask, fg: f32, bg: f32) -> Volume {
    let data = m.data().iter().map(|&b| if b { fg } else { bg }).collect();
    Volume::new(m.dims(), m.spacing(), data).unwrap()
}

pub fn phantom_params(d: Dims, noise_std: f64, seed: u64) -> PhantomParams {
    let sp = Spacing::new(1.0, 1.0, 1.5).unwrap();
    PhantomParams {
        dims: d,
        spacing: sp,
        root: [d.nx as f64 / 2.0, 3.0, d.nz as f64 * sp.dz / 2.0],
        root_direction: [0.0, 1.0, 0.0],
        segment_length: d.ny as f64 / 5.0,
        radius_root: 3.0,
        radius_taper: 0.8,
        branch_probability: 0.6,
        branch_angle: 50.0,
        jitter_angle: 12.0,
        max_depth: 3,
        fg_mean: 200.0,
        bg_mean: 30.0,
        noise_std,
        rng_seed: seed,
    }
}

/// Grid voxel nearest the phantom root point, which lies on the tube axis.
pub fn root_voxel(p: &PhantomParams) -> [usize; 3] {
    let s = p.spacing.as_array();
    [0, 1, 2].map(|a| (p.root[a] / s[a]).round() as usize)
}
