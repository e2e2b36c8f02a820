//! Permutohedral lattice for high-dimensional Gaussian filtering.
//!
//! Points are lifted onto the `(d+1)`-dimensional permutohedral lattice,
//! splatted onto the vertices of their enclosing simplex with barycentric
//! weights, blurred with a `[1/2, 1, 1/2]` kernel along each of the `d+1`
//! lattice directions, and sliced back. The result approximates, up to a
//! global scale, `Σ_j exp(-|f_i - f_j|² / 2) v_j` for features `f`.

use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone)]
pub struct Lattice {
    dim: usize,
    vertices: usize,
    /// For every input point, `dim + 1` (vertex index, weight) pairs.
    splat: Vec<(usize, f64)>,
    /// Per-direction neighbour lists: `(vertex, minus, plus)` with
    /// `usize::MAX` for a missing neighbour.
    blur: Vec<Vec<(usize, usize)>>,
}

const MISSING: usize = usize::MAX;

impl Lattice {
    /// `features` holds `points * dim` coordinates, already divided by the
    /// kernel bandwidths.
    #[allow(clippy::needless_range_loop)]
    pub fn new(features: &[f64], dim: usize) -> Self {
        assert!(dim > 0 && features.len().is_multiple_of(dim));
        let points = features.len() / dim;
        let d1 = dim + 1;

        let inv_std = (2.0f64 / 3.0).sqrt() * d1 as f64;
        let scale: Vec<f64> = (0..dim)
            .map(|i| inv_std / (((i + 1) * (i + 2)) as f64).sqrt())
            .collect();

        let mut table: HashMap<Vec<i32>, usize> = HashMap::new();
        let mut keys: Vec<Vec<i32>> = Vec::new();
        let mut splat = Vec::with_capacity(points * d1);

        let mut elevated = vec![0.0; d1];
        let mut rem0 = vec![0i32; d1];
        let mut rank = vec![0i32; d1];
        let mut bary = vec![0.0; d1 + 1];
        let mut key = vec![0i32; dim];

        for p in 0..points {
            let f = &features[p * dim..(p + 1) * dim];

            let mut sm = 0.0;
            for j in (1..=dim).rev() {
                let cf = f[j - 1] * scale[j - 1];
                elevated[j] = sm - j as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            // Nearest remainder-zero lattice point.
            let mut sum = 0i32;
            for j in 0..d1 {
                let v = elevated[j] / d1 as f64;
                let up = v.ceil() * d1 as f64;
                let down = v.floor() * d1 as f64;
                rem0[j] = if up - elevated[j] < elevated[j] - down {
                    up as i32
                } else {
                    down as i32
                };
                sum += rem0[j];
            }
            sum /= d1 as i32;

            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..dim {
                let di = elevated[i] - rem0[i] as f64;
                for j in i + 1..d1 {
                    if di < elevated[j] - rem0[j] as f64 {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }

            if sum > 0 {
                for i in 0..d1 {
                    if rank[i] >= d1 as i32 - sum {
                        rem0[i] -= d1 as i32;
                        rank[i] += sum - d1 as i32;
                    } else {
                        rank[i] += sum;
                    }
                }
            } else if sum < 0 {
                for i in 0..d1 {
                    if rank[i] < -sum {
                        rem0[i] += d1 as i32;
                        rank[i] += d1 as i32 + sum;
                    } else {
                        rank[i] += sum;
                    }
                }
            }

            bary.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..d1 {
                let v = (elevated[i] - rem0[i] as f64) / d1 as f64;
                bary[dim - rank[i] as usize] += v;
                bary[d1 - rank[i] as usize] -= v;
            }
            bary[0] += 1.0 + bary[d1];

            for r in 0..d1 {
                for i in 0..dim {
                    let rk = rank[i] as usize;
                    let offset = if rk <= dim - r {
                        r as i32
                    } else {
                        r as i32 - d1 as i32
                    };
                    key[i] = rem0[i] + offset;
                }
                let idx = match table.get(&key) {
                    Some(&idx) => idx,
                    None => {
                        let idx = keys.len();
                        keys.push(key.clone());
                        table.insert(key.clone(), idx);
                        idx
                    }
                };
                splat.push((idx, bary[r]));
            }
        }

        let vertices = keys.len();
        let mut blur = Vec::with_capacity(d1);
        let mut n1 = vec![0i32; dim];
        let mut n2 = vec![0i32; dim];
        for j in 0..d1 {
            let mut neighbours = Vec::with_capacity(vertices);
            for k in &keys {
                for l in 0..dim {
                    n1[l] = k[l] + 1;
                    n2[l] = k[l] - 1;
                }
                if j < dim {
                    n1[j] = k[j] - dim as i32;
                    n2[j] = k[j] + dim as i32;
                }
                let a = table.get(&n1).copied().unwrap_or(MISSING);
                let b = table.get(&n2).copied().unwrap_or(MISSING);
                neighbours.push((a, b));
            }
            blur.push(neighbours);
        }

        Self {
            dim,
            vertices,
            splat,
            blur,
        }
    }

    pub fn points(&self) -> usize {
        self.splat.len() / (self.dim + 1)
    }

    /// Response of each point to its own unit input: the diagonal of the
    /// splat-blur-slice operator. Computed by propagating each vertex's
    /// impulse through the blur passes over the existing vertices only.
    pub fn self_response(&self) -> Vec<f64> {
        let d1 = self.dim + 1;
        let points = self.points();
        let mut targets: Vec<Vec<usize>> = vec![Vec::new(); self.vertices];
        for p in 0..points {
            let simplex = &self.splat[p * d1..(p + 1) * d1];
            for &(u, _) in simplex {
                targets[u].extend(simplex.iter().map(|s| s.0));
            }
        }

        let mut entries: HashMap<(usize, usize), f64> = HashMap::new();
        let mut current: BTreeMap<usize, f64> = BTreeMap::new();
        let mut next: BTreeMap<usize, f64> = BTreeMap::new();
        for (u, wanted) in targets.iter_mut().enumerate() {
            if wanted.is_empty() {
                continue;
            }
            wanted.sort_unstable();
            wanted.dedup();
            current.clear();
            current.insert(u, 1.0);
            for neighbours in &self.blur {
                next.clear();
                for (&v, &val) in &current {
                    *next.entry(v).or_insert(0.0) += val;
                    let (a, b) = neighbours[v];
                    for n in [a, b] {
                        if n != MISSING {
                            *next.entry(n).or_insert(0.0) += 0.5 * val;
                        }
                    }
                }
                std::mem::swap(&mut current, &mut next);
            }
            for &v in wanted.iter() {
                entries.insert((u, v), current.get(&v).copied().unwrap_or(0.0));
            }
        }

        let alpha = self.slice_scale();
        (0..points)
            .map(|p| {
                let simplex = &self.splat[p * d1..(p + 1) * d1];
                let mut total = 0.0;
                for &(src, ws) in simplex {
                    for &(dst, wd) in simplex {
                        total += ws * wd * entries[&(src, dst)];
                    }
                }
                alpha * total
            })
            .collect()
    }

    fn slice_scale(&self) -> f64 {
        1.0 / (1.0 + 0.5f64.powi(self.dim as i32))
    }

    /// Filters `channels` values per point (point-major layout).
    pub fn filter(&self, input: &[f64], channels: usize) -> Vec<f64> {
        let d1 = self.dim + 1;
        let points = self.points();
        assert_eq!(input.len(), points * channels);

        let mut values = vec![0.0; self.vertices * channels];
        for p in 0..points {
            let v = &input[p * channels..(p + 1) * channels];
            for &(vertex, w) in &self.splat[p * d1..(p + 1) * d1] {
                let dst = &mut values[vertex * channels..(vertex + 1) * channels];
                for (d, s) in dst.iter_mut().zip(v) {
                    *d += w * s;
                }
            }
        }

        let mut scratch = vec![0.0; values.len()];
        for neighbours in &self.blur {
            for (vertex, &(a, b)) in neighbours.iter().enumerate() {
                let out = &mut scratch[vertex * channels..(vertex + 1) * channels];
                out.copy_from_slice(&values[vertex * channels..(vertex + 1) * channels]);
                for n in [a, b] {
                    if n != MISSING {
                        let src = &values[n * channels..(n + 1) * channels];
                        for (o, s) in out.iter_mut().zip(src) {
                            *o += 0.5 * s;
                        }
                    }
                }
            }
            std::mem::swap(&mut values, &mut scratch);
        }

        let alpha = self.slice_scale();
        let mut out = vec![0.0; points * channels];
        for p in 0..points {
            let dst = &mut out[p * channels..(p + 1) * channels];
            for &(vertex, w) in &self.splat[p * d1..(p + 1) * d1] {
                let src = &values[vertex * channels..(vertex + 1) * channels];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += alpha * w * s;
                }
            }
        }
        out
    }
}
