//! Reference implementations used only by tests. Each one follows the most
//! literal reading of its definition and shares no code with the library.

#![allow(dead_code)]

use std::collections::VecDeque;

use replay_forge::{LabelMask, Prng, ProbabilityVolume};

pub type Dims = [usize; 3];

pub fn idx(d: Dims, x: usize, y: usize, z: usize) -> usize {
    (x * d[1] + y) * d[2] + z
}

// ---- random inputs -------------------------------------------------------

pub fn random_dims(rng: &mut Prng, max: usize) -> Dims {
    [
        1 + rng.below(max as u64) as usize,
        1 + rng.below(max as u64) as usize,
        1 + rng.below(max as u64) as usize,
    ]
}

pub fn random_mask(rng: &mut Prng, d: Dims, density: f64) -> LabelMask {
    let data = (0..d.iter().product::<usize>())
        .map(|_| u8::from(rng.next_f64() < density))
        .collect();
    LabelMask::new(d, data).unwrap()
}

/// A few solid boxes; gives masks with interior voxels, unlike iid noise.
pub fn random_blobs(rng: &mut Prng, d: Dims) -> LabelMask {
    let mut m = LabelMask::empty(d).unwrap();
    for _ in 0..1 + rng.below(3) {
        let lo: Vec<usize> = (0..3).map(|a| rng.below(d[a] as u64) as usize).collect();
        let hi: Vec<usize> = (0..3)
            .map(|a| (lo[a] + 1 + rng.below(d[a] as u64) as usize).min(d[a]))
            .collect();
        for x in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for z in lo[2]..hi[2] {
                    m.set(x, y, z, true);
                }
            }
        }
    }
    m
}

pub fn random_prob(rng: &mut Prng, gt: &LabelMask) -> ProbabilityVolume {
    let data = gt
        .data()
        .iter()
        .map(|&g| {
            let r = rng.next_f64() as f32;
            if g != 0 && rng.next_f64() < 0.7 {
                0.5 + 0.5 * r
            } else {
                r
            }
        })
        .collect();
    ProbabilityVolume::new(gt.dims(), data).unwrap()
}

// ---- morphology ----------------------------------------------------------

/// Face-neighbour BFS distance from every voxel of a padded grid to the
/// nearest seed. Padding is one voxel on each side.
fn bfs_padded(d: Dims, seed: impl Fn(isize, isize, isize) -> bool, walk_padding: bool) -> Vec<u32> {
    let p = [d[0] + 2, d[1] + 2, d[2] + 2];
    let inside = |x: usize, y: usize, z: usize| {
        (1..=d[0]).contains(&x) && (1..=d[1]).contains(&y) && (1..=d[2]).contains(&z)
    };
    let mut dist = vec![u32::MAX; p[0] * p[1] * p[2]];
    let mut q = VecDeque::new();
    for x in 0..p[0] {
        for y in 0..p[1] {
            for z in 0..p[2] {
                if seed(x as isize - 1, y as isize - 1, z as isize - 1) {
                    dist[idx(p, x, y, z)] = 0;
                    q.push_back((x, y, z));
                }
            }
        }
    }
    while let Some((x, y, z)) = q.pop_front() {
        let here = dist[idx(p, x, y, z)];
        let steps: [(isize, isize, isize); 6] =
            [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
        for (dx, dy, dz) in steps {
            let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
            if nx < 0 || ny < 0 || nz < 0 {
                continue;
            }
            let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
            if nx >= p[0] || ny >= p[1] || nz >= p[2] {
                continue;
            }
            if !walk_padding && !inside(nx, ny, nz) {
                continue;
            }
            let j = idx(p, nx, ny, nz);
            if dist[j] == u32::MAX {
                dist[j] = here + 1;
                q.push_back((nx, ny, nz));
            }
        }
    }
    dist
}

/// Band via distance transforms: voxels within `outward` steps of the lesion
/// (paths stay inside the volume), minus lesion voxels farther than `inward`
/// steps from any background voxel (outside counts as background).
pub fn band_oracle(gt: &LabelMask, inward: u32, outward: u32) -> Vec<bool> {
    let d = gt.dims();
    let p = [d[0] + 2, d[1] + 2, d[2] + 2];
    let in_gt = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < d[0]
            && (y as usize) < d[1]
            && (z as usize) < d[2]
            && gt.get(x as usize, y as usize, z as usize)
    };
    let to_fg = bfs_padded(d, in_gt, false);
    let to_bg = bfs_padded(d, |x, y, z| !in_gt(x, y, z), true);
    let mut out = vec![false; d.iter().product()];
    for x in 0..d[0] {
        for y in 0..d[1] {
            for z in 0..d[2] {
                let j = idx(p, x + 1, y + 1, z + 1);
                let dilated = to_fg[j] <= outward;
                let eroded = gt.get(x, y, z) && to_bg[j] > inward;
                out[idx(d, x, y, z)] = dilated && !eroded;
            }
        }
    }
    out
}

// ---- connected components -------------------------------------------------

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Labels numbered from 1 in order of each component's first voxel in C order.
pub fn cc_oracle(mask: &LabelMask, full: bool) -> (Vec<u32>, usize) {
    let d = mask.dims();
    let n = d.iter().product();
    let mut uf = UnionFind::new(n);
    for x in 0..d[0] {
        for y in 0..d[1] {
            for z in 0..d[2] {
                if !mask.get(x, y, z) {
                    continue;
                }
                for dx in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dz in -1isize..=1 {
                            let manhattan = dx.abs() + dy.abs() + dz.abs();
                            if manhattan == 0 || (!full && manhattan > 1) {
                                continue;
                            }
                            let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                            if nx < 0
                                || ny < 0
                                || nz < 0
                                || nx as usize >= d[0]
                                || ny as usize >= d[1]
                                || nz as usize >= d[2]
                            {
                                continue;
                            }
                            if mask.get(nx as usize, ny as usize, nz as usize) {
                                uf.union(idx(d, x, y, z), idx(d, nx as usize, ny as usize, nz as usize));
                            }
                        }
                    }
                }
            }
        }
    }
    let mut labels = vec![0u32; n];
    let mut root_label = std::collections::HashMap::new();
    for (i, label) in labels.iter_mut().enumerate() {
        if mask.data()[i] == 0 {
            continue;
        }
        let r = uf.find(i);
        let next = root_label.len() as u32 + 1;
        *label = *root_label.entry(r).or_insert(next);
    }
    (labels, root_label.len())
}

// ---- scoring ---------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct OracleScores {
    pub conf: f64,
    pub size: f64,
    pub unc: f64,
    pub comp: f64,
}

/// `None` when the lesion or its band is empty.
pub fn score_oracle(prob: &ProbabilityVolume, gt: &LabelMask, tau: f64, inward: u32, outward: u32) -> Option<OracleScores> {
    let p = prob.data();
    let g = gt.data();
    let lesion: Vec<usize> = (0..g.len()).filter(|&i| g[i] == 1).collect();
    if lesion.is_empty() {
        return None;
    }
    let conf = lesion
        .iter()
        .map(|&i| if f64::from(p[i]) > tau { f64::from(p[i]) } else { 0.0 })
        .sum::<f64>()
        / lesion.len() as f64;
    let band = band_oracle(gt, inward, outward);
    let band_idx: Vec<usize> = (0..band.len()).filter(|&i| band[i]).collect();
    if band_idx.is_empty() {
        return None;
    }
    let unc = band_idx.iter().map(|&i| (f64::from(p[i]) - 0.5).abs()).sum::<f64>() / band_idx.len() as f64;
    let (_, c) = cc_oracle(gt, true);
    Some(OracleScores {
        conf,
        size: lesion.len() as f64,
        unc,
        comp: (c * c) as f64 / lesion.len() as f64,
    })
}

pub fn minmax_oracle(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter()
        .map(|&x| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 })
        .collect()
}

// ---- convolution -----------------------------------------------------------

/// Zero-padded "same" 3-D convolution (cross-correlation), odd kernel.
/// `w` is `[c_out][c_in][k][k][k]` flattened; `x` is `[c_in][d]` flattened.
pub fn conv3d_oracle(w: &[f32], c_out: usize, c_in: usize, k: usize, x: &[f32], d: Dims) -> Vec<f64> {
    let n: usize = d.iter().product();
    let r = (k / 2) as isize;
    let mut out = vec![0.0f64; c_out * n];
    for o in 0..c_out {
        for px in 0..d[0] {
            for py in 0..d[1] {
                for pz in 0..d[2] {
                    let mut acc = 0.0f64;
                    for i in 0..c_in {
                        for a in 0..k {
                            for b in 0..k {
                                for c in 0..k {
                                    let sx = px as isize + a as isize - r;
                                    let sy = py as isize + b as isize - r;
                                    let sz = pz as isize + c as isize - r;
                                    if sx < 0
                                        || sy < 0
                                        || sz < 0
                                        || sx as usize >= d[0]
                                        || sy as usize >= d[1]
                                        || sz as usize >= d[2]
                                    {
                                        continue;
                                    }
                                    let wv = w[(((o * c_in + i) * k + a) * k + b) * k + c];
                                    let xv = x[i * n + idx(d, sx as usize, sy as usize, sz as usize)];
                                    acc += f64::from(wv) * f64::from(xv);
                                }
                            }
                        }
                    }
                    out[o * n + idx(d, px, py, pz)] = acc;
                }
            }
        }
    }
    out
}

// ---- cross-attention block -------------------------------------------------

pub type Mat = Vec<Vec<f64>>;

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..m {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn layer_norm_oracle(row: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    row.iter()
        .enumerate()
        .map(|(i, v)| (v - mu) / (var + eps).sqrt() * gain[i] + bias[i])
        .collect()
}

pub struct OracleBlock {
    pub w_text: Mat,
    pub w_img: Mat,
    pub pos: Mat,
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub w_o: Mat,
    pub pre: (Vec<f64>, Vec<f64>),
    pub fin: (Vec<f64>, Vec<f64>),
    pub eps: f64,
    pub heads: usize,
}

/// Returns output tokens `N_i × C` and per-head attention `[h][i][j]`.
pub fn dctg_oracle(x: &Mat, t: &Mat, b: &OracleBlock) -> (Mat, Vec<Mat>) {
    let mut xt = matmul(x, &b.w_img);
    for (i, row) in xt.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b.pos[i][j];
        }
        *row = layer_norm_oracle(row, &b.pre.0, &b.pre.1, b.eps);
    }
    let tt = matmul(t, &b.w_text);
    let q = matmul(&xt, &b.w_q);
    let k = matmul(&tt, &b.w_k);
    let v = matmul(&tt, &b.w_v);
    let d = b.w_q.len();
    let dh = d / b.heads;
    let ni = x.len();
    let nt = t.len();
    let mut y = vec![vec![0.0; d]; ni];
    let mut attn = Vec::new();
    for h in 0..b.heads {
        let mut a = vec![vec![0.0; nt]; ni];
        for i in 0..ni {
            let mut logits = vec![0.0; nt];
            for j in 0..nt {
                let mut s = 0.0;
                for c in h * dh..(h + 1) * dh {
                    s += q[i][c] * k[j][c];
                }
                logits[j] = s / (dh as f64).sqrt();
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..nt {
                a[i][j] = e[j] / z;
            }
            for c in h * dh..(h + 1) * dh {
                let mut s = 0.0;
                for j in 0..nt {
                    s += a[i][j] * v[j][c];
                }
                y[i][c] = s;
            }
        }
        attn.push(a);
    }
    let proj = matmul(&y, &b.w_o);
    let out = x
        .iter()
        .zip(&proj)
        .map(|(xr, pr)| {
            let r: Vec<f64> = xr.iter().zip(pr).map(|(a, b)| a + b).collect();
            layer_norm_oracle(&r, &b.fin.0, &b.fin.1, b.eps)
        })
        .collect();
    (out, attn)
}

// ---- metrics ---------------------------------------------------------------

pub fn metrics_oracle(rows: &[Vec<f64>]) -> (f64, f64, Option<f64>) {
    let t = rows.len();
    let avg = rows[t - 1].iter().sum::<f64>() / t as f64;
    let mut ilm = 0.0;
    for (s, row) in rows.iter().enumerate() {
        ilm += row.iter().sum::<f64>() / (s + 1) as f64;
    }
    ilm /= t as f64;
    let bwt = (t > 1).then(|| {
        let mut b = 0.0;
        for (i, row) in rows.iter().enumerate().take(t - 1) {
            b += rows[t - 1][i] - row[i];
        }
        b / (t - 1) as f64
    });
    (avg, ilm, bwt)
}

// ---- PRNG ------------------------------------------------------------------

/// Straight transcription of the published SplitMix64 step.
pub struct SplitMix {
    pub x: u64,
}

impl SplitMix {
    pub fn next(&mut self) -> u64 {
        self.x = self.x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

// ---- buffer fuzzing ----------------------------------------------------------

use replay_forge::buffer::{select_partition, GlobalBuffer};
use replay_forge::scoring::{NormalizedScores, RawScores, SampleScores};
use replay_forge::Category;

/// Scores with coarse values so ties are common.
pub fn fake_scores(rng: &mut Prng, n: usize, prefix: &str) -> Vec<SampleScores> {
    (0..n)
        .map(|i| {
            let rep = rng.below(9) as f64 / 8.0;
            let diff = rng.below(9) as f64 / 8.0;
            SampleScores {
                sample_id: format!("{prefix}-{i:03}"),
                raw: RawScores { conf: 0.5, size: 1, unc: 0.1, comp: 1.0 },
                norm: NormalizedScores { conf: 0.5, size: 0.5, unc: 0.5, comp: 0.5 },
                r_rep: rep,
                r_diff: diff,
            }
        })
        .collect()
}

/// One fuzzed stream; returns the first protocol violation found.
pub fn fuzz_buffer_stream(rng: &mut Prng, beta: usize, episodes: usize) -> Result<(), String> {
    let mut buf = GlobalBuffer::new(beta).map_err(|e| e.to_string())?;
    let mut inserted: Vec<usize> = Vec::new();
    let mut episode = 0u32;
    for _ in 0..episodes {
        episode += 1 + rng.below(3) as u32;
        let count = 1 + rng.below(2 * beta as u64 + 5) as usize;
        let n = 1 + rng.below(2 * beta as u64) as usize;
        let scores = fake_scores(rng, count, &format!("e{episode}"));
        let part = select_partition(&scores, n, episode).map_err(|e| e.to_string())?;
        if part.len() != n.min(count) {
            return Err(format!("partition holds {} of n={n}, count={count}", part.len()));
        }
        inserted.push(part.len());
        let before: Vec<Vec<(Category, f64, String)>> = buf
            .partitions()
            .iter()
            .map(|p| p.entries.iter().map(|e| (e.category, e.stored_score, e.sample_id.clone())).collect())
            .collect();
        let report = buf.update(part).map_err(|e| e.to_string())?;

        let sizes = buf.sizes();
        if sizes.iter().sum::<usize>() > beta {
            return Err(format!("capacity: {sizes:?} > {beta}"));
        }
        for &a in &sizes {
            for (j, &b) in sizes.iter().enumerate() {
                if a > b + 1 && b != inserted[j] {
                    return Err(format!("parity: {sizes:?}, partition {j} not exhausted ({})", inserted[j]));
                }
            }
        }
        if sizes.iter().sum::<usize>() < beta.min(inserted.iter().sum()) {
            return Err(format!("unused capacity: {sizes:?}"));
        }
        for p in buf.partitions() {
            let rep = p.count(Category::Representative);
            let diff = p.count(Category::Difficult);
            if rep.abs_diff(diff) > 1 {
                return Err(format!("split {rep}/{diff} in episode {}", p.episode));
            }
        }
        // every evicted entry ranks no higher than any survivor of its partition and category
        for ev in &report.evicted {
            let p = buf
                .partitions()
                .iter()
                .find(|p| p.episode == ev.episode)
                .ok_or("evicted from a vanished partition")?;
            for e in p.entries.iter().filter(|e| e.category == ev.category) {
                if e.stored_score < ev.stored_score {
                    return Err(format!(
                        "evicted {} ({}) while keeping {} ({})",
                        ev.sample_id, ev.stored_score, e.sample_id, e.stored_score
                    ));
                }
            }
        }
        for (k, p) in before.iter().enumerate() {
            let now = &buf.partitions()[k];
            for (cat, score, id) in p {
                let kept = now.entries.iter().any(|e| &e.sample_id == id);
                let evicted = report.evicted.iter().any(|e| &e.sample_id == id && e.category == *cat && e.stored_score == *score);
                if kept == evicted {
                    return Err(format!("entry {id} both kept and evicted, or lost"));
                }
            }
        }
        buf.check_invariants()?;
    }
    let round = GlobalBuffer::load_state(&buf.save_state().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    if round != buf {
        return Err("state round trip changed the buffer".into());
    }
    Ok(())
}

// ---- cross-attention parameters --------------------------------------------

use ndarray::{Array1, Array2};
use replay_forge::dctg::{DctgParams, LayerNorm};

pub fn random_matrix(rng: &mut Prng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| (rng.next_f64() * 2.0 - 1.0) * scale)
}

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn random_block(rng: &mut Prng, c: usize, d: usize, heads: usize, e: usize, n_i: usize) -> DctgParams {
    let s = 1.0 / (d as f64).sqrt();
    let vec = |rng: &mut Prng, n: usize, base: f64| Array1::from_shape_fn(n, |_| base + 0.2 * (rng.next_f64() - 0.5));
    DctgParams {
        w_text: random_matrix(rng, e, d, s),
        w_img: random_matrix(rng, c, d, s),
        pos: random_matrix(rng, n_i, d, 0.1),
        w_q: random_matrix(rng, d, d, s),
        w_k: random_matrix(rng, d, d, s),
        w_v: random_matrix(rng, d, d, s),
        w_o: random_matrix(rng, d, c, s),
        pre_norm: LayerNorm {
            gain: vec(rng, d, 1.0),
            bias: vec(rng, d, 0.0),
            epsilon: 1e-5,
        },
        final_norm: LayerNorm {
            gain: vec(rng, c, 1.0),
            bias: vec(rng, c, 0.0),
            epsilon: 1e-5,
        },
        heads,
    }
}

pub fn oracle_block(p: &DctgParams) -> OracleBlock {
    OracleBlock {
        w_text: to_mat(&p.w_text),
        w_img: to_mat(&p.w_img),
        pos: to_mat(&p.pos),
        w_q: to_mat(&p.w_q),
        w_k: to_mat(&p.w_k),
        w_v: to_mat(&p.w_v),
        w_o: to_mat(&p.w_o),
        pre: (p.pre_norm.gain.to_vec(), p.pre_norm.bias.to_vec()),
        fin: (p.final_norm.gain.to_vec(), p.final_norm.bias.to_vec()),
        eps: p.pre_norm.epsilon,
        heads: p.heads,
    }
}
