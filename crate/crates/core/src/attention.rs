//! Forward passes of the three attention modules and the per-level
//! aggregation scheme, on toy-scale tensors.
//!
//! These exist to verify mechanism invariants (gating boundedness, softmax
//! normalization, residual identities, scheme placement rules) — nothing is
//! trained here. Parameters are supplied explicitly or drawn from a seeded
//! stream.

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor4;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Row softmax with max-subtraction, in place.
fn softmax_rows(rows: &mut [Vec<f64>]) {
    for row in rows {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

// ── Channel attention (squeeze-and-gate) ───────────────────────────────────

/// Squeeze (global average pool) → FC(relu) → FC → sigmoid, gating each
/// channel. Weight matrices are row-major: `w1` is (C/r)×C, `w2` is C×(C/r).
#[derive(Debug, Clone, PartialEq)]
pub struct CamParams {
    pub channels: usize,
    pub reduction: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl CamParams {
    /// Reduction 16 clamped to divide C: the largest divisor of C that is
    /// ≤ 16, or C itself when C < 16 (squeezing to a single hidden unit).
    pub fn default_reduction(channels: usize) -> usize {
        if channels < 16 {
            return channels;
        }
        (1..=16).rev().find(|r| channels % r == 0).unwrap_or(1)
    }

    /// Weights and biases drawn uniformly from [−0.5, 0.5], row-major, in
    /// declaration order: w1, b1, w2, b2.
    pub fn seeded(channels: usize, reduction: usize, r: &mut SeededRng) -> Result<Self> {
        let hidden = check_reduction(channels, reduction)?;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng::uniform_in(r, -0.5, 0.5)).collect()
        };
        Ok(Self {
            channels,
            reduction,
            w1: draw(hidden * channels),
            b1: draw(hidden),
            w2: draw(channels * hidden),
            b2: draw(channels),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let hidden = check_reduction(self.channels, self.reduction)?;
        let shapes = [
            (self.w1.len(), hidden * self.channels, "w1"),
            (self.b1.len(), hidden, "b1"),
            (self.w2.len(), self.channels * hidden, "w2"),
            (self.b2.len(), self.channels, "b2"),
        ];
        for (got, want, name) in shapes {
            if got != want {
                return Err(Error::TensorShape(format!(
                    "cam {name}: {got} values, expected {want}"
                )));
            }
        }
        Ok(())
    }
}

fn check_reduction(channels: usize, reduction: usize) -> Result<usize> {
    if reduction < 1 || channels == 0 || channels % reduction != 0 {
        return Err(Error::BadParameter(format!(
            "reduction {reduction} must divide channel count {channels}"
        )));
    }
    Ok(channels / reduction)
}

pub fn cam_forward(x: &Tensor4, p: &CamParams) -> Result<Tensor4> {
    p.validate()?;
    let (n, c, h, w) = x.shape();
    if c != p.channels {
        return Err(Error::TensorShape(format!(
            "cam expects {} channels, tensor has {c}",
            p.channels
        )));
    }
    let hidden = c / p.reduction;
    let area = (h * w) as f64;
    let mut out = x.clone();
    for ni in 0..n {
        // Squeeze: spatial mean per channel.
        let s: Vec<f64> = (0..c)
            .map(|ci| x.plane(ni, ci).iter().sum::<f64>() / area)
            .collect();
        let hid: Vec<f64> = (0..hidden)
            .map(|i| {
                let dot: f64 = (0..c).map(|j| p.w1[i * c + j] * s[j]).sum();
                relu(dot + p.b1[i])
            })
            .collect();
        for ci in 0..c {
            let dot: f64 = (0..hidden).map(|i| p.w2[ci * hidden + i] * hid[i]).sum();
            let z = sigmoid(dot + p.b2[ci]);
            let start = out.index(ni, ci, 0, 0);
            for val in &mut out.data_mut()[start..start + h * w] {
                *val *= z;
            }
        }
    }
    Ok(out)
}

// ── Position attention (pooled spatial gate) ───────────────────────────────

/// Channel-mean and channel-max maps → k×k zero-padded convolution →
/// sigmoid, gating each spatial position. Kernel layout is
/// [channel][row][col] row-major with channel 0 = mean map, 1 = max map.
#[derive(Debug, Clone, PartialEq)]
pub struct PamParams {
    pub k: usize,
    pub kernel: Vec<f64>,
    pub bias: f64,
}

impl PamParams {
    /// Kernel drawn uniformly from [−0.5, 0.5] in layout order, then bias.
    pub fn seeded(k: usize, r: &mut SeededRng) -> Result<Self> {
        let p = Self {
            k,
            kernel: (0..2 * k * k).map(|_| rng::uniform_in(r, -0.5, 0.5)).collect(),
            bias: rng::uniform_in(r, -0.5, 0.5),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k % 2 == 0 || self.k == 0 {
            return Err(Error::BadParameter(format!(
                "pam kernel size {} must be odd",
                self.k
            )));
        }
        if self.kernel.len() != 2 * self.k * self.k {
            return Err(Error::TensorShape(format!(
                "pam kernel: {} values, expected {}",
                self.kernel.len(),
                2 * self.k * self.k
            )));
        }
        Ok(())
    }
}

pub fn pam_forward(x: &Tensor4, p: &PamParams) -> Result<Tensor4> {
    p.validate()?;
    let (n, c, h, w) = x.shape();
    let half = (p.k / 2) as isize;
    let mut out = x.clone();
    for ni in 0..n {
        // Pool across channels into a mean map and a max map.
        let mut mean = vec![0.0f64; h * w];
        let mut max = vec![f64::NEG_INFINITY; h * w];
        for ci in 0..c {
            for (i, &v) in x.plane(ni, ci).iter().enumerate() {
                mean[i] += v;
                max[i] = max[i].max(v);
            }
        }
        for m in &mut mean {
            *m /= c as f64;
        }
        let pooled = [mean, max];

        for y in 0..h as isize {
            for xx in 0..w as isize {
                let mut acc = p.bias;
                for (ch, map) in pooled.iter().enumerate() {
                    for ky in 0..p.k as isize {
                        for kx in 0..p.k as isize {
                            let (sy, sx) = (y + ky - half, xx + kx - half);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue; // zero padding
                            }
                            let kidx = (ch * p.k + ky as usize) * p.k + kx as usize;
                            acc += p.kernel[kidx] * map[sy as usize * w + sx as usize];
                        }
                    }
                }
                let gate = sigmoid(acc);
                for ci in 0..c {
                    let i = out.index(ni, ci, y as usize, xx as usize);
                    out.data_mut()[i] *= gate;
                }
            }
        }
    }
    Ok(out)
}

// ── Dual attention (position + channel self-attention) ─────────────────────

/// Self-attention with a position branch (projections Q, K of width C/8, a
/// full-width V) and a channel branch (Gram-matrix affinity), each with its
/// own residual scale. All matrices row-major: `q`, `k` are C×(C/8), `v` is
/// C×C.
#[derive(Debug, Clone, PartialEq)]
pub struct DamParams {
    pub channels: usize,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub gamma_p: f64,
    pub gamma_c: f64,
}

impl DamParams {
    pub fn proj_width(&self) -> usize {
        self.channels / 8
    }

    /// Matrices drawn uniformly from [−0.5, 0.5] row-major in order q, k, v,
    /// then gamma_p, gamma_c.
    pub fn seeded(channels: usize, r: &mut SeededRng) -> Result<Self> {
        if channels < 8 {
            return Err(Error::BadParameter(format!(
                "dam needs ≥ 8 channels, got {channels}"
            )));
        }
        let d = channels / 8;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng::uniform_in(r, -0.5, 0.5)).collect()
        };
        Ok(Self {
            channels,
            q: draw(channels * d),
            k: draw(channels * d),
            v: draw(channels * channels),
            gamma_p: rng::uniform_in(r, -0.5, 0.5),
            gamma_c: rng::uniform_in(r, -0.5, 0.5),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 8 {
            return Err(Error::BadParameter(format!(
                "dam needs ≥ 8 channels, got {}",
                self.channels
            )));
        }
        let d = self.proj_width();
        let shapes = [
            (self.q.len(), self.channels * d, "q"),
            (self.k.len(), self.channels * d, "k"),
            (self.v.len(), self.channels * self.channels, "v"),
        ];
        for (got, want, name) in shapes {
            if got != want {
                return Err(Error::TensorShape(format!(
                    "dam {name}: {got} values, expected {want}"
                )));
            }
        }
        if !(self.gamma_p.is_finite() && self.gamma_c.is_finite()) {
            return Err(Error::BadParameter("dam gammas must be finite".into()));
        }
        Ok(())
    }
}

/// Both branch outputs for one batch item, before the residual combine.
struct DamBranches {
    position: Vec<f64>,
    channel: Vec<f64>,
    a_p: Vec<Vec<f64>>,
    a_c: Vec<Vec<f64>>,
}

fn dam_branches(x: &Tensor4, p: &DamParams, ni: usize) -> DamBranches {
    let (_, c, h, w) = x.shape();
    let l = h * w;
    let d = p.proj_width();
    let flat = |ci: usize, li: usize| x.plane(ni, ci)[li];

    // Position affinity: rows of (XᵀQ)(XᵀK)ᵀ, softmaxed.
    let mut xq = vec![0.0f64; l * d];
    let mut xk = vec![0.0f64; l * d];
    for li in 0..l {
        for j in 0..d {
            let (mut sq, mut sk) = (0.0, 0.0);
            for ci in 0..c {
                sq += flat(ci, li) * p.q[ci * d + j];
                sk += flat(ci, li) * p.k[ci * d + j];
            }
            xq[li * d + j] = sq;
            xk[li * d + j] = sk;
        }
    }
    let mut a_p: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            (0..l)
                .map(|j| (0..d).map(|m| xq[i * d + m] * xk[j * d + m]).sum())
                .collect()
        })
        .collect();
    softmax_rows(&mut a_p);

    // Position branch value path: (VᵀX) · A_pᵀ.
    let mut vx = vec![0.0f64; c * l];
    for ci in 0..c {
        for li in 0..l {
            vx[ci * l + li] = (0..c).map(|cj| p.v[cj * c + ci] * flat(cj, li)).sum();
        }
    }
    let mut position = vec![0.0f64; c * l];
    for ci in 0..c {
        for i in 0..l {
            position[ci * l + i] = (0..l).map(|j| vx[ci * l + j] * a_p[i][j]).sum();
        }
    }

    // Channel affinity: rows of the Gram matrix X·Xᵀ, softmaxed.
    let mut a_c: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            (0..c)
                .map(|j| (0..l).map(|li| flat(i, li) * flat(j, li)).sum())
                .collect()
        })
        .collect();
    softmax_rows(&mut a_c);
    let mut channel = vec![0.0f64; c * l];
    for ci in 0..c {
        for li in 0..l {
            channel[ci * l + li] = (0..c).map(|cj| a_c[ci][cj] * flat(cj, li)).sum();
        }
    }

    DamBranches { position, channel, a_p, a_c }
}

/// Position branch P = γ_p·(VᵀX)A_pᵀ + X and channel branch C = γ_c·(A_c X)
/// + X, combined as P + C − X (one shared identity term). The combine is
/// written `x + (γ_p·p + γ_c·c)`, which makes the γ = 0 case return the
/// input bit-for-bit (for finite inputs).
pub fn dam_forward(x: &Tensor4, p: &DamParams) -> Result<Tensor4> {
    p.validate()?;
    let (n, c, h, w) = x.shape();
    if c != p.channels {
        return Err(Error::TensorShape(format!(
            "dam expects {} channels, tensor has {c}",
            p.channels
        )));
    }
    let l = h * w;
    let mut out = x.clone();
    for ni in 0..n {
        let branches = dam_branches(x, p, ni);
        for ci in 0..c {
            let start = out.index(ni, ci, 0, 0);
            for li in 0..l {
                let residual =
                    p.gamma_p * branches.position[ci * l + li] + p.gamma_c * branches.channel[ci * l + li];
                out.data_mut()[start + li] = x.data()[start + li] + residual;
            }
        }
    }
    Ok(out)
}

/// The softmaxed affinity matrices (A_p of size L×L, A_c of size C×C) for
/// one batch item — inspection surface for normalization checks and demos.
pub fn dam_affinities(
    x: &Tensor4,
    p: &DamParams,
    batch_item: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    p.validate()?;
    let (n, c, _, _) = x.shape();
    if c != p.channels {
        return Err(Error::TensorShape(format!(
            "dam expects {} channels, tensor has {c}",
            p.channels
        )));
    }
    if batch_item >= n {
        return Err(Error::BadParameter(format!(
            "batch item {batch_item} out of range (N = {n})"
        )));
    }
    let b = dam_branches(x, p, batch_item);
    Ok((b.a_p, b.a_c))
}

// ── Aggregation scheme ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelAttention {
    None,
    Cam,
    Pam,
    Dam,
}

impl LevelAttention {
    pub fn as_str(self) -> &'static str {
        match self {
            LevelAttention::None => "none",
            LevelAttention::Cam => "cam",
            LevelAttention::Pam => "pam",
            LevelAttention::Dam => "dam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LevelAttention::None),
            "cam" => Ok(LevelAttention::Cam),
            "pam" => Ok(LevelAttention::Pam),
            "dam" => Ok(LevelAttention::Dam),
            other => Err(Error::BadParameter(format!("unknown attention {other:?}"))),
        }
    }
}

/// Which attention module sits at each feature level, shallow to deep. DAM
/// is only legal at the last (deepest) level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionScheme {
    pub levels: Vec<LevelAttention>,
}

impl AttentionScheme {
    pub fn new(levels: Vec<LevelAttention>) -> Result<Self> {
        let scheme = Self { levels };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::BadParameter("scheme has no levels".into()));
        }
        let n = self.levels.len();
        for (i, level) in self.levels.iter().enumerate() {
            if *level == LevelAttention::Dam && i + 1 != n {
                return Err(Error::SchemePlacement(i + 1, n));
            }
        }
        Ok(())
    }

    /// Comma-separated level names, e.g. `pam,cam,cam,cam,dam`.
    pub fn parse(s: &str) -> Result<Self> {
        Self::new(
            s.split(',')
                .map(|t| LevelAttention::parse(t.trim()))
                .collect::<Result<_>>()?,
        )
    }

    pub fn to_string_compact(&self) -> String {
        self.levels
            .iter()
            .map(|l| l.as_str())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Parameters for one level, variant-matched to the scheme entry.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelParams {
    None,
    Cam(CamParams),
    Pam(PamParams),
    Dam(DamParams),
}

impl LevelParams {
    pub fn kind(&self) -> LevelAttention {
        match self {
            LevelParams::None => LevelAttention::None,
            LevelParams::Cam(_) => LevelAttention::Cam,
            LevelParams::Pam(_) => LevelAttention::Pam,
            LevelParams::Dam(_) => LevelAttention::Dam,
        }
    }

    /// Seeded parameters for the given module, sized for `channels`. CAM
    /// uses the default reduction, PAM its default 7×7 kernel.
    pub fn seeded_for(
        kind: LevelAttention,
        channels: usize,
        r: &mut SeededRng,
    ) -> Result<Self> {
        Ok(match kind {
            LevelAttention::None => LevelParams::None,
            LevelAttention::Cam => LevelParams::Cam(CamParams::seeded(
                channels,
                CamParams::default_reduction(channels),
                r,
            )?),
            LevelAttention::Pam => LevelParams::Pam(PamParams::seeded(7, r)?),
            LevelAttention::Dam => LevelParams::Dam(DamParams::seeded(channels, r)?),
        })
    }
}

/// Run each level's assigned module over its feature map (identity for
/// `None`).
pub fn apply_scheme(
    features: &[Tensor4],
    scheme: &AttentionScheme,
    params: &[LevelParams],
) -> Result<Vec<Tensor4>> {
    scheme.validate()?;
    if features.len() != scheme.levels.len() || params.len() != scheme.levels.len() {
        return Err(Error::BadParameter(format!(
            "{} features / {} params for a {}-level scheme",
            features.len(),
            params.len(),
            scheme.levels.len()
        )));
    }
    let mut out = Vec::with_capacity(features.len());
    for ((x, level), lp) in features.iter().zip(&scheme.levels).zip(params) {
        if lp.kind() != *level {
            return Err(Error::BadParameter(format!(
                "level {} wants {}, params are {}",
                out.len() + 1,
                level.as_str(),
                lp.kind().as_str()
            )));
        }
        out.push(match lp {
            LevelParams::None => x.clone(),
            LevelParams::Cam(p) => cam_forward(x, p)?,
            LevelParams::Pam(p) => pam_forward(x, p)?,
            LevelParams::Dam(p) => dam_forward(x, p)?,
        });
    }
    Ok(out)
}
