use std::sync::Arc;

use rand::Rng;

use super::freeze::FreezePolicy;
use super::{check_classes, check_l2, check_rate, glorot, ForwardCtx, ForwardOut, ModelError};
use crate::engine::{Activation, EngineError, EngineResult, ParamStore, Tape, Var};
use crate::{Real, Tensor};

/// Additive mask value separating tokens from different pre-shift regions.
pub const MASK_NEG: f64 = -1e9;

/// A small 3D shifted-window transformer: patch embedding, stages of
/// (regular, shifted) window-attention blocks with patch merging between
/// stages, global average pooling and a dense classification head.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySwinConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Patch extent `(t, h, w)`.
    pub patch: [usize; 3],
    pub embed_dim: usize,
    /// Blocks per stage; blocks alternate regular and shifted windows.
    pub depths: Vec<usize>,
    pub heads: Vec<usize>,
    /// Attention window `(t, h, w)` in tokens; clamped to the token grid.
    pub window: [usize; 3],
    pub mlp_ratio: usize,
    /// Width of the hidden head layer; 0 connects pooling straight to the
    /// output layer.
    pub head_hidden: usize,
    pub head_dropout: f64,
    /// L2 rate on the head's dense kernels.
    pub head_l2: f64,
    pub classes: usize,
    pub ln_eps: f64,
    pub freeze: FreezePolicy,
}

impl Default for ToySwinConfig {
    fn default() -> Self {
        ToySwinConfig {
            frames: 8,
            height: 32,
            width: 32,
            patch: [2, 4, 4],
            embed_dim: 16,
            depths: vec![2, 2],
            heads: vec![2, 4],
            window: [2, 4, 4],
            mlp_ratio: 4,
            head_hidden: 64,
            head_dropout: 0.5,
            head_l2: 0.1,
            classes: 8,
            ln_eps: 1e-5,
            freeze: FreezePolicy::AllTrainable,
        }
    }
}

/// Effective window and shift for a token grid of `extent`: windows larger
/// than the grid shrink to it, and no shift is applied along such axes.
pub fn window_geometry(extent: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> ([usize; 3], [usize; 3]) {
    let mut w = window;
    let mut s = shift;
    for a in 0..3 {
        if extent[a] <= window[a] {
            w[a] = extent[a];
            s[a] = 0;
        }
    }
    (w, s)
}

fn check_divisible(extent: [usize; 3], window: [usize; 3]) -> EngineResult<()> {
    if (0..3).any(|a| window[a] == 0 || !extent[a].is_multiple_of(window[a])) {
        return Err(EngineError::NotDivisible { extent, window });
    }
    Ok(())
}

/// Gather index taking `[B, T, H, W, D]` to `[B·nW, wt·wh·ww, D]`, windows
/// batch-major in `(t, h, w)` order and tokens in `(t, h, w)` order inside
/// each window.
pub fn partition_index(batch: usize, extent: [usize; 3], dim: usize, window: [usize; 3]) -> EngineResult<Vec<usize>> {
    check_divisible(extent, window)?;
    let [t, h, w] = extent;
    let [wt, wh, ww] = window;
    let mut idx = Vec::with_capacity(batch * t * h * w * dim);
    for b in 0..batch {
        for bt in 0..t / wt {
            for bh in 0..h / wh {
                for bw in 0..w / ww {
                    for it in 0..wt {
                        for ih in 0..wh {
                            for iw in 0..ww {
                                let tok = (((b * t + bt * wt + it) * h + bh * wh + ih) * w) + bw * ww + iw;
                                idx.extend(tok * dim..(tok + 1) * dim);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(idx)
}

fn invert(index: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; index.len()];
    for (o, &i) in index.iter().enumerate() {
        inv[i] = o;
    }
    inv
}

/// Gather index of a circular roll by `−shift` over the `(T, H, W)` axes of
/// `[B, T, H, W, D]`: `out[t, h, w] = in[(t+st) mod T, …]`. Negative
/// shifts undo positive ones.
pub fn cyclic_shift_index(batch: usize, extent: [usize; 3], dim: usize, shift: [i64; 3]) -> Vec<usize> {
    let [t, h, w] = extent;
    let roll = |i: usize, s: i64, n: usize| (i as i64 + s).rem_euclid(n as i64) as usize;
    let mut idx = Vec::with_capacity(batch * t * h * w * dim);
    for b in 0..batch {
        for it in 0..t {
            for ih in 0..h {
                for iw in 0..w {
                    let tok = ((b * t + roll(it, shift[0], t)) * h + roll(ih, shift[1], h)) * w + roll(iw, shift[2], w);
                    idx.extend(tok * dim..(tok + 1) * dim);
                }
            }
        }
    }
    idx
}

/// Additive attention mask `[nW, n, n]` for shifted windows over a grid of
/// `extent`: 0 between tokens from the same pre-shift region, [`MASK_NEG`]
/// otherwise. All zeros when `shift` is zero.
pub fn build_shift_mask(extent: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> EngineResult<Tensor<f64>> {
    check_divisible(extent, window)?;
    let region = |r: usize, a: usize| {
        let (n, w, s) = (extent[a], window[a], shift[a]);
        if s == 0 || r < n - w {
            0
        } else if r < n - s {
            1
        } else {
            2
        }
    };
    let [t, h, w] = extent;
    let mut ids = Vec::with_capacity(t * h * w);
    for it in 0..t {
        for ih in 0..h {
            for iw in 0..w {
                ids.push((region(it, 0) * 3 + region(ih, 1)) * 3 + region(iw, 2));
            }
        }
    }
    let ids = Tensor::from_vec(&[1, t, h, w, 1], ids.iter().map(|&v| v as f64).collect());
    let part = partition_index(1, extent, 1, window)?;
    let n: usize = window.iter().product();
    let nw = t * h * w / n;
    let mut mask = vec![0.0; nw * n * n];
    for win in 0..nw {
        let r = &part[win * n..(win + 1) * n];
        for i in 0..n {
            for j in 0..n {
                if ids.data()[r[i]] != ids.data()[r[j]] {
                    mask[(win * n + i) * n + j] = MASK_NEG;
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[nw, n, n], mask))
}

fn grid<T: Real>(tape: &Tape<T>, x: Var, op: &'static str) -> EngineResult<(usize, [usize; 3], usize)> {
    match *tape.shape(x) {
        [b, t, h, w, d] => Ok((b, [t, h, w], d)),
        ref s => Err(EngineError::ShapeMismatch {
            op,
            detail: format!("expected [B, T, H, W, D], got {s:?}"),
        }),
    }
}

impl<T: Real> Tape<T> {
    /// `[B, T, H, W, D]` → `[B·nW, wt·wh·ww, D]`.
    pub fn partition_windows3d(&mut self, x: Var, window: [usize; 3]) -> EngineResult<Var> {
        let (b, extent, d) = grid(self, x, "partition_windows3d")?;
        let idx = partition_index(b, extent, d, window)?;
        let n: usize = window.iter().product();
        let nw = extent.iter().product::<usize>() / n;
        self.gather(x, Arc::new(idx), &[b * nw, n, d])
    }

    /// Inverse of [`Tape::partition_windows3d`] for a grid of
    /// `[batch, extent…]`.
    pub fn reverse_windows3d(&mut self, windows: Var, batch: usize, extent: [usize; 3], window: [usize; 3]) -> EngineResult<Var> {
        let d = *self.shape(windows).last().unwrap_or(&0);
        let idx = invert(&partition_index(batch, extent, d, window)?);
        if idx.len() != self.value(windows).numel() {
            return Err(EngineError::ShapeMismatch {
                op: "reverse_windows3d",
                detail: format!("{:?} for grid {extent:?} of batch {batch}", self.shape(windows)),
            });
        }
        self.gather(windows, Arc::new(idx), &[batch, extent[0], extent[1], extent[2], d])
    }

    /// Circular roll by `−shift` along `(T, H, W)`.
    pub fn cyclic_shift3d(&mut self, x: Var, shift: [i64; 3]) -> EngineResult<Var> {
        let (b, extent, d) = grid(self, x, "cyclic_shift3d")?;
        let idx = cyclic_shift_index(b, extent, d, shift);
        let shape = self.shape(x).to_vec();
        self.gather(x, Arc::new(idx), &shape)
    }

    /// Window multi-head self-attention: QKV projection, per-window scaled
    /// dot-product attention with an optional additive mask, output
    /// projection.
    #[allow(clippy::too_many_arguments)]
    pub fn wmsa3d(
        &mut self,
        windows: Var,
        qkv_w: Var,
        qkv_b: Var,
        proj_w: Var,
        proj_b: Var,
        heads: usize,
        mask: Option<Arc<Tensor<T>>>,
    ) -> EngineResult<Var> {
        let d = *self.shape(windows).last().unwrap_or(&0);
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(EngineError::HeadsDontDivide { dim: d, heads });
        }
        let qkv = self.linear(windows, qkv_w, Some(qkv_b))?;
        let a = self.window_attention(qkv, heads, mask)?;
        self.linear(a, proj_w, Some(proj_b))
    }

    /// Concatenate each 2×2 spatial neighbourhood (order: (0,0), (1,0),
    /// (0,1), (1,1) in (h, w)), optionally layer-normalize, and reduce with
    /// `reduce: [4D, D']` (no bias).
    pub fn patch_merge(&mut self, x: Var, norm: Option<(Var, Var, T)>, reduce: Var) -> EngineResult<Var> {
        let (b, [t, h, w], d) = grid(self, x, "patch_merge")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(EngineError::OddSpatialDims { height: h, width: w });
        }
        let (h2, w2) = (h / 2, w / 2);
        let mut idx = Vec::with_capacity(b * t * h * w * d);
        for bb in 0..b {
            for it in 0..t {
                for ih in 0..h2 {
                    for iw in 0..w2 {
                        for (dh, dw) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                            let tok = ((bb * t + it) * h + 2 * ih + dh) * w + 2 * iw + dw;
                            idx.extend(tok * d..(tok + 1) * d);
                        }
                    }
                }
            }
        }
        let mut y = self.gather(x, Arc::new(idx), &[b, t, h2, w2, 4 * d])?;
        if let Some((g, be, eps)) = norm {
            y = self.layernorm(y, g, be, eps)?;
        }
        self.linear(y, reduce, None)
    }
}

impl ToySwinConfig {
    fn token_grid(&self) -> [usize; 3] {
        [
            self.frames / self.patch[0],
            self.height / self.patch[1],
            self.width / self.patch[2],
        ]
    }

    fn patch_len(&self) -> usize {
        self.patch.iter().product::<usize>() * 3
    }

    fn stage_dim(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    /// Token grid of every stage.
    pub fn stage_grids(&self) -> Vec<[usize; 3]> {
        let mut g = self.token_grid();
        let mut out = Vec::new();
        for _ in 0..self.depths.len() {
            out.push(g);
            g = [g[0], g[1] / 2, g[2] / 2];
        }
        out
    }

    fn block_geometry(&self, extent: [usize; 3], block: usize) -> ([usize; 3], [usize; 3]) {
        let shift = if block % 2 == 1 { self.window.map(|w| w / 2) } else { [0; 3] };
        window_geometry(extent, self.window, shift)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if [self.frames, self.height, self.width, self.embed_dim, self.mlp_ratio].contains(&0)
            || self.patch.contains(&0)
            || self.window.contains(&0)
        {
            return bad("all sizes must be positive".into());
        }
        if self.depths.is_empty() || self.depths.len() != self.heads.len() || self.depths.contains(&0) {
            return bad("depths and heads must be non-empty, equally long and positive".into());
        }
        let input = [self.frames, self.height, self.width];
        if (0..3).any(|a| !input[a].is_multiple_of(self.patch[a])) {
            return bad(format!("input {input:?} not divisible by patch {:?}", self.patch));
        }
        let grids = self.stage_grids();
        for (s, g) in grids.iter().enumerate() {
            if s + 1 < grids.len() && (g[1] % 2 != 0 || g[2] % 2 != 0) {
                return Err(EngineError::OddSpatialDims { height: g[1], width: g[2] }.into());
            }
            if g.contains(&0) {
                return bad(format!("stage {s} has an empty token grid {g:?}"));
            }
            let dim = self.stage_dim(s);
            if !dim.is_multiple_of(self.heads[s]) {
                return Err(EngineError::HeadsDontDivide { dim, heads: self.heads[s] }.into());
            }
            for k in 0..self.depths[s] {
                let (w, _) = self.block_geometry(*g, k);
                check_divisible(*g, w)?;
            }
        }
        check_rate("head_dropout", self.head_dropout)?;
        check_l2("head_l2", self.head_l2)?;
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be positive".into());
        }
        check_classes(self.classes)
    }

    pub(super) fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let ln = |s: &mut ParamStore<f64>, name: String, d: usize| {
            s.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0));
            s.add(format!("{name}.beta"), Tensor::zeros(&[d]));
        };
        let (p, d0) = (self.patch_len(), self.embed_dim);
        s.add("patch_embed.w", glorot(rng, &[p, d0], p, d0));
        s.add("patch_embed.b", Tensor::zeros(&[d0]));
        ln(&mut s, "patch_embed.norm".into(), d0);
        for (st, &depth) in self.depths.iter().enumerate() {
            let d = self.stage_dim(st);
            let hidden = d * self.mlp_ratio;
            for k in 0..depth {
                let pre = format!("stages.{st}.blocks.{k}");
                ln(&mut s, format!("{pre}.norm1"), d);
                s.add(format!("{pre}.attn.qkv.w"), glorot(rng, &[d, 3 * d], d, 3 * d));
                s.add(format!("{pre}.attn.qkv.b"), Tensor::zeros(&[3 * d]));
                s.add(format!("{pre}.attn.proj.w"), glorot(rng, &[d, d], d, d));
                s.add(format!("{pre}.attn.proj.b"), Tensor::zeros(&[d]));
                ln(&mut s, format!("{pre}.norm2"), d);
                s.add(format!("{pre}.mlp.fc1.w"), glorot(rng, &[d, hidden], d, hidden));
                s.add(format!("{pre}.mlp.fc1.b"), Tensor::zeros(&[hidden]));
                s.add(format!("{pre}.mlp.fc2.w"), glorot(rng, &[hidden, d], hidden, d));
                s.add(format!("{pre}.mlp.fc2.b"), Tensor::zeros(&[d]));
            }
            if st + 1 < self.depths.len() {
                ln(&mut s, format!("stages.{st}.merge.norm"), 4 * d);
                s.add(format!("stages.{st}.merge.reduce.w"), glorot(rng, &[4 * d, 2 * d], 4 * d, 2 * d));
            }
        }
        let dl = self.stage_dim(self.depths.len() - 1);
        ln(&mut s, "norm".into(), dl);
        let mut width = dl;
        if self.head_hidden > 0 {
            s.add("head.hidden.w", glorot(rng, &[dl, self.head_hidden], dl, self.head_hidden));
            s.add("head.hidden.b", Tensor::zeros(&[self.head_hidden]));
            width = self.head_hidden;
        }
        s.add("head.out.w", glorot(rng, &[width, self.classes], width, self.classes));
        s.add("head.out.b", Tensor::zeros(&[self.classes]));
        s
    }

    pub(super) fn l2_params(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.head_hidden > 0 {
            v.push("head.hidden.w".to_string());
        }
        v.push("head.out.w".to_string());
        v
    }

    fn layernorm<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var, name: &str) -> EngineResult<Var> {
        let g = t.param(s, &format!("{name}.gamma"))?;
        let b = t.param(s, &format!("{name}.beta"))?;
        t.layernorm(x, g, b, T::of_f64(self.ln_eps))
    }

    fn block<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var, stage: usize, k: usize) -> EngineResult<Var> {
        let (b, extent, d) = grid(t, x, "swin block")?;
        let (window, shift) = self.block_geometry(extent, k);
        let pre = format!("stages.{stage}.blocks.{k}");
        let h = self.layernorm(t, s, x, &format!("{pre}.norm1"))?;
        // shift + partition and reverse + unshift are each fused into one
        // gather
        let part = partition_index(b, extent, d, window)?;
        let shifted = shift != [0; 3];
        let fwd: Vec<usize> = if shifted {
            let roll = cyclic_shift_index(b, extent, d, shift.map(|v| v as i64));
            part.iter().map(|&i| roll[i]).collect()
        } else {
            part
        };
        let back = invert(&fwd);
        let n: usize = window.iter().product();
        let nw = extent.iter().product::<usize>() / n;
        let win = t.gather(h, Arc::new(fwd), &[b * nw, n, d])?;
        let mask = if shifted {
            Some(Arc::new(build_shift_mask(extent, window, shift)?.cast::<T>()))
        } else {
            None
        };
        let p = |name: &str, t: &mut Tape<T>| t.param(s, &format!("{pre}.{name}"));
        let (qw, qb, pw, pb) = (p("attn.qkv.w", t)?, p("attn.qkv.b", t)?, p("attn.proj.w", t)?, p("attn.proj.b", t)?);
        let a = t.wmsa3d(win, qw, qb, pw, pb, self.heads[stage], mask)?;
        let a = t.gather(a, Arc::new(back), &[b, extent[0], extent[1], extent[2], d])?;
        let x = t.add(x, a)?;
        let h = self.layernorm(t, s, x, &format!("{pre}.norm2"))?;
        let (w1, b1) = (p("mlp.fc1.w", t)?, p("mlp.fc1.b", t)?);
        let h = t.linear(h, w1, Some(b1))?;
        let h = t.gelu(h)?;
        let (w2, b2) = (p("mlp.fc2.w", t)?, p("mlp.fc2.b", t)?);
        let h = t.linear(h, w2, Some(b2))?;
        t.add(x, h)
    }

    fn patch_embed<T: Real>(&self, t: &mut Tape<T>, s: &ParamStore<T>, x: Var) -> EngineResult<Var> {
        let bsz = t.shape(x)[0];
        let [pt, ph, pw] = self.patch;
        let [gt, gh, gw] = self.token_grid();
        let (h, w) = (self.height, self.width);
        let mut idx = Vec::with_capacity(t.value(x).numel());
        for b in 0..bsz {
            for it in 0..gt {
                for ih in 0..gh {
                    for iw in 0..gw {
                        for dt in 0..pt {
                            for dh in 0..ph {
                                for dw in 0..pw {
                                    let px = (((b * self.frames + it * pt + dt) * h + ih * ph + dh) * w) + iw * pw + dw;
                                    idx.extend(px * 3..px * 3 + 3);
                                }
                            }
                        }
                    }
                }
            }
        }
        let patches = t.gather(x, Arc::new(idx), &[bsz, gt, gh, gw, self.patch_len()])?;
        let (w, b) = (t.param(s, "patch_embed.w")?, t.param(s, "patch_embed.b")?);
        let e = t.linear(patches, w, Some(b))?;
        self.layernorm(t, s, e, "patch_embed.norm")
    }

    pub(super) fn forward<T: Real>(
        &self,
        t: &mut Tape<T>,
        s: &ParamStore<T>,
        x: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<ForwardOut<T>, ModelError> {
        let mut h = self.patch_embed(t, s, x)?;
        for (st, &depth) in self.depths.iter().enumerate() {
            for k in 0..depth {
                h = self.block(t, s, h, st, k)?;
            }
            if st + 1 < self.depths.len() {
                let g = t.param(s, &format!("stages.{st}.merge.norm.gamma"))?;
                let b = t.param(s, &format!("stages.{st}.merge.norm.beta"))?;
                let r = t.param(s, &format!("stages.{st}.merge.reduce.w"))?;
                h = t.patch_merge(h, Some((g, b, T::of_f64(self.ln_eps))), r)?;
            }
        }
        h = self.layernorm(t, s, h, "norm")?;
        let (bsz, extent, d) = grid(t, h, "swin readout")?;
        h = t.reshape(h, &[bsz, extent.iter().product(), d])?;
        h = t.mean_tokens(h)?;
        if self.head_hidden > 0 {
            let (w, b) = (t.param(s, "head.hidden.w")?, t.param(s, "head.hidden.b")?);
            h = t.dense(h, w, b, Activation::Relu)?;
        }
        h = t.dropout(h, self.head_dropout, ctx.mode, ctx.rng)?;
        let (w, b) = (t.param(s, "head.out.w")?, t.param(s, "head.out.b")?);
        let probs = t.dense(h, w, b, Activation::Softmax)?;
        Ok(ForwardOut {
            probs,
            buffer_updates: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::gradcheck::{check_gradients, check_param_gradients, random_tensor};
    use crate::engine::Mode;
    use crate::models::ModelConfig;
    use crate::rng::CountingRng;

    #[test]
    fn partition_counts_and_roundtrip() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(random_tensor(&[1, 4, 4, 4, 3], 1));
        let w = t.partition_windows3d(x, [2, 2, 2]).unwrap();
        assert_eq!(t.shape(w), &[8, 8, 3]);
        let back = t.reverse_windows3d(w, 1, [4, 4, 4], [2, 2, 2]).unwrap();
        assert_eq!(t.value(back), t.value(x));
        let whole = t.partition_windows3d(x, [4, 4, 4]).unwrap();
        assert_eq!(t.shape(whole), &[1, 64, 3]);
        assert_eq!(t.value(whole).data(), t.value(x).data());
        assert!(matches!(t.partition_windows3d(x, [3, 2, 2]), Err(EngineError::NotDivisible { .. })));
    }

    #[test]
    fn cyclic_shift_cases() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(random_tensor(&[2, 2, 3, 4, 2], 2));
        let same = t.cyclic_shift3d(x, [0, 0, 0]).unwrap();
        assert_eq!(t.value(same), t.value(x));
        let s = t.cyclic_shift3d(x, [1, 2, 3]).unwrap();
        let back = t.cyclic_shift3d(s, [-1, -2, -3]).unwrap();
        assert!(t.value(back).data().iter().zip(t.value(x).data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let y = t.constant(random_tensor(&[1, 2, 1, 1, 3], 3));
        let swapped = t.cyclic_shift3d(y, [1, 0, 0]).unwrap();
        let v = t.value(y).data().to_vec();
        assert_eq!(t.value(swapped).data(), &[v[3], v[4], v[5], v[0], v[1], v[2]]);
    }

    #[test]
    fn mask_cases() {
        let m = build_shift_mask([4, 4, 4], [2, 2, 2], [0, 0, 0]).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
        let m = build_shift_mask([1, 1, 4], [1, 1, 2], [0, 0, 1]).unwrap();
        assert_eq!(m.shape(), &[2, 2, 2]);
        assert!(m.data()[..4].iter().all(|&v| v == 0.0));
        assert_eq!(m.data()[4..], [0.0, MASK_NEG, MASK_NEG, 0.0]);
        let m = build_shift_mask([4, 8, 8], [2, 4, 4], [1, 2, 2]).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == MASK_NEG));
        assert!(m.data().contains(&MASK_NEG));
    }

    #[test]
    fn single_token_window_is_value_then_projection() {
        let d = 4;
        let mut t = Tape::<f64>::new();
        let x = t.constant(random_tensor(&[3, 1, d], 4));
        let qw = t.constant(random_tensor(&[d, 3 * d], 5));
        let qb = t.constant(random_tensor(&[3 * d], 6));
        let pw = t.constant(random_tensor(&[d, d], 7));
        let pb = t.constant(random_tensor(&[d], 8));
        let y = t.wmsa3d(x, qw, qb, pw, pb, 2, None).unwrap();
        let qkv = t.linear(x, qw, Some(qb)).unwrap();
        let qkv_val = t.value(qkv).clone();
        let vdata: Vec<f64> = qkv_val.data().chunks(3 * d).flat_map(|r| r[2 * d..].to_vec()).collect();
        let v = t.constant(Tensor::from_vec(&[3, 1, d], vdata));
        let expect = t.linear(v, pw, Some(pb)).unwrap();
        assert!(t.value(y).max_abs_diff(t.value(expect)) < 1e-12);
        assert!(matches!(t.wmsa3d(x, qw, qb, pw, pb, 3, None), Err(EngineError::HeadsDontDivide { .. })));
    }

    #[test]
    fn diagonal_mask_attends_to_self() {
        let (n, d) = (3, 4);
        let mut t = Tape::<f64>::new();
        let x = t.constant(random_tensor(&[2, n, d], 9));
        let qw = t.constant(random_tensor(&[d, 3 * d], 10));
        let qb = t.constant(Tensor::zeros(&[3 * d]));
        let mut eye = Tensor::zeros(&[d, d]);
        (0..d).for_each(|i| eye.data_mut()[i * d + i] = 1.0);
        let pw = t.constant(eye);
        let pb = t.constant(Tensor::zeros(&[d]));
        let mut mask = Tensor::full(&[1, n, n], MASK_NEG);
        (0..n).for_each(|i| mask.data_mut()[i * n + i] = 0.0);
        let y = t.wmsa3d(x, qw, qb, pw, pb, 2, Some(Arc::new(mask))).unwrap();
        let qkv = t.linear(x, qw, Some(qb)).unwrap();
        let v: Vec<f64> = t.value(qkv).data().chunks(3 * d).flat_map(|r| r[2 * d..].to_vec()).collect();
        assert!(t.value(y).data().iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn merge_shape_and_selector() {
        let d = 8;
        let mut t = Tape::<f64>::new();
        let x = t.constant(random_tensor(&[1, 2, 4, 4, d], 11));
        let mut sel = Tensor::zeros(&[4 * d, 2 * d]);
        (0..2 * d).for_each(|i| sel.data_mut()[i * 2 * d + i] = 1.0);
        let r = t.constant(sel);
        let y = t.patch_merge(x, None, r).unwrap();
        assert_eq!(t.shape(y), &[1, 2, 2, 2, 2 * d]);
        let xv = t.value(x).data();
        let yv = t.value(y).data();
        // output (t=1, h=1, w=0): top-left source (2, 0), then its lower neighbour (3, 0)
        let out = ((2 + 1) * 2) * 2 * d;
        let tl = ((4 + 2) * 4) * d;
        let below = ((4 + 3) * 4) * d;
        assert_eq!(&yv[out..out + d], &xv[tl..tl + d]);
        assert_eq!(&yv[out + d..out + 2 * d], &xv[below..below + d]);
        let odd = t.constant(random_tensor(&[1, 1, 3, 4, d], 12));
        assert!(matches!(t.patch_merge(odd, None, r), Err(EngineError::OddSpatialDims { .. })));
    }

    #[test]
    fn merge_and_attention_gradients() {
        for trial in 0..10 {
            let inputs = [
                random_tensor(&[1, 1, 2, 2, 3], 30 + trial),
                random_tensor(&[3], 40 + trial),
                random_tensor(&[3], 50 + trial),
                random_tensor(&[12, 4], 60 + trial),
            ];
            let r = check_gradients(&inputs, |t, v| {
                let g = t.constant(Tensor::full(&[12], 1.0));
                let b = t.constant(Tensor::zeros(&[12]));
                let y = t.patch_merge(v[0], Some((g, b, 1e-5)), v[3])?;
                let _ = (v[1], v[2]);
                Ok(y)
            })
            .unwrap();
            assert!(r.passed(1e-4), "{r:?}");
            let d = 4;
            let inputs = [
                random_tensor(&[2, 3, d], 70 + trial),
                random_tensor(&[d, 3 * d], 80 + trial),
                random_tensor(&[3 * d], 90 + trial),
                random_tensor(&[d, d], 100 + trial),
                random_tensor(&[d], 110 + trial),
            ];
            let mut mask = Tensor::zeros(&[2, 3, 3]);
            mask.data_mut()[1] = MASK_NEG;
            mask.data_mut()[3] = MASK_NEG;
            let mask = Arc::new(mask);
            let r = check_gradients(&inputs, |t, v| t.wmsa3d(v[0], v[1], v[2], v[3], v[4], 2, Some(mask.clone()))).unwrap();
            assert!(r.passed(1e-4), "{r:?}");
        }
    }

    fn tiny() -> ToySwinConfig {
        ToySwinConfig {
            frames: 4,
            height: 16,
            width: 16,
            window: [2, 2, 2],
            head_hidden: 8,
            ..Default::default()
        }
    }

    #[test]
    fn tiny_forward_is_a_distribution() {
        let cfg = ModelConfig::ToySwin(tiny());
        let store = cfg.init(1).unwrap();
        let mut tape = Tape::no_grad();
        let x = tape.constant(random_tensor(&[2, 4, 16, 16, 3], 2).map(|v| v.abs()));
        let mut rng = CountingRng::new(0);
        let out = cfg.forward(&mut tape, &store, x, &mut ForwardCtx::new(Mode::Eval, &mut rng)).unwrap();
        let p = tape.value(out.probs);
        assert_eq!(p.shape(), &[2, 8]);
        for row in p.data().chunks(8) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(rng.draws(), 0);
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = ToySwinConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.stage_grids(), vec![[4, 8, 8], [4, 4, 4]]);
        let (w, s) = cfg.block_geometry([4, 4, 4], 1);
        assert_eq!((w, s), ([2, 4, 4], [1, 0, 0]));
        let store = ModelConfig::ToySwin(cfg).init(0).unwrap();
        assert_eq!(store.num_elements(), 38_424);
    }

    #[test]
    fn unfrozen_subset_gradients() {
        let cfg = ToySwinConfig {
            frames: 2,
            height: 8,
            width: 8,
            embed_dim: 4,
            heads: vec![1, 2],
            window: [2, 2, 2],
            head_hidden: 5,
            head_dropout: 0.0,
            freeze: FreezePolicy::PaperPolicy,
            ..Default::default()
        };
        for trial in 0..2u64 {
            let policy = if trial == 0 { FreezePolicy::PaperPolicy } else { FreezePolicy::AllTrainable };
            let model = ModelConfig::ToySwin(ToySwinConfig { freeze: policy, ..cfg.clone() });
            let store = model.init(trial).unwrap();
            let x = random_tensor(&[2, 2, 8, 8, 3], 7 + trial);
            let r = check_param_gradients(&store, |t, s| {
                let xv = t.constant(x.clone());
                let mut rng = CountingRng::new(0);
                let out = model
                    .forward(t, s, xv, &mut ForwardCtx::new(Mode::Train, &mut rng))
                    .map_err(|e| match e {
                        ModelError::Engine(e) => e,
                        other => panic!("{other}"),
                    })?;
                t.sce(out.probs, &[3, 6])
            })
            .unwrap();
            assert!(r.passed(1e-4), "{r:?}");
            assert!(r.checked > 0);
        }
    }
}
