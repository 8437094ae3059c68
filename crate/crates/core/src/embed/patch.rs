use crate::error::{EtmaError, Result};
use crate::nn::{Linear, TokenSequence, INIT_STD};
use crate::tensor::{ParamId, ParamStore, Rng, Tape, Tensor};

/// Cuts an `h × w × c` image into non-overlapping `patch × patch` tiles.
///
/// Row `k` of the result is tile `k` (tiles enumerated row-major over the
/// grid), flattened row-major as (row, column, channel).
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let (h, w, c) = image_dims(image)?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(EtmaError::Config(format!(
            "image {h}x{w} is not divisible into {patch}x{patch} patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..patch {
                let start = ((gy * patch + py) * w + gx * patch) * c;
                out.extend_from_slice(&src[start..start + patch * c]);
            }
        }
    }
    Tensor::new(&[gh * gw, patch * patch * c], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, h: usize, w: usize, c: usize, patch: usize) -> Result<Tensor> {
    let gw = w / patch;
    let expect = [(h / patch) * gw, patch * patch * c];
    if patches.shape() != expect {
        return Err(EtmaError::dim("unpatchify", patches.shape(), &expect));
    }
    let mut out = vec![0.0; h * w * c];
    for (k, row) in patches.data().chunks(patch * patch * c).enumerate() {
        let (gy, gx) = (k / gw, k % gw);
        for py in 0..patch {
            let dst = ((gy * patch + py) * w + gx * patch) * c;
            out[dst..dst + patch * c].copy_from_slice(&row[py * patch * c..(py + 1) * patch * c]);
        }
    }
    Tensor::new(&[h, w, c], out)
}

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(EtmaError::Config(format!(
            "expected an h×w×c image, got shape {:?}",
            image.shape()
        ))),
    }
}

/// Linear patch projection, optional class token and learned position table.
#[derive(Debug, Clone)]
pub struct PatchEmbedder {
    pub patch: usize,
    pub image_size: (usize, usize, usize),
    pub dim: usize,
    pub projection: Linear,
    pub class_token: Option<ParamId>,
    pub pos_embed: ParamId,
}

impl PatchEmbedder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        image_size: (usize, usize, usize),
        patch: usize,
        dim: usize,
        with_class_token: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (h, w, c) = image_size;
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return Err(EtmaError::Config(format!(
                "image {h}x{w} is not divisible into {patch}x{patch} patches"
            )));
        }
        let projection = Linear::new(store, &format!("{name}.proj"), patch * patch * c, dim, true, rng);
        let class_token =
            with_class_token.then(|| store.add(format!("{name}.cls"), Tensor::trunc_normal(&[dim], INIT_STD, rng)));
        let n_tokens = (h / patch) * (w / patch) + usize::from(with_class_token);
        let pos_embed = store.add(
            format!("{name}.pos"),
            Tensor::trunc_normal(&[n_tokens, dim], INIT_STD, rng),
        );
        Ok(PatchEmbedder {
            patch,
            image_size,
            dim,
            projection,
            class_token,
            pos_embed,
        })
    }

    pub fn num_patches(&self) -> usize {
        let (h, w, _) = self.image_size;
        (h / self.patch) * (w / self.patch)
    }

    /// Output length: patches plus the class token when present.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + usize::from(self.class_token.is_some())
    }

    /// `[class; patches · W + b] + pos`, shape `[B, seq_len, dim]`.
    pub fn forward(&self, tape: &mut Tape<'_>, images: &[&Tensor]) -> Result<TokenSequence> {
        let b = images.len();
        if b == 0 {
            return Err(EtmaError::Contract("empty image batch".into()));
        }
        let np = self.num_patches();
        let width = self.patch * self.patch * self.image_size.2;
        let mut flat = Vec::with_capacity(b * np * width);
        for img in images {
            let (h, w, c) = image_dims(img)?;
            if (h, w, c) != self.image_size {
                let (eh, ew, ec) = self.image_size;
                return Err(EtmaError::dim("patch embed", img.shape(), &[eh, ew, ec]));
            }
            flat.extend(patchify(img, self.patch)?.into_data());
        }
        let patches = tape.constant(Tensor::new(&[b * np, width], flat)?);
        let proj = self.projection.forward(tape, patches)?;
        let mut tokens = tape.reshape(proj, &[b, np, self.dim])?;
        if let Some(cls) = self.class_token {
            let cls = tape.param(cls);
            let cls = tape.reshape(cls, &[1, 1, self.dim])?;
            let cls = tape.expand(cls, &[b, 1, self.dim])?;
            tokens = tape.concat(&[cls, tokens], 1)?;
        }
        let pos = tape.param(self.pos_embed);
        let values = tape.add(tokens, pos)?;
        Ok(TokenSequence::new(values, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn full_scale_and_desk_scale_patch_counts() {
        let big = Tensor::zeros(&[224, 224, 3]);
        assert_eq!(patchify(&big, 16).unwrap().shape(), &[196, 768]);
        let small = Tensor::zeros(&[32, 32, 3]);
        assert_eq!(patchify(&small, 8).unwrap().shape(), &[16, 192]);
    }

    #[test]
    fn indivisible_image_is_rejected_with_dims() {
        let err = patchify(&Tensor::zeros(&[30, 32, 3]), 8).unwrap_err().to_string();
        assert!(err.contains("30x32") && err.contains("8x8"), "{err}");
    }

    #[test]
    fn first_patch_is_top_left_tile() {
        let img = Tensor::new(&[4, 4, 1], (0..16).map(f64::from).collect()).unwrap();
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p.row(3), &[10.0, 11.0, 14.0, 15.0]);
    }

    proptest! {
        #[test]
        fn patches_partition_the_image(gh in 1usize..4, gw in 1usize..4, p in 1usize..5, c in 1usize..4, seed in any::<u64>()) {
            let (h, w) = (gh * p, gw * p);
            let img = Tensor::uniform(&[h, w, c], 0.0, 1.0, &mut Rng::new(seed));
            let patches = patchify(&img, p).unwrap();
            prop_assert_eq!(patches.shape()[0], gh * gw);
            prop_assert!((patches.sum() - img.sum()).abs() < 1e-9);
            prop_assert_eq!(unpatchify(&patches, h, w, c, p).unwrap(), img);
        }
    }

    fn embedder(store: &mut ParamStore) -> PatchEmbedder {
        PatchEmbedder::new(store, "v", (32, 32, 3), 8, 6, true, &mut Rng::new(1)).unwrap()
    }

    #[test]
    fn zero_everything_gives_zero_sequence() {
        let mut store = ParamStore::new();
        let e = embedder(&mut store);
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        store.value_mut(e.projection.weight).data_mut().fill(0.3);
        let img = Tensor::zeros(&[32, 32, 3]);
        let mut tape = Tape::with_params(&store);
        let seq = e.forward(&mut tape, &[&img]).unwrap();
        assert_eq!(tape.shape(seq.values), &[1, 17, 6]);
        assert!(tape.value(seq.values).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_change_only_moves_its_own_token() {
        let mut store = ParamStore::new();
        let e = embedder(&mut store);
        let a = Tensor::uniform(&[32, 32, 3], 0.0, 1.0, &mut Rng::new(2));
        let mut b = a.clone();
        // pixel (9, 17) lies in grid cell (1, 2) = patch 6 → token 7
        b.set(&[9, 17, 1], 0.123);
        let mut tape = Tape::with_params(&store);
        let sa = e.forward(&mut tape, &[&a]).unwrap();
        let sb = e.forward(&mut tape, &[&b]).unwrap();
        let (va, vb) = (tape.value(sa.values), tape.value(sb.values));
        for tok in 0..17 {
            let differs = (0..6).any(|j| va.get(&[0, tok, j]) != vb.get(&[0, tok, j]));
            assert_eq!(differs, tok == 7, "token {tok}");
        }
    }
}
