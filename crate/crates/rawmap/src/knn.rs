//! KNN transform-interpolation baselines over a bank of precomputed
//! least-squares transforms between all ordered training-illuminant pairs.

use serde::{Deserialize, Serialize};

use crate::color::{
    fit_transform_lsq, to_chromaticity, Chromaticity, Illuminant, RawImage, Transform3,
};
use crate::error::{Error, Result};
use crate::par;

/// Distance below which a query counts as an exact match of a training
/// chromaticity.
const EXACT_MATCH_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnVariant {
    /// Nearest source and nearest target: a pure lookup.
    OneNnOneNn,
    /// Nearest source, K-interpolated target.
    OneNnKnn,
    /// K-interpolated source, nearest target.
    KnnOneNn,
    /// Two-step through the D65 anchor, K-interpolated on both sides.
    KnnD65Knn,
}

impl KnnVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1nn-1nn" => Ok(Self::OneNnOneNn),
            "1nn-knn" | "1nn-2nn" => Ok(Self::OneNnKnn),
            "knn-1nn" | "2nn-1nn" => Ok(Self::KnnOneNn),
            "knn-d65-knn" | "2nn-d65-2nn" => Ok(Self::KnnD65Knn),
            other => Err(Error::Parameter(format!("unknown KNN variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankEntry {
    pub illum: Illuminant,
    pub chroma: Chromaticity,
}

/// Precomputed transforms between all ordered training-illuminant pairs,
/// stored densely: `transforms[u * n + v]` maps illuminant u to v.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformBank {
    pub illums: Vec<BankEntry>,
    pub transforms: Vec<Transform3>,
}

impl TransformBank {
    pub fn len(&self) -> usize {
        self.illums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.illums.is_empty()
    }

    pub fn transform(&self, u: usize, v: usize) -> &Transform3 {
        &self.transforms[u * self.len() + v]
    }

    pub fn index_of(&self, illum_id: &str) -> Option<usize> {
        self.illums.iter().position(|e| e.illum.id == illum_id)
    }

    /// Fits the full ordered-pair bank from one scene rendered under every
    /// training illuminant. The pixel correspondences drive least-squares
    /// 3x3 fits.
    pub fn fit(illums: &[Illuminant], images: &[RawImage]) -> Result<Self> {
        if illums.len() != images.len() {
            return Err(Error::Data("illuminant/image lists misaligned".into()));
        }
        if illums.is_empty() {
            return Err(Error::Data("empty bank".into()));
        }
        let entries: Vec<BankEntry> = illums
            .iter()
            .map(|l| Ok(BankEntry { illum: l.clone(), chroma: to_chromaticity(l)? }))
            .collect::<Result<_>>()?;
        let n = illums.len();
        let pixels: Vec<Vec<[f64; 3]>> = images
            .iter()
            .map(|img| (0..img.n_pixels()).map(|i| img.pixel(i)).collect())
            .collect();
        let transforms: Vec<Transform3> = par::map_range(n * n, |k| {
            let (u, v) = (k / n, k % n);
            fit_transform_lsq(&pixels[u], &pixels[v])
        })
        .into_iter()
        .collect::<Result<_>>()?;
        Ok(Self { illums: entries, transforms })
    }
}

/// K nearest chromaticities out of `chromas` with normalized
/// inverse-distance weights. An exact match short-circuits to weight 1 on
/// that neighbor.
pub fn nearest_weights(
    chromas: &[Chromaticity],
    query: &Chromaticity,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if chromas.is_empty() {
        return Err(Error::Data("empty chromaticity set".into()));
    }
    if k == 0 || k > chromas.len() {
        return Err(Error::Parameter(format!("k = {k} outside [1, {}]", chromas.len())));
    }
    let mut dists: Vec<(usize, f64)> =
        chromas.iter().enumerate().map(|(i, c)| (i, c.distance(query))).collect();
    dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    dists.truncate(k);
    if dists[0].1 < EXACT_MATCH_EPS {
        return Ok(dists
            .iter()
            .enumerate()
            .map(|(rank, &(i, _))| (i, if rank == 0 { 1.0 } else { 0.0 }))
            .collect());
    }
    let inv: Vec<f64> = dists.iter().map(|(_, d)| 1.0 / d).collect();
    let total: f64 = inv.iter().sum();
    Ok(dists.iter().zip(&inv).map(|(&(i, _), w)| (i, w / total)).collect())
}

/// `nearest_weights` over a transform bank's training illuminants.
pub fn knn_lookup(bank: &TransformBank, query: &Chromaticity, k: usize) -> Result<Vec<(usize, f64)>> {
    let chromas: Vec<Chromaticity> = bank.illums.iter().map(|e| e.chroma).collect();
    nearest_weights(&chromas, query, k)
}

fn weighted_average(bank: &TransformBank, terms: &[(usize, usize, f64)]) -> Transform3 {
    let mut m = [0.0; 9];
    for &(u, v, w) in terms {
        let t = bank.transform(u, v);
        for k in 0..9 {
            m[k] += w * t.m[k];
        }
    }
    Transform3 { m }
}

/// Interpolated transform for a source/target illuminant query. The result
/// is Frobenius-normalized for comparability with the other methods.
pub fn knn_transform(
    bank: &TransformBank,
    src: &Illuminant,
    dst: &Illuminant,
    variant: KnnVariant,
    k: usize,
) -> Result<Transform3> {
    let qs = to_chromaticity(src)?;
    let qd = to_chromaticity(dst)?;
    let t = match variant {
        KnnVariant::OneNnOneNn => {
            let u = knn_lookup(bank, &qs, 1)?[0].0;
            let v = knn_lookup(bank, &qd, 1)?[0].0;
            *bank.transform(u, v)
        }
        KnnVariant::OneNnKnn => {
            let u = knn_lookup(bank, &qs, 1)?[0].0;
            let vs = knn_lookup(bank, &qd, k)?;
            let terms: Vec<_> = vs.iter().map(|&(v, w)| (u, v, w)).collect();
            weighted_average(bank, &terms)
        }
        KnnVariant::KnnOneNn => {
            let us = knn_lookup(bank, &qs, k)?;
            let v = knn_lookup(bank, &qd, 1)?[0].0;
            let terms: Vec<_> = us.iter().map(|&(u, w)| (u, v, w)).collect();
            weighted_average(bank, &terms)
        }
        KnnVariant::KnnD65Knn => {
            let d65 = bank
                .index_of("D65")
                .ok_or_else(|| Error::Data("bank has no D65 anchor illuminant".into()))?;
            let us = knn_lookup(bank, &qs, k)?;
            let vs = knn_lookup(bank, &qd, k)?;
            let to_d65_terms: Vec<_> = us.iter().map(|&(u, w)| (u, d65, w)).collect();
            let from_d65_terms: Vec<_> = vs.iter().map(|&(v, w)| (d65, v, w)).collect();
            let to_d65 = weighted_average(bank, &to_d65_terms);
            let from_d65 = weighted_average(bank, &from_d65_terms);
            from_d65.compose(&to_d65)
        }
    };
    Ok(t.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn illum(rgb: [f64; 3], id: &str) -> Illuminant {
        Illuminant::new(rgb, id).unwrap()
    }

    /// A synthetic bank of exactly-consistent diagonal transforms, as in a
    /// delta-sensor world.
    fn diagonal_bank() -> TransformBank {
        let lights = vec![
            illum([1.0, 1.0, 1.0], "D65"),
            illum([1.6, 1.0, 0.5], "warm"),
            illum([0.6, 1.0, 1.5], "cool"),
            illum([1.2, 1.0, 0.8], "mid"),
        ];
        let n = lights.len();
        let mut transforms = Vec::with_capacity(n * n);
        for u in 0..n {
            for v in 0..n {
                let t = Transform3::diagonal([
                    lights[v].rgb[0] / lights[u].rgb[0],
                    lights[v].rgb[1] / lights[u].rgb[1],
                    lights[v].rgb[2] / lights[u].rgb[2],
                ]);
                transforms.push(t.normalized());
            }
        }
        let illums = lights
            .into_iter()
            .map(|l| {
                let chroma = to_chromaticity(&l).unwrap();
                BankEntry { illum: l, chroma }
            })
            .collect();
        TransformBank { illums, transforms }
    }

    #[test]
    fn lookup_exact_match_short_circuits() {
        let bank = diagonal_bank();
        let q = to_chromaticity(&bank.illums[1].illum).unwrap();
        let w = knn_lookup(&bank, &q, 2).unwrap();
        assert_eq!(w[0].0, 1);
        assert_eq!(w[0].1, 1.0);
        assert_eq!(w[1].1, 0.0);
    }

    #[test]
    fn lookup_inverse_distance_weights() {
        let bank = diagonal_bank();
        // Query collinear with "D65"(1,1) and "mid"(1.2,0.8): distances d and
        // 3d give weights 0.75 / 0.25.
        let q = Chromaticity { rg: 1.05, bg: 0.95 };
        let w = knn_lookup(&bank, &q, 2).unwrap();
        assert_eq!(w[0].0, 0);
        assert_eq!(w[1].0, 3);
        assert_abs_diff_eq!(w[0].1, 0.75, epsilon = 1e-9);
        assert_abs_diff_eq!(w[1].1, 0.25, epsilon = 1e-9);
    }

    #[test]
    fn lookup_k1_gives_unit_weight() {
        let bank = diagonal_bank();
        let q = Chromaticity { rg: 1.55, bg: 0.52 };
        let w = knn_lookup(&bank, &q, 1).unwrap();
        assert_eq!(w, vec![(1, 1.0)]);
    }

    #[test]
    fn in_bank_queries_return_stored_transforms() {
        let bank = diagonal_bank();
        let src = bank.illums[1].illum.clone();
        let dst = bank.illums[2].illum.clone();
        let stored = *bank.transform(1, 2);
        for variant in [KnnVariant::OneNnOneNn, KnnVariant::OneNnKnn, KnnVariant::KnnOneNn] {
            let t = knn_transform(&bank, &src, &dst, variant, 2).unwrap();
            for k in 0..9 {
                assert_abs_diff_eq!(t.m[k], stored.m[k], epsilon = 1e-12);
            }
        }
        // The D65 composition agrees with the stored transform here because
        // the diagonal world is exactly multiplicative.
        let t = knn_transform(&bank, &src, &dst, KnnVariant::KnnD65Knn, 2).unwrap();
        for k in 0..9 {
            assert_abs_diff_eq!(t.m[k], stored.m[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn equal_distances_average_the_neighbors() {
        let bank = diagonal_bank();
        // Equidistant from "D65"(1,1) and "mid"(1.2,0.8).
        let q = Chromaticity { rg: 1.1, bg: 0.9 };
        let w = knn_lookup(&bank, &q, 2).unwrap();
        assert_abs_diff_eq!(w[0].1, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(w[1].1, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn interpolation_is_convex_per_entry() {
        let bank = diagonal_bank();
        let src = illum([1.3, 1.0, 0.7], "q_src");
        let dst = illum([0.8, 1.0, 1.2], "q_dst");
        let us = knn_lookup(&bank, &to_chromaticity(&src).unwrap(), 2).unwrap();
        let v = knn_lookup(&bank, &to_chromaticity(&dst).unwrap(), 1).unwrap()[0].0;
        let terms: Vec<_> = us.iter().map(|&(u, w)| (u, v, w)).collect();
        let avg = weighted_average(&bank, &terms);
        for k in 0..9 {
            let lo = terms.iter().map(|&(u, v, _)| bank.transform(u, v).m[k]).fold(f64::INFINITY, f64::min);
            let hi = terms
                .iter()
                .map(|&(u, v, _)| bank.transform(u, v).m[k])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(avg.m[k] >= lo - 1e-12 && avg.m[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn fitted_bank_self_transform_is_identity() {
        use crate::color::RawImage;
        let pixels: Vec<[f64; 3]> =
            vec![[0.3, 0.5, 0.2], [0.9, 0.1, 0.4], [0.2, 0.8, 0.7], [0.5, 0.5, 0.5]];
        let n = pixels.len();
        let mut data = vec![0.0; n * 3];
        for (i, p) in pixels.iter().enumerate() {
            for c in 0..3 {
                data[c * n + i] = p[c];
            }
        }
        let img = RawImage::new(n, 1, 3, data, "cam", "a").unwrap();
        let illums = vec![illum([1.0, 1.0, 1.0], "a"), illum([1.5, 1.0, 0.6], "b")];
        let bank = TransformBank::fit(&illums, &[img.clone(), img]).unwrap();
        let id = Transform3::identity().normalized();
        for k in 0..9 {
            assert_abs_diff_eq!(bank.transform(0, 0).m[k], id.m[k], epsilon = 1e-9);
            assert_abs_diff_eq!(bank.transform(1, 1).m[k], id.m[k], epsilon = 1e-9);
        }
    }

    #[test]
    fn bank_json_roundtrip() {
        let bank = diagonal_bank();
        let json = serde_json::to_string(&bank).unwrap();
        let back: TransformBank = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
        assert_eq!(back.len(), bank.len());
    }
}
