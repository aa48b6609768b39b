//! Monomial bases and Gram-matrix polynomials `zᵀ Θ z`, `z = Z_q(x)`.

use std::cmp::{Ordering, Reverse};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RoaError};
use crate::linalg::{self, rows_serde};

pub const RANK_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-8;
pub const SYMMETRY_TOL: f64 = 1e-12;

/// All monomials of total degree `≤ q` in `n` variables, in graded
/// lexicographic order: by total degree, then by descending exponent
/// tuples, so `(1, x1, x2, x1², x1x2, x2²)` for `n = q = 2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonomialBasis {
    pub n: usize,
    pub q: usize,
    pub exponents: Vec<Vec<u32>>,
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn order_key(e: &[u32]) -> (u32, Reverse<&[u32]>) {
    (e.iter().sum(), Reverse(e))
}

impl MonomialBasis {
    pub fn new(n: usize, q: usize) -> Result<Self> {
        if n == 0 {
            return Err(RoaError::InvalidArgument("basis needs n >= 1".into()));
        }
        let mut exponents = Vec::with_capacity(binomial(n + q, q));
        for d in 0..=q as u32 {
            let mut cur = vec![0u32; n];
            push_degree(&mut exponents, &mut cur, 0, d);
        }
        Ok(Self { n, q, exponents })
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn index_of(&self, exponent: &[u32]) -> Option<usize> {
        let key = order_key(exponent);
        self.exponents
            .binary_search_by(|e| order_key(e).cmp(&key))
            .ok()
    }

    /// `Z_q(x)`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: &[f64], out: &mut Vec<f64>) {
        assert_eq!(x.len(), self.n, "point dimension does not match basis");
        // pow[j][d] = x_j^d
        let pow: Vec<Vec<f64>> = x
            .iter()
            .map(|&v| {
                let mut row = Vec::with_capacity(self.q + 1);
                let mut acc = 1.0;
                for _ in 0..=self.q {
                    row.push(acc);
                    acc *= v;
                }
                row
            })
            .collect();
        out.clear();
        out.extend(self.exponents.iter().map(|e| {
            e.iter()
                .enumerate()
                .map(|(j, &d)| pow[j][d as usize])
                .product::<f64>()
        }));
    }

    /// Degree-`2q` basis together with, for each `(i, j)`, the index of
    /// `e_i + e_j` in it (row-major `n_q × n_q`).
    pub fn square_map(&self) -> (MonomialBasis, Vec<usize>) {
        let doubled = MonomialBasis::new(self.n, 2 * self.q).expect("n >= 1");
        let mut map = Vec::with_capacity(self.len() * self.len());
        let mut sum = vec![0u32; self.n];
        for a in &self.exponents {
            for b in &self.exponents {
                for (s, (x, y)) in sum.iter_mut().zip(a.iter().zip(b)) {
                    *s = x + y;
                }
                map.push(doubled.index_of(&sum).expect("sum of exponents lies in doubled basis"));
            }
        }
        (doubled, map)
    }
}

fn push_degree(out: &mut Vec<Vec<u32>>, cur: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(cur.to_vec());
        return;
    }
    for first in (0..=remaining).rev() {
        cur[pos] = first;
        push_degree(out, cur, pos + 1, remaining - first);
    }
    cur[pos] = 0;
}

/// `x ↦ Z_q(x)ᵀ Θ Z_q(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramPoly {
    pub basis: MonomialBasis,
    pub theta: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct GramDoc {
    n: usize,
    q: usize,
    exponent_order: String,
    #[serde(with = "rows_serde")]
    theta: DMatrix<f64>,
}

impl Serialize for GramPoly {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GramDoc {
            n: self.basis.n,
            q: self.basis.q,
            exponent_order: "gradlex".into(),
            theta: self.theta.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GramPoly {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let doc = GramDoc::deserialize(d)?;
        if doc.exponent_order != "gradlex" {
            return Err(D::Error::custom(format!(
                "unsupported exponent order {:?}",
                doc.exponent_order
            )));
        }
        let basis = MonomialBasis::new(doc.n, doc.q).map_err(D::Error::custom)?;
        GramPoly::new(basis, doc.theta).map_err(D::Error::custom)
    }
}

impl GramPoly {
    pub fn new(basis: MonomialBasis, theta: DMatrix<f64>) -> Result<Self> {
        let nq = basis.len();
        if theta.nrows() != nq || theta.ncols() != nq {
            return Err(RoaError::DimensionMismatch {
                expected: nq,
                got: theta.nrows(),
            });
        }
        let asym = linalg::asymmetry(&theta);
        let scale = theta.amax().max(1.0);
        if asym > SYMMETRY_TOL * scale {
            return Err(RoaError::InvalidArgument(format!(
                "Gram matrix is not symmetric (asymmetry {asym})"
            )));
        }
        Ok(Self { basis, theta })
    }

    pub fn zeros(basis: MonomialBasis) -> Self {
        let nq = basis.len();
        Self {
            basis,
            theta: DMatrix::zeros(nq, nq),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let z = DVector::from_vec(self.basis.eval(x));
        (z.transpose() * &self.theta * &z)[(0, 0)]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_sym_eigenvalue(&self.theta)
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue() >= -PSD_TOL
    }

    /// Coefficients in the degree-`2q` monomial basis.
    pub fn flatten(&self) -> Vec<f64> {
        let (doubled, map) = self.basis.square_map();
        let nq = self.basis.len();
        let mut out = vec![0.0; doubled.len()];
        for i in 0..nq {
            for j in 0..nq {
                out[map[i * nq + j]] += self.theta[(i, j)];
            }
        }
        out
    }
}

/// Numerical rank of the `n_q × N` matrix of basis evaluations.
pub fn sample_matrix_rank(basis: &MonomialBasis, points: &[Vec<f64>]) -> Result<usize> {
    if points.is_empty() {
        return Err(RoaError::InvalidArgument("rank needs at least one point".into()));
    }
    let cols: Vec<f64> = points.iter().flat_map(|p| basis.eval(p)).collect();
    let s = DMatrix::from_column_slice(basis.len(), points.len(), &cols);
    let sv = s.svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|v| **v > RANK_TOL * top).count())
}

/// Compare two exponent tuples in basis order.
pub fn gradlex_cmp(a: &[u32], b: &[u32]) -> Ordering {
    order_key(a).cmp(&order_key(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(nq: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(nq, nq, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn sizes_match_binomial() {
        for (q, want) in [(1, 3), (2, 6), (3, 10), (4, 15)] {
            assert_eq!(MonomialBasis::new(2, q).unwrap().len(), want);
        }
        for n in 1..6 {
            for q in 0..5 {
                assert_eq!(MonomialBasis::new(n, q).unwrap().len(), binomial(n + q, q));
            }
        }
    }

    #[test]
    fn order_is_gradlex() {
        let b = MonomialBasis::new(2, 2).unwrap();
        let want: Vec<Vec<u32>> = vec![
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
        ];
        assert_eq!(b.exponents, want);
        let b = MonomialBasis::new(3, 3).unwrap();
        for w in b.exponents.windows(2) {
            assert_eq!(gradlex_cmp(&w[0], &w[1]), Ordering::Less);
        }
        for (i, e) in b.exponents.iter().enumerate() {
            assert_eq!(b.index_of(e), Some(i));
        }
    }

    #[test]
    fn eval_examples() {
        let b = MonomialBasis::new(2, 2).unwrap();
        assert_eq!(b.eval(&[0.0, 0.0]), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.eval(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn gram_examples() {
        let b = MonomialBasis::new(2, 2).unwrap();
        let identity = GramPoly::new(b.clone(), DMatrix::identity(6, 6)).unwrap();
        assert!(identity.eval(&[0.3, -0.1]) >= 1.0);
        let mut e1 = DMatrix::zeros(6, 6);
        e1[(0, 0)] = 1.0;
        let constant = GramPoly::new(b, e1).unwrap();
        assert_eq!(constant.eval(&[5.0, -7.0]), 1.0);
    }

    #[test]
    fn flatten_identity_linear() {
        let b = MonomialBasis::new(2, 1).unwrap();
        let p = GramPoly::new(b, DMatrix::identity(3, 3)).unwrap();
        // degree-2 basis: 1, x1, x2, x1², x1x2, x2²
        assert_eq!(p.flatten(), vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let zero = GramPoly::zeros(MonomialBasis::new(2, 2).unwrap());
        assert!(zero.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rank_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for q in 1..=4 {
            let b = MonomialBasis::new(2, q).unwrap();
            let pts: Vec<Vec<f64>> = (0..b.len())
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            assert_eq!(sample_matrix_rank(&b, &pts).unwrap(), b.len());
            let same = vec![vec![0.4, -0.2]; 7];
            assert_eq!(sample_matrix_rank(&b, &same).unwrap(), 1);
            let line: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1 - 1.0, 0.0]).collect();
            assert!(sample_matrix_rank(&b, &line).unwrap() <= q + 1);
        }
    }

    #[test]
    fn json_round_trip_preserves_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = MonomialBasis::new(2, 3).unwrap();
        let p = GramPoly::new(b, random_sym(10, &mut rng)).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"gradlex\""));
        let back: GramPoly = serde_json::from_str(&text).unwrap();
        for _ in 0..20 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            assert_eq!(back.eval(&x), p.eval(&x));
        }
    }

    #[test]
    fn asymmetric_theta_rejected() {
        let b = MonomialBasis::new(1, 1).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GramPoly::new(b, m).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn flatten_matches_gram_eval(n in 1usize..=5, q in 0usize..=4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = MonomialBasis::new(n, q).unwrap();
            let p = GramPoly::new(b.clone(), random_sym(b.len(), &mut rng)).unwrap();
            let coeffs = p.flatten();
            let (doubled, _) = b.square_map();
            for _ in 0..100 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let direct = p.eval(&x);
                let via: f64 = doubled.eval(&x).iter().zip(&coeffs).map(|(a, c)| a * c).sum();
                let scale = direct.abs().max(1.0);
                prop_assert!((direct - via).abs() <= 1e-10 * scale, "{} vs {}", direct, via);
            }
        }

        #[test]
        fn random_points_have_full_rank(q in 1usize..=4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = MonomialBasis::new(2, q).unwrap();
            let pts: Vec<Vec<f64>> = (0..b.len())
                .map(|_| vec![rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)])
                .collect();
            prop_assert_eq!(sample_matrix_rank(&b, &pts).unwrap(), b.len());
        }
    }
}
