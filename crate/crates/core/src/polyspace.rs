//! Multi-index bookkeeping, monomial evaluation, and orthonormalization
//! against exact (moment-oracle) or discrete (sample-based) inner products.
//!
//! Multi-indices are ordered by total degree, and inside each degree block by
//! descending lexicographic order — in two variables the block of degree k
//! reads (k,0), (k−1,1), …, (0,k). Every prefix of this order is downward
//! closed, so leading sub-blocks of a triangular basis span exactly the
//! lower-degree spaces; nested multilevel schemes rely on that.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::hexfloat;
use crate::qr;

/// Dimension of the total-degree-ℓ polynomial space in d variables:
/// the binomial coefficient C(d+ℓ, ℓ), computed exactly.
pub fn space_dimension(d: usize, ell: u32) -> Result<usize> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be ≥ 1".into()));
    }
    let mut c: u128 = 1;
    for i in 1..=(d as u128) {
        c = c
            .checked_mul(ell as u128 + i)
            .ok_or(Error::Overflow("total-degree space dimension"))?
            / i;
    }
    usize::try_from(c).map_err(|_| Error::Overflow("total-degree space dimension"))
}

/// An ordered multi-index set spanning polynomials in `dim` variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolynomialSpace {
    dim: usize,
    degree: u32,
    indices: Vec<Vec<u32>>,
    /// For each non-constant index j: (position of ν − e_c, c), enabling
    /// evaluation by one multiplication per monomial.
    parent: Vec<(usize, usize)>,
}

fn degree_block(dim: usize, k: u32) -> Vec<Vec<u32>> {
    // Descending lexicographic order within the block.
    if dim == 1 {
        return vec![vec![k]];
    }
    let mut out = Vec::new();
    for first in (0..=k).rev() {
        for rest in degree_block(dim - 1, k - first) {
            let mut nu = Vec::with_capacity(dim);
            nu.push(first);
            nu.extend(rest);
            out.push(nu);
        }
    }
    out
}

impl PolynomialSpace {
    /// The full space of total degree ≤ `ell`.
    pub fn total_degree(dim: usize, ell: u32) -> Result<PolynomialSpace> {
        let n = space_dimension(dim, ell)?;
        Self::with_dimension_impl(dim, n, ell)
    }

    /// The first `n` basis monomials of the graded order (the trailing degree
    /// block may be partial; every prefix is downward closed).
    pub fn with_dimension(dim: usize, n: usize) -> Result<PolynomialSpace> {
        Self::with_dimension_impl(dim, n, u32::MAX)
    }

    fn with_dimension_impl(dim: usize, n: usize, max_degree: u32) -> Result<PolynomialSpace> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be ≥ 1".into()));
        }
        if n == 0 {
            return Err(Error::InvalidParameter(
                "space must contain at least the constant".into(),
            ));
        }
        let mut indices: Vec<Vec<u32>> = Vec::with_capacity(n);
        let mut position: HashMap<Vec<u32>, usize> = HashMap::with_capacity(n);
        let mut degree = 0u32;
        'outer: for k in 0.. {
            if k > max_degree {
                break;
            }
            for nu in degree_block(dim, k) {
                if indices.len() == n {
                    break 'outer;
                }
                position.insert(nu.clone(), indices.len());
                indices.push(nu);
                degree = k;
            }
        }
        let mut parent = Vec::with_capacity(indices.len());
        for (j, nu) in indices.iter().enumerate() {
            if j == 0 {
                parent.push((0, 0));
                continue;
            }
            let c = nu.iter().position(|&e| e > 0).expect("non-constant index");
            let mut down = nu.clone();
            down[c] -= 1;
            let p = position[&down];
            parent.push((p, c));
        }
        Ok(PolynomialSpace {
            dim,
            degree,
            indices,
            parent,
        })
    }

    /// The leading `n` monomials as a standalone space.
    pub fn prefix(&self, n: usize) -> Result<PolynomialSpace> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidParameter(format!(
                "prefix size {n} outside 1..={}",
                self.len()
            )));
        }
        Ok(PolynomialSpace {
            dim: self.dim,
            degree: self.indices[..n]
                .iter()
                .map(|nu| nu.iter().sum::<u32>())
                .max()
                .unwrap_or(0),
            indices: self.indices[..n].to_vec(),
            parent: self.parent[..n].to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest total degree present.
    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    /// All monomials x^ν at one point, in space order.
    pub fn evaluate_monomials(&self, x: &[f64]) -> DVector<f64> {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        let n = self.len();
        let mut out = DVector::zeros(n);
        out[0] = 1.0;
        for j in 1..n {
            let (p, c) = self.parent[j];
            out[j] = out[p] * x[c];
        }
        out
    }

    /// Monomial values at many points: result is n × M with one column per
    /// input column.
    pub fn evaluate_monomials_block(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(points.nrows(), self.dim, "point dimension mismatch");
        let n = self.len();
        let m = points.ncols();
        let mut out = DMatrix::zeros(n, m);
        for i in 0..m {
            let mut col = out.column_mut(i);
            col[0] = 1.0;
            for j in 1..n {
                let (p, c) = self.parent[j];
                col[j] = col[p] * points[(c, i)];
            }
        }
        out
    }
}

/// Evaluation points with non-negative weights defining the inner product
/// ⟨u, v⟩ = (1/M) Σᵢ wᵢ u(zⁱ) v(zⁱ).
#[derive(Clone, Debug)]
pub struct DiscreteInnerProduct {
    points: DMatrix<f64>,
    weights: DVector<f64>,
    points_id: String,
    weights_id: String,
}

impl DiscreteInnerProduct {
    pub fn new(
        points: DMatrix<f64>,
        weights: DVector<f64>,
        points_id: String,
        weights_id: String,
    ) -> Result<DiscreteInnerProduct> {
        if points.ncols() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} points but {} weights",
                points.ncols(),
                weights.len()
            )));
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidParameter("empty point set".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and non-negative".into(),
            ));
        }
        Ok(DiscreteInnerProduct {
            points,
            weights,
            points_id,
            weights_id,
        })
    }

    /// Unweighted inner product (all weights 1) on the given points.
    pub fn unit_weights(points: DMatrix<f64>, points_id: String) -> Result<DiscreteInnerProduct> {
        let m = points.ncols();
        Self::new(
            points,
            DVector::from_element(m, 1.0),
            points_id,
            "unit".to_string(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn points_id(&self) -> &str {
        &self.points_id
    }

    pub fn weights_id(&self) -> &str {
        &self.weights_id
    }
}

/// Where a basis's defining inner product came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Orthonormal for the continuous uniform measure of a named domain.
    Exact { domain: String },
    /// Orthonormal for a discrete sample inner product.
    Discrete { points_id: String, weights_id: String },
    /// No orthonormality claim (e.g. the raw monomial basis).
    Raw,
}

/// A triangular change of basis from monomials to functions (L₁, …, L_n)
/// orthonormal in the inner product described by `provenance`.
#[derive(Clone, Debug)]
pub struct OrthonormalBasis {
    space: Arc<PolynomialSpace>,
    /// Lower triangular with strictly positive diagonal: L(x) = transform ·
    /// monomials(x). Triangularity means the first k basis functions span the
    /// same space as the first k monomials, for every k.
    transform: DMatrix<f64>,
    /// Double-double copy of the lower triangle (row-major, row j holds j+1
    /// entries); kept for exact-provenance bases so orthonormality can be
    /// re-verified at full precision.
    transform_dd: Option<Arc<Vec<Dd>>>,
    provenance: Provenance,
    /// Max-abs deviation of the basis Gram matrix from the identity in the
    /// defining inner product, as measured at construction.
    gram_residual: f64,
    /// Exact provenance only: the diagonal ⟨L_j, L_j⟩ computed against the
    /// moment oracle, whose prefix sums give ∫ k dμ for any leading sub-basis.
    gram_diag: Option<Arc<Vec<f64>>>,
}

impl OrthonormalBasis {
    /// The identity transform: basis functions are the raw monomials, with no
    /// orthonormality claim.
    pub fn monomial_identity(space: Arc<PolynomialSpace>) -> OrthonormalBasis {
        let n = space.len();
        OrthonormalBasis {
            space,
            transform: DMatrix::identity(n, n),
            transform_dd: None,
            provenance: Provenance::Raw,
            gram_residual: 0.0,
            gram_diag: None,
        }
    }

    pub fn space(&self) -> &Arc<PolynomialSpace> {
        &self.space
    }

    pub fn n(&self) -> usize {
        self.space.len()
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn gram_residual(&self) -> f64 {
        self.gram_residual
    }

    /// ⟨L_j, L_j⟩ against the exact moments (exact provenance only).
    pub fn gram_diag(&self) -> Option<&[f64]> {
        self.gram_diag.as_deref().map(|v| v.as_slice())
    }

    pub fn has_dd_transform(&self) -> bool {
        self.transform_dd.is_some()
    }

    /// Basis values (L₁(x), …, L_n(x)).
    pub fn evaluate(&self, x: &[f64]) -> DVector<f64> {
        let mono = self.space.evaluate_monomials(x);
        &self.transform * mono
    }

    /// Basis values at many points: n × M, one column per point column.
    pub fn evaluate_block(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let mono = self.space.evaluate_monomials_block(points);
        &self.transform * mono
    }

    /// The leading n' functions as a standalone basis. Because the transform
    /// is lower triangular, this is exactly the orthonormal basis of the
    /// prefix space under the same inner product.
    pub fn prefix(&self, n: usize) -> Result<OrthonormalBasis> {
        if n == 0 || n > self.n() {
            return Err(Error::InvalidParameter(format!(
                "prefix size {n} outside 1..={}",
                self.n()
            )));
        }
        let space = Arc::new(self.space.prefix(n)?);
        let transform = self.transform.view((0, 0), (n, n)).into_owned();
        let transform_dd = self.transform_dd.as_ref().map(|full| {
            let mut tri = Vec::with_capacity(n * (n + 1) / 2);
            for j in 0..n {
                let row_start = j * (j + 1) / 2;
                tri.extend_from_slice(&full[row_start..row_start + j + 1]);
            }
            Arc::new(tri)
        });
        Ok(OrthonormalBasis {
            space,
            transform,
            transform_dd,
            provenance: self.provenance.clone(),
            gram_residual: self.gram_residual,
            gram_diag: self
                .gram_diag
                .as_ref()
                .map(|d| Arc::new(d[..n].to_vec())),
        })
    }

    /// Serializes the space descriptor and transform to JSON with hex-float
    /// entries (bit-exact round trip).
    pub fn to_json(&self) -> Result<String> {
        let n = self.n();
        let mut rows = Vec::with_capacity(n);
        for j in 0..n {
            let mut row = Vec::with_capacity(j + 1);
            for k in 0..=j {
                row.push(hexfloat::to_hex(self.transform[(j, k)]));
            }
            rows.push(row);
        }
        let doc = BasisJson {
            dim: self.space.dim(),
            n,
            degree: self.space.degree(),
            provenance: self.provenance.clone(),
            gram_residual: self.gram_residual,
            transform: rows,
            gram_diag: self
                .gram_diag
                .as_ref()
                .map(|d| d.iter().map(|v| hexfloat::to_hex(*v)).collect()),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Inverse of [`OrthonormalBasis::to_json`]. The double-double transform
    /// copy is not serialized, so re-verification at extended precision is
    /// unavailable on imported bases; everything else round-trips bit-exactly.
    pub fn from_json(text: &str) -> Result<OrthonormalBasis> {
        let doc: BasisJson = serde_json::from_str(text)?;
        let space = Arc::new(PolynomialSpace::with_dimension(doc.dim, doc.n)?);
        if space.degree() != doc.degree {
            return Err(Error::Deserialize(format!(
                "space of dimension {} has degree {}, file claims {}",
                doc.n,
                space.degree(),
                doc.degree
            )));
        }
        if doc.transform.len() != doc.n {
            return Err(Error::Deserialize(format!(
                "expected {} transform rows, found {}",
                doc.n,
                doc.transform.len()
            )));
        }
        let mut transform = DMatrix::zeros(doc.n, doc.n);
        for (j, row) in doc.transform.iter().enumerate() {
            if row.len() != j + 1 {
                return Err(Error::Deserialize(format!(
                    "transform row {j} has {} entries, expected {}",
                    row.len(),
                    j + 1
                )));
            }
            for (k, entry) in row.iter().enumerate() {
                transform[(j, k)] = hexfloat::parse_hex(entry)?;
            }
            if transform[(j, j)] <= 0.0 {
                return Err(Error::Deserialize(format!(
                    "non-positive diagonal entry in transform row {j}"
                )));
            }
        }
        let gram_diag = match doc.gram_diag {
            Some(entries) => {
                let mut vals = Vec::with_capacity(entries.len());
                for e in &entries {
                    vals.push(hexfloat::parse_hex(e)?);
                }
                Some(Arc::new(vals))
            }
            None => None,
        };
        Ok(OrthonormalBasis {
            space,
            transform,
            transform_dd: None,
            provenance: doc.provenance,
            gram_residual: doc.gram_residual,
            gram_diag,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BasisJson {
    dim: usize,
    n: usize,
    degree: u32,
    provenance: Provenance,
    gram_residual: f64,
    transform: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gram_diag: Option<Vec<String>>,
}

/// Orthonormalizes the space against the exact uniform measure of `domain`
/// using its moment oracle. The moment Gram matrix is assembled, factorized
/// (Cholesky), inverted, and residual-checked entirely in double-double
/// arithmetic; only the final transform is rounded to f64 for evaluation.
pub fn orthonormalize_exact(
    space: Arc<PolynomialSpace>,
    domain: &Domain,
) -> Result<OrthonormalBasis> {
    if !domain.has_moment_oracle() {
        return Err(Error::NoMomentOracle(domain.label().to_string()));
    }
    if domain.dim() != space.dim() {
        return Err(Error::InvalidParameter(format!(
            "space dimension {} does not match domain dimension {}",
            space.dim(),
            domain.dim()
        )));
    }
    let n = space.len();
    let idx = space.indices();

    // Moment matrix M[j][k] = moment(ν_j + ν_k), symmetric.
    let mut mom = vec![Dd::ZERO; n * n];
    let mut sum = vec![0u32; space.dim()];
    for j in 0..n {
        for k in 0..=j {
            for (s, (a, b)) in sum.iter_mut().zip(idx[j].iter().zip(&idx[k])) {
                *s = a + b;
            }
            let v = domain.exact_moment_dd(&sum)?;
            mom[j * n + k] = v;
            mom[k * n + j] = v;
        }
    }

    // Double-double Cholesky: M = C Cᵀ with C lower triangular.
    let mut chol = vec![Dd::ZERO; n * n];
    for j in 0..n {
        for k in 0..=j {
            let mut s = mom[j * n + k];
            for i in 0..k {
                s = s - chol[j * n + i] * chol[k * n + i];
            }
            if k < j {
                chol[j * n + k] = s / chol[k * n + k];
            } else {
                if s.hi <= 0.0 {
                    return Err(Error::MomentMatrixSingular(j));
                }
                chol[j * n + j] = s.sqrt();
            }
        }
    }

    // T = C⁻¹ by forward substitution; T is the monomial→orthonormal map.
    let mut t = vec![Dd::ZERO; n * n];
    for j in 0..n {
        t[j * n + j] = chol[j * n + j].recip();
        for k in (0..j).rev() {
            let mut s = Dd::ZERO;
            for i in k..j {
                s = s + chol[j * n + i] * t[i * n + k];
            }
            t[j * n + k] = -(s / chol[j * n + j]);
        }
    }

    // Residual T M Tᵀ − I at full precision, via W = M Tᵀ then T W.
    let mut w = vec![Dd::ZERO; n * n];
    for i in 0..n {
        for k in 0..n {
            let mut s = Dd::ZERO;
            for j in 0..=k {
                s = s + mom[i * n + j] * t[k * n + j];
            }
            w[i * n + k] = s;
        }
    }
    let mut residual = 0.0f64;
    let mut gram_diag = vec![0.0f64; n];
    for r in 0..n {
        for k in 0..n {
            let mut s = Dd::ZERO;
            for i in 0..=r {
                s = s + t[r * n + i] * w[i * n + k];
            }
            if r == k {
                gram_diag[r] = s.to_f64();
            }
            let dev = if r == k { s - Dd::ONE } else { s };
            residual = residual.max(dev.abs().to_f64());
        }
    }

    // Pack the lower triangle (f64 view for evaluation, Dd copy for audits).
    let mut transform = DMatrix::zeros(n, n);
    let mut tri = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for k in 0..=j {
            transform[(j, k)] = t[j * n + k].to_f64();
            tri.push(t[j * n + k]);
        }
    }

    Ok(OrthonormalBasis {
        space,
        transform,
        transform_dd: Some(Arc::new(tri)),
        provenance: Provenance::Exact {
            domain: domain.label().to_string(),
        },
        gram_residual: residual,
        gram_diag: Some(Arc::new(gram_diag)),
    })
}

/// Recomputes max |⟨L_j, L_k⟩ − δ_jk| against the exact moments of `domain`
/// from the stored double-double transform — an audit of the construction.
pub fn exact_gram_residual(basis: &OrthonormalBasis, domain: &Domain) -> Result<f64> {
    let tri = basis
        .transform_dd
        .as_ref()
        .ok_or_else(|| Error::MissingDiagnostics("no extended-precision transform stored".into()))?;
    let space = basis.space();
    let n = space.len();
    let idx = space.indices();
    let row = |j: usize| &tri[j * (j + 1) / 2..j * (j + 1) / 2 + j + 1];
    let mut sum = vec![0u32; space.dim()];
    let mut residual = 0.0f64;
    for j in 0..n {
        for k in 0..=j {
            // ⟨L_j, L_k⟩ = Σ_{a≤j, b≤k} T_ja T_kb moment(ν_a + ν_b)
            let mut s = Dd::ZERO;
            for (a, ta) in row(j).iter().enumerate() {
                for (b, tb) in row(k).iter().enumerate() {
                    for (t, (u, v)) in sum.iter_mut().zip(idx[a].iter().zip(&idx[b])) {
                        *t = u + v;
                    }
                    s = s + *ta * *tb * domain.exact_moment_dd(&sum)?;
                }
            }
            let dev = if j == k { s - Dd::ONE } else { s };
            residual = residual.max(dev.abs().to_f64());
        }
    }
    Ok(residual)
}

/// Orthonormalizes the space against a discrete inner product via QR of the
/// weighted collocation matrix. Fails when the sample does not determine the
/// space (numerical rank below the space dimension).
pub fn orthonormalize_discrete(
    space: Arc<PolynomialSpace>,
    ip: &DiscreteInnerProduct,
) -> Result<OrthonormalBasis> {
    let n = space.len();
    let m = ip.len();
    if ip.dim() != space.dim() {
        return Err(Error::InvalidParameter(format!(
            "space dimension {} does not match point dimension {}",
            space.dim(),
            ip.dim()
        )));
    }
    if m < n {
        return Err(Error::InvalidParameter(format!(
            "need at least n = {n} points, got {m}"
        )));
    }
    // Weighted collocation matrix A[i][j] = √(wᵢ/M) φ_j(zⁱ).
    let mono = space.evaluate_monomials_block(ip.points());
    let mut a = DMatrix::zeros(m, n);
    let inv_m = 1.0 / m as f64;
    for i in 0..m {
        let s = (ip.weights()[i] * inv_m).sqrt();
        for j in 0..n {
            a[(i, j)] = mono[(j, i)] * s;
        }
    }
    let out = qr::orthonormalize_columns(a)?;
    Ok(OrthonormalBasis {
        space,
        transform: out.transform,
        transform_dd: None,
        provenance: Provenance::Discrete {
            points_id: ip.points_id().to_string(),
            weights_id: ip.weights_id().to_string(),
        },
        gram_residual: out.residual,
        gram_diag: None,
    })
}
