//! Domains: membership predicates, bounding boxes, uniform rejection
//! sampling, exact monomial moments for the built-in test domains, and
//! distances to smooth boundary pieces.
//!
//! The four built-ins are two-dimensional and symmetric under x₁ ↦ −x₁, and
//! all carry closed-form normalized moments (1/|D|)·∫_D x^ν dx evaluated in
//! double-double arithmetic so that downstream basis orthonormalization stays
//! accurate at high degree.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dd::Dd;
use crate::error::{Error, Result};

/// Consecutive rejected proposals after which uniform sampling aborts: a full
/// window of misses bounds the windowed acceptance rate below 10⁻⁶.
const DEGENERATE_REJECTION_WINDOW: u64 = 2_000_000;

/// The built-in test domains.
///
/// * `Disc` — {x₁² + x₂² ≤ 2/π}, area 2.
/// * `CornerPolygon` — {−1 ≤ x₁ ≤ 1, |x₁| − 1 ≤ x₂ ≤ |x₁|}, a hexagon with a
///   reentrant corner at the origin, area 2.
/// * `CuspDomain` — {−1 ≤ x₁ ≤ 1, √|x₁| − 1 ≤ x₂ ≤ √|x₁|}, with a reentrant
///   cusp at the origin and an exiting cusp at (0, −1), area 2.
/// * `Square` — [−1, 1]², area 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinDomain {
    Disc,
    CornerPolygon,
    CuspDomain,
    Square,
}

impl BuiltinDomain {
    pub const ALL: [BuiltinDomain; 4] = [
        BuiltinDomain::Disc,
        BuiltinDomain::CornerPolygon,
        BuiltinDomain::CuspDomain,
        BuiltinDomain::Square,
    ];

    /// The three singular/curved test domains (everything except the square).
    pub const TEST_TRIO: [BuiltinDomain; 3] = [
        BuiltinDomain::Disc,
        BuiltinDomain::CornerPolygon,
        BuiltinDomain::CuspDomain,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BuiltinDomain::Disc => "disc",
            BuiltinDomain::CornerPolygon => "corner_polygon",
            BuiltinDomain::CuspDomain => "cusp",
            BuiltinDomain::Square => "square",
        }
    }

    pub fn area(self) -> f64 {
        match self {
            BuiltinDomain::Square => 4.0,
            _ => 2.0,
        }
    }

    /// Squared radius of the disc domain, 2/π, in double-double precision.
    pub fn disc_radius_squared() -> Dd {
        Dd::from(2.0) / Dd::PI
    }

    /// Radius of the disc domain, √(2/π).
    pub fn disc_radius() -> f64 {
        Self::disc_radius_squared().sqrt().to_f64()
    }

    pub fn contains(self, x: &[f64]) -> bool {
        debug_assert_eq!(x.len(), 2);
        let (x1, x2) = (x[0], x[1]);
        match self {
            BuiltinDomain::Disc => x1 * x1 + x2 * x2 <= 2.0 / PI,
            BuiltinDomain::CornerPolygon => {
                x1.abs() <= 1.0 && x2 >= x1.abs() - 1.0 && x2 <= x1.abs()
            }
            BuiltinDomain::CuspDomain => {
                let s = x1.abs().sqrt();
                x1.abs() <= 1.0 && x2 >= s - 1.0 && x2 <= s
            }
            BuiltinDomain::Square => x1.abs() <= 1.0 && x2.abs() <= 1.0,
        }
    }

    fn bbox(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            BuiltinDomain::Disc => {
                let r = Self::disc_radius();
                (vec![-r, -r], vec![r, r])
            }
            _ => (vec![-1.0, -1.0], vec![1.0, 1.0]),
        }
    }

    /// Normalized moment (1/|D|)·∫_D x₁^a x₂^b dx, exact closed form in
    /// double-double arithmetic.
    pub fn exact_moment_dd(self, nu: [u32; 2]) -> Dd {
        let [a, b] = nu;
        match self {
            BuiltinDomain::Square => {
                // Product of interval moments on [−1,1] with measure dx/2.
                if a % 2 == 1 || b % 2 == 1 {
                    Dd::ZERO
                } else {
                    Dd::ONE / (Dd::from(a + 1) * Dd::from(b + 1))
                }
            }
            BuiltinDomain::Disc => disc_moment_dd(Self::disc_radius_squared(), nu),
            BuiltinDomain::CornerPolygon => {
                // Union of the two parallelograms {0≤x₁≤1, x₁−1≤x₂≤x₁} and its
                // mirror image: for even a the moment is the single-sided
                // integral ∫₀¹ x^a [x^{b+1} − (x−1)^{b+1}]/(b+1) dx, which
                // expands into 1/(a+b+2) plus a signed Beta-integral term.
                if a % 2 == 1 {
                    return Dd::ZERO;
                }
                let term1 = Dd::ONE / Dd::from(a + b + 2);
                // a!(b+1)!/(a+b+2)! as a product of small ratios.
                let mut prod = Dd::ONE;
                for i in 1..=a {
                    prod = prod * Dd::from(i) / Dd::from(b + 1 + i);
                }
                let term2 = prod / Dd::from(a + b + 2);
                let signed = if b % 2 == 1 { term1 - term2 } else { term1 + term2 };
                signed / Dd::from(b + 1)
            }
            BuiltinDomain::CuspDomain => {
                // Substituting u = √x₁ in ∫₀¹ x^a [ (√x)^{b+1} − (√x−1)^{b+1} ]
                // /(b+1) dx gives rational integrals in u.
                if a % 2 == 1 {
                    return Dd::ZERO;
                }
                let term1 = Dd::ONE / Dd::from(2 * a + b + 3);
                let mut prod = Dd::ONE;
                for i in 1..=(2 * a + 1) {
                    prod = prod * Dd::from(i) / Dd::from(b + 1 + i);
                }
                let term2 = prod / Dd::from(2 * a + b + 3);
                let signed = if b % 2 == 1 { term1 - term2 } else { term1 + term2 };
                Dd::from(2.0) * signed / Dd::from(b + 1)
            }
        }
    }

    /// Normalized moment as f64; see [`BuiltinDomain::exact_moment_dd`].
    pub fn exact_moment(self, nu: [u32; 2]) -> f64 {
        self.exact_moment_dd(nu).to_f64()
    }

    /// The smooth boundary pieces of the domain, in a fixed documented order:
    /// Disc = [circle]; Square = [bottom, right, top, left]; CornerPolygon =
    /// the six edges counterclockwise from the reentrant corner at the origin;
    /// CuspDomain = [top-right arc, top-left arc, bottom-right arc,
    /// bottom-left arc, right segment, left segment].
    pub fn boundary_pieces(self) -> Vec<BoundaryPiece> {
        use BoundaryPiece::*;
        match self {
            BuiltinDomain::Disc => vec![Circle {
                center: [0.0, 0.0],
                radius: Self::disc_radius(),
            }],
            BuiltinDomain::Square => vec![
                Segment { a: [-1.0, -1.0], b: [1.0, -1.0] },
                Segment { a: [1.0, -1.0], b: [1.0, 1.0] },
                Segment { a: [1.0, 1.0], b: [-1.0, 1.0] },
                Segment { a: [-1.0, 1.0], b: [-1.0, -1.0] },
            ],
            BuiltinDomain::CornerPolygon => vec![
                Segment { a: [0.0, 0.0], b: [1.0, 1.0] },
                Segment { a: [1.0, 1.0], b: [1.0, 0.0] },
                Segment { a: [1.0, 0.0], b: [0.0, -1.0] },
                Segment { a: [0.0, -1.0], b: [-1.0, 0.0] },
                Segment { a: [-1.0, 0.0], b: [-1.0, 1.0] },
                Segment { a: [-1.0, 1.0], b: [0.0, 0.0] },
            ],
            BuiltinDomain::CuspDomain => vec![
                SqrtArc { sign: 1.0, shift: 0.0 },
                SqrtArc { sign: -1.0, shift: 0.0 },
                SqrtArc { sign: 1.0, shift: -1.0 },
                SqrtArc { sign: -1.0, shift: -1.0 },
                Segment { a: [1.0, 0.0], b: [1.0, 1.0] },
                Segment { a: [-1.0, 0.0], b: [-1.0, 1.0] },
            ],
        }
    }

    /// Index pairs (i, j), i < j, of boundary pieces whose closures intersect
    /// (share a corner). Empty for the disc, whose boundary is one closed
    /// smooth curve.
    pub fn intersecting_piece_pairs(self) -> Vec<(usize, usize)> {
        match self {
            BuiltinDomain::Disc => vec![],
            BuiltinDomain::Square => vec![(0, 1), (1, 2), (2, 3), (0, 3)],
            BuiltinDomain::CornerPolygon => {
                vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]
            }
            BuiltinDomain::CuspDomain => {
                vec![(0, 1), (2, 3), (0, 4), (2, 4), (1, 5), (3, 5)]
            }
        }
    }

    /// Corner points, cusp tips, and boundary touch points where the inverse
    /// Christoffel function is expected to peak; always probed by sup
    /// estimation.
    pub fn extreme_points(self) -> Vec<[f64; 2]> {
        match self {
            BuiltinDomain::Disc => {
                let r = Self::disc_radius();
                vec![[r, 0.0], [-r, 0.0], [0.0, r], [0.0, -r]]
            }
            BuiltinDomain::Square => {
                vec![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]
            }
            BuiltinDomain::CornerPolygon => vec![
                [0.0, 0.0],
                [1.0, 1.0],
                [1.0, 0.0],
                [0.0, -1.0],
                [-1.0, 0.0],
                [-1.0, 1.0],
            ],
            BuiltinDomain::CuspDomain => vec![
                [0.0, 0.0],
                [0.0, -1.0],
                [1.0, 1.0],
                [1.0, 0.0],
                [-1.0, 1.0],
                [-1.0, 0.0],
            ],
        }
    }

    /// A deterministic grid of at least `count` points distributed over the
    /// boundary pieces proportionally to their length. Open pieces include
    /// both endpoints; arcs are parametrized so that points cluster toward
    /// cusp tips.
    pub fn boundary_probe_grid(self, count: usize) -> DMatrix<f64> {
        let pieces = self.boundary_pieces();
        let lengths: Vec<f64> = pieces.iter().map(|p| p.approx_length()).collect();
        let total: f64 = lengths.iter().sum();
        let mut points: Vec<f64> = Vec::new();
        for (piece, len) in pieces.iter().zip(&lengths) {
            let share = ((count as f64) * len / total).ceil() as usize;
            let k = share.max(2);
            match piece {
                BoundaryPiece::Circle { .. } => {
                    // Closed curve: avoid the duplicate point at s = 1.
                    for j in 0..k {
                        let p = self.snap_inward(piece.point_at(j as f64 / k as f64));
                        points.extend_from_slice(&p);
                    }
                }
                _ => {
                    for j in 0..k {
                        let p = self.snap_inward(piece.point_at(j as f64 / (k - 1) as f64));
                        points.extend_from_slice(&p);
                    }
                }
            }
        }
        DMatrix::from_vec(2, points.len() / 2, points)
    }

    /// Repairs a nominal boundary point that floating-point parametrization
    /// left an ulp outside, by clamping with the same arithmetic the
    /// membership test uses. Circle points are left untouched (the quadratic
    /// membership form has no exact float preimage).
    fn snap_inward(self, mut p: [f64; 2]) -> [f64; 2] {
        if self.contains(&p) {
            return p;
        }
        match self {
            BuiltinDomain::Square => {
                p[0] = p[0].clamp(-1.0, 1.0);
                p[1] = p[1].clamp(-1.0, 1.0);
            }
            BuiltinDomain::CornerPolygon => {
                p[0] = p[0].clamp(-1.0, 1.0);
                p[1] = p[1].clamp(p[0].abs() - 1.0, p[0].abs());
            }
            BuiltinDomain::CuspDomain => {
                p[0] = p[0].clamp(-1.0, 1.0);
                let s = p[0].abs().sqrt();
                p[1] = p[1].clamp(s - 1.0, s);
            }
            BuiltinDomain::Disc => {}
        }
        p
    }

    /// Conservative test that the axis-aligned box [lo, hi] does not meet the
    /// domain (up to a measure-zero touching set). `false` means "may
    /// intersect" — never that it does.
    pub fn box_certainly_outside(self, lo: &[f64; 2], hi: &[f64; 2]) -> bool {
        // Smallest |x₁| attained on the box, and the largest.
        let min_abs_x = if lo[0] <= 0.0 && hi[0] >= 0.0 {
            0.0
        } else {
            lo[0].abs().min(hi[0].abs())
        };
        let max_abs_x = lo[0].abs().max(hi[0].abs());
        match self {
            BuiltinDomain::Square => {
                lo[0] > 1.0 || hi[0] < -1.0 || lo[1] > 1.0 || hi[1] < -1.0
            }
            BuiltinDomain::Disc => {
                let r2 = Self::disc_radius_squared().to_f64();
                let mut dist2 = 0.0;
                for i in 0..2 {
                    let c = if lo[i] <= 0.0 && hi[i] >= 0.0 {
                        0.0
                    } else {
                        lo[i].abs().min(hi[i].abs())
                    };
                    dist2 += c * c;
                }
                dist2 > r2
            }
            BuiltinDomain::CornerPolygon => {
                lo[0] > 1.0
                    || hi[0] < -1.0
                    || lo[1] > max_abs_x
                    || hi[1] < min_abs_x - 1.0
            }
            BuiltinDomain::CuspDomain => {
                lo[0] > 1.0
                    || hi[0] < -1.0
                    || lo[1] > max_abs_x.min(1.0).sqrt()
                    || hi[1] < min_abs_x.sqrt() - 1.0
            }
        }
    }

    /// Distances from an interior point to every smooth boundary piece, in
    /// the order of [`BuiltinDomain::boundary_pieces`].
    pub fn distance_to_boundary_pieces(self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.contains(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
        Ok(self
            .boundary_pieces()
            .iter()
            .map(|p| p.distance(x))
            .collect())
    }

    pub fn domain(self) -> Domain {
        Domain::builtin(self)
    }
}

impl fmt::Display for BuiltinDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BuiltinDomain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "disc" | "disk" | "ball" => Ok(BuiltinDomain::Disc),
            "corner_polygon" | "polygon" | "corner-polygon" => Ok(BuiltinDomain::CornerPolygon),
            "cusp" | "cusp_domain" | "cusp-domain" => Ok(BuiltinDomain::CuspDomain),
            "square" => Ok(BuiltinDomain::Square),
            other => Err(Error::InvalidParameter(format!(
                "unknown domain {other:?}; expected disc, corner_polygon, cusp, or square"
            ))),
        }
    }
}

fn disc_moment_dd(r2: Dd, [a, b]: [u32; 2]) -> Dd {
    if a % 2 == 1 || b % 2 == 1 {
        return Dd::ZERO;
    }
    let (p, q) = (a / 2, b / 2);
    let s = p + q;
    // r^{2s} / ((s+1)·s!) · ∏_{i≤p}(2i−1)/2 · ∏_{i≤q}(2i−1)/2, from polar
    // integration of x^{2p} y^{2q} over the disc with the normalized measure.
    let mut v = r2.powi(s) / Dd::from(s + 1);
    for i in 1..=s {
        v = v / Dd::from(i);
    }
    for i in 1..=p {
        v = v * Dd::from(2 * i - 1) / Dd::from(2.0);
    }
    for i in 1..=q {
        v = v * Dd::from(2 * i - 1) / Dd::from(2.0);
    }
    v
}

/// One smooth piece of a built-in domain boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryPiece {
    Segment { a: [f64; 2], b: [f64; 2] },
    Circle { center: [f64; 2], radius: f64 },
    /// The arc {(sign·u², √(u²) + shift) : u ∈ [0, 1]}.
    SqrtArc { sign: f64, shift: f64 },
}

impl BoundaryPiece {
    /// Point on the piece at parameter s ∈ [0, 1].
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        match *self {
            BoundaryPiece::Segment { a, b } => {
                [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
            }
            BoundaryPiece::Circle { center, radius } => {
                let th = 2.0 * PI * s;
                [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            }
            // Computing the ordinate as √(u·u) + shift reproduces exactly the
            // float operations of the membership predicate, so grid points
            // always satisfy the defining inequalities.
            BoundaryPiece::SqrtArc { sign, shift } => {
                let x = s * s;
                [sign * x, x.sqrt() + shift]
            }
        }
    }

    fn approx_length(&self) -> f64 {
        match *self {
            BoundaryPiece::Segment { a, b } => (b[0] - a[0]).hypot(b[1] - a[1]),
            BoundaryPiece::Circle { radius, .. } => 2.0 * PI * radius,
            // ∫₀¹ √(1 + 1/(4x)) dx ≈ 1.4789; the exact value is irrelevant
            // (only used to apportion probe points).
            BoundaryPiece::SqrtArc { .. } => 1.4789,
        }
    }

    /// Euclidean distance from `x` to the piece: closed-form projection for
    /// segments and circles, bracketed golden-section minimization (parameter
    /// tolerance 10⁻¹²) for the quartic arising on sqrt arcs.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let (px, py) = (x[0], x[1]);
        match *self {
            BoundaryPiece::Segment { a, b } => {
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let len2 = dx * dx + dy * dy;
                let t = (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0);
                let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
                (px - cx).hypot(py - cy)
            }
            BoundaryPiece::Circle { center, radius } => {
                ((px - center[0]).hypot(py - center[1]) - radius).abs()
            }
            BoundaryPiece::SqrtArc { sign, shift } => {
                let g = |u: f64| {
                    let cx = sign * u * u;
                    let cy = u + shift;
                    (px - cx) * (px - cx) + (py - cy) * (py - cy)
                };
                // Dense scan separates the (at most two) local minima of the
                // quartic, then golden-section refines within one cell.
                const SCAN: usize = 128;
                let mut best_i = 0usize;
                let mut best = f64::INFINITY;
                for i in 0..=SCAN {
                    let v = g(i as f64 / SCAN as f64);
                    if v < best {
                        best = v;
                        best_i = i;
                    }
                }
                let lo = (best_i.saturating_sub(1)) as f64 / SCAN as f64;
                let hi = ((best_i + 1).min(SCAN)) as f64 / SCAN as f64;
                golden_min(g, lo, hi, 1e-12).sqrt()
            }
        }
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd).min(f(a)).min(f(b))
}

/// Exact-moment oracle attached to a domain.
#[derive(Clone, Debug)]
enum MomentOracle {
    Builtin(BuiltinDomain),
    /// Axis-aligned box with uniform measure: product of interval moments.
    Rectangle { lower: Vec<f64>, upper: Vec<f64> },
    /// Centered axis-aligned ellipse with semi-axes (rx, ry).
    Ellipse { rx: f64, ry: f64 },
}

impl MomentOracle {
    fn moment(&self, nu: &[u32]) -> Dd {
        match self {
            MomentOracle::Builtin(b) => b.exact_moment_dd([nu[0], nu[1]]),
            MomentOracle::Rectangle { lower, upper } => {
                let mut v = Dd::ONE;
                for ((&a, &b), &k) in lower.iter().zip(upper).zip(nu) {
                    // (b^{k+1} − a^{k+1}) / ((k+1)(b − a))
                    let num = Dd::from(b).powi(k + 1) - Dd::from(a).powi(k + 1);
                    let den = Dd::from(k + 1) * (Dd::from(b) - Dd::from(a));
                    v = v * (num / den);
                }
                v
            }
            MomentOracle::Ellipse { rx, ry } => {
                let [a, b] = [nu[0], nu[1]];
                if a % 2 == 1 || b % 2 == 1 {
                    return Dd::ZERO;
                }
                Dd::from(*rx).powi(a) * Dd::from(*ry).powi(b) * disc_moment_dd(Dd::ONE, [a, b])
            }
        }
    }
}

/// Statistics of a rejection-sampling run.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SampleStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl SampleStats {
    pub fn acceptance_fraction(&self) -> f64 {
        if self.proposals == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.proposals as f64
    }
}

/// A bounded sampling domain: membership predicate, bounding box, area, and
/// (for built-ins, boxes, and ellipses) an exact moment oracle.
///
/// Immutable after construction and cheap to clone; shareable across threads.
#[derive(Clone)]
pub struct Domain {
    label: String,
    dim: usize,
    indicator: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    area: f64,
    /// Monte-Carlo sample count behind `area`, for custom domains.
    area_sample_count: Option<u64>,
    moments: Option<MomentOracle>,
    builtin: Option<BuiltinDomain>,
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Domain")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("bbox", &(&self.lower, &self.upper))
            .field("area", &self.area)
            .field("has_moments", &self.moments.is_some())
            .finish()
    }
}

impl Domain {
    pub fn builtin(b: BuiltinDomain) -> Domain {
        let (lower, upper) = b.bbox();
        Domain {
            label: b.label().to_string(),
            dim: 2,
            indicator: Arc::new(move |x| b.contains(x)),
            lower,
            upper,
            area: b.area(),
            area_sample_count: None,
            moments: Some(MomentOracle::Builtin(b)),
            builtin: Some(b),
        }
    }

    /// Axis-aligned box `[lower₁,upper₁]×…` with uniform measure and exact
    /// moments, in any dimension.
    pub fn rectangle(lower: &[f64], upper: &[f64]) -> Result<Domain> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParameter(
                "rectangle bounds must be non-empty and of equal length".into(),
            ));
        }
        if lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter(
                "rectangle bounds must satisfy lower < upper".into(),
            ));
        }
        let (lo, up) = (lower.to_vec(), upper.to_vec());
        let area = lo.iter().zip(&up).map(|(a, b)| b - a).product();
        let (li, ui) = (lo.clone(), up.clone());
        Ok(Domain {
            label: "rectangle".into(),
            dim: lo.len(),
            indicator: Arc::new(move |x| {
                x.iter()
                    .zip(li.iter().zip(&ui))
                    .all(|(v, (a, b))| *v >= *a && *v <= *b)
            }),
            moments: Some(MomentOracle::Rectangle {
                lower: lo.clone(),
                upper: up.clone(),
            }),
            lower: lo,
            upper: up,
            area,
            area_sample_count: None,
            builtin: None,
        })
    }

    /// Centered axis-aligned ellipse with semi-axes (rx, ry), uniform
    /// measure, exact moments.
    pub fn ellipse(rx: f64, ry: f64) -> Result<Domain> {
        if !(rx > 0.0 && ry > 0.0) {
            return Err(Error::InvalidParameter(
                "ellipse semi-axes must be positive".into(),
            ));
        }
        Ok(Domain {
            label: "ellipse".into(),
            dim: 2,
            indicator: Arc::new(move |x| {
                let (u, v) = (x[0] / rx, x[1] / ry);
                u * u + v * v <= 1.0
            }),
            lower: vec![-rx, -ry],
            upper: vec![rx, ry],
            area: PI * rx * ry,
            area_sample_count: None,
            moments: Some(MomentOracle::Ellipse { rx, ry }),
            builtin: None,
        })
    }

    /// User-supplied domain from an indicator and bounding box; the area is
    /// estimated by Monte-Carlo with `area_samples` proposals (count recorded
    /// in metadata). No moment oracle, hence no exact orthonormal basis —
    /// only the discrete pipeline applies.
    pub fn custom(
        label: impl Into<String>,
        indicator: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
        lower: &[f64],
        upper: &[f64],
        area_samples: u64,
        rng: &mut impl Rng,
    ) -> Result<Domain> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParameter(
                "bounding box bounds must be non-empty and of equal length".into(),
            ));
        }
        let dim = lower.len();
        let vol: f64 = lower.iter().zip(upper).map(|(a, b)| b - a).product();
        if !(vol > 0.0) {
            return Err(Error::InvalidParameter(
                "bounding box must have positive volume".into(),
            ));
        }
        let mut hits = 0u64;
        let mut x = vec![0.0f64; dim];
        for _ in 0..area_samples {
            for (xi, (a, b)) in x.iter_mut().zip(lower.iter().zip(upper)) {
                *xi = a + (b - a) * rng.gen::<f64>();
            }
            if indicator(&x) {
                hits += 1;
            }
        }
        if hits == 0 {
            return Err(Error::DegenerateDomain {
                rejections: area_samples,
                min_rate: 1e-6,
            });
        }
        Ok(Domain {
            label: label.into(),
            dim,
            indicator: Arc::new(indicator),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            area: vol * hits as f64 / area_samples as f64,
            area_sample_count: Some(area_samples),
            moments: None,
            builtin: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn area_sample_count(&self) -> Option<u64> {
        self.area_sample_count
    }

    pub fn bbox(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub fn bbox_volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).product()
    }

    pub fn builtin_kind(&self) -> Option<BuiltinDomain> {
        self.builtin
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.indicator)(x)
    }

    pub fn has_moment_oracle(&self) -> bool {
        self.moments.is_some()
    }

    /// Normalized moment (1/|D|)∫ x^ν dx in double-double precision.
    pub fn exact_moment_dd(&self, nu: &[u32]) -> Result<Dd> {
        if nu.len() != self.dim {
            return Err(Error::InvalidParameter(format!(
                "multi-index has length {} but the domain has dimension {}",
                nu.len(),
                self.dim
            )));
        }
        match &self.moments {
            Some(m) => Ok(m.moment(nu)),
            None => Err(Error::NoMomentOracle(self.label.clone())),
        }
    }

    pub fn exact_moment(&self, nu: &[u32]) -> Result<f64> {
        self.exact_moment_dd(nu).map(|v| v.to_f64())
    }

    /// `count` i.i.d. points with the uniform law on the domain, drawn by
    /// coordinate-wise proposals from the bounding box and rejection. Columns
    /// of the result are points.
    pub fn sample_uniform(&self, count: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
        self.sample_uniform_with_stats(count, rng).map(|(p, _)| p)
    }

    /// As [`Domain::sample_uniform`], also returning proposal statistics.
    pub fn sample_uniform_with_stats(
        &self,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<(DMatrix<f64>, SampleStats)> {
        let mut data = Vec::with_capacity(self.dim * count);
        let mut stats = SampleStats::default();
        let mut x = vec![0.0f64; self.dim];
        let mut consecutive_rejections = 0u64;
        while stats.accepted < count as u64 {
            for (xi, (a, b)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
                *xi = a + (b - a) * rng.gen::<f64>();
            }
            stats.proposals += 1;
            if (self.indicator)(&x) {
                data.extend_from_slice(&x);
                stats.accepted += 1;
                consecutive_rejections = 0;
            } else {
                consecutive_rejections += 1;
                if consecutive_rejections >= DEGENERATE_REJECTION_WINDOW {
                    return Err(Error::DegenerateDomain {
                        rejections: consecutive_rejections,
                        min_rate: 1e-6,
                    });
                }
            }
        }
        Ok((DMatrix::from_vec(self.dim, count, data), stats))
    }
}
