//! Dirichlet sampling over neighborhood simplices and the log-space
//! coordinates used by the hull-constrained adversarial search.
//!
//! A point in the convex hull of a neighborhood's embeddings is identified by
//! its barycentric weights `beta` (nonnegative, summing to one). The search
//! works in log-space coordinates `eta` with `beta = softmax(eta)`, which
//! keeps every iterate on the simplex by construction.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::lexicon::{EmbeddingMatrix, Neighborhood};

/// Weights smaller than this are clamped before the logarithm so eta stays
/// finite even when a Gamma draw underflows.
pub const LOG_FLOOR: f64 = 1e-30;

/// Per-vertex Dirichlet concentrations, aligned with a neighborhood's
/// `one_hop ++ two_hop_only` vertex order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationVector {
    values: Vec<f64>,
}

impl ConcentrationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Param("empty concentration vector".into()));
        }
        if !values.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::Param(format!(
                "concentrations must be positive and finite, got {:?}",
                values
            )));
        }
        Ok(ConcentrationVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Shared Dirichlet shape parameters: `alpha` for 1-hop vertices, scaled by
/// `lambda` for 2-hop vertices.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DirichletParams {
    pub alpha: f64,
    pub lambda: f64,
}

impl DirichletParams {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Param(format!("alpha must be positive, got {}", alpha)));
        }
        if !(lambda > 0.0 && lambda <= 0.5) {
            return Err(Error::Param(format!(
                "lambda must be in (0, 0.5], got {}",
                lambda
            )));
        }
        Ok(DirichletParams { alpha, lambda })
    }
}

/// A point on a neighborhood simplex, kept consistent in both coordinates:
/// `beta` on the simplex and `eta` with `softmax(eta) == beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    beta: Vec<f64>,
    eta: Vec<f64>,
}

impl SimplexPoint {
    /// From simplex weights; eta is the clamped logarithm.
    pub fn from_beta(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Param("empty weight vector".into()));
        }
        let sum: f64 = beta.iter().sum();
        if !beta.iter().all(|b| *b >= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!(
                "weights must be nonnegative and sum to 1, got {:?}",
                beta
            )));
        }
        let eta: Vec<f64> = beta.iter().map(|b| b.max(LOG_FLOOR).ln()).collect();
        Ok(SimplexPoint { beta, eta })
    }

    /// From log-space coordinates; beta is their softmax.
    pub fn from_eta(eta: Vec<f64>) -> Result<Self> {
        if eta.is_empty() {
            return Err(Error::Param("empty eta vector".into()));
        }
        if !eta.iter().all(|v| v.is_finite()) {
            return Err(Error::Param("eta must be finite".into()));
        }
        let beta = crate::autodiff::softmax_slice(&eta);
        Ok(SimplexPoint { beta, eta })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// The trivial point on a single-vertex simplex.
    pub fn trivial() -> Self {
        SimplexPoint {
            beta: vec![1.0],
            eta: vec![0.0],
        }
    }
}

/// Concentrations for a neighborhood: `alpha` on 1-hop entries and
/// `alpha * lambda` on 2-hop entries, so the expected 2-hop:1-hop weight
/// ratio is exactly `lambda` (Dirichlet means are proportional to the
/// concentrations).
pub fn build_alpha(nbh: &Neighborhood, params: DirichletParams) -> Result<ConcentrationVector> {
    DirichletParams::new(params.alpha, params.lambda)?;
    let mut values = vec![params.alpha; nbh.one_hop_len()];
    values.extend(std::iter::repeat_n(
        params.alpha * params.lambda,
        nbh.two_hop_only.len(),
    ));
    ConcentrationVector::new(values)
}

/// Draws simplex weights from Dir(conc) as normalized independent
/// Gamma(alpha_j, 1) variates.
///
/// The Gamma sampler (Marsaglia-Tsang, with the `U^(1/alpha)` boost for
/// shapes below one) is valid for the small concentrations used here; draws
/// that underflow to zero are clamped so every weight stays nonnegative and
/// the normalization never divides by zero.
pub fn sample_dirichlet<R: Rng + ?Sized>(
    conc: &ConcentrationVector,
    rng: &mut R,
) -> SimplexPoint {
    let mut draws: Vec<f64> = conc
        .values()
        .iter()
        .map(|&a| {
            let g = Gamma::new(a, 1.0).expect("positive shape by construction");
            g.sample(rng).max(1e-300)
        })
        .collect();
    if draws.len() == 1 {
        return SimplexPoint::trivial();
    }
    let sum: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= sum;
    }
    SimplexPoint::from_beta(draws).expect("normalized gamma draws lie on the simplex")
}

/// The convex combination of neighborhood embedding rows under `point`.
pub fn convex_combine(
    point: &SimplexPoint,
    nbh: &Neighborhood,
    emb: &EmbeddingMatrix,
) -> Result<Vec<f64>> {
    if point.len() != nbh.len() {
        return Err(Error::Shape(format!(
            "point has {} weights for a neighborhood of {}",
            point.len(),
            nbh.len()
        )));
    }
    let mut out = vec![0.0; emb.dim()];
    for (b, id) in point.beta().iter().zip(nbh.vertex_ids()) {
        for (o, x) in out.iter_mut().zip(emb.row(id)) {
            *o += b * x;
        }
    }
    Ok(out)
}

/// Maps log-space coordinates back onto the simplex: beta = softmax(eta).
pub fn reparameterize(eta: &[f64]) -> Result<SimplexPoint> {
    SimplexPoint::from_eta(eta.to_vec())
}
