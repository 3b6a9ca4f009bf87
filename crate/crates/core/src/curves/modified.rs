use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{linspace, periodic_grid};
use crate::system::{ModifiedParams, PlanarField};

/// Base scalar field with its cutoff-regularised counterpart.
#[derive(Clone, Debug)]
pub struct ModifiedSystem {
    pub base: PlanarField,
    pub field: PlanarField,
    pub c: f64,
    pub r0: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub offset: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModifiedSummary {
    pub c: f64,
    pub r0: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub offset: f64,
}

impl ModifiedSystem {
    pub fn summary(&self) -> ModifiedSummary {
        ModifiedSummary { c: self.c, r0: self.r0, sigma0: self.sigma0, sigma1: self.sigma1, offset: self.offset }
    }
}

/// Linear inside radius² `r0² + 1/2`, the base system outside `r0² + 1`.
/// The primitive of g is shifted so that `G - c x²/2 >= 0` on `|x| <= 2 sqrt(sigma1)`.
pub fn build_modified(fld: &PlanarField, c: f64, r0: f64) -> Result<ModifiedSystem> {
    let g = fld
        .g_scalar()
        .filter(|_| matches!(fld.body, crate::system::FieldBody::Scalar { .. }))
        .ok_or_else(|| Error::Config("the modified system needs a scalar second-order field".into()))?
        .clone();
    if !(c > 0.0 && r0 >= 0.0) {
        return Err(Error::Config(format!("need c > 0 and r0 >= 0, got c={c}, r0={r0}")));
    }
    let sigma0 = r0 * r0 + 0.5;
    let sigma1 = r0 * r0 + 1.0;
    let probe = ModifiedParams::new(g.clone(), c, sigma0, sigma1, 0.0);
    let w = 2.0 * sigma1.sqrt();
    let mut low = f64::INFINITY;
    for &t in &periodic_grid(fld.period, 64) {
        for x in linspace(-w, w, 401) {
            low = low.min(probe.primitive(t, x) - 0.5 * c * x * x);
        }
    }
    if !low.is_finite() {
        return Err(Error::Offset(format!("primitive of g is not finite on |x| <= {w}")));
    }
    let offset = (-low).max(0.0);
    let params = ModifiedParams::new(g, c, sigma0, sigma1, offset);
    let field = PlanarField::modified(params, fld.period, fld.lambda, format!("{}_modified", fld.label))?;
    Ok(ModifiedSystem { base: fld.clone(), field, c, r0, sigma0, sigma1, offset })
}
