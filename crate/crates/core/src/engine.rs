//! One entry point for every update method over a loaded dataset and cache.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{closed_form_linear, infl_update, retrain};
use crate::capture::{CacheMode, ProvenanceCache};
use crate::error::{Error, Result};
use crate::model::{DeletionRequest, ModelKind, ModelParams, TrainingDataset};
use crate::opt::{build_linear_eigen, build_logistic_eigen, opt_linear, opt_logistic, EigenCache, DEFAULT_MAX_DIM};
use crate::update::{ms_since, priu_update, PreparedCache, UpdateReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Priu,
    PriuOpt,
    Basel,
    ClosedForm,
    Infl,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Priu, Method::PriuOpt, Method::Basel, Method::ClosedForm, Method::Infl];

    pub fn name(self) -> &'static str {
        match self {
            Method::Priu => "priu",
            Method::PriuOpt => "priu-opt",
            Method::Basel => "basel",
            Method::ClosedForm => "closed-form",
            Method::Infl => "infl",
        }
    }

    /// Whether the method exists for this model kind at all.
    pub fn supports(self, kind: ModelKind) -> bool {
        !(self == Method::ClosedForm && kind != ModelKind::Linear)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

/// A dataset with its validated cache. Eigen data for the opt path is
/// built on first use and reused afterwards.
#[derive(Debug)]
pub struct Engine {
    pub ds: TrainingDataset,
    pub prepared: PreparedCache,
    eigen: OnceLock<EigenCache>,
}

impl Engine {
    pub fn new(ds: TrainingDataset, cache: ProvenanceCache) -> Result<Self> {
        let prepared = PreparedCache::new(cache, &ds)?;
        Ok(Engine {
            ds,
            prepared,
            eigen: OnceLock::new(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.ds.kind()
    }

    pub fn trained(&self) -> &[f64] {
        &self.prepared.cache.trained
    }

    /// Builds the eigen data now; returns the build time in milliseconds
    /// (0 when already built).
    pub fn warm_eigen(&self) -> Result<f64> {
        if self.eigen.get().is_some() {
            return Ok(0.0);
        }
        let start = Instant::now();
        let e = match self.kind() {
            ModelKind::Linear => build_linear_eigen(&self.ds, DEFAULT_MAX_DIM)?,
            _ => build_logistic_eigen(&self.ds, &self.prepared, DEFAULT_MAX_DIM)?,
        };
        let _ = self.eigen.set(e);
        Ok(ms_since(start))
    }

    pub fn run(&self, method: Method, request: &DeletionRequest) -> Result<(ModelParams, UpdateReport)> {
        if !method.supports(self.kind()) {
            return Err(Error::config(format!("{method} is not available for this model kind")));
        }
        let cache = &self.prepared.cache;
        let hp = cache.header.hp;
        match method {
            Method::Priu => priu_update(&self.ds, &self.prepared, request),
            Method::PriuOpt => {
                if cache.mode() == CacheMode::SparseLinearized {
                    return Err(Error::config("priu-opt needs a dense cache"));
                }
                if self.kind().is_logistic() && cache.header.t_s.is_none() {
                    return Err(Error::config("priu-opt needs a cache captured with an early-stop iteration"));
                }
                let build_ms = self.warm_eigen()?;
                let e = self.eigen.get().expect("built above");
                let (w, mut report) = match self.kind() {
                    ModelKind::Linear => opt_linear(&self.ds, e, &hp, request, Some(&cache.w0))?,
                    _ => opt_logistic(&self.ds, &self.prepared, e, request)?,
                };
                report.prepare_ms = build_ms;
                Ok((w, report))
            }
            Method::Basel => retrain(&self.ds, &hp, &self.prepared.schedule, request, Some(&cache.w0)),
            Method::ClosedForm => {
                let start = Instant::now();
                let w = closed_form_linear(&self.ds, hp.lambda, request)?;
                let mut report = UpdateReport::new("closed-form", request.len(), "exact-minimiser", 0);
                report.update_ms = ms_since(start);
                Ok((w, report))
            }
            Method::Infl => {
                let w_full = ModelParams::new(cache.trained.clone(), hp.iterations)?;
                infl_update(&self.ds, &hp, &w_full, request)
            }
        }
    }
}
