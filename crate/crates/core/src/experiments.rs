//! Experiment configs, the sweep procedures behind them and artifact output.
//!
//! A config is a TOML document with a top-level `kind` and optional
//! sections; every field has a default and unknown keys are rejected. See
//! the README for the full key list.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functions::FourierFunction;
use crate::geometry::{CircleBundle, Potential, Torus};
use crate::graph::{ImplicitGraph, ImplicitLiftedGraph, NeighbourhoodGraph, WeightScheme, WeightedGraph};
use crate::kernels::{
    kernel_moments, odd_moments, product_kernel_moments, Kernel, KernelMoments, KernelShape, ProductKernel,
};
use crate::pde::{self, pde_pairing, FieldState, Measure, SpectralGrid};
use crate::sampling::{
    initial_configuration, initial_lifted_configuration, keyed_rng, sample_fibres, sample_ppp, BandwidthSchedule,
    LiftedCloud, ScheduleRule,
};
use crate::sep::{self, duality_check, Observer, SimulationOptions};
use crate::walkers::{
    concentration_experiment, consistency_error, lifted_consistency_error, median, vertex_values, ConsistencyReport,
};

const TAG_QUERY: u64 = 0x7175_6572;
const TAG_DUALITY: u64 = 0x6475_616c;
const TAG_SEP_REPLICA: u64 = 0x7265_706c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Moments,
    Consistency,
    Concentration,
    Duality,
    Hydro,
    BundleConsistency,
    BundleHydro,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Moments,
        ExperimentKind::Consistency,
        ExperimentKind::Concentration,
        ExperimentKind::Duality,
        ExperimentKind::Hydro,
        ExperimentKind::BundleConsistency,
        ExperimentKind::BundleHydro,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Moments => "moments",
            ExperimentKind::Consistency => "consistency",
            ExperimentKind::Concentration => "concentration",
            ExperimentKind::Duality => "duality",
            ExperimentKind::Hydro => "hydro",
            ExperimentKind::BundleConsistency => "bundle-consistency",
            ExperimentKind::BundleHydro => "bundle-hydro",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnknownName {
                kind: "experiment kind",
                name: name.to_string(),
            })
    }

    pub fn is_bundle(&self) -> bool {
        matches!(self, ExperimentKind::BundleConsistency | ExperimentKind::BundleHydro)
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub sizes: SizesConfig,
    #[serde(default)]
    pub observables: ObservablesConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub concentration: ConcentrationConfig,
    #[serde(default)]
    pub duality: DualityConfig,
    #[serde(default)]
    pub moments: MomentsConfig,
    #[serde(default)]
    pub assertions: AssertionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub dim: usize,
    /// Side lengths; unit sides when absent.
    pub sides: Option<Vec<f64>>,
    /// `zero`, `cosine` or `two-mode`.
    pub potential: String,
    pub amplitude: f64,
    pub fibre_circumference: f64,
    pub connection: Vec<f64>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            sides: None,
            potential: "zero".into(),
            amplitude: 0.5,
            fibre_circumference: TAU,
            connection: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub kernel: String,
    /// Fibre factor of the separable product kernel on bundles.
    pub fibre_kernel: String,
    /// `gibbs`, `alpha`, `lifted` or `lifted-alpha`.
    pub scheme: String,
    /// One series per value for the estimator schemes.
    pub alphas: Vec<f64>,
    /// `c` in `h = c (log N / N)^{1/(m+4)}` (`1/(m+6)` on bundles).
    pub schedule_c: f64,
    /// Replaces the default rule by `h = c N^{-exponent}`.
    pub schedule_exponent: Option<f64>,
    pub fibre_c: f64,
    pub fibre_exponent: f64,
    /// Build CSR adjacency instead of recomputing weights on the fly.
    pub materialize: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            kernel: "indicator".into(),
            fibre_kernel: "indicator".into(),
            scheme: "alpha".into(),
            alphas: vec![0.5],
            schedule_c: 0.5,
            schedule_exponent: None,
            fibre_c: 1.0,
            fibre_exponent: 1.25,
            materialize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizesConfig {
    pub n: Vec<u64>,
    /// Fibre levels paired index-wise with `n` on bundles.
    pub n_fibre: Vec<u64>,
    /// Composite query vertices per seed for bundle consistency.
    pub queries: usize,
}

impl Default for SizesConfig {
    fn default() -> Self {
        Self {
            n: vec![2000],
            n_fibre: vec![20],
            queries: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservablesConfig {
    /// Test functions, e.g. `cos(1)`, `one`, `cos(1|1)`.
    pub phi: Vec<String>,
}

impl Default for ObservablesConfig {
    fn default() -> Self {
        Self {
            phi: vec!["cos(1)".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub rho0: String,
    pub t_end: f64,
    /// Number of grid times including `0` and `t_end`.
    pub time_points: usize,
    pub modes: usize,
    pub fibre_modes: usize,
    pub event_budget: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            rho0: "0.5 + 0.5*cos(1)".into(),
            t_end: 0.25,
            time_points: 26,
            modes: pde::DEFAULT_MODES,
            fibre_modes: pde::DEFAULT_FIBRE_MODES,
            event_budget: sep::DEFAULT_EVENT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentrationConfig {
    pub grid: usize,
    pub delta: Option<f64>,
    pub delta_quantile: f64,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        Self {
            grid: 200,
            delta: None,
            delta_quantile: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualityConfig {
    pub graphs: usize,
    pub max_vertices: usize,
    pub edge_probability: f64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            graphs: 50,
            max_vertices: 12,
            edge_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsConfig {
    pub kernels: Vec<String>,
    pub dims: Vec<usize>,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            kernels: vec!["indicator".into(), "epanechnikov".into()],
            dims: vec![1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssertionConfig {
    pub enabled: bool,
    pub min_decrease_factor: f64,
    pub hydro_tolerance: f64,
    pub duality_tolerance: f64,
}

impl Default for AssertionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            min_decrease_factor: 2.0,
            hydro_tolerance: 0.05,
            duality_tolerance: 1e-12,
        }
    }
}

/// Applies `key=value` overrides (dotted keys, TOML-literal values with a
/// bare-string fallback) to a parsed document.
pub fn apply_overrides(doc: &mut toml::Value, overrides: &[(String, String)]) -> Result<()> {
    for (key, raw) in overrides {
        let value = parse_literal(raw);
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty override key `{key}`")))?;
        let mut node = &mut *doc;
        for p in parts {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is not a section")))?;
            node = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        node.as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not address a section")))?
            .insert(last.to_string(), value);
    }
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: toml::Value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| Error::Parse(e.to_string()))?;
        apply_overrides(&mut doc, overrides)?;
        doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_toml_with_overrides(&fs::read_to_string(path)?, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn torus(&self) -> Result<Torus> {
        match &self.geometry.sides {
            Some(s) => {
                if s.len() != self.geometry.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.geometry.dim,
                        got: s.len(),
                    });
                }
                Torus::new(s.clone())
            }
            None => Torus::unit(self.geometry.dim),
        }
    }

    pub fn potential(&self, torus: &Torus) -> Result<Potential> {
        Potential::from_name(&self.geometry.potential, torus, self.geometry.amplitude)
    }

    pub fn bundle(&self) -> Result<CircleBundle> {
        CircleBundle::new(
            self.torus()?,
            self.geometry.fibre_circumference,
            self.geometry.connection.clone(),
        )
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::from_name(&self.graph.kernel)
    }

    pub fn product_kernel(&self) -> Result<ProductKernel> {
        Ok(ProductKernel::Separable(self.kernel()?, Kernel::from_name(&self.graph.fibre_kernel)?))
    }

    /// Weight schemes to run, one per `alpha` for the estimator schemes.
    pub fn schemes(&self) -> Result<Vec<WeightScheme>> {
        for &a in &self.graph.alphas {
            if !(0.0..=1.0).contains(&a) {
                return Err(invalid("alpha", format!("{a} outside [0, 1]")));
            }
        }
        let lifted = self.kind.is_bundle();
        let out = match (self.graph.scheme.as_str(), lifted) {
            ("gibbs", false) => vec![WeightScheme::GibbsSqrt],
            ("alpha", false) => self.graph.alphas.iter().map(|&alpha| WeightScheme::AlphaEstimator { alpha }).collect(),
            ("lifted", true) => vec![WeightScheme::Lifted],
            ("lifted-alpha", true) => self.graph.alphas.iter().map(|&alpha| WeightScheme::LiftedAlpha { alpha }).collect(),
            ("gibbs" | "alpha", true) | ("lifted" | "lifted-alpha", false) => {
                return Err(Error::Config(format!(
                    "scheme `{}` does not fit experiment kind `{}`",
                    self.graph.scheme,
                    self.kind.name()
                )))
            }
            (other, _) => {
                return Err(Error::UnknownName {
                    kind: "weight scheme",
                    name: other.to_string(),
                })
            }
        };
        if out.is_empty() {
            return Err(Error::Config("`graph.alphas` is empty".into()));
        }
        Ok(out)
    }

    pub fn schedule(&self) -> BandwidthSchedule {
        let c = self.graph.schedule_c;
        let rule = match (self.graph.schedule_exponent, self.kind.is_bundle()) {
            (Some(exponent), _) => ScheduleRule::Power { c, exponent },
            (None, false) => ScheduleRule::Default { c },
            (None, true) => ScheduleRule::Lifted {
                c,
                fibre_c: self.graph.fibre_c,
                fibre_exponent: self.graph.fibre_exponent,
            },
        };
        BandwidthSchedule { rule }
    }

    fn sides_and_circumference(&self) -> (Vec<f64>, f64) {
        let sides = self.geometry.sides.clone().unwrap_or_else(|| vec![1.0; self.geometry.dim]);
        (sides, self.geometry.fibre_circumference)
    }

    pub fn test_functions(&self) -> Result<Vec<FourierFunction>> {
        let (sides, circ) = self.sides_and_circumference();
        if self.observables.phi.is_empty() {
            return Err(Error::Config("`observables.phi` is empty".into()));
        }
        self.observables
            .phi
            .iter()
            .map(|s| FourierFunction::parse(s, &sides, circ).map(|f| f.with_label(s.clone())))
            .collect()
    }

    pub fn initial_profile(&self) -> Result<FourierFunction> {
        let (sides, circ) = self.sides_and_circumference();
        FourierFunction::parse(&self.dynamics.rho0, &sides, circ)
    }

    /// Strictly increasing grid of `time_points` times from 0 to `t_end`.
    pub fn time_grid(&self) -> Result<Vec<f64>> {
        let d = &self.dynamics;
        if !(d.t_end > 0.0) || d.time_points < 2 {
            return Err(invalid("dynamics", "need t_end > 0 and at least two time points"));
        }
        let k = d.time_points - 1;
        Ok((0..=k).map(|i| d.t_end * i as f64 / k as f64).collect())
    }
}

/// Schema and regime problems found without running anything.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks a config: names resolve, lists are well formed and every
/// requested bandwidth satisfies the regime conditions.
pub fn validate(config: &ExperimentConfig) -> ValidationReport {
    let mut failures = Vec::new();
    let mut push = |r: Result<()>| {
        if let Err(e) = r {
            failures.push(e.to_string());
        }
    };
    let kind = config.kind;
    push(if config.seeds.is_empty() {
        Err(Error::Config("`seeds` is empty".into()))
    } else {
        Ok(())
    });
    let torus = config.torus();
    push(torus.as_ref().map(|_| ()).map_err(clone_err));
    if let Ok(t) = &torus {
        push(config.potential(t).map(|_| ()));
    }
    match kind {
        ExperimentKind::Moments => {
            for k in &config.moments.kernels {
                push(Kernel::from_name(k).map(|_| ()));
            }
            if config.moments.dims.iter().any(|&m| !(1..=3).contains(&m)) {
                push(Err(invalid("moments.dims", "dimensions must lie in 1..=3")));
            }
        }
        ExperimentKind::Duality => {
            let d = &config.duality;
            if d.max_vertices < 2 || d.max_vertices > 12 {
                push(Err(Error::TooManyVertices(d.max_vertices)));
            }
            if !(0.0..=1.0).contains(&d.edge_probability) {
                push(Err(invalid("duality.edge_probability", "must lie in [0, 1]")));
            }
        }
        _ => {
            push(config.kernel().map(|_| ()));
            push(config.schemes().map(|_| ()));
            let n = &config.sizes.n;
            if n.is_empty() || n.windows(2).any(|w| w[1] <= w[0]) {
                push(Err(Error::Config("`sizes.n` must be nonempty and strictly increasing".into())));
            }
            if matches!(kind, ExperimentKind::Consistency | ExperimentKind::Hydro | ExperimentKind::BundleConsistency | ExperimentKind::BundleHydro) {
                push(config.test_functions().map(|_| ()));
            }
            let m = config.geometry.dim;
            if kind.is_bundle() {
                push(config.bundle().map(|_| ()));
                push(Kernel::from_name(&config.graph.fibre_kernel).map(|_| ()));
                let nf = &config.sizes.n_fibre;
                if nf.len() != n.len() || nf.windows(2).any(|w| w[1] <= w[0]) {
                    push(Err(Error::Config(
                        "`sizes.n_fibre` must pair index-wise with `sizes.n` and be strictly increasing".into(),
                    )));
                }
                for (&a, &b) in n.iter().zip(nf) {
                    push(config.schedule().lifted_bandwidths(a, b, m, 1).map(|_| ()));
                }
            } else {
                for &a in n {
                    push(config.schedule().bandwidth(a, m).map(|_| ()));
                }
            }
            if matches!(kind, ExperimentKind::Hydro | ExperimentKind::BundleHydro) {
                push(config.initial_profile().map(|_| ()));
                push(config.time_grid().map(|_| ()));
                if config.dynamics.modes == 0 || config.dynamics.fibre_modes == 0 {
                    push(Err(invalid("dynamics.modes", "must be positive")));
                }
            }
            if kind == ExperimentKind::Concentration {
                let c = &config.concentration;
                if config.seeds.len() < 2 {
                    push(Err(Error::Config("concentration needs at least two seeds".into())));
                }
                if !(0.0..=1.0).contains(&c.delta_quantile) || c.grid == 0 {
                    push(Err(invalid("concentration", "need grid > 0 and delta_quantile in [0, 1]")));
                }
            }
        }
    }
    ValidationReport { failures }
}

fn clone_err(e: &Error) -> Error {
    Error::Config(e.to_string())
}

// ---------------------------------------------------------------------------
// Sweep procedures

/// One `(scheme, N)` cell of a consistency sweep.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyRow {
    pub scheme: String,
    pub alpha: f64,
    pub n: u64,
    pub n_fibre: Option<u64>,
    pub h: f64,
    pub h_fibre: Option<f64>,
    /// Median over the vertex errors of all seeds pooled.
    pub median_error: f64,
    /// Mean over seeds of the per-seed sup error.
    pub sup_error: f64,
    pub per_seed: Vec<(u64, f64, f64)>,
}

fn pool(scheme: WeightScheme, n: u64, h: f64, reports: Vec<(u64, ConsistencyReport)>) -> ConsistencyRow {
    let mut all = Vec::new();
    let mut per_seed = Vec::new();
    let mut sup = 0.0;
    let count = reports.len() as f64;
    let mut n_fibre = None;
    let mut h_fibre = None;
    for (seed, r) in reports {
        per_seed.push((seed, r.median_error, r.sup_error));
        sup += r.sup_error / count;
        n_fibre = r.n_fibre;
        h_fibre = r.h_fibre;
        all.extend(r.errors);
    }
    ConsistencyRow {
        scheme: scheme.name(),
        alpha: scheme.alpha(),
        n,
        n_fibre,
        h,
        h_fibre,
        median_error: median(&all),
        sup_error: sup,
        per_seed,
    }
}

/// Base consistency over nested levels: each seed is sampled once at the
/// largest level and the smaller clouds are its prefixes.
pub fn consistency_sweep(
    torus: &Torus,
    u: &Potential,
    kernel: Kernel,
    scheme: WeightScheme,
    schedule: &BandwidthSchedule,
    levels: &[u64],
    seeds: &[u64],
    phi: &FourierFunction,
) -> Result<Vec<ConsistencyRow>> {
    let m = torus.dim();
    let moments = kernel_moments(&kernel, m)?;
    let top = *levels.iter().max().ok_or_else(|| invalid("levels", "empty"))?;
    let mut per_level: Vec<Vec<(u64, ConsistencyReport)>> = vec![Vec::new(); levels.len()];
    let mut hs = Vec::with_capacity(levels.len());
    for &n in levels {
        hs.push(schedule.bandwidth(n, m)?.h);
    }
    for &seed in seeds {
        let full = sample_ppp(torus, u, top, seed)?;
        for (k, &n) in levels.iter().enumerate() {
            let cloud = full.prefix(n)?;
            let graph = ImplicitGraph::new(&cloud, kernel, scheme, hs[k])?;
            per_level[k].push((seed, consistency_error(&graph, &cloud, phi, scheme, &moments)?));
        }
    }
    Ok(levels
        .iter()
        .zip(hs)
        .zip(per_level)
        .map(|((&n, h), reps)| pool(scheme, n, h, reps))
        .collect())
}

/// Uniformly chosen composite vertices (without replacement).
pub fn query_vertices(lifted: &LiftedCloud, count: usize, seed: u64) -> Vec<usize> {
    let total = lifted.vertex_count();
    let mut rng = keyed_rng(seed, TAG_QUERY, lifted.base().level(), lifted.fibre_level());
    let mut v = sample_indices(&mut rng, total, count.min(total)).into_vec();
    v.sort_unstable();
    v
}

/// Lifted consistency at one `(N, N')` with explicit bandwidths.
#[allow(clippy::too_many_arguments)]
pub fn lifted_consistency_at(
    lifted: &LiftedCloud,
    kernel: ProductKernel,
    scheme: WeightScheme,
    h: f64,
    h_fibre: f64,
    phi: &FourierFunction,
    queries: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    let m = lifted.base().dim();
    let moments = product_kernel_moments(&kernel, m, 1)?.horizontal();
    let graph = ImplicitLiftedGraph::new(lifted, kernel, scheme, h, h_fibre)?;
    let q = query_vertices(lifted, queries, seed);
    lifted_consistency_error(&graph, lifted, phi, scheme, &moments, h_fibre, &q)
}

/// Lifted consistency over paired levels with bandwidths from a lifted
/// schedule. Base clouds are nested prefixes; fibre clouds are nested by
/// construction.
#[allow(clippy::too_many_arguments)]
pub fn lifted_consistency_sweep(
    bundle: &CircleBundle,
    u: &Potential,
    kernel: ProductKernel,
    scheme: WeightScheme,
    schedule: &BandwidthSchedule,
    pairs: &[(u64, u64)],
    seeds: &[u64],
    phi: &FourierFunction,
    queries: usize,
) -> Result<Vec<ConsistencyRow>> {
    let m = bundle.base().dim();
    let top = pairs.iter().map(|p| p.0).max().ok_or_else(|| invalid("levels", "empty"))?;
    let bws = pairs
        .iter()
        .map(|&(n, nf)| schedule.lifted_bandwidths(n, nf, m, 1))
        .collect::<Result<Vec<_>>>()?;
    let mut per_level: Vec<Vec<(u64, ConsistencyReport)>> = vec![Vec::new(); pairs.len()];
    for &seed in seeds {
        let full = sample_ppp(bundle.base(), u, top, seed)?;
        for (k, &(n, nf)) in pairs.iter().enumerate() {
            let base = full.prefix(n)?;
            let lifted = sample_fibres(&base, bundle, nf, seed)?;
            let r = lifted_consistency_at(&lifted, kernel, scheme, bws[k].h, bws[k].h_fibre, phi, queries, seed)?;
            per_level[k].push((seed, r));
        }
    }
    Ok(pairs
        .iter()
        .zip(bws)
        .zip(per_level)
        .map(|((&(n, _), bw), reps)| pool(scheme, n, bw.h, reps))
        .collect())
}

/// `C` and `alpha` of the limit PDE reached by a scheme: estimator schemes
/// give `C2 / (2 C0^{2 alpha})` with their `alpha`; Gibbs schemes give
/// `C2 / 2` with `alpha = 1/2`.
pub fn limit_pde_coefficients(scheme: WeightScheme, moments: &KernelMoments) -> (f64, f64) {
    let alpha = scheme.alpha();
    let c = match scheme {
        WeightScheme::GibbsSqrt | WeightScheme::Lifted => moments.c2 / 2.0,
        _ => moments.c2 / (2.0 * moments.c0.powf(2.0 * alpha)),
    };
    (c, alpha)
}

/// Empirical versus reference pairings along one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct HydroRun {
    pub scheme: String,
    pub n: u64,
    pub n_fibre: Option<u64>,
    pub h: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub ids: Vec<String>,
    /// `[phi][time]`.
    pub empirical: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    pub events: u64,
}

impl HydroRun {
    /// Max over the time grid of `|empirical - reference|` per test function.
    pub fn max_errors(&self) -> Vec<f64> {
        self.empirical
            .iter()
            .zip(&self.reference)
            .map(|(e, r)| e.iter().zip(r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .collect()
    }

    pub fn max_error(&self) -> f64 {
        self.max_errors().into_iter().fold(0.0, f64::max)
    }
}

/// Inputs of a base hydrodynamic run.
#[derive(Debug, Clone)]
pub struct HydroSetup {
    pub torus: Torus,
    pub potential: Potential,
    pub kernel: Kernel,
    pub scheme: WeightScheme,
    pub schedule: BandwidthSchedule,
    pub rho0: FourierFunction,
    pub phis: Vec<FourierFunction>,
    pub times: Vec<f64>,
    pub modes: usize,
    pub materialize: bool,
    pub event_budget: f64,
}

/// `<phi, rho_t e^{-U} dVol>` from the spectral solver, `[phi][time]`.
pub fn hydro_reference(setup: &HydroSetup) -> Result<Vec<Vec<f64>>> {
    let moments = kernel_moments(&setup.kernel, setup.torus.dim())?;
    let (c, alpha) = limit_pde_coefficients(setup.scheme, &moments);
    let grid = SpectralGrid::torus(&setup.torus, setup.modes)?;
    let rho0 = FieldState::from_function(&grid, &setup.rho0)?;
    let states = pde::solve_weighted_heat(&rho0, &setup.potential, alpha, c, &setup.times, None)?;
    Ok(setup
        .phis
        .iter()
        .map(|phi| states.iter().map(|s| pde_pairing(s, phi, Measure::Gibbs(&setup.potential))).collect())
        .collect())
}

fn observers(phis: &[FourierFunction], values: impl Fn(&FourierFunction) -> Vec<f64>) -> Vec<Observer> {
    phis.iter()
        .map(|phi| Observer {
            id: phi.label().to_string(),
            values: values(phi),
        })
        .collect()
}

/// One replica at level `n`: sample, build the graph, draw Bernoulli
/// initial data, run the exclusion process with rates `h^{-2} W`.
pub fn hydro_replica(setup: &HydroSetup, n: u64, seed: u64, reference: &[Vec<f64>]) -> Result<HydroRun> {
    let m = setup.torus.dim();
    let h = setup.schedule.bandwidth(n, m)?.h;
    let cloud = sample_ppp(&setup.torus, &setup.potential, n, seed)?;
    let eta0 = initial_configuration(&cloud, &setup.rho0, seed)?;
    let obs = observers(&setup.phis, |phi| vertex_values(&cloud, phi));
    let options = SimulationOptions {
        rate_scale: h.powi(-2),
        time_grid: setup.times.clone(),
        seed: seed ^ TAG_SEP_REPLICA,
        event_budget: setup.event_budget,
    };
    let implicit = ImplicitGraph::new(&cloud, setup.kernel, setup.scheme, h)?;
    let traj = if setup.materialize {
        sep::simulate(&implicit.materialize(), &eta0, &obs, &options)?
    } else {
        sep::simulate(&implicit, &eta0, &obs, &options)?
    };
    Ok(HydroRun {
        scheme: setup.scheme.name(),
        n,
        n_fibre: None,
        h,
        seed,
        times: traj.times,
        ids: traj.ids,
        empirical: traj.pairings,
        reference: reference.to_vec(),
        events: traj.events,
    })
}

/// Inputs of a bundle hydrodynamic run.
#[derive(Debug, Clone)]
pub struct BundleHydroSetup {
    pub bundle: CircleBundle,
    pub potential: Potential,
    pub kernel: ProductKernel,
    pub scheme: WeightScheme,
    pub schedule: BandwidthSchedule,
    pub rho0: FourierFunction,
    pub phis: Vec<FourierFunction>,
    pub times: Vec<f64>,
    pub modes: usize,
    pub fibre_modes: usize,
    pub event_budget: f64,
}

pub fn bundle_hydro_reference(setup: &BundleHydroSetup) -> Result<Vec<Vec<f64>>> {
    let m = setup.bundle.base().dim();
    let moments = product_kernel_moments(&setup.kernel, m, 1)?.horizontal();
    let (c, alpha) = limit_pde_coefficients(setup.scheme, &moments);
    let grid = SpectralGrid::bundle(&setup.bundle, setup.modes, setup.fibre_modes)?;
    let rho0 = FieldState::from_function(&grid, &setup.rho0)?;
    let states = pde::solve_horizontal_heat(&rho0, &setup.potential, alpha, c, &setup.times, None)?;
    Ok(setup
        .phis
        .iter()
        .map(|phi| states.iter().map(|s| pde_pairing(s, phi, Measure::Gibbs(&setup.potential))).collect())
        .collect())
}

pub fn bundle_hydro_replica(setup: &BundleHydroSetup, n: u64, n_fibre: u64, seed: u64, reference: &[Vec<f64>]) -> Result<HydroRun> {
    let m = setup.bundle.base().dim();
    let bw = setup.schedule.lifted_bandwidths(n, n_fibre, m, 1)?;
    let base = sample_ppp(setup.bundle.base(), &setup.potential, n, seed)?;
    let lifted = sample_fibres(&base, &setup.bundle, n_fibre, seed)?;
    let eta0 = initial_lifted_configuration(&lifted, &setup.rho0, seed)?;
    let obs = observers(&setup.phis, |phi| crate::walkers::lifted_vertex_values(&lifted, phi));
    let graph = ImplicitLiftedGraph::new(&lifted, setup.kernel, setup.scheme, bw.h, bw.h_fibre)?;
    let options = SimulationOptions {
        rate_scale: bw.h.powi(-2),
        time_grid: setup.times.clone(),
        seed: seed ^ TAG_SEP_REPLICA,
        event_budget: setup.event_budget,
    };
    let traj = sep::simulate(&graph, &eta0, &obs, &options)?;
    Ok(HydroRun {
        scheme: setup.scheme.name(),
        n,
        n_fibre: Some(n_fibre),
        h: bw.h,
        seed,
        times: traj.times,
        ids: traj.ids,
        empirical: traj.pairings,
        reference: reference.to_vec(),
        events: traj.events,
    })
}

/// A random weighted graph on `2..=max_vertices` vertices with a random
/// test vector, deterministic in `(seed, index)`.
pub fn random_weighted_graph(seed: u64, index: u64, max_vertices: usize, edge_probability: f64) -> Result<(NeighbourhoodGraph, Vec<f64>)> {
    let mut rng = keyed_rng(seed, TAG_DUALITY, index, 0);
    let n = rng.random_range(2..=max_vertices.max(2));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < edge_probability {
                edges.push((i, j, rng.random_range(0.01..2.0)));
            }
        }
    }
    let phi = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok((NeighbourhoodGraph::from_edges(n, &edges, 1.0, n as u64)?, phi))
}

/// Analytic `(C0, C2)` where known: indicator and Epanechnikov in `m <= 3`.
pub fn analytic_moments(kernel: &Kernel, m: usize) -> Option<(f64, f64)> {
    use std::f64::consts::PI;
    let sphere = match m {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => return None,
    };
    let mf = m as f64;
    let base = match kernel.shape() {
        KernelShape::Indicator => (sphere / mf, sphere / (mf * (mf + 2.0))),
        KernelShape::Epanechnikov => (
            2.0 * sphere / (mf * (mf + 2.0)),
            2.0 * sphere / (mf * (mf + 2.0) * (mf + 4.0)),
        ),
        KernelShape::Bump => return None,
    };
    let s = kernel.profile(0.0);
    Some((s * base.0, s * base.1))
}

// ---------------------------------------------------------------------------
// Reports and artifacts

#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub tables: Vec<Table>,
    pub assertions: Vec<Assertion>,
    #[serde(skip)]
    pub log: Vec<String>,
}

impl RunReport {
    fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            tables: Vec::new(),
            assertions: Vec::new(),
            log: Vec::new(),
        }
    }

    /// True when every in-config assertion passed.
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    fn check(&mut self, enabled: bool, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        if enabled {
            let a = Assertion {
                name: name.into(),
                passed,
                detail: detail.into(),
            };
            self.log
                .push(format!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail));
            self.assertions.push(a);
        }
    }

    /// Writes `<table>.csv` files, `metadata.json` and `run.log` to `dir`.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        for t in &self.tables {
            t.write_csv(&dir.join(format!("{}.csv", t.name)))?;
        }
        #[derive(Serialize)]
        struct Metadata<'a> {
            crate_version: &'static str,
            config: &'a ExperimentConfig,
            tables: Vec<String>,
            headers: Vec<&'a [String]>,
            assertions: &'a [Assertion],
            passed: bool,
        }
        let meta = Metadata {
            crate_version: env!("CARGO_PKG_VERSION"),
            config,
            tables: self.tables.iter().map(|t| format!("{}.csv", t.name)).collect(),
            headers: self.tables.iter().map(|t| t.header.as_slice()).collect(),
            assertions: &self.assertions,
            passed: self.passed(),
        };
        fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        let mut log = String::new();
        for line in &self.log {
            let _ = writeln!(log, "{line}");
        }
        fs::write(dir.join("run.log"), log)?;
        Ok(())
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Runs the experiment described by `config` (after validation).
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    let report = validate(config);
    if !report.is_ok() {
        return Err(Error::Config(report.failures.join("; ")));
    }
    match config.kind {
        ExperimentKind::Moments => run_moments(config),
        ExperimentKind::Consistency => run_consistency(config),
        ExperimentKind::Concentration => run_concentration(config),
        ExperimentKind::Duality => run_duality(config),
        ExperimentKind::Hydro => run_hydro(config),
        ExperimentKind::BundleConsistency => run_bundle_consistency(config),
        ExperimentKind::BundleHydro => run_bundle_hydro(config),
    }
}

/// [`run`] followed by [`RunReport::write`] into `dir`.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<RunReport> {
    let report = run(config)?;
    report.write(dir, config)?;
    Ok(report)
}

fn run_moments(config: &ExperimentConfig) -> Result<RunReport> {
    let mut rep = RunReport::new(config.kind);
    let on = config.assertions.enabled;
    let mut t = Table::new("moments", &["kernel", "dim", "c0", "c2", "max_abs_m1", "max_abs_m3"]);
    for name in &config.moments.kernels {
        let k = Kernel::from_name(name)?;
        for &m in &config.moments.dims {
            let mo = kernel_moments(&k, m)?;
            let (m1, m3) = odd_moments(&k, m)?;
            t.push(vec![name.clone(), m.to_string(), f(mo.c0), f(mo.c2), f(m1), f(m3)]);
            rep.log.push(format!("{name} m={m}: C0={} C2={}", mo.c0, mo.c2));
            rep.check(on, format!("odd moments {name} m={m}"), m1.max(m3) < 1e-10, format!("max |odd| = {:e}", m1.max(m3)));
            if let Some((c0, c2)) = analytic_moments(&k, m) {
                let err = (mo.c0 - c0).abs().max((mo.c2 - c2).abs());
                rep.check(on, format!("analytic moments {name} m={m}"), err < 1e-8, format!("max deviation {err:e}"));
            }
        }
    }
    rep.tables.push(t);
    Ok(rep)
}

fn run_consistency(config: &ExperimentConfig) -> Result<RunReport> {
    let mut rep = RunReport::new(config.kind);
    let on = config.assertions.enabled;
    let torus = config.torus()?;
    let u = config.potential(&torus)?;
    let kernel = config.kernel()?;
    let schedule = config.schedule();
    let phis = config.test_functions()?;
    let mut detail = Table::new("consistency", &["scheme", "alpha", "phi", "n", "h", "seed", "median_error", "sup_error"]);
    let mut summary = Table::new("consistency_summary", &["scheme", "alpha", "phi", "n", "h", "median_error", "sup_error"]);
    for scheme in config.schemes()? {
        for phi in &phis {
            let rows = consistency_sweep(&torus, &u, kernel, scheme, &schedule, &config.sizes.n, &config.seeds, phi)?;
            for r in &rows {
                for (seed, med, sup) in &r.per_seed {
                    detail.push(vec![
                        r.scheme.clone(),
                        f(r.alpha),
                        phi.label().into(),
                        r.n.to_string(),
                        f(r.h),
                        seed.to_string(),
                        f(*med),
                        f(*sup),
                    ]);
                }
                summary.push(vec![
                    r.scheme.clone(),
                    f(r.alpha),
                    phi.label().into(),
                    r.n.to_string(),
                    f(r.h),
                    f(r.median_error),
                    f(r.sup_error),
                ]);
                rep.log.push(format!(
                    "{} phi={} N={} h={:.4}: median {:.4e}, sup {:.4e}",
                    r.scheme,
                    phi.label(),
                    r.n,
                    r.h,
                    r.median_error,
                    r.sup_error
                ));
            }
            let med: Vec<f64> = rows.iter().map(|r| r.median_error).collect();
            let sup: Vec<f64> = rows.iter().map(|r| r.sup_error).collect();
            let tag = format!("{} phi={}", scheme.name(), phi.label());
            let factor = med[0] / med[med.len() - 1];
            rep.check(on, format!("median decreasing {tag}"), strictly_decreasing(&med), format!("{med:?}"));
            if med.len() > 1 {
                rep.check(
                    on,
                    format!("median decrease factor {tag}"),
                    factor >= config.assertions.min_decrease_factor,
                    format!("factor {factor:.3}"),
                );
            }
            rep.check(on, format!("sup decreasing {tag}"), strictly_decreasing(&sup), format!("{sup:?}"));
        }
    }
    rep.tables.push(detail);
    rep.tables.push(summary);
    Ok(rep)
}

fn run_concentration(config: &ExperimentConfig) -> Result<RunReport> {
    let mut rep = RunReport::new(config.kind);
    let torus = config.torus()?;
    let u = config.potential(&torus)?;
    let c = &config.concentration;
    let rows = concentration_experiment(
        &torus,
        &u,
        &config.kernel()?,
        &config.schedule(),
        &config.sizes.n,
        &config.seeds,
        c.grid,
        c.delta,
        c.delta_quantile,
    )?;
    let mut t = Table::new("concentration", &["n", "h", "delta", "frequency"]);
    let mut d = Table::new("concentration_deviations", &["n", "seed", "deviation"]);
    for r in &rows {
        t.push(vec![r.n.to_string(), f(r.h), f(r.delta), f(r.freq)]);
        for (seed, dev) in config.seeds.iter().zip(&r.deviations) {
            d.push(vec![r.n.to_string(), seed.to_string(), f(*dev)]);
        }
        rep.log.push(format!("N={} h={:.4} delta={:.4e}: frequency {}", r.n, r.h, r.delta, r.freq));
    }
    let freq: Vec<f64> = rows.iter().map(|r| r.freq).collect();
    rep.check(
        config.assertions.enabled,
        "exceedance frequency nonincreasing",
        freq.windows(2).all(|w| w[1] <= w[0]),
        format!("{freq:?}"),
    );
    rep.tables.push(t);
    rep.tables.push(d);
    Ok(rep)
}

fn run_duality(config: &ExperimentConfig) -> Result<RunReport> {
    let mut rep = RunReport::new(config.kind);
    let d = &config.duality;
    let seed = config.seeds[0];
    let results: Vec<(usize, usize, f64)> = (0..d.graphs)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let (g, phi) = random_weighted_graph(seed, i as u64, d.max_vertices, d.edge_probability)?;
            Ok((g.vertex_count(), g.edge_count(), duality_check(&g, &phi)?))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new("duality", &["graph", "vertices", "edges", "max_deviation"]);
    let mut worst: f64 = 0.0;
    for (i, (v, e, dev)) in results.iter().enumerate() {
        t.push(vec![i.to_string(), v.to_string(), e.to_string(), f(*dev)]);
        worst = worst.max(*dev);
    }
    rep.log.push(format!("{} graphs, worst deviation {worst:e}", results.len()));
    rep.check(
        config.assertions.enabled,
        "duality deviation",
        worst <= config.assertions.duality_tolerance,
        format!("max {worst:e}"),
    );
    rep.tables.push(t);
    Ok(rep)
}

fn hydro_tables(runs: &[HydroRun], reference: &[(String, Vec<f64>, Vec<Vec<f64>>, Vec<String>)], rep: &mut RunReport) {
    let mut t = Table::new("hydro", &["scheme", "n", "n_fibre", "seed", "time", "phi", "empirical", "pde", "abs_error"]);
    let mut s = Table::new("hydro_summary", &["scheme", "n", "n_fibre", "seed", "phi", "max_error", "events"]);
    for r in runs {
        let nf = r.n_fibre.map(|v| v.to_string()).unwrap_or_default();
        for (k, id) in r.ids.iter().enumerate() {
            for (j, &time) in r.times.iter().enumerate() {
                let (e, p) = (r.empirical[k][j], r.reference[k][j]);
                t.push(vec![
                    r.scheme.clone(),
                    r.n.to_string(),
                    nf.clone(),
                    r.seed.to_string(),
                    f(time),
                    id.clone(),
                    f(e),
                    f(p),
                    f((e - p).abs()),
                ]);
            }
        }
        for (id, err) in r.ids.iter().zip(r.max_errors()) {
            s.push(vec![
                r.scheme.clone(),
                r.n.to_string(),
                nf.clone(),
                r.seed.to_string(),
                id.clone(),
                f(err),
                r.events.to_string(),
            ]);
        }
        rep.log.push(format!(
            "{} N={} N'={nf} seed={}: max error {:.4e} ({} events)",
            r.scheme,
            r.n,
            r.seed,
            r.max_error(),
            r.events
        ));
    }
    let mut p = Table::new("pde", &["scheme", "time", "phi", "value"]);
    for (scheme, times, values, ids) in reference {
        for (k, id) in ids.iter().enumerate() {
            for (j, &time) in times.iter().enumerate() {
                p.push(vec![scheme.clone(), f(time), id.clone(), f(values[k][j])]);
            }
        }
    }
    rep.tables.push(t);
    rep.tables.push(s);
    rep.tables.push(p);
}

/// Mean over seeds of the max error, per level, in level order.
fn mean_errors_by_level(runs: &[HydroRun], levels: &[u64]) -> Vec<f64> {
    levels
        .iter()
        .map(|&n| {
            let errs: Vec<f64> = runs.iter().filter(|r| r.n == n).map(|r| r.max_error()).collect();
            errs.iter().sum::<f64>() / errs.len().max(1) as f64
        })
        .collect()
}

fn hydro_assertions(config: &ExperimentConfig, scheme: WeightScheme, runs: &[HydroRun], rep: &mut RunReport) {
    let on = config.assertions.enabled;
    let levels = &config.sizes.n;
    let top = *levels.last().unwrap();
    let worst_top = runs
        .iter()
        .filter(|r| r.n == top)
        .map(|r| r.max_error())
        .fold(0.0, f64::max);
    let tol = config.assertions.hydro_tolerance;
    rep.check(
        on,
        format!("hydro error at N={top} {}", scheme.name()),
        worst_top <= tol,
        format!("max {worst_top:.4e} vs {tol}"),
    );
    if levels.len() > 1 {
        let means = mean_errors_by_level(runs, levels);
        rep.check(
            on,
            format!("hydro error decreases {}", scheme.name()),
            means[means.len() - 1] < means[0],
            format!("{means:?}"),
        );
    }
}

fn run_hydro(config: &ExperimentConfig) -> Result<RunReport> {
    let mut rep = RunReport::new(config.kind);
    let torus = config.torus()?;
    let potential = config.potential(&torus)?;
    let mut runs_all = Vec::new();
    let mut refs = Vec::new();
    for scheme in config.schemes()? {
        let setup = HydroSetup {
            torus: torus.clone(),
            potential: potential.clone(),
            kernel: config.kernel()?,
            scheme,
            schedule: config.schedule(),
            rho0: config.initial_profile()?,
            phis: config.test_functions()?,
            times: config.time_grid()?,
            modes: config.dynamics.modes,
            materialize: config.graph.materialize,
            event_budget: config.dynamics.event_budget,
        };
        let reference = hydro_reference(&setup)?;
        let jobs: Vec<(u64, u64)> = config
            .sizes
            .n
            .iter()
            .flat_map(|&n| config.seeds.iter().map(move |&s| (n, s)))
            .collect();
        let runs = jobs
            .par_iter()
            .map(|&(n, s)| hydro_replica(&setup, n, s, &reference))
            .collect::<Result<Vec<_>>>()?;
        hydro_assertions(config, scheme, &runs, &mut rep);
        refs.push((scheme.name(), setup.times.clone(), reference, setup.phis.iter().map(|p| p.label().to_string()).collect()));
        runs_all.extend(runs);
    }
    hydro_tables(&runs_all, &refs, &mut rep);
    // keep assertion lines after the per-run lines in the log
    let (pass, rest): (Vec<String>, Vec<String>) = rep.log.drain(..).partition(|l| l.starts_with("PASS") || l.starts_with("FAIL"));
    rep.log = rest.into_iter().chain(pass).collect();
    Ok(rep)
}

fn run_bundle_consistency(config: &ExperimentConfig) -> Result<RunReport> {
    let mut rep = RunReport::new(config.kind);
    let bundle = config.bundle()?;
    let u = config.potential(bundle.base())?;
    let kernel = config.product_kernel()?;
    let pairs: Vec<(u64, u64)> = config.sizes.n.iter().copied().zip(config.sizes.n_fibre.iter().copied()).collect();
    let mut detail = Table::new(
        "bundle_consistency",
        &["scheme", "phi", "n", "n_fibre", "h", "h_fibre", "seed", "median_error", "sup_error"],
    );
    let mut summary = Table::new(
        "bundle_consistency_summary",
        &["scheme", "phi", "n", "n_fibre", "h", "h_fibre", "median_error", "sup_error"],
    );
    for scheme in config.schemes()? {
        for phi in config.test_functions()? {
            let rows = lifted_consistency_sweep(
                &bundle,
                &u,
                kernel,
                scheme,
                &config.schedule(),
                &pairs,
                &config.seeds,
                &phi,
                config.sizes.queries,
            )?;
            for (r, &(_, nf)) in rows.iter().zip(&pairs) {
                let hf = r.h_fibre.unwrap_or(f64::NAN);
                for (seed, med, sup) in &r.per_seed {
                    detail.push(vec![
                        r.scheme.clone(),
                        phi.label().into(),
                        r.n.to_string(),
                        nf.to_string(),
                        f(r.h),
                        f(hf),
                        seed.to_string(),
                        f(*med),
                        f(*sup),
                    ]);
                }
                summary.push(vec![
                    r.scheme.clone(),
                    phi.label().into(),
                    r.n.to_string(),
                    nf.to_string(),
                    f(r.h),
                    f(hf),
                    f(r.median_error),
                    f(r.sup_error),
                ]);
                rep.log.push(format!(
                    "{} phi={} N={} N'={nf}: median {:.4e}, sup {:.4e}",
                    r.scheme,
                    phi.label(),
                    r.n,
                    r.median_error,
                    r.sup_error
                ));
            }
            let med: Vec<f64> = rows.iter().map(|r| r.median_error).collect();
            rep.check(
                config.assertions.enabled,
                format!("median decreasing {} phi={}", scheme.name(), phi.label()),
                strictly_decreasing(&med),
                format!("{med:?}"),
            );
        }
    }
    rep.tables.push(detail);
    rep.tables.push(summary);
    Ok(rep)
}

fn run_bundle_hydro(config: &ExperimentConfig) -> Result<RunReport> {
    let mut rep = RunReport::new(config.kind);
    let bundle = config.bundle()?;
    let potential = config.potential(bundle.base())?;
    let mut runs_all = Vec::new();
    let mut refs = Vec::new();
    for scheme in config.schemes()? {
        let setup = BundleHydroSetup {
            bundle: bundle.clone(),
            potential: potential.clone(),
            kernel: config.product_kernel()?,
            scheme,
            schedule: config.schedule(),
            rho0: config.initial_profile()?,
            phis: config.test_functions()?,
            times: config.time_grid()?,
            modes: config.dynamics.modes,
            fibre_modes: config.dynamics.fibre_modes,
            event_budget: config.dynamics.event_budget,
        };
        let reference = bundle_hydro_reference(&setup)?;
        let jobs: Vec<(u64, u64, u64)> = config
            .sizes
            .n
            .iter()
            .zip(&config.sizes.n_fibre)
            .flat_map(|(&n, &nf)| config.seeds.iter().map(move |&s| (n, nf, s)))
            .collect();
        let runs = jobs
            .par_iter()
            .map(|&(n, nf, s)| bundle_hydro_replica(&setup, n, nf, s, &reference))
            .collect::<Result<Vec<_>>>()?;
        hydro_assertions(config, scheme, &runs, &mut rep);
        refs.push((scheme.name(), setup.times.clone(), reference, setup.phis.iter().map(|p| p.label().to_string()).collect()));
        runs_all.extend(runs);
    }
    hydro_tables(&runs_all, &refs, &mut rep);
    let (pass, rest): (Vec<String>, Vec<String>) = rep.log.drain(..).partition(|l| l.starts_with("PASS") || l.starts_with("FAIL"));
    rep.log = rest.into_iter().chain(pass).collect();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_validates() {
        let c = ExperimentConfig::from_toml_str("kind = \"moments\"").unwrap();
        assert!(validate(&c).is_ok());
        let c = ExperimentConfig::from_toml_str("kind = \"consistency\"").unwrap();
        assert!(validate(&c).is_ok(), "{:?}", validate(&c));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("kind = \"moments\"\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("kind = \"nope\"").is_err());
    }

    #[test]
    fn regime_violation_is_named() {
        let c = ExperimentConfig::from_toml_with_overrides(
            "kind = \"consistency\"",
            &[("graph.schedule_exponent".into(), "0.5".into()), ("sizes.n".into(), "[1000, 4000]".into())],
        )
        .unwrap();
        let r = validate(&c);
        assert!(r.failures.iter().any(|f| f.contains("N h^{m+2}/log N")), "{r:?}");
    }

    #[test]
    fn unknown_kernel_names_the_registry() {
        let c = ExperimentConfig::from_toml_with_overrides("kind = \"consistency\"", &[("graph.kernel".into(), "gauss".into())]).unwrap();
        let r = validate(&c);
        assert!(r.failures.iter().any(|f| f.contains("kernel") && f.contains("gauss")), "{r:?}");
    }

    #[test]
    fn overrides_parse_literals_and_strings() {
        let c = ExperimentConfig::from_toml_with_overrides(
            "kind = \"hydro\"",
            &[
                ("seeds".into(), "[3, 4]".into()),
                ("dynamics.rho0".into(), "0.5 + 0.25*sin(1)".into()),
                ("dynamics.t_end".into(), "0.1".into()),
            ],
        )
        .unwrap();
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.dynamics.rho0, "0.5 + 0.25*sin(1)");
        assert_eq!(c.dynamics.t_end, 0.1);
    }

    #[test]
    fn analytic_moment_values() {
        use std::f64::consts::PI;
        assert_eq!(analytic_moments(&Kernel::INDICATOR, 1), Some((2.0, 2.0 / 3.0)));
        let (c0, c2) = analytic_moments(&Kernel::INDICATOR, 2).unwrap();
        assert!((c0 - PI).abs() < 1e-15 && (c2 - PI / 4.0).abs() < 1e-15);
        let (c0, c2) = analytic_moments(&Kernel::EPANECHNIKOV, 1).unwrap();
        assert!((c0 - 4.0 / 3.0).abs() < 1e-15 && (c2 - 4.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn gibbs_limit_coefficient() {
        let mo = kernel_moments(&Kernel::INDICATOR, 1).unwrap();
        let (c, a) = limit_pde_coefficients(WeightScheme::AlphaEstimator { alpha: 0.5 }, &mo);
        assert!((c - 1.0 / 6.0).abs() < 1e-12 && a == 0.5);
    }
}
