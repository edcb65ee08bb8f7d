//! Nested Poisson point clouds with Gibbs intensity, fibre clouds over them,
//! bandwidth schedules and initial exclusion configurations.
//!
//! A level-`N` cloud is the superposition of `N` independent unit-intensity
//! Gibbs PPPs, concatenated in level order. Each unit level draws from its
//! own counter-keyed ChaCha stream, so a cloud at level `N` is a byte-exact
//! prefix of the cloud at any higher level built from the same seed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::functions::FourierFunction;
use crate::geometry::{CircleBundle, Potential, Torus};

const TAG_BASE: u64 = 0x6261_7365;
const TAG_FIBRE: u64 = 0x6669_6272;
const TAG_CONFIG: u64 = 0x636f_6e66;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha generator keyed by `(seed, tag, index)` on stream `stream`.
pub fn keyed_rng(seed: u64, tag: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed) ^ splitmix64(tag.rotate_left(17)) ^ splitmix64(index.rotate_left(41));
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

fn poisson_count<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive finite Poisson mean");
    let k: f64 = d.sample(rng);
    k as u64
}

/// A realisation of `Lambda^N`: points in level order with prefix nesting.
#[derive(Debug, Clone)]
pub struct PointCloud {
    torus: Torus,
    potential: Potential,
    coords: Vec<f64>,
    /// `level_ends[l]` = number of points from unit levels `1..=l`.
    level_ends: Vec<usize>,
    seed: u64,
    parent_level: Option<u64>,
}

impl PointCloud {
    /// Cloud from explicit points (tests and hand-built examples).
    pub fn from_points(torus: Torus, potential: Potential, points: &[Vec<f64>], level: u64) -> Result<Self> {
        if level == 0 {
            return Err(invalid("level", "must be at least 1"));
        }
        let mut coords = Vec::with_capacity(points.len() * torus.dim());
        for p in points {
            torus.check(p)?;
            let mut q = p.clone();
            torus.wrap(&mut q);
            coords.extend(q);
        }
        let mut level_ends = vec![0; level as usize + 1];
        level_ends[level as usize] = points.len();
        Ok(Self {
            torus,
            potential,
            coords,
            level_ends,
            seed: 0,
            parent_level: None,
        })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn dim(&self) -> usize {
        self.torus.dim()
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn level(&self) -> u64 {
        self.level_ends.len() as u64 - 1
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parent_level(&self) -> Option<u64> {
        self.parent_level
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let m = self.dim();
        &self.coords[i * m..(i + 1) * m]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim())
    }

    /// The nested cloud at a lower level (a prefix of this one).
    pub fn prefix(&self, level: u64) -> Result<PointCloud> {
        if level == 0 || level > self.level() {
            return Err(Error::NestingOrder {
                from: self.level(),
                to: level,
            });
        }
        let n = self.level_ends[level as usize];
        Ok(PointCloud {
            torus: self.torus.clone(),
            potential: self.potential.clone(),
            coords: self.coords[..n * self.dim()].to_vec(),
            level_ends: self.level_ends[..=level as usize].to_vec(),
            seed: self.seed,
            parent_level: None,
        })
    }

    fn push_unit_level(&mut self, level: u64) {
        let m = self.dim();
        let sup = self.potential.sup_exp_neg();
        let mut rng = keyed_rng(self.seed, TAG_BASE, 0, level);
        let proposals = poisson_count(&mut rng, sup * self.torus.volume());
        let mut x = vec![0.0; m];
        for _ in 0..proposals {
            for (xi, l) in x.iter_mut().zip(self.torus.sides()) {
                *xi = l * rng.random::<f64>();
            }
            let accept = (-self.potential.value(&x)).exp() / sup;
            if rng.random::<f64>() < accept {
                self.coords.extend_from_slice(&x);
            }
        }
        self.level_ends.push(self.len());
    }

    /// CSV with columns `index, x1..xm`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["index".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (i, p) in self.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metadata(&self) -> CloudMetadata {
        CloudMetadata {
            seed: self.seed,
            level: self.level(),
            potential: self.potential.name().to_string(),
            count: self.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CloudMetadata {
    pub seed: u64,
    pub level: u64,
    pub potential: String,
    pub count: usize,
}

/// Level-`n` Gibbs PPP by thinning, deterministic in `seed`.
pub fn sample_ppp(torus: &Torus, potential: &Potential, n: u64, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(invalid("N", "level must be at least 1"));
    }
    if potential.dim() != torus.dim() {
        return Err(Error::DimensionMismatch {
            expected: torus.dim(),
            got: potential.dim(),
        });
    }
    let mut cloud = PointCloud {
        torus: torus.clone(),
        potential: potential.clone(),
        coords: Vec::new(),
        level_ends: vec![0],
        seed,
        parent_level: None,
    };
    for l in 1..=n {
        cloud.push_unit_level(l);
    }
    Ok(cloud)
}

/// Superpose independent unit levels up to `to_level`. Extending to the
/// current level returns an identical cloud; lowering the level is an error.
pub fn extend_ppp(cloud: &PointCloud, to_level: u64) -> Result<PointCloud> {
    let from = cloud.level();
    if to_level < from {
        return Err(Error::NestingOrder { from, to: to_level });
    }
    let mut out = cloud.clone();
    if to_level > from {
        out.parent_level = Some(from);
    }
    for l in from + 1..=to_level {
        out.push_unit_level(l);
    }
    Ok(out)
}

/// Base cloud with a nested fibre cloud attached to every base point.
#[derive(Debug, Clone)]
pub struct LiftedCloud {
    base: PointCloud,
    bundle: CircleBundle,
    fibre_level: u64,
    fibre_seed: u64,
    offsets: Vec<usize>,
    angles: Vec<f64>,
}

fn unit_fibre(bundle: &CircleBundle, seed: u64, base_index: usize, level: u64, out: &mut Vec<f64>) {
    let c = bundle.circumference();
    let mut rng = keyed_rng(seed, TAG_FIBRE, base_index as u64, level);
    let count = poisson_count(&mut rng, c);
    for _ in 0..count {
        out.push(c * rng.random::<f64>());
    }
}

/// Attach a level-`n_prime` uniform fibre cloud to every base point.
pub fn sample_fibres(base: &PointCloud, bundle: &CircleBundle, n_prime: u64, seed: u64) -> Result<LiftedCloud> {
    if n_prime == 0 {
        return Err(invalid("N'", "fibre level must be at least 1"));
    }
    if bundle.base() != base.torus() {
        return Err(invalid("bundle", "base torus differs from the cloud's torus"));
    }
    let mut offsets = Vec::with_capacity(base.len() + 1);
    let mut angles = Vec::new();
    offsets.push(0);
    for i in 0..base.len() {
        for l in 1..=n_prime {
            unit_fibre(bundle, seed, i, l, &mut angles);
        }
        offsets.push(angles.len());
    }
    Ok(LiftedCloud {
        base: base.clone(),
        bundle: bundle.clone(),
        fibre_level: n_prime,
        fibre_seed: seed,
        offsets,
        angles,
    })
}

/// Raise the base and/or fibre level; every existing fibre list stays a prefix.
pub fn extend_lifted(lifted: &LiftedCloud, base_level: u64, fibre_level: u64) -> Result<LiftedCloud> {
    if fibre_level < lifted.fibre_level {
        return Err(Error::NestingOrder {
            from: lifted.fibre_level,
            to: fibre_level,
        });
    }
    let base = extend_ppp(&lifted.base, base_level)?;
    let mut offsets = vec![0];
    let mut angles = Vec::new();
    for i in 0..base.len() {
        let start_level = if i < lifted.base.len() {
            angles.extend_from_slice(lifted.fibre(i));
            lifted.fibre_level + 1
        } else {
            1
        };
        for l in start_level..=fibre_level {
            unit_fibre(&lifted.bundle, lifted.fibre_seed, i, l, &mut angles);
        }
        offsets.push(angles.len());
    }
    Ok(LiftedCloud {
        base,
        bundle: lifted.bundle.clone(),
        fibre_level,
        fibre_seed: lifted.fibre_seed,
        offsets,
        angles,
    })
}

impl LiftedCloud {
    /// Fibre clouds given explicitly (tests and hand-built examples).
    pub fn from_parts(base: PointCloud, bundle: CircleBundle, fibre_level: u64, fibres: &[Vec<f64>]) -> Result<Self> {
        if fibres.len() != base.len() {
            return Err(invalid("fibres", "one fibre list per base point"));
        }
        let mut offsets = vec![0];
        let mut angles = Vec::new();
        for f in fibres {
            angles.extend(f.iter().map(|u| crate::geometry::wrap_periodic(*u, bundle.circumference())));
            offsets.push(angles.len());
        }
        Ok(Self {
            base,
            bundle,
            fibre_level,
            fibre_seed: 0,
            offsets,
            angles,
        })
    }

    pub fn base(&self) -> &PointCloud {
        &self.base
    }

    pub fn bundle(&self) -> &CircleBundle {
        &self.bundle
    }

    pub fn fibre_level(&self) -> u64 {
        self.fibre_level
    }

    pub fn fibre(&self, i: usize) -> &[f64] {
        &self.angles[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Composite vertices are numbered base-major: `(i, a)` has index
    /// `offsets[i] + a`.
    pub fn vertex_count(&self) -> usize {
        self.angles.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Base index of a composite vertex.
    pub fn base_of(&self, v: usize) -> usize {
        self.offsets.partition_point(|&o| o <= v) - 1
    }
}

/// Named bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ScheduleRule {
    /// `h = c (log N / N)^{1/(m+4)}`.
    Default { c: f64 },
    /// `h = c N^{-p}`.
    Power { c: f64, exponent: f64 },
    /// `h = c (log N / N)^{1/(m+6)}`, `h' = c' h^q` with `q > 1`.
    Lifted { c: f64, fibre_c: f64, fibre_exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthSchedule {
    pub rule: ScheduleRule,
}

/// A bandwidth with the regime margin: the relative growth of
/// `N h^{m+2}/log N` from `N` to `4N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bandwidth {
    pub h: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiftedBandwidth {
    pub h: f64,
    pub h_fibre: f64,
    /// Relative growth of `N h^{m+2} h'^2 / log N` under `(N, N') -> (4N, 4N')`.
    pub base_margin: f64,
    /// Relative growth of `N' h'^{m'+2} h^2 / log N'` under the same step.
    pub fibre_margin: f64,
}

impl BandwidthSchedule {
    pub fn default_rule(c: f64) -> Self {
        Self {
            rule: ScheduleRule::Default { c },
        }
    }

    pub fn lifted_rule(c: f64) -> Self {
        Self {
            rule: ScheduleRule::Lifted {
                c,
                fibre_c: 1.0,
                fibre_exponent: 1.25,
            },
        }
    }

    /// Raw formula for `h` at a real-valued `n` (no regime checks).
    pub fn evaluate(&self, n: f64, m: usize) -> f64 {
        let m = m as f64;
        match self.rule {
            ScheduleRule::Default { c } => c * (n.ln() / n).powf(1.0 / (m + 4.0)),
            ScheduleRule::Power { c, exponent } => c * n.powf(-exponent),
            ScheduleRule::Lifted { c, .. } => c * (n.ln() / n).powf(1.0 / (m + 6.0)),
        }
    }

    fn fibre_bandwidth(&self, h: f64) -> f64 {
        match self.rule {
            ScheduleRule::Lifted {
                fibre_c,
                fibre_exponent,
                ..
            } => fibre_c * h.powf(fibre_exponent),
            _ => h.powf(1.25),
        }
    }

    /// Bandwidth at level `n` after checking that `h` decreases and that
    /// `N h^{m+2} / log N` strictly increases over `N, 4N, 16N`.
    pub fn bandwidth(&self, n: u64, m: usize) -> Result<Bandwidth> {
        if n < 2 {
            return Err(invalid("N", "bandwidth needs N >= 2"));
        }
        let g = |n: f64| {
            let h = self.evaluate(n, m);
            n * h.powi(m as i32 + 2) / n.ln()
        };
        let n0 = n as f64;
        let ns = [n0, 4.0 * n0, 16.0 * n0];
        let hs: Vec<f64> = ns.iter().map(|&x| self.evaluate(x, m)).collect();
        if !(hs[0] > hs[1] && hs[1] > hs[2]) || !hs[0].is_finite() || hs[0] <= 0.0 {
            return Err(Error::RegimeViolation {
                inequality: "h -> 0",
                detail: format!("h = {:?} at N = {:?}", hs, ns),
            });
        }
        let gs: Vec<f64> = ns.iter().map(|&x| g(x)).collect();
        if !(gs[0] < gs[1] && gs[1] < gs[2]) {
            return Err(Error::RegimeViolation {
                inequality: "N h^{m+2}/log N",
                detail: format!("values {:?} at N = {:?}", gs, ns),
            });
        }
        Ok(Bandwidth {
            h: hs[0],
            margin: gs[1] / gs[0] - 1.0,
        })
    }

    /// Base and fibre bandwidths with the two lifted regime conditions
    /// checked along `(N, N'), (4N, 4N'), (16N, 16N')`, plus `h'/h -> 0`.
    pub fn lifted_bandwidths(&self, n: u64, n_prime: u64, m: usize, m_fibre: usize) -> Result<LiftedBandwidth> {
        if n < 2 || n_prime < 2 {
            return Err(invalid("N", "lifted bandwidths need N, N' >= 2"));
        }
        let steps = [1.0, 4.0, 16.0];
        let mut hs = Vec::new();
        let mut hfs = Vec::new();
        let mut g1 = Vec::new();
        let mut g2 = Vec::new();
        for s in steps {
            let (nn, np) = (s * n as f64, s * n_prime as f64);
            let h = self.evaluate(nn, m);
            let hf = self.fibre_bandwidth(h);
            g1.push(nn * h.powi(m as i32 + 2) * hf * hf / nn.ln());
            g2.push(np * hf.powi(m_fibre as i32 + 2) * h * h / np.ln());
            hs.push(h);
            hfs.push(hf);
        }
        let decreasing = |v: &[f64]| v[0] > v[1] && v[1] > v[2];
        let increasing = |v: &[f64]| v[0] < v[1] && v[1] < v[2];
        if !decreasing(&hs) || !decreasing(&hfs) {
            return Err(Error::RegimeViolation {
                inequality: "h -> 0",
                detail: format!("h = {hs:?}, h' = {hfs:?}"),
            });
        }
        let ratio: Vec<f64> = hs.iter().zip(&hfs).map(|(h, f)| f / h).collect();
        if !decreasing(&ratio) {
            return Err(Error::RegimeViolation {
                inequality: "h'/h -> 0",
                detail: format!("ratios {ratio:?}"),
            });
        }
        if !increasing(&g1) {
            return Err(Error::RegimeViolation {
                inequality: "N h^{m+2} h'^2/log N",
                detail: format!("values {g1:?}"),
            });
        }
        if !increasing(&g2) {
            return Err(Error::RegimeViolation {
                inequality: "N' h'^{m'+2} h^2/log N'",
                detail: format!("values {g2:?}"),
            });
        }
        Ok(LiftedBandwidth {
            h: hs[0],
            h_fibre: hfs[0],
            base_margin: g1[1] / g1[0] - 1.0,
            fibre_margin: g2[1] / g2[0] - 1.0,
        })
    }
}

/// Exclusion configuration: one occupancy bit per vertex.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    occupancy: Vec<bool>,
    particle_count: usize,
}

impl Configuration {
    pub fn from_occupancy(occupancy: Vec<bool>) -> Self {
        let particle_count = occupancy.iter().filter(|b| **b).count();
        Self {
            occupancy,
            particle_count,
        }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_occupancy(vec![false; n])
    }

    /// Configuration encoded by the low bits of `mask` (bit `v` = vertex `v`).
    pub fn from_mask(mask: u64, n: usize) -> Self {
        Self::from_occupancy((0..n).map(|v| mask >> v & 1 == 1).collect())
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    #[inline]
    pub fn is_occupied(&self, v: usize) -> bool {
        self.occupancy[v]
    }

    pub fn particle_count(&self) -> usize {
        self.particle_count
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn occupied_sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.occupancy.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    /// Swap the occupation of two sites (caller validated).
    pub(crate) fn swap_sites(&mut self, x: usize, y: usize) {
        self.occupancy.swap(x, y);
    }
}

/// Independent Bernoulli occupancies with the given probabilities.
pub fn bernoulli_configuration(probs: &[f64], seed: u64) -> Result<Configuration> {
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(invalid("rho0", format!("occupation probability {p} outside [0, 1]")));
    }
    let mut rng = keyed_rng(seed, TAG_CONFIG, 0, 0);
    let occ = probs.iter().map(|p| rng.random::<f64>() < *p).collect();
    Ok(Configuration::from_occupancy(occ))
}

fn check_profile_range(rho0: &FourierFunction, sides: &[f64], circumference: Option<f64>) -> Result<()> {
    if rho0.dim() != sides.len() {
        return Err(Error::DimensionMismatch {
            expected: sides.len(),
            got: rho0.dim(),
        });
    }
    let m = sides.len() + usize::from(circumference.is_some());
    let per_axis = match m {
        1 => 1024u64,
        2 => 128,
        3 => 32,
        _ => 12,
    };
    let total = per_axis.pow(m as u32);
    let mut x = vec![0.0; sides.len()];
    for idx in 0..total {
        let mut r = idx;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = (r % per_axis) as f64 / per_axis as f64 * sides[i];
            r /= per_axis;
        }
        let theta = circumference.map_or(0.0, |c| (r % per_axis) as f64 / per_axis as f64 * c);
        let v = rho0.value_bundle(&x, theta);
        if !(-1e-12..=1.0 + 1e-12).contains(&v) {
            return Err(invalid("rho0", format!("profile value {v} outside [0, 1] at {x:?}")));
        }
    }
    Ok(())
}

/// Bernoulli(`rho0(X^i)`) occupancies on a base cloud.
pub fn initial_configuration(cloud: &PointCloud, rho0: &FourierFunction, seed: u64) -> Result<Configuration> {
    check_profile_range(rho0, cloud.torus().sides(), None)?;
    let probs: Vec<f64> = cloud.iter().map(|p| rho0.value(p).clamp(0.0, 1.0)).collect();
    bernoulli_configuration(&probs, seed)
}

/// Bernoulli(`rho0(X^i, theta^a)`) occupancies on composite vertices.
pub fn initial_lifted_configuration(lifted: &LiftedCloud, rho0: &FourierFunction, seed: u64) -> Result<Configuration> {
    check_profile_range(rho0, lifted.base().torus().sides(), Some(lifted.bundle().circumference()))?;
    let mut probs = Vec::with_capacity(lifted.vertex_count());
    for i in 0..lifted.base().len() {
        let x = lifted.base().point(i);
        for &u in lifted.fibre(i) {
            probs.push(rho0.value_bundle(x, u).clamp(0.0, 1.0));
        }
    }
    bernoulli_configuration(&probs, seed)
}
