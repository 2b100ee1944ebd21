//! Boundary-value-problem encoding, normalization, augmentation, and the
//! random/preset dataset generators.
//!
//! Physical fields are carried in channels normalized so that zero maps to
//! 0.5 and every imposed value is strictly positive; markers occupy the
//! non-positive range (0 / -2 interior, -1 margin).

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::mesh::GridSpec;
use crate::physics::{DiffusionParams, LameParams, Material, PhysicsKind};
use crate::polygon::{self, ExtremeMode, PolygonSpec};
use crate::residual::{BcChannels, FILL_MARKER, MARGIN};
use crate::scalar::Scalar;
use crate::tensor::FieldTensor;

/// Lame constants shared by the elasticity scenarios.
pub const DEFAULT_LAMBDA: f64 = 14.4231;
pub const DEFAULT_MU: f64 = 9.61538;

/// Affine map between physical values in [-A, A] and the scaled range
/// [0, 1], with zero at 0.5. Separate amplitudes for the solution field and
/// for flux/traction data.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub solution_amp: f64,
    pub flux_amp: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { solution_amp: 1.0, flux_amp: 1.0 }
    }
}

impl Normalization {
    pub fn new(solution_amp: f64, flux_amp: f64) -> Result<Self> {
        if !(solution_amp > 0.0) || !(flux_amp > 0.0) {
            return Err(Error::Range("normalization amplitudes must be positive".into()));
        }
        Ok(Self { solution_amp, flux_amp })
    }

    pub fn normalize_solution(&self, u: f64) -> Result<f64> {
        if u.abs() > self.solution_amp {
            return Err(Error::Range(format!(
                "value {u} outside solution amplitude {}",
                self.solution_amp
            )));
        }
        Ok(0.5 + u / (2.0 * self.solution_amp))
    }

    pub fn denormalize_solution(&self, v: f64) -> f64 {
        (v - 0.5) * 2.0 * self.solution_amp
    }

    pub fn normalize_flux(&self, j: f64) -> Result<f64> {
        if j.abs() > self.flux_amp {
            return Err(Error::Range(format!(
                "value {j} outside flux amplitude {}",
                self.flux_amp
            )));
        }
        Ok(0.5 + j / (2.0 * self.flux_amp))
    }

    pub fn denormalize_flux(&self, v: f64) -> f64 {
        (v - 0.5) * 2.0 * self.flux_amp
    }
}

/// Normalized diffusivity channel value for heterogeneous-parameter inputs.
pub fn scalar_param_channel(diffusivity: f64) -> Result<f64> {
    if !(1.0..=100.0).contains(&diffusivity) {
        return Err(Error::Range(format!(
            "diffusivity {diffusivity} outside [1, 100]"
        )));
    }
    Ok((diffusivity - 1.0) / 99.0)
}

/// Interior marker convention: small datasets use -2 (filled with random
/// numbers each batch), large datasets use 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerMode {
    Small,
    Large,
}

impl MarkerMode {
    fn interior(self) -> f64 {
        match self {
            MarkerMode::Small => FILL_MARKER,
            MarkerMode::Large => 0.0,
        }
    }
}

/// Problem-domain geometry on the background grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum DomainSpec {
    /// The whole background grid.
    Full,
    /// Inclusive pixel-index rectangle.
    Rect { r0: usize, c0: usize, r1: usize, c1: usize },
    /// Rectangle minus a corner rectangle (both inclusive pixel bounds).
    LShape {
        r0: usize,
        c0: usize,
        r1: usize,
        c1: usize,
        cut_r1: usize,
        cut_c0: usize,
    },
    /// Simple polygon rasterized by the pixel-center rule.
    Polygon { vertices: Vec<(f64, f64)> },
}

impl DomainSpec {
    /// Regular octagon with axis-aligned flat edges. Edge indices:
    /// 1 = top, 3 = left, 5 = bottom, 7 = right; odd diagonals between.
    pub fn octagon() -> Self {
        let r = 0.46;
        let vertices = (0..8)
            .map(|k| {
                let a = (22.5 + 45.0 * k as f64).to_radians();
                (0.5 + r * a.cos(), 0.5 + r * a.sin())
            })
            .collect();
        DomainSpec::Polygon { vertices }
    }

    /// In-domain mask by the pixel-center rule (n*n, row-major).
    pub fn rasterize(&self, grid: &GridSpec) -> Result<Vec<bool>> {
        let n = grid.n;
        let mut mask = vec![false; n * n];
        match self {
            DomainSpec::Full => mask.fill(true),
            DomainSpec::Rect { r0, c0, r1, c1 } => {
                if *r1 >= n || *c1 >= n || r0 > r1 || c0 > c1 {
                    return Err(Error::Generation(format!(
                        "rectangle {self:?} outside {n}x{n} grid"
                    )));
                }
                for r in *r0..=*r1 {
                    for c in *c0..=*c1 {
                        mask[r * n + c] = true;
                    }
                }
            }
            DomainSpec::LShape { r0, c0, r1, c1, cut_r1, cut_c0 } => {
                if *r1 >= n || *c1 >= n || r0 > r1 || c0 > c1 || cut_r1 > r1 || cut_c0 > c1 {
                    return Err(Error::Generation(format!(
                        "L-shape {self:?} outside {n}x{n} grid"
                    )));
                }
                for r in *r0..=*r1 {
                    for c in *c0..=*c1 {
                        let in_cut = r <= *cut_r1 && c >= *cut_c0;
                        mask[r * n + c] = !in_cut;
                    }
                }
            }
            DomainSpec::Polygon { vertices } => {
                let poly = PolygonSpec::new(vertices.clone())?;
                for r in 0..n {
                    for c in 0..n {
                        let (x, y) = grid.xy(r, c);
                        mask[r * n + c] = poly.contains(x, y);
                    }
                }
            }
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count < 4 {
            return Err(Error::Generation(format!(
                "degenerate domain: {count} in-domain pixels"
            )));
        }
        Ok(mask)
    }

    fn polygon(&self) -> Option<PolygonSpec> {
        match self {
            DomainSpec::Polygon { vertices } => PolygonSpec::new(vertices.clone()).ok(),
            _ => None,
        }
    }
}

/// Boundary-value profile along an edge, in normalized units; control values
/// must lie in (0, 1] so every imposed pixel is strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Profile {
    Constant { value: f64 },
    Linear { start: f64, end: f64 },
    Quadratic { start: f64, end: f64 },
    Sinusoidal { base: f64, peak: f64 },
}

impl Profile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Linear { start, end } => start + (end - start) * t,
            Profile::Quadratic { start, end } => start + (end - start) * t * t,
            Profile::Sinusoidal { base, peak } => {
                base + (peak - base) * (std::f64::consts::PI * t).sin()
            }
        }
    }

    fn controls(&self) -> [f64; 2] {
        match *self {
            Profile::Constant { value } => [value, value],
            Profile::Linear { start, end } | Profile::Quadratic { start, end } => [start, end],
            Profile::Sinusoidal { base, peak } => [base, peak],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.controls() {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Encoding(format!(
                    "profile control value {v} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

/// Which boundary run a BC applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSel {
    Side(Side),
    Poly(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BcAssign {
    pub edge: EdgeSel,
    pub kind: BcKind,
    pub profile: Profile,
    /// Solution component the profile applies to (0 for scalar problems).
    pub component: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BvpMeta {
    pub id: usize,
    pub physics: PhysicsKind,
    pub n: usize,
    pub dof: usize,
    pub domain: String,
    pub bc: String,
    pub seed: u64,
    pub has_neumann: bool,
    pub diffusivity: Option<f64>,
}

/// One encoded boundary value problem.
#[derive(Debug, Clone)]
pub struct BvpRecord {
    pub channels: BcChannels<f64>,
    /// Normalized scalar parameters fed to the network bottleneck.
    pub scalar_params: Vec<f64>,
    pub meta: BvpMeta,
}

impl BvpRecord {
    pub fn material(&self) -> Result<Material> {
        Ok(match self.meta.physics {
            PhysicsKind::Diffusion => Material::Diffusion(DiffusionParams::new(
                self.meta.diffusivity.unwrap_or(1.0),
            )?),
            PhysicsKind::LinearElasticity => {
                Material::Linear(LameParams::new(DEFAULT_LAMBDA, DEFAULT_MU)?)
            }
            PhysicsKind::NonlinearElasticity => {
                Material::Nonlinear(LameParams::new(DEFAULT_LAMBDA, DEFAULT_MU)?)
            }
        })
    }
}

/// Boundary pixels: in-domain pixels adjacent (4-neighborhood) to the margin
/// or the grid border.
fn boundary_pixels(mask: &[bool], n: usize) -> Vec<bool> {
    let mut boundary = vec![false; n * n];
    for r in 0..n {
        for c in 0..n {
            if !mask[r * n + c] {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r == n - 1
                || c == n - 1
                || !mask[(r - 1) * n + c]
                || !mask[(r + 1) * n + c]
                || !mask[r * n + c - 1]
                || !mask[r * n + c + 1];
            boundary[r * n + c] = edge;
        }
    }
    boundary
}

/// Ordered boundary pixels of one edge with their arclength parameter.
fn edge_pixels(
    sel: EdgeSel,
    domain: &DomainSpec,
    mask: &[bool],
    boundary: &[bool],
    grid: &GridSpec,
) -> Result<Vec<(usize, usize, f64)>> {
    let n = grid.n;
    let mut pixels: Vec<(usize, usize, f64)> = Vec::new();
    match sel {
        EdgeSel::Side(side) => {
            let rows: Vec<usize> = (0..n).collect();
            let mut runs: Vec<(usize, usize)> = Vec::new();
            for &r in &rows {
                for c in 0..n {
                    if !mask[r * n + c] {
                        continue;
                    }
                    let on_side = match side {
                        Side::Left => c == (0..n).find(|&cc| column_has(mask, n, cc)).unwrap_or(0),
                        Side::Right => {
                            c == (0..n).rev().find(|&cc| column_has(mask, n, cc)).unwrap_or(n - 1)
                        }
                        Side::Top => r == (0..n).find(|&rr| row_has(mask, n, rr)).unwrap_or(0),
                        Side::Bottom => {
                            r == (0..n).rev().find(|&rr| row_has(mask, n, rr)).unwrap_or(n - 1)
                        }
                    };
                    if on_side {
                        runs.push((r, c));
                    }
                }
            }
            if runs.is_empty() {
                return Err(Error::Encoding(format!("side {side:?} has no pixels")));
            }
            runs.sort();
            let len = (runs.len() - 1).max(1) as f64;
            for (k, (r, c)) in runs.into_iter().enumerate() {
                pixels.push((r, c, k as f64 / len));
            }
        }
        EdgeSel::Poly(k) => {
            let poly = domain
                .polygon()
                .ok_or_else(|| Error::Encoding("polygon edge on non-polygon domain".into()))?;
            if k >= poly.edge_count() {
                return Err(Error::Encoding(format!(
                    "edge index {k} out of range for {}-gon",
                    poly.edge_count()
                )));
            }
            let (a, b) = poly.edge(k);
            // Rasterized boundary pixels sit up to one spacing inside the
            // true edge, more on coarse grids.
            let tol = 1.01 * grid.h();
            for r in 0..n {
                for c in 0..n {
                    if !boundary[r * n + c] {
                        continue;
                    }
                    let (x, y) = grid.xy(r, c);
                    let (dist, t) = polygon::segment_distance((x, y), a, b);
                    if dist <= tol {
                        pixels.push((r, c, t));
                    }
                }
            }
            if pixels.len() < 2 {
                return Err(Error::Encoding(format!(
                    "polygon edge {k} rasterizes to {} pixels",
                    pixels.len()
                )));
            }
            pixels.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
        }
    }
    Ok(pixels)
}

fn column_has(mask: &[bool], n: usize, c: usize) -> bool {
    (0..n).any(|r| mask[r * n + c])
}

fn row_has(mask: &[bool], n: usize, r: usize) -> bool {
    (0..n).any(|c| mask[r * n + c])
}

/// Rasterize a domain and its boundary conditions into channel form.
pub fn encode_bvp(
    domain: &DomainSpec,
    assigns: &[BcAssign],
    grid: &GridSpec,
    dof: usize,
    norm: Normalization,
    marker: MarkerMode,
) -> Result<BcChannels<f64>> {
    let n = grid.n;
    let mask = domain.rasterize(grid)?;
    let boundary = boundary_pixels(&mask, n);

    let shape = [1usize, n, n, dof];
    let mut dirichlet = FieldTensor::filled(&shape, MARGIN);
    let mut neumann_x = FieldTensor::filled(&shape, MARGIN);
    let mut neumann_y = FieldTensor::filled(&shape, MARGIN);
    for r in 0..n {
        for c in 0..n {
            if mask[r * n + c] {
                for comp in 0..dof {
                    let idx = dirichlet.idx4(0, r, c, comp);
                    dirichlet.data_mut()[idx] = marker.interior();
                    neumann_x.data_mut()[idx] = 0.0;
                    neumann_y.data_mut()[idx] = 0.0;
                }
            }
        }
    }

    for assign in assigns {
        assign.profile.validate()?;
        if assign.component >= dof {
            return Err(Error::Encoding(format!(
                "component {} out of range for dof {dof}",
                assign.component
            )));
        }
        let pixels = edge_pixels(assign.edge, domain, &mask, &boundary, grid)?;
        for &(r, c, _) in &pixels {
            if !boundary[r * n + c] {
                return Err(Error::Encoding(format!(
                    "BC pixel ({r},{c}) is not on the domain boundary"
                )));
            }
        }
        match assign.kind {
            BcKind::Dirichlet => {
                for &(r, c, t) in &pixels {
                    let idx = dirichlet.idx4(0, r, c, assign.component);
                    dirichlet.data_mut()[idx] = assign.profile.value(t);
                }
            }
            BcKind::Neumann => {
                // Mark the pixels of every axis-aligned facet pair; vertical
                // pairs feed the x-normal channel, horizontal pairs the
                // y-normal channel.
                let set: std::collections::HashMap<(usize, usize), f64> =
                    pixels.iter().map(|&(r, c, t)| ((r, c), t)).collect();
                let mut any_facet = false;
                for &(r, c, t) in &pixels {
                    let v = assign.profile.value(t);
                    if let Some(&t2) = set.get(&(r + 1, c)) {
                        any_facet = true;
                        let i1 = neumann_x.idx4(0, r, c, assign.component);
                        neumann_x.data_mut()[i1] = v;
                        let i2 = neumann_x.idx4(0, r + 1, c, assign.component);
                        neumann_x.data_mut()[i2] = assign.profile.value(t2);
                    }
                    if let Some(&t2) = set.get(&(r, c + 1)) {
                        any_facet = true;
                        let i1 = neumann_y.idx4(0, r, c, assign.component);
                        neumann_y.data_mut()[i1] = v;
                        let i2 = neumann_y.idx4(0, r, c + 1, assign.component);
                        neumann_y.data_mut()[i2] = assign.profile.value(t2);
                    }
                }
                if !any_facet {
                    return Err(Error::Encoding(
                        "Neumann edge produced no facet pairs".into(),
                    ));
                }
            }
        }
    }

    let channels = BcChannels::new(dirichlet, neumann_x, neumann_y, norm)?;
    channels.validate()?;
    Ok(channels)
}

/// Random BC selection for a generated polygon: two random non-adjacent
/// edges, the first Dirichlet (keeping the problem well posed), the second
/// Dirichlet or Neumann, with random profile shapes and control values.
pub fn generate_bcs(poly: &PolygonSpec, rng: &mut StdRng) -> Result<Vec<BcAssign>> {
    let mut pairs = polygon::non_adjacent_edge_pairs(poly.edge_count());
    if pairs.is_empty() {
        return Err(Error::Generation(
            "polygon has no non-adjacent edge pair".into(),
        ));
    }
    pairs.shuffle(rng);
    let (e1, e2) = pairs[0];
    let random_profile = |rng: &mut StdRng| -> Profile {
        let a = rng.gen_range(0.05..1.0);
        let b = rng.gen_range(0.05..1.0);
        match rng.gen_range(0..4) {
            0 => Profile::Constant { value: a },
            1 => Profile::Linear { start: a, end: b },
            2 => Profile::Quadratic { start: a, end: b },
            _ => Profile::Sinusoidal { base: a, peak: b },
        }
    };
    let first = BcAssign {
        edge: EdgeSel::Poly(e1),
        kind: BcKind::Dirichlet,
        profile: random_profile(rng),
        component: 0,
    };
    let second_kind = if rng.gen_bool(0.5) { BcKind::Dirichlet } else { BcKind::Neumann };
    let second = BcAssign {
        edge: EdgeSel::Poly(e2),
        kind: second_kind,
        profile: random_profile(rng),
        component: 0,
    };
    Ok(vec![first, second])
}

/// Replace interior fill markers (-2) with fresh uniform draws in [0, 1).
pub fn fill_random_markers<T: Scalar>(input: &mut FieldTensor<T>, rng: &mut StdRng) {
    for v in input.data_mut() {
        if (v.to_f64().unwrap() - FILL_MARKER).abs() < 0.25 {
            *v = T::from_f64_lossy(rng.gen_range(0.0..1.0));
        }
    }
}

/// Network input for one record: BC channels concatenated as
/// [dirichlet | neumann_x | neumann_y] into (1, n, n, 3*dof), with fill
/// markers replaced when an RNG is supplied.
pub fn assemble_input<T: Scalar>(record: &BvpRecord, rng: Option<&mut StdRng>) -> FieldTensor<T> {
    let (n, dof) = (record.meta.n, record.meta.dof);
    let mut out = FieldTensor::zeros(&[1, n, n, 3 * dof]);
    let groups = [
        &record.channels.dirichlet,
        &record.channels.neumann_x,
        &record.channels.neumann_y,
    ];
    for (g, ch) in groups.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                for c in 0..dof {
                    let idx = out.idx4(0, i, j, g * dof + c);
                    out.data_mut()[idx] = T::from_f64_lossy(ch.at4(0, i, j, c));
                }
            }
        }
    }
    if let Some(rng) = rng {
        fill_random_markers(&mut out, rng);
    }
    out
}

/// A set of unique BVPs plus the augmentation factor; the random fill is
/// applied lazily at batch-assembly time, so replication stores nothing.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<BvpRecord>,
    pub copies: usize,
    pub norm: Normalization,
    pub physics: PhysicsKind,
    pub grid: GridSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len() * self.copies.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, item: usize) -> &BvpRecord {
        &self.records[item % self.records.len()]
    }
}

/// Generation recipes covering the shipped scenarios and the random
/// polygon corpora.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    /// Diffusion BVPs on randomly generated polygons with random BCs.
    RandomPolygons {
        count: usize,
        edge_choices: Vec<usize>,
        extreme: ExtremeMode,
        marker: MarkerMode,
    },
    /// Full-grid diffusion with C = 0 on the left edge and C = 1 on the
    /// right edge; the solution is the linear field C = x.
    LinearField,
    /// Octagon with mixed Dirichlet (left, top) and Neumann (right, bottom)
    /// boundary data; optional per-record diffusivities become scalar
    /// network inputs.
    OctagonMixed { diffusivities: Vec<f64> },
    /// L-shaped linear-elasticity domain, fixed bottom edge and vertical
    /// displacement loading on the left edge, one record per level.
    LShapeLinear { levels: Vec<f64> },
    /// Square nonlinear-elasticity domain fixed on the left edge with
    /// incremental displacement + traction loading on the right edge.
    NonlinearSquare {
        levels: Vec<usize>,
        total_levels: usize,
        max_displacement: f64,
        max_traction: f64,
    },
    /// Rectangle subdomains with cycling elasticity BC sets.
    ElasticRects { domains: usize, bc_sets: usize, nonlinear: bool },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GenConfig {
    pub physics: PhysicsKind,
    pub grid: usize,
    pub seed: u64,
    pub normalization: Normalization,
    /// Augmentation factor (replication count) recorded with the dataset.
    pub copies: usize,
    pub recipe: Recipe,
}

fn record_seed(master: u64, index: usize) -> u64 {
    master ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn generate_dataset(config: &GenConfig) -> Result<Dataset> {
    let grid = GridSpec::new(config.grid)?;
    let norm = config.normalization;
    let dof = config.physics.dof();
    let mut records = Vec::new();

    match &config.recipe {
        Recipe::RandomPolygons { count, edge_choices, extreme, marker } => {
            if config.physics != PhysicsKind::Diffusion {
                return Err(Error::Config(
                    "random polygon recipe supports diffusion only".into(),
                ));
            }
            if edge_choices.is_empty() {
                return Err(Error::Config("edge_choices must be non-empty".into()));
            }
            for id in 0..*count {
                let seed = record_seed(config.seed, id);
                let mut rng = StdRng::seed_from_u64(seed);
                let edges = edge_choices[rng.gen_range(0..edge_choices.len())];
                // A retry loop: a sampled polygon may rasterize an edge to
                // too few pixels at coarse grids.
                let mut attempt = 0;
                let (domain, assigns) = loop {
                    attempt += 1;
                    if attempt > 100 {
                        return Err(Error::Generation(format!(
                            "record {id}: no encodable polygon after 100 tries"
                        )));
                    }
                    let poly = polygon::generate_polygon(edges, &mut rng, *extreme)?;
                    let assigns = generate_bcs(&poly, &mut rng)?;
                    let domain = DomainSpec::Polygon { vertices: poly.vertices.clone() };
                    match encode_bvp(&domain, &assigns, &grid, dof, norm, *marker) {
                        Ok(_) => break (domain, assigns),
                        Err(Error::Encoding(_)) | Err(Error::Generation(_)) => continue,
                        Err(e) => return Err(e),
                    }
                };
                let channels = encode_bvp(&domain, &assigns, &grid, dof, norm, *marker)?;
                let has_neumann = assigns.iter().any(|a| a.kind == BcKind::Neumann);
                records.push(BvpRecord {
                    channels,
                    scalar_params: vec![],
                    meta: BvpMeta {
                        id,
                        physics: config.physics,
                        n: grid.n,
                        dof,
                        domain: format!("{edges}-gon"),
                        bc: serde_json::to_string(&assigns)?,
                        seed,
                        has_neumann,
                        diffusivity: Some(1.0),
                    },
                });
            }
        }
        Recipe::LinearField => {
            let domain = DomainSpec::Full;
            let assigns = vec![
                BcAssign {
                    edge: EdgeSel::Side(Side::Left),
                    kind: BcKind::Dirichlet,
                    profile: Profile::Constant { value: norm.normalize_solution(0.0)? },
                    component: 0,
                },
                BcAssign {
                    edge: EdgeSel::Side(Side::Right),
                    kind: BcKind::Dirichlet,
                    profile: Profile::Constant { value: norm.normalize_solution(1.0)? },
                    component: 0,
                },
            ];
            let channels = encode_bvp(&domain, &assigns, &grid, dof, norm, MarkerMode::Small)?;
            records.push(BvpRecord {
                channels,
                scalar_params: vec![],
                meta: BvpMeta {
                    id: 0,
                    physics: config.physics,
                    n: grid.n,
                    dof,
                    domain: "full-square".into(),
                    bc: "left C=0, right C=1".into(),
                    seed: config.seed,
                    has_neumann: false,
                    diffusivity: Some(1.0),
                },
            });
        }
        Recipe::OctagonMixed { diffusivities } => {
            let domain = DomainSpec::octagon();
            let assigns = vec![
                BcAssign {
                    edge: EdgeSel::Poly(3),
                    kind: BcKind::Dirichlet,
                    profile: Profile::Constant { value: 0.9 },
                    component: 0,
                },
                BcAssign {
                    edge: EdgeSel::Poly(1),
                    kind: BcKind::Dirichlet,
                    profile: Profile::Constant { value: 0.3 },
                    component: 0,
                },
                BcAssign {
                    edge: EdgeSel::Poly(7),
                    kind: BcKind::Neumann,
                    profile: Profile::Constant { value: 0.8 },
                    component: 0,
                },
                BcAssign {
                    edge: EdgeSel::Poly(5),
                    kind: BcKind::Neumann,
                    profile: Profile::Constant { value: 0.65 },
                    component: 0,
                },
            ];
            let channels = encode_bvp(&domain, &assigns, &grid, dof, norm, MarkerMode::Small)?;
            let ds: Vec<f64> = if diffusivities.is_empty() { vec![1.0] } else { diffusivities.clone() };
            let multi = ds.len() > 1;
            for (id, &d) in ds.iter().enumerate() {
                records.push(BvpRecord {
                    channels: channels.clone(),
                    scalar_params: if multi { vec![scalar_param_channel(d)?] } else { vec![] },
                    meta: BvpMeta {
                        id,
                        physics: config.physics,
                        n: grid.n,
                        dof,
                        domain: "octagon".into(),
                        bc: "left/top Dirichlet, right/bottom Neumann".into(),
                        seed: config.seed,
                        has_neumann: true,
                        diffusivity: Some(d),
                    },
                });
            }
        }
        Recipe::LShapeLinear { levels } => {
            let n = grid.n;
            let m = n / 16; // margin scales with resolution
            let domain = DomainSpec::LShape {
                r0: m,
                c0: m,
                r1: n - 1 - m,
                c1: n - 1 - m,
                cut_r1: n / 2 - 1,
                cut_c0: n / 2,
            };
            let zero = norm.normalize_solution(0.0)?;
            for (id, &level) in levels.iter().enumerate() {
                let assigns = vec![
                    BcAssign {
                        edge: EdgeSel::Side(Side::Bottom),
                        kind: BcKind::Dirichlet,
                        profile: Profile::Constant { value: zero },
                        component: 0,
                    },
                    BcAssign {
                        edge: EdgeSel::Side(Side::Bottom),
                        kind: BcKind::Dirichlet,
                        profile: Profile::Constant { value: zero },
                        component: 1,
                    },
                    BcAssign {
                        edge: EdgeSel::Side(Side::Left),
                        kind: BcKind::Dirichlet,
                        profile: Profile::Constant { value: norm.normalize_solution(level)? },
                        component: 1,
                    },
                ];
                let channels =
                    encode_bvp(&domain, &assigns, &grid, dof, norm, MarkerMode::Small)?;
                records.push(BvpRecord {
                    channels,
                    scalar_params: vec![],
                    meta: BvpMeta {
                        id,
                        physics: config.physics,
                        n,
                        dof,
                        domain: "l-shape".into(),
                        bc: format!("bottom fixed, left uy={level}"),
                        seed: config.seed,
                        has_neumann: false,
                        diffusivity: None,
                    },
                });
            }
        }
        Recipe::NonlinearSquare { levels, total_levels, max_displacement, max_traction } => {
            let domain = DomainSpec::Full;
            let zero = norm.normalize_solution(0.0)?;
            for (id, &level) in levels.iter().enumerate() {
                if level == 0 || level > *total_levels {
                    return Err(Error::Config(format!(
                        "load level {level} outside 1..={total_levels}"
                    )));
                }
                let frac = level as f64 / *total_levels as f64;
                let disp = frac * max_displacement;
                let traction = frac * max_traction;
                let assigns = vec![
                    BcAssign {
                        edge: EdgeSel::Side(Side::Left),
                        kind: BcKind::Dirichlet,
                        profile: Profile::Constant { value: zero },
                        component: 0,
                    },
                    BcAssign {
                        edge: EdgeSel::Side(Side::Left),
                        kind: BcKind::Dirichlet,
                        profile: Profile::Constant { value: zero },
                        component: 1,
                    },
                    BcAssign {
                        edge: EdgeSel::Side(Side::Right),
                        kind: BcKind::Dirichlet,
                        profile: Profile::Constant { value: norm.normalize_solution(disp)? },
                        component: 0,
                    },
                    BcAssign {
                        edge: EdgeSel::Side(Side::Right),
                        kind: BcKind::Neumann,
                        profile: Profile::Constant { value: norm.normalize_flux(traction)? },
                        component: 1,
                    },
                ];
                let channels =
                    encode_bvp(&domain, &assigns, &grid, dof, norm, MarkerMode::Small)?;
                records.push(BvpRecord {
                    channels,
                    scalar_params: vec![],
                    meta: BvpMeta {
                        id,
                        physics: config.physics,
                        n: grid.n,
                        dof,
                        domain: "full-square".into(),
                        bc: format!("level {level}/{total_levels}: ux={disp:.4}, Ty={traction:.4}"),
                        seed: config.seed,
                        has_neumann: true,
                        diffusivity: None,
                    },
                });
            }
        }
        Recipe::ElasticRects { domains, bc_sets, nonlinear } => {
            let n = grid.n;
            let _ = nonlinear;
            let zero = norm.normalize_solution(0.0)?;
            let rects = [
                (1, 1, n - 2, n - 2),
                (2, 2, n - 3, n - 5),
                (1, 3, n - 4, n - 2),
                (3, 1, n - 2, n / 2 + 2),
                (2, 2, n / 2 + 3, n - 3),
            ];
            let mut id = 0;
            for d in 0..*domains {
                let (r0, c0, r1, c1) = rects[d % rects.len()];
                let domain = DomainSpec::Rect { r0, c0, r1, c1 };
                for set in 0..*bc_sets {
                    let mut assigns = vec![
                        BcAssign {
                            edge: EdgeSel::Side(Side::Left),
                            kind: BcKind::Dirichlet,
                            profile: Profile::Constant { value: zero },
                            component: 0,
                        },
                        BcAssign {
                            edge: EdgeSel::Side(Side::Left),
                            kind: BcKind::Dirichlet,
                            profile: Profile::Constant { value: zero },
                            component: 1,
                        },
                    ];
                    let load = 0.55 + 0.07 * (set as f64);
                    let (kind, component) = match set % 3 {
                        0 => (BcKind::Dirichlet, 0),
                        1 => (BcKind::Neumann, 0),
                        _ => (BcKind::Neumann, 1),
                    };
                    assigns.push(BcAssign {
                        edge: EdgeSel::Side(Side::Right),
                        kind,
                        profile: Profile::Constant { value: load },
                        component,
                    });
                    let channels =
                        encode_bvp(&domain, &assigns, &grid, dof, norm, MarkerMode::Small)?;
                    records.push(BvpRecord {
                        channels,
                        scalar_params: vec![],
                        meta: BvpMeta {
                            id,
                            physics: config.physics,
                            n,
                            dof,
                            domain: format!("rect-{d}"),
                            bc: format!("set-{set}"),
                            seed: config.seed,
                            has_neumann: kind == BcKind::Neumann,
                            diffusivity: None,
                        },
                    });
                    id += 1;
                }
            }
        }
    }

    Ok(Dataset {
        records,
        copies: config.copies.max(1),
        norm,
        physics: config.physics,
        grid,
    })
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct DatasetIndex {
    version: u32,
    physics: PhysicsKind,
    grid: usize,
    dof: usize,
    normalization: Normalization,
    copies: usize,
    records: Vec<BvpMeta>,
}

/// Persist a dataset as one tensor bundle per record plus a JSON index.
/// Output is byte-deterministic for a fixed dataset.
pub fn write_dataset(dataset: &Dataset, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for record in &dataset.records {
        let rec_dir = dir.join(format!("records/{:05}", record.meta.id));
        let mut w = crate::bundle::BundleWriter::new();
        w.add("dirichlet", &record.channels.dirichlet);
        w.add("neumann_x", &record.channels.neumann_x);
        w.add("neumann_y", &record.channels.neumann_y);
        if !record.scalar_params.is_empty() {
            let t = FieldTensor::from_raw(
                vec![record.scalar_params.len()],
                record.scalar_params.clone(),
            );
            w.add("scalar_params", &t);
        }
        w.write(&rec_dir)?;
    }
    let index = DatasetIndex {
        version: 1,
        physics: dataset.physics,
        grid: dataset.grid.n,
        dof: dataset.physics.dof(),
        normalization: dataset.norm,
        copies: dataset.copies,
        records: dataset.records.iter().map(|r| r.meta.clone()).collect(),
    };
    std::fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn read_dataset(dir: &std::path::Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(dir.join("index.json"))
        .map_err(|e| Error::Config(format!("cannot read dataset index in {}: {e}", dir.display())))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    if index.version != 1 {
        return Err(Error::Config(format!("unsupported dataset version {}", index.version)));
    }
    let grid = GridSpec::new(index.grid)?;
    let mut records = Vec::with_capacity(index.records.len());
    for meta in index.records {
        let rec_dir = dir.join(format!("records/{:05}", meta.id));
        let reader = crate::bundle::BundleReader::open(&rec_dir)?;
        let channels = BcChannels::new(
            reader.get("dirichlet")?,
            reader.get("neumann_x")?,
            reader.get("neumann_y")?,
            index.normalization,
        )?;
        let scalar_params = if reader.has("scalar_params") {
            reader.get::<f64>("scalar_params")?.into_data()
        } else {
            Vec::new()
        };
        records.push(BvpRecord { channels, scalar_params, meta });
    }
    Ok(Dataset {
        records,
        copies: index.copies,
        norm: index.normalization,
        physics: index.physics,
        grid,
    })
}
