//! Synthetic DCE-MRI datasets with known tissue geometry.
//!
//! Each subject is an anterior ellipsoidal breast (fat with a dense blob and
//! an optional tumor sphere) and a posterior heart sphere on an air
//! background. A scanner group distorts every intensity affinely,
//! `value * scale + offset`, before Gaussian noise is added.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) keyed with
//! `seed_from_u64(seed)`. Subject biology uses stream `1 << 32 | k`, where `k`
//! is the subject's position inside its group when `matched_groups` is set
//! (so every group sees the same cohort) and its global index otherwise.
//! Noise uses stream `2 << 32 | i` for global index `i`. Output therefore
//! does not depend on thread scheduling.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ScanParams, StudySeries, SubjectEntry};
use crate::volume::{save_mask, save_volume, write_atomic, Geometry, Tissue, TissueMask, Volume, VoxelSet};

const BIOLOGY_STREAM: u64 = 1 << 32;
const NOISE_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomGroup {
    pub name: String,
    pub te_ms: f64,
    pub tr_ms: f64,
    pub field_t: f64,
    pub scale: f64,
    pub offset: f64,
    /// Multiplies `noise_sigma` for this group.
    pub noise_scale: f64,
    /// Relative share of subjects.
    pub weight: f64,
}

impl Default for PhantomGroup {
    fn default() -> Self {
        Self {
            name: "A".into(),
            te_ms: 1.8,
            tr_ms: 4.0,
            field_t: 1.5,
            scale: 1.0,
            offset: 0.0,
            noise_scale: 1.0,
            weight: 1.0,
        }
    }
}

impl PhantomGroup {
    pub fn default_pair() -> Vec<PhantomGroup> {
        vec![
            PhantomGroup::default(),
            PhantomGroup {
                name: "B".into(),
                te_ms: 2.4,
                tr_ms: 5.2,
                field_t: 3.0,
                scale: 1.5,
                offset: 50.0,
                ..PhantomGroup::default()
            },
        ]
    }
}

/// Nominal pre-contrast intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TissueBases {
    pub air: f64,
    pub fat: f64,
    pub dense: f64,
    pub heart: f64,
    pub tumor: f64,
}

impl Default for TissueBases {
    fn default() -> Self {
        Self {
            air: 0.0,
            fat: 400.0,
            dense: 200.0,
            heart: 180.0,
            tumor: 170.0,
        }
    }
}

/// Nominal multiplicative enhancement per post-contrast volume. All four
/// lists have one entry per post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Enhancement {
    pub fat: Vec<f64>,
    pub dense: Vec<f64>,
    pub heart: Vec<f64>,
    pub tumor: Vec<f64>,
}

impl Default for Enhancement {
    fn default() -> Self {
        Self {
            fat: vec![1.04, 1.06, 1.08],
            dense: vec![1.8, 1.9, 2.0],
            heart: vec![3.3, 3.0, 2.8],
            tumor: vec![2.5, 2.5, 2.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub n_subjects: usize,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub groups: Vec<PhantomGroup>,
    pub bases: TissueBases,
    pub enhancement: Enhancement,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Scales all between-subject and within-tissue variation; 0 gives
    /// identical, homogeneous subjects.
    pub variability: f64,
    pub matched_groups: bool,
    pub include_tumor: bool,
    pub heart_radius_mm: f64,
    pub tumor_radius_mm: [f64; 2],
    /// Probability that a subject's label disagrees with its tumor kinetics.
    pub label_flip_probability: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_subjects: 40,
            dims: [64, 64, 24],
            spacing_mm: [2.0, 2.0, 4.0],
            groups: PhantomGroup::default_pair(),
            bases: TissueBases::default(),
            enhancement: Enhancement::default(),
            noise_sigma: 2.0,
            seed: 0,
            variability: 1.0,
            matched_groups: true,
            include_tumor: true,
            heart_radius_mm: 14.0,
            tumor_radius_mm: [5.0, 9.0],
            label_flip_probability: 0.1,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("phantom config", m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        Geometry::new(self.dims, self.spacing_mm)?;
        if self.dims.iter().any(|&d| d < 8) {
            return bad(format!("dims {:?} too small", self.dims));
        }
        if self.groups.is_empty() {
            return bad("at least one group required".into());
        }
        for g in &self.groups {
            let positive = [g.te_ms, g.tr_ms, g.field_t, g.scale, g.weight];
            if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(format!("group {:?}: te, tr, field, scale and weight must be positive", g.name));
            }
            if !(g.offset.is_finite() && g.noise_scale.is_finite() && g.noise_scale >= 0.0) {
                return bad(format!("group {:?}: invalid offset or noise_scale", g.name));
            }
        }
        let e = &self.enhancement;
        let n = e.fat.len();
        if n == 0 || [e.dense.len(), e.heart.len(), e.tumor.len()].iter().any(|&l| l != n) {
            return bad("enhancement lists must be non-empty and of equal length".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {}", self.noise_sigma));
        }
        if !(self.variability.is_finite() && self.variability >= 0.0) {
            return bad(format!("variability {}", self.variability));
        }
        let [r0, r1] = self.tumor_radius_mm;
        let radii_ok = r0 > 0.0 && r0 <= r1 && self.heart_radius_mm > 0.0;
        if !radii_ok {
            return bad("radii must be positive and tumor_radius_mm ordered".into());
        }
        if !(0.0..=1.0).contains(&self.label_flip_probability) {
            return bad(format!("label_flip_probability {}", self.label_flip_probability));
        }
        Ok(())
    }

    pub fn n_posts(&self) -> usize {
        self.enhancement.fat.len()
    }

    /// Group index of every subject. Groups take contiguous blocks of
    /// subjects in configuration order, sized by weight (largest remainder).
    pub fn group_assignment(&self) -> Vec<usize> {
        let total: f64 = self.groups.iter().map(|g| g.weight).sum();
        let quotas: Vec<f64> = self
            .groups
            .iter()
            .map(|g| g.weight / total * self.n_subjects as f64)
            .collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut missing = self.n_subjects - counts.iter().sum::<usize>();
        for &g in order.iter().cycle() {
            if missing == 0 {
                break;
            }
            counts[g] += 1;
            missing -= 1;
        }
        counts.iter().enumerate().flat_map(|(g, &c)| std::iter::repeat_n(g, c)).collect()
    }

    pub fn subject_id(&self, index: usize) -> String {
        let width = (self.n_subjects.saturating_sub(1)).to_string().len().max(3);
        format!("sub-{index:0width$}")
    }
}

/// One generated subject held in memory.
#[derive(Debug, Clone)]
pub struct PhantomSubject {
    pub subject_id: String,
    pub group: usize,
    pub series: StudySeries,
    /// Ground-truth labels; everything outside the body is air.
    pub truth: TissueMask,
    pub label: u8,
}

impl PhantomSubject {
    pub fn tumor(&self) -> VoxelSet {
        self.truth.voxels(Tissue::Tumor)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Per-subject draws. All uniform draws are taken even when `variability` is
/// zero so the stream layout never changes.
struct Biology {
    fat: f64,
    dense: f64,
    heart: f64,
    tumor: f64,
    fat_gradient: f64,
    dense_gradient: f64,
    dense_ramp: f64,
    dense_enh: f64,
    heart_enh: f64,
    tumor_enh: f64,
    washout: f64,
    tumor_rim: f64,
    dense_axes: [f64; 3],
    tumor_shift: [f64; 3],
    tumor_radius_mm: f64,
    flip: bool,
}

impl Biology {
    fn draw(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> Self {
        let v = cfg.variability;
        let mut jitter = |half: f64| 1.0 + v * rng.random_range(-half..=half);
        let b = &cfg.bases;
        let fat = b.fat * jitter(0.05);
        let dense = b.dense * jitter(0.05);
        let heart = b.heart * jitter(0.05);
        let tumor = b.tumor * jitter(0.1);
        let dense_enh = jitter(0.05);
        let heart_enh = jitter(0.05);
        let tumor_enh = jitter(0.2);
        let washout = jitter(0.15);
        let dense_axes = [jitter(0.15), jitter(0.15), jitter(0.15)];
        let mut unit = || rng.random_range(0.0..1.0f64);
        let fat_gradient = v * (0.02 + 0.06 * unit());
        let dense_gradient = v * (0.02 + 0.04 * unit());
        let dense_ramp = v * (0.15 + 0.45 * unit());
        let tumor_rim = v * (0.05 + 0.15 * unit());
        let tumor_shift = [unit(), unit(), unit()].map(|u| v * 0.3 * (2.0 * u - 1.0));
        let [r0, r1] = cfg.tumor_radius_mm;
        let t = unit();
        let tumor_radius_mm = if v == 0.0 { 0.5 * (r0 + r1) } else { r0 + (r1 - r0) * t };
        let flip = unit() < cfg.label_flip_probability;
        Self {
            fat,
            dense,
            heart,
            tumor,
            fat_gradient,
            dense_gradient,
            dense_ramp,
            dense_enh,
            heart_enh,
            tumor_enh,
            washout,
            tumor_rim,
            dense_axes,
            tumor_shift,
            tumor_radius_mm,
            flip,
        }
    }
}

/// Normalized ellipsoid radius in field-of-view fractions; 1 on the surface.
fn ellipsoid_radius(f: [f64; 3], center: [f64; 3], semi: [f64; 3]) -> f64 {
    (0..3).map(|a| ((f[a] - center[a]) / semi[a]).powi(2)).sum::<f64>().sqrt()
}

/// Partial-volume edge: mixes `inner` into `outer` with weight `w` clamped
/// to [0, 1], so labelled regions fade in from their boundary.
fn blend(outer: &mut [f64], inner: &[f64], w: f64) {
    let w = w.clamp(0.0, 1.0);
    for (o, &i) in outer.iter_mut().zip(inner) {
        *o = (1.0 - w) * *o + w * i;
    }
}

const BREAST_CENTER: [f64; 3] = [0.5, 0.36, 0.5];
const BREAST_SEMI: [f64; 3] = [0.40, 0.26, 0.40];
const DENSE_CENTER: [f64; 3] = [0.5, 0.30, 0.5];
const DENSE_SEMI: [f64; 3] = [0.24, 0.15, 0.30];
const HEART_CENTER: [f64; 3] = [0.5, 0.78, 0.5];
/// Width of the dense-tissue edge in normalized ellipsoid radius.
const DENSE_EDGE: f64 = 0.15;
const TUMOR_EDGE_MM: f64 = 3.0;

pub fn generate_subject(cfg: &PhantomConfig, index: usize) -> Result<PhantomSubject> {
    cfg.validate()?;
    let groups = cfg.group_assignment();
    let group = groups[index];
    let within = groups[..index].iter().filter(|&&g| g == group).count();
    let key = if cfg.matched_groups { within } else { index };
    let bio = Biology::draw(cfg, &mut stream(cfg.seed, BIOLOGY_STREAM | key as u64));
    let g = &cfg.groups[group];
    let geometry = Geometry::new(cfg.dims, cfg.spacing_mm)?;
    let [nx, ny, nz] = cfg.dims;
    let fov: [f64; 3] = [0, 1, 2].map(|a| cfg.dims[a] as f64 * cfg.spacing_mm[a]);
    let dense_semi: [f64; 3] = [0, 1, 2].map(|a| DENSE_SEMI[a] * bio.dense_axes[a]);
    let tumor_center: [f64; 3] = [0, 1, 2].map(|a| DENSE_CENTER[a] + bio.tumor_shift[a] * dense_semi[a]);
    let n_posts = cfg.n_posts();
    let e = &cfg.enhancement;

    let n = geometry.n_voxels();
    let mut labels = vec![Tissue::Air.code(); n];
    // Noise-free intensities: pre, then each post.
    let mut clean: Vec<Vec<f64>> = vec![vec![cfg.bases.air; n]; n_posts + 1];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = geometry.index(x, y, z);
                let f = [(x as f64 + 0.5) / nx as f64, (y as f64 + 0.5) / ny as f64, (z as f64 + 0.5) / nz as f64];
                let mm = [0, 1, 2].map(|a| f[a] * fov[a]);
                let dist_mm = |c: [f64; 3]| {
                    (0..3).map(|a| (mm[a] - c[a] * fov[a]).powi(2)).sum::<f64>().sqrt()
                };
                let (tissue, values) = if dist_mm(HEART_CENTER) <= cfg.heart_radius_mm {
                    let mut v = vec![bio.heart];
                    v.extend(e.heart.iter().map(|&enh| bio.heart * (1.0 + (enh - 1.0) * bio.heart_enh)));
                    (Tissue::Heart, v)
                } else if ellipsoid_radius(f, BREAST_CENTER, BREAST_SEMI) <= 1.0 {
                    let uy = (f[1] - BREAST_CENTER[1]) / BREAST_SEMI[1];
                    let s0 = bio.fat * (1.0 + bio.fat_gradient * uy);
                    let mut v = vec![s0];
                    v.extend(e.fat.iter().map(|&enh| s0 * enh));
                    let mut tissue = Tissue::Fat;

                    let rd = ellipsoid_radius(f, DENSE_CENTER, dense_semi);
                    if rd <= 1.0 {
                        let ux = ((f[0] - DENSE_CENTER[0]) / dense_semi[0]).clamp(-1.0, 1.0);
                        let uy = ((f[1] - DENSE_CENTER[1]) / dense_semi[1]).clamp(-1.0, 1.0);
                        let s0 = bio.dense * (1.0 + bio.dense_gradient * uy);
                        let mut d = vec![s0];
                        for (k, &enh) in e.dense.iter().enumerate() {
                            let gain = (enh - 1.0) * bio.dense_enh;
                            // Only the first post varies across the blob, which spreads SER.
                            let ramp = if k == 0 { 1.0 + bio.dense_ramp * ux } else { 1.0 };
                            d.push(s0 * (1.0 + gain * ramp));
                        }
                        blend(&mut v, &d, (1.0 - rd) / DENSE_EDGE);
                        tissue = Tissue::Dense;
                    }

                    let tumor_dist = dist_mm(tumor_center);
                    if cfg.include_tumor && tumor_dist <= bio.tumor_radius_mm {
                        let rho = tumor_dist / bio.tumor_radius_mm;
                        let s0 = bio.tumor * (1.0 + bio.tumor_rim * (rho - 0.5));
                        let mut t = vec![s0];
                        for (k, &enh) in e.tumor.iter().enumerate() {
                            // Washout scales the late enhancement; the first post is fixed.
                            let w = if n_posts > 1 { 1.0 + (bio.washout - 1.0) * k as f64 / (n_posts - 1) as f64 } else { 1.0 };
                            t.push(s0 * (1.0 + (enh * bio.tumor_enh - 1.0) * w));
                        }
                        blend(&mut v, &t, (bio.tumor_radius_mm - tumor_dist) / TUMOR_EDGE_MM);
                        tissue = Tissue::Tumor;
                    }
                    (tissue, v)
                } else {
                    continue;
                };
                labels[i] = tissue.code();
                for (vol, val) in clean.iter_mut().zip(values) {
                    vol[i] = val;
                }
            }
        }
    }

    let sigma = cfg.noise_sigma * g.noise_scale;
    let mut rng = stream(cfg.seed, NOISE_STREAM | index as u64);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut volumes = Vec::with_capacity(n_posts + 1);
    for (k, vol) in clean.iter().enumerate() {
        let data: Vec<f32> = vol
            .iter()
            .map(|&x| {
                let noise = normal.sample(&mut rng);
                (x * g.scale + g.offset + sigma * noise) as f32
            })
            .collect();
        let tag = if k == 0 { "pre".to_string() } else { format!("post{k}") };
        volumes.push(Volume::new(geometry, data, tag)?);
    }
    let pre = volumes.remove(0);
    let subject_id = cfg.subject_id(index);
    let series = StudySeries::new(
        subject_id.clone(),
        pre,
        volumes,
        ScanParams {
            te_ms: Some(g.te_ms),
            tr_ms: Some(g.tr_ms),
            field_t: Some(g.field_t),
        },
    )?;
    // Washout kinetics (late enhancement below early) is the positive class.
    let washout = bio.washout < 1.0;
    let label = (washout != bio.flip) as u8;
    Ok(PhantomSubject {
        subject_id,
        group,
        series,
        truth: TissueMask::new(geometry, labels)?,
        label,
    })
}

/// Relative paths of one subject's files inside a phantom dataset.
pub struct PhantomPaths {
    pub pre: PathBuf,
    pub posts: Vec<PathBuf>,
    pub truth: PathBuf,
    pub tumor: PathBuf,
}

impl PhantomPaths {
    pub fn new(subject_id: &str, n_posts: usize) -> Self {
        Self {
            pre: PathBuf::from(format!("volumes/{subject_id}_pre")),
            posts: (1..=n_posts).map(|k| PathBuf::from(format!("volumes/{subject_id}_post{k}"))).collect(),
            truth: PathBuf::from(format!("truth/{subject_id}_mask")),
            tumor: PathBuf::from(format!("masks/{subject_id}_tumor")),
        }
    }
}

/// Writes the dataset under `out`:
///
/// - `volumes/<id>_pre`, `volumes/<id>_post<k>`
/// - `truth/<id>_mask`: full ground-truth labels
/// - `masks/<id>_tumor`: tumor-only mask, referenced by the manifest
/// - `manifest.json`, `labels.csv` and the resolved `phantom_config.json`
pub fn generate_phantom(cfg: &PhantomConfig, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out = out.as_ref();
    for sub in ["volumes", "truth", "masks"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let entries = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| {
            let s = generate_subject(cfg, i)?;
            let paths = PhantomPaths::new(&s.subject_id, cfg.n_posts());
            save_volume(s.series.pre(), out.join(&paths.pre))?;
            for (v, p) in s.series.posts().iter().zip(&paths.posts) {
                save_volume(v, out.join(p))?;
            }
            save_mask(&s.truth, out.join(&paths.truth))?;
            let mut tumor = TissueMask::background(*s.truth.geometry());
            tumor.paint(&s.tumor(), Tissue::Tumor);
            save_mask(&tumor, out.join(&paths.tumor))?;
            let params = s.series.params;
            Ok(SubjectEntry {
                subject_id: s.subject_id,
                pre: paths.pre,
                posts: paths.posts,
                te_ms: params.te_ms,
                tr_ms: params.tr_ms,
                field_t: params.field_t,
                mask: None,
                tumor_mask: cfg.include_tumor.then_some(paths.tumor),
                label: Some(s.label),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut labels = String::from("subject_id,label\n");
    for e in &entries {
        labels.push_str(&format!("{},{}\n", e.subject_id, e.label.unwrap_or(0)));
    }
    write_atomic(&out.join("labels.csv"), labels.as_bytes())?;
    let mut resolved = serde_json::to_string_pretty(cfg).expect("config serializes");
    resolved.push('\n');
    write_atomic(&out.join("phantom_config.json"), resolved.as_bytes())?;
    let manifest = DatasetManifest::new(out, entries);
    manifest.save(out.join("manifest.json"))?;
    Ok(manifest)
}

pub fn load_phantom_config(path: impl AsRef<Path>) -> Result<PhantomConfig> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: PhantomConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
    cfg.validate()?;
    Ok(cfg)
}
