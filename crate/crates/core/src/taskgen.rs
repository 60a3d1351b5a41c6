//! Synthetic cross-domain task generation and embedding-file ingestion.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix};
use crate::protonet::{Episode, Task};

/// Affine map applied to raw instances: `x ↦ scale · R·x + translation`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainTransform {
    pub rotation: Matrix,
    pub translation: Vec<f64>,
    pub scale: f64,
}

impl DomainTransform {
    pub fn identity(dim: usize) -> Self {
        DomainTransform {
            rotation: Matrix::identity(dim),
            translation: vec![0.0; dim],
            scale: 1.0,
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let r: f64 = self.rotation.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
            *o = self.scale * r + self.translation[i];
        }
    }

    /// Largest entry of `|RᵀR − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = self
            .rotation
            .transposed_matmul(&self.rotation)
            .expect("rotation is square");
        rtr.max_abs_diff(&Matrix::identity(self.rotation.rows()))
    }
}

/// A labeled synthetic domain: Gaussian classes around fixed centers.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub class_centers: Matrix,
    pub noise_scale: f64,
    pub transform: DomainTransform,
}

impl DomainSpec {
    pub fn n_classes(&self) -> usize {
        self.class_centers.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.class_centers.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        if self.transform.rotation.shape() != (d, d) || self.transform.translation.len() != d {
            return Err(Error::shape("domain transform does not match the input dimension"));
        }
        if self.transform.orthonormality_error() > 1e-9 {
            return Err(Error::config("domain rotation is not orthonormal"));
        }
        if !(self.noise_scale > 0.0) {
            return Err(Error::config("noise scale must be positive"));
        }
        for i in 0..self.n_classes() {
            for j in 0..i {
                if self.class_centers.row(i) == self.class_centers.row(j) {
                    return Err(Error::config(format!("class centers {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }

    /// One raw instance of `class`, drawn and transformed.
    fn draw<R: Rng + ?Sized>(&self, class: usize, rng: &mut R, out: &mut [f64]) {
        let x: Vec<f64> = self
            .class_centers
            .row(class)
            .iter()
            .map(|c| c + self.noise_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.transform.apply(&x, out);
    }

    /// Draws `per_class` transformed instances of every class.
    pub fn sample_dataset<R: Rng + ?Sized>(
        &self,
        per_class: usize,
        rng: &mut R,
        source_tag: &str,
    ) -> Result<EmbeddingDataset> {
        let d = self.input_dim();
        let n = self.n_classes() * per_class;
        let mut features = Matrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for c in 0..self.n_classes() {
            for _ in 0..per_class {
                let r = labels.len();
                self.draw(c, rng, features.row_mut(r));
                labels.push(c);
            }
        }
        EmbeddingDataset::new(features, labels, self.n_classes(), source_tag)
    }
}

/// Knobs of the synthetic domain-shift generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftOptions {
    /// Radius of the sphere the class centers lie on.
    pub radius: f64,
    pub noise_scale: f64,
    /// Minimum pairwise distance between any two class centers.
    pub min_separation: f64,
    /// Translation length at severity 1. The default (eight radii) moves the
    /// target well outside the input region the source encoder was trained on.
    pub max_translation: f64,
    /// Target global scale is `1 + severity · scale_shift`.
    pub scale_shift: f64,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        ShiftOptions {
            radius: 5.0,
            noise_scale: 1.0,
            min_separation: 2.0,
            max_translation: 40.0,
            scale_shift: 0.0,
        }
    }
}

/// Source and target domains with disjoint class sets; see [`make_shift_pair_with`].
pub fn make_shift_pair(
    seed: u64,
    n_source_classes: usize,
    n_target_classes: usize,
    input_dim: usize,
    shift_severity: f64,
) -> Result<(DomainSpec, DomainSpec)> {
    make_shift_pair_with(
        seed,
        n_source_classes,
        n_target_classes,
        input_dim,
        shift_severity,
        &ShiftOptions::default(),
    )
}

/// The source domain is untransformed. The target applies a rotation
/// `cayley(severity · A)` for a random skew-symmetric `A`, a translation of
/// length `severity · max_translation` in a random direction, and an
/// optional global scale. Severity 0 yields the identity transform.
pub fn make_shift_pair_with(
    seed: u64,
    n_source_classes: usize,
    n_target_classes: usize,
    input_dim: usize,
    shift_severity: f64,
    opts: &ShiftOptions,
) -> Result<(DomainSpec, DomainSpec)> {
    if n_source_classes < 5 || n_target_classes < 5 {
        return Err(Error::config(format!(
            "need at least 5 source and 5 target classes, got {n_source_classes} and {n_target_classes}"
        )));
    }
    if input_dim < 2 {
        return Err(Error::config(format!("input_dim must be at least 2, got {input_dim}")));
    }
    if !(0.0..=1.0).contains(&shift_severity) {
        return Err(Error::config(format!("shift severity must lie in [0, 1], got {shift_severity}")));
    }
    if !(opts.noise_scale > 0.0) || !(opts.radius > 0.0) {
        return Err(Error::config("radius and noise scale must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n_source_classes + n_target_classes;
    let centers = sphere_centers(total, input_dim, opts, &mut rng)?;

    let transform = if shift_severity == 0.0 {
        DomainTransform::identity(input_dim)
    } else {
        let rotation = cayley_rotation(input_dim, shift_severity, &mut rng)?;
        let dir = random_unit(input_dim, &mut rng);
        let len = shift_severity * opts.max_translation;
        DomainTransform {
            rotation,
            translation: dir.iter().map(|v| v * len).collect(),
            scale: 1.0 + shift_severity * opts.scale_shift,
        }
    };

    let source = DomainSpec {
        class_centers: centers.slice_rows(0, n_source_classes),
        noise_scale: opts.noise_scale,
        transform: DomainTransform::identity(input_dim),
    };
    let target = DomainSpec {
        class_centers: centers.slice_rows(n_source_classes, total),
        noise_scale: opts.noise_scale,
        transform,
    };
    Ok((source, target))
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn sphere_centers<R: Rng + ?Sized>(
    count: usize,
    dim: usize,
    opts: &ShiftOptions,
    rng: &mut R,
) -> Result<Matrix> {
    const MAX_ATTEMPTS: usize = 100_000;
    let min_sq = opts.min_separation * opts.min_separation;
    let mut centers = Matrix::zeros(count, dim);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < count {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::config(format!(
                "could not place {count} centers {} apart on a radius-{} sphere in {dim} dims",
                opts.min_separation, opts.radius
            )));
        }
        let c: Vec<f64> = random_unit(dim, rng).into_iter().map(|v| v * opts.radius).collect();
        let ok = (0..placed).all(|j| squared_distance(centers.row(j), &c) >= min_sq);
        if ok {
            centers.row_mut(placed).copy_from_slice(&c);
            placed += 1;
        }
    }
    Ok(centers)
}

/// Orthonormal `(I − sA/2)⁻¹(I + sA/2)` for random skew-symmetric `A`.
fn cayley_rotation<R: Rng + ?Sized>(dim: usize, severity: f64, rng: &mut R) -> Result<Matrix> {
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let skew = (&g - g.transpose()) * (0.5 * severity * 0.5);
    let eye = DMatrix::<f64>::identity(dim, dim);
    let lhs = &eye - &skew;
    let rhs = &eye + &skew;
    let rot = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numeric("Cayley transform is singular"))?;
    let mut out = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            out[(i, j)] = rot[(i, j)];
        }
    }
    Ok(out)
}

/// Anything episodes can be drawn from.
pub trait EpisodeSource {
    fn n_classes(&self) -> usize;
    fn feature_dim(&self) -> usize;

    fn sample_episode<R: Rng + ?Sized>(
        &self,
        n_way: usize,
        k_shot: usize,
        queries_per_class: usize,
        rng: &mut R,
    ) -> Result<Episode>;
}

fn check_episode_shape(n_way: usize, k_shot: usize, q: usize, n_classes: usize) -> Result<()> {
    if n_way < 2 || k_shot == 0 || q == 0 {
        return Err(Error::config(format!(
            "episode shape needs n_way >= 2, k_shot >= 1, queries >= 1; got {n_way}/{k_shot}/{q}"
        )));
    }
    if n_way > n_classes {
        return Err(Error::config(format!(
            "{n_way}-way episodes need {n_way} classes, the domain has {n_classes}"
        )));
    }
    Ok(())
}

fn assemble(
    n_way: usize,
    k_shot: usize,
    support: Matrix,
    query: Matrix,
    queries_per_class: usize,
) -> Result<Episode> {
    let support_labels = (0..n_way * k_shot).map(|i| i / k_shot).collect();
    let query_labels = (0..n_way * queries_per_class).map(|i| i / queries_per_class).collect();
    Episode::new(Task::new(n_way, k_shot, support, support_labels, query)?, query_labels)
}

impl EpisodeSource for DomainSpec {
    fn n_classes(&self) -> usize {
        self.class_centers.rows()
    }

    fn feature_dim(&self) -> usize {
        self.class_centers.cols()
    }

    /// Draws `n_way` distinct classes, relabeled `0..n_way` in draw order.
    fn sample_episode<R: Rng + ?Sized>(
        &self,
        n_way: usize,
        k_shot: usize,
        queries_per_class: usize,
        rng: &mut R,
    ) -> Result<Episode> {
        check_episode_shape(n_way, k_shot, queries_per_class, self.n_classes())?;
        let classes = index::sample(rng, self.n_classes(), n_way).into_vec();
        let d = self.input_dim();
        let mut support = Matrix::zeros(n_way * k_shot, d);
        let mut query = Matrix::zeros(n_way * queries_per_class, d);
        for (label, &class) in classes.iter().enumerate() {
            for s in 0..k_shot {
                self.draw(class, rng, support.row_mut(label * k_shot + s));
            }
            for q in 0..queries_per_class {
                self.draw(class, rng, query.row_mut(label * queries_per_class + q));
            }
        }
        assemble(n_way, k_shot, support, query, queries_per_class)
    }
}

/// Labeled feature vectors loaded from (or destined for) a text file.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDataset {
    features: Matrix,
    labels: Vec<usize>,
    by_class: Vec<Vec<usize>>,
    pub source_tag: String,
}

impl EmbeddingDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize, source_tag: &str) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape("feature rows and labels differ in count"));
        }
        let mut by_class = vec![Vec::new(); n_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= n_classes {
                return Err(Error::config(format!("class id {y} >= declared classes {n_classes}")));
            }
            by_class[y].push(i);
        }
        Ok(EmbeddingDataset {
            features,
            labels,
            by_class,
            source_tag: source_tag.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rejects the dataset for episodes needing `k_shot + queries` items of every class.
    pub fn check_episode_shape(&self, k_shot: usize, queries_per_class: usize) -> Result<()> {
        let need = k_shot + queries_per_class;
        for (c, items) in self.by_class.iter().enumerate() {
            if items.len() < need {
                return Err(Error::config(format!(
                    "class {c} has {} items, episodes with {k_shot} shots and {queries_per_class} queries need {need}",
                    items.len()
                )));
            }
        }
        Ok(())
    }
}

impl EpisodeSource for EmbeddingDataset {
    fn n_classes(&self) -> usize {
        self.by_class.len()
    }

    fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    fn sample_episode<R: Rng + ?Sized>(
        &self,
        n_way: usize,
        k_shot: usize,
        queries_per_class: usize,
        rng: &mut R,
    ) -> Result<Episode> {
        check_episode_shape(n_way, k_shot, queries_per_class, self.n_classes())?;
        let classes = index::sample(rng, self.n_classes(), n_way).into_vec();
        let need = k_shot + queries_per_class;
        if let Some(&c) = classes.iter().find(|&&c| self.by_class[c].len() < need) {
            return Err(Error::Episode(format!(
                "class {c} has {} items, episodes with {k_shot} shots and {queries_per_class} queries need {need}",
                self.by_class[c].len()
            )));
        }
        let d = self.dim();
        let mut support = Matrix::zeros(n_way * k_shot, d);
        let mut query = Matrix::zeros(n_way * queries_per_class, d);
        for (label, &class) in classes.iter().enumerate() {
            let items = &self.by_class[class];
            let picked = index::sample(rng, items.len(), k_shot + queries_per_class).into_vec();
            for (slot, &p) in picked.iter().enumerate() {
                let src = self.features.row(items[p]);
                if slot < k_shot {
                    support.row_mut(label * k_shot + slot).copy_from_slice(src);
                } else {
                    let qi = slot - k_shot;
                    query.row_mut(label * queries_per_class + qi).copy_from_slice(src);
                }
            }
        }
        assemble(n_way, k_shot, support, query, queries_per_class)
    }
}

/// Parses `dim=<d> classes=<c>` followed by `class_id,v1,...,vd` rows.
pub fn parse_embeddings(text: &str, path: &Path) -> Result<EmbeddingDataset> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty file: expected header `dim=<d> classes=<c>`".into()))?;
    let (mut dim, mut classes) = (None, None);
    for field in header.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| err(1, format!("header field `{field}` is not key=value")))?;
        let n: usize = v
            .parse()
            .map_err(|_| err(1, format!("header value `{v}` is not a count")))?;
        match k {
            "dim" => dim = Some(n),
            "classes" => classes = Some(n),
            _ => return Err(err(1, format!("unknown header key `{k}`"))),
        }
    }
    let dim = dim.filter(|&d| d > 0).ok_or_else(|| err(1, "header needs dim=<d> with d > 0".into()))?;
    let classes = classes
        .filter(|&c| c > 0)
        .ok_or_else(|| err(1, "header needs classes=<c> with c > 0".into()))?;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (no, line) in lines {
        if line.is_empty() {
            return Err(err(no, "blank line".into()));
        }
        let mut fields = line.split(',');
        let class: usize = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| err(no, "class id is not a non-negative integer".into()))?;
        if class >= classes {
            return Err(err(no, format!("class id {class} >= classes={classes}")));
        }
        let before = data.len();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| err(no, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(no, format!("non-finite value `{f}`")));
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != dim {
            return Err(err(no, format!("expected {dim} values, found {got}")));
        }
        labels.push(class);
    }
    if labels.is_empty() {
        return Err(err(1, "no instances after the header".into()));
    }
    let features = Matrix::from_vec(labels.len(), dim, data)?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ds = EmbeddingDataset::new(features, labels, classes, &tag)?;
    if let Some(c) = ds.by_class.iter().position(Vec::is_empty) {
        return Err(err(1, format!("class {c} is declared but has no instances")));
    }
    Ok(ds)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}

/// Renders a dataset in the text format; values use shortest round-trip decimals.
pub fn format_embeddings(ds: &EmbeddingDataset) -> String {
    let mut out = String::new();
    writeln!(out, "dim={} classes={}", ds.dim(), ds.n_classes()).unwrap();
    for (row, y) in ds.features.row_iter().zip(&ds.labels) {
        write!(out, "{y}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(path: &Path, ds: &EmbeddingDataset) -> Result<()> {
    fs::write(path, format_embeddings(ds)).map_err(|e| Error::io(path, e))
}
