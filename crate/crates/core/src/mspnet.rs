//! Multi-structure point-cloud classifier: one branch per organ (T-Net
//! alignment, shared-weight per-point layers, max-pool global feature),
//! fused global features, and a dense classification head, trained
//! end-to-end with softmax cross-entropy and Adam.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{center_cloud, PointCloud};
use crate::neural::{adam_step, AdamState, NeuralError, NodeId, Scalar, Tape};

#[derive(Debug, Error)]
pub enum MspnetError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("training requires at least 2 subjects per class; class {class} has {count}")]
    TooFewSubjects { class: u8, count: usize },
    #[error("dataset contains a single class")]
    SingleClass,
    #[error("missing {organ} branch feature in two-organ mode")]
    MissingBranch { organ: &'static str },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("model has not been trained")]
    Untrained,
    #[error("cloud has {got} points, expected {expected} (resample first)")]
    WrongPointCount { expected: usize, got: usize },
    #[error("subject {id} has label {label}, expected 0 or 1")]
    BadLabel { id: String, label: u8 },
}

/// Which organ branches the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StructureMode {
    #[default]
    Both,
    LiverOnly,
    SpleenOnly,
}

impl std::str::FromStr for StructureMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(Self::Both),
            "liver" => Ok(Self::LiverOnly),
            "spleen" => Ok(Self::SpleenOnly),
            other => Err(format!("unknown structures '{other}' (both|liver|spleen)")),
        }
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MspnetConfig {
    /// Points per organ cloud after resampling.
    pub points_per_cloud: usize,
    /// Shared-weight per-point layer widths; the last is the global feature
    /// length.
    pub point_widths: Vec<usize>,
    /// T-Net per-point widths before its max pool.
    pub tnet_point_widths: Vec<usize>,
    /// T-Net dense widths after the pool (a final zero-initialized layer to
    /// 9 values is appended automatically).
    pub tnet_dense_widths: Vec<usize>,
    /// Head widths; the last must equal the class count 2.
    pub head_widths: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub structures: StructureMode,
    /// One parameter set serving both branches instead of separate weights.
    pub shared_branches: bool,
    /// Normalize clouds to unit RMS radius during preparation.
    pub unit_scale: bool,
    /// Learnable per-feature affine (scale + shift) after each per-point
    /// linear layer.
    pub feature_affine: bool,
    /// Weight of the |T^T T - I|^2 penalty on the alignment matrix; 0 = off.
    pub tnet_ortho_weight: f64,
    /// Stop early once training accuracy reaches this value.
    pub stop_accuracy: Option<f64>,
}

impl Default for MspnetConfig {
    fn default() -> Self {
        Self {
            points_per_cloud: 1024,
            point_widths: vec![64, 64, 64, 128, 1024],
            tnet_point_widths: vec![64, 128, 1024],
            tnet_dense_widths: vec![512, 256],
            head_widths: vec![512, 256, 2],
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            structures: StructureMode::Both,
            shared_branches: false,
            unit_scale: false,
            feature_affine: false,
            tnet_ortho_weight: 0.0,
            stop_accuracy: None,
        }
    }
}

impl MspnetConfig {
    pub fn validate(&self) -> Result<(), MspnetError> {
        if self.points_per_cloud < 8 {
            return Err(MspnetError::BadConfig(
                "points_per_cloud must be >= 8".into(),
            ));
        }
        for (name, widths) in [
            ("point_widths", &self.point_widths),
            ("tnet_point_widths", &self.tnet_point_widths),
            ("head_widths", &self.head_widths),
        ] {
            if widths.is_empty() || widths.iter().any(|&w| w < 1) {
                return Err(MspnetError::BadConfig(format!(
                    "{name} must be non-empty with all widths >= 1"
                )));
            }
        }
        if self.head_widths.last() != Some(&2) {
            return Err(MspnetError::BadConfig(
                "last head width must equal the class count 2".into(),
            ));
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(MspnetError::BadConfig(
                "batch_size and epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Length of the fused feature the head consumes.
    pub fn fused_width(&self) -> usize {
        let per_branch = *self.point_widths.last().unwrap();
        match self.structures {
            StructureMode::Both => 2 * per_branch,
            _ => per_branch,
        }
    }
}

/// One named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<F> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<F>,
}

#[derive(Debug, Clone, Copy)]
struct DenseIdx {
    w: usize,
    b: usize,
    affine: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct TnetIdx {
    point: Vec<DenseIdx>,
    dense: Vec<DenseIdx>,
    last: DenseIdx,
}

#[derive(Debug, Clone)]
struct BranchIdx {
    tnet: TnetIdx,
    point: Vec<DenseIdx>,
}

#[derive(Debug, Clone)]
struct Layout {
    liver: Option<BranchIdx>,
    spleen: Option<BranchIdx>,
    head: Vec<DenseIdx>,
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// One training/evaluation subject: both organ clouds resampled to the
/// configured point count and centered, plus the binary label.
#[derive(Debug, Clone)]
pub struct LabeledSubject {
    pub id: String,
    pub liver: PointCloud,
    pub spleen: PointCloud,
    pub label: u8,
}

/// Resample a cloud to exactly `n` points: a seeded subset without
/// replacement when the cloud is larger, all points plus seeded draws with
/// replacement when smaller.
pub fn resample_cloud(cloud: &PointCloud, n: usize, seed: u64) -> PointCloud {
    let len = cloud.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = if len == n {
        cloud.points.clone()
    } else if len > n {
        let mut idx: Vec<usize> = (0..len).collect();
        for i in 0..n {
            let j = i + (rng.random::<u64>() as usize) % (len - i);
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| cloud.points[i]).collect()
    } else {
        let mut pts = cloud.points.clone();
        while pts.len() < n {
            let j = (rng.random::<u64>() as usize) % len;
            pts.push(cloud.points[j]);
        }
        pts
    };
    PointCloud { points }
}

/// Build a training subject: resample both organs to the configured count
/// and center them (optionally to unit RMS scale).
pub fn prepare_subject(
    id: &str,
    liver: &PointCloud,
    spleen: &PointCloud,
    label: u8,
    config: &MspnetConfig,
    seed: u64,
) -> Result<LabeledSubject, MspnetError> {
    if label > 1 {
        return Err(MspnetError::BadLabel {
            id: id.to_string(),
            label,
        });
    }
    let n = config.points_per_cloud;
    let liver = center_cloud(&resample_cloud(liver, n, seed), config.unit_scale);
    let spleen = center_cloud(
        &resample_cloud(spleen, n, seed.wrapping_add(1)),
        config.unit_scale,
    );
    Ok(LabeledSubject {
        id: id.to_string(),
        liver,
        spleen,
        label,
    })
}

/// The trained (or freshly initialized) model: parameters plus the config
/// snapshot and per-epoch history.
#[derive(Debug, Clone)]
pub struct MspnetModel<F: Scalar> {
    pub config: MspnetConfig,
    pub params: Vec<ParamEntry<F>>,
    pub history: Vec<EpochStats>,
    layout: Layout,
}

struct ParamBuilder<F> {
    entries: Vec<ParamEntry<F>>,
    rng: ChaCha8Rng,
}

impl<F: Scalar> ParamBuilder<F> {
    fn dense(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        zero_init: bool,
        affine: bool,
    ) -> DenseIdx {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w_values: Vec<F> = (0..fan_in * fan_out)
            .map(|_| {
                if zero_init {
                    F::zero()
                } else {
                    F::from_f64((self.rng.random::<f64>() * 2.0 - 1.0) * limit)
                }
            })
            .collect();
        let w = self.entries.len();
        self.entries.push(ParamEntry {
            name: format!("{prefix}.w"),
            rows: fan_in,
            cols: fan_out,
            values: w_values,
        });
        let b = self.entries.len();
        self.entries.push(ParamEntry {
            name: format!("{prefix}.b"),
            rows: 1,
            cols: fan_out,
            values: vec![F::zero(); fan_out],
        });
        let affine = affine.then(|| {
            let g = self.entries.len();
            self.entries.push(ParamEntry {
                name: format!("{prefix}.gamma"),
                rows: 1,
                cols: fan_out,
                values: vec![F::one(); fan_out],
            });
            let beta = self.entries.len();
            self.entries.push(ParamEntry {
                name: format!("{prefix}.beta"),
                rows: 1,
                cols: fan_out,
                values: vec![F::zero(); fan_out],
            });
            (g, beta)
        });
        DenseIdx { w, b, affine }
    }

    fn branch(&mut self, prefix: &str, config: &MspnetConfig) -> BranchIdx {
        let mut tnet_point = Vec::new();
        let mut fan_in = 3;
        for (i, &w) in config.tnet_point_widths.iter().enumerate() {
            tnet_point.push(self.dense(&format!("{prefix}.tnet.point{i}"), fan_in, w, false, false));
            fan_in = w;
        }
        let mut tnet_dense = Vec::new();
        for (i, &w) in config.tnet_dense_widths.iter().enumerate() {
            tnet_dense.push(self.dense(&format!("{prefix}.tnet.dense{i}"), fan_in, w, false, false));
            fan_in = w;
        }
        // Zero-initialized output layer plus the identity bias added at the
        // forward pass makes T = I for a fresh model.
        let last = self.dense(&format!("{prefix}.tnet.out"), fan_in, 9, true, false);
        let mut point = Vec::new();
        let mut fan_in = 3;
        for (i, &w) in config.point_widths.iter().enumerate() {
            point.push(self.dense(
                &format!("{prefix}.point{i}"),
                fan_in,
                w,
                false,
                config.feature_affine,
            ));
            fan_in = w;
        }
        BranchIdx {
            tnet: TnetIdx {
                point: tnet_point,
                dense: tnet_dense,
                last,
            },
            point,
        }
    }
}

impl<F: Scalar> MspnetModel<F> {
    /// Fresh model with seeded initialization.
    pub fn init(config: MspnetConfig) -> Result<Self, MspnetError> {
        config.validate()?;
        let mut builder = ParamBuilder::<F> {
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let (liver, spleen) = match (config.structures, config.shared_branches) {
            (StructureMode::Both, true) => {
                let shared = builder.branch("branch", &config);
                (Some(shared.clone()), Some(shared))
            }
            (StructureMode::Both, false) => (
                Some(builder.branch("liver", &config)),
                Some(builder.branch("spleen", &config)),
            ),
            (StructureMode::LiverOnly, _) => (Some(builder.branch("liver", &config)), None),
            (StructureMode::SpleenOnly, _) => (None, Some(builder.branch("spleen", &config))),
        };
        let mut head = Vec::new();
        let mut fan_in = config.fused_width();
        for (i, &w) in config.head_widths.iter().enumerate() {
            head.push(builder.dense(&format!("head{i}"), fan_in, w, false, false));
            fan_in = w;
        }
        Ok(Self {
            config,
            params: builder.entries,
            history: Vec::new(),
            layout: Layout {
                liver,
                spleen,
                head,
            },
        })
    }

    /// Rebuild a model from a config snapshot, history, and named arrays
    /// (checkpoint loading). Array order and shapes must match `init`.
    pub fn from_parts(
        config: MspnetConfig,
        history: Vec<EpochStats>,
        arrays: Vec<(String, Vec<F>)>,
    ) -> Result<Self, MspnetError> {
        let mut model = Self::init(config)?;
        if arrays.len() != model.params.len() {
            return Err(MspnetError::BadConfig(format!(
                "checkpoint has {} arrays, model expects {}",
                arrays.len(),
                model.params.len()
            )));
        }
        for (entry, (name, values)) in model.params.iter_mut().zip(arrays) {
            if entry.name != name {
                return Err(MspnetError::BadConfig(format!(
                    "checkpoint array '{name}' does not match expected '{}'",
                    entry.name
                )));
            }
            if entry.values.len() != values.len() {
                return Err(MspnetError::BadConfig(format!(
                    "array '{name}' has {} values, expected {}",
                    values.len(),
                    entry.values.len()
                )));
            }
            entry.values = values;
        }
        model.history = history;
        Ok(model)
    }

    pub fn is_trained(&self) -> bool {
        !self.history.is_empty()
    }

    fn check_cloud(&self, cloud: &PointCloud) -> Result<(), MspnetError> {
        if cloud.len() != self.config.points_per_cloud {
            return Err(MspnetError::WrongPointCount {
                expected: self.config.points_per_cloud,
                got: cloud.len(),
            });
        }
        Ok(())
    }
}

/// Node bindings of parameters onto a tape, so shared parameters bind once
/// and accumulate gradients across uses.
struct Bindings {
    map: Vec<Option<NodeId>>,
}

impl Bindings {
    fn new(n: usize) -> Self {
        Self {
            map: vec![None; n],
        }
    }

    fn bind<F: Scalar>(
        &mut self,
        tape: &mut Tape<F>,
        params: &[ParamEntry<F>],
        idx: usize,
    ) -> Result<NodeId, NeuralError> {
        if let Some(id) = self.map[idx] {
            return Ok(id);
        }
        let e = &params[idx];
        let id = tape.leaf(e.rows, e.cols, e.values.clone())?;
        self.map[idx] = Some(id);
        Ok(id)
    }
}

fn dense_layer<F: Scalar>(
    tape: &mut Tape<F>,
    params: &[ParamEntry<F>],
    bindings: &mut Bindings,
    layer: &DenseIdx,
    x: NodeId,
    activate: bool,
) -> Result<NodeId, NeuralError> {
    let w = bindings.bind(tape, params, layer.w)?;
    let b = bindings.bind(tape, params, layer.b)?;
    let mut h = tape.matmul(x, w)?;
    h = tape.add_broadcast_row(h, b)?;
    if let Some((g, beta)) = layer.affine {
        let g = bindings.bind(tape, params, g)?;
        let beta = bindings.bind(tape, params, beta)?;
        h = tape.mul_broadcast_row(h, g)?;
        h = tape.add_broadcast_row(h, beta)?;
    }
    if activate { tape.relu(h) } else { Ok(h) }
}

fn tnet_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    params: &[ParamEntry<F>],
    bindings: &mut Bindings,
    tnet: &TnetIdx,
    cloud: NodeId,
) -> Result<NodeId, NeuralError> {
    let mut h = cloud;
    for layer in &tnet.point {
        h = dense_layer(tape, params, bindings, layer, h, true)?;
    }
    let mut g = tape.max_over_points(h)?;
    for layer in &tnet.dense {
        g = dense_layer(tape, params, bindings, layer, g, true)?;
    }
    let t9 = dense_layer(tape, params, bindings, &tnet.last, g, false)?;
    let t = tape.reshape(t9, 3, 3)?;
    let eye = tape.leaf(
        3,
        3,
        vec![
            F::one(),
            F::zero(),
            F::zero(),
            F::zero(),
            F::one(),
            F::zero(),
            F::zero(),
            F::zero(),
            F::one(),
        ],
    )?;
    tape.add(t, eye)
}

fn branch_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    params: &[ParamEntry<F>],
    bindings: &mut Bindings,
    branch: &BranchIdx,
    cloud: &PointCloud,
) -> Result<(NodeId, NodeId), NeuralError> {
    let n = cloud.len();
    let values: Vec<F> = cloud
        .points
        .iter()
        .flat_map(|p| p.iter().map(|&c| F::from_f64(c)))
        .collect();
    let cloud_node = tape.leaf(n, 3, values)?;
    let t = tnet_on_tape(tape, params, bindings, &branch.tnet, cloud_node)?;
    // Points are rows, so applying T to each point is cloud * T^T.
    let t_t = tape.transpose(t)?;
    let mut h = tape.matmul(cloud_node, t_t)?;
    for layer in &branch.point {
        h = dense_layer(tape, params, bindings, layer, h, true)?;
    }
    let s = tape.max_over_points(h)?;
    Ok((s, t))
}

struct SubjectPass {
    logits: NodeId,
    loss: NodeId,
}

fn subject_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    model: &MspnetModel<F>,
    bindings: &mut Bindings,
    subject: &LabeledSubject,
) -> Result<SubjectPass, MspnetError> {
    let mut transforms = Vec::new();
    let feature = match model.config.structures {
        StructureMode::Both => {
            let liver = model
                .layout
                .liver
                .as_ref()
                .ok_or(MspnetError::MissingBranch { organ: "liver" })?;
            let spleen = model
                .layout
                .spleen
                .as_ref()
                .ok_or(MspnetError::MissingBranch { organ: "spleen" })?;
            let (sl, tl) = branch_on_tape(tape, &model.params, bindings, liver, &subject.liver)?;
            let (ss, ts) = branch_on_tape(tape, &model.params, bindings, spleen, &subject.spleen)?;
            transforms.push(tl);
            transforms.push(ts);
            tape.concat_cols(sl, ss)?
        }
        StructureMode::LiverOnly => {
            let liver = model
                .layout
                .liver
                .as_ref()
                .ok_or(MspnetError::MissingBranch { organ: "liver" })?;
            let (s, t) = branch_on_tape(tape, &model.params, bindings, liver, &subject.liver)?;
            transforms.push(t);
            s
        }
        StructureMode::SpleenOnly => {
            let spleen = model
                .layout
                .spleen
                .as_ref()
                .ok_or(MspnetError::MissingBranch { organ: "spleen" })?;
            let (s, t) = branch_on_tape(tape, &model.params, bindings, spleen, &subject.spleen)?;
            transforms.push(t);
            s
        }
    };
    let mut h = feature;
    let head_count = model.layout.head.len();
    for (i, layer) in model.layout.head.iter().enumerate() {
        let activate = i + 1 < head_count;
        h = dense_layer(tape, &model.params, bindings, layer, h, activate)?;
    }
    let logits = h;
    let mut loss = tape.softmax_cross_entropy(logits, subject.label as usize)?;
    if model.config.tnet_ortho_weight > 0.0 {
        let eye = tape.leaf(
            3,
            3,
            vec![
                F::one(),
                F::zero(),
                F::zero(),
                F::zero(),
                F::one(),
                F::zero(),
                F::zero(),
                F::zero(),
                F::one(),
            ],
        )?;
        for &t in &transforms {
            let t_t = tape.transpose(t)?;
            let prod = tape.matmul(t_t, t)?;
            let diff = tape.sub(prod, eye)?;
            let penalty = tape.sum_squares(diff)?;
            let scaled = tape.scale(penalty, F::from_f64(model.config.tnet_ortho_weight))?;
            loss = tape.add(loss, scaled)?;
        }
    }
    Ok(SubjectPass { logits, loss })
}

/// Alignment matrix predicted by one branch's transformation network.
/// A freshly initialized model returns exactly the identity.
pub fn tnet_forward<F: Scalar>(
    model: &MspnetModel<F>,
    cloud: &PointCloud,
) -> Result<[[f64; 3]; 3], MspnetError> {
    model.check_cloud(cloud)?;
    let branch = model
        .layout
        .liver
        .as_ref()
        .or(model.layout.spleen.as_ref())
        .expect("model always has at least one branch");
    let mut tape: Tape<F> = Tape::new();
    let mut bindings = Bindings::new(model.params.len());
    let n = cloud.len();
    let values: Vec<F> = cloud
        .points
        .iter()
        .flat_map(|p| p.iter().map(|&c| F::from_f64(c)))
        .collect();
    let cloud_node = tape.leaf(n, 3, values)?;
    let t = tnet_on_tape(&mut tape, &model.params, &mut bindings, &branch.tnet, cloud_node)?;
    let tv = tape.value(t);
    let mut out = [[0.0f64; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = tv[r * 3 + c].into_f64();
        }
    }
    Ok(out)
}

/// Which organ a standalone branch evaluation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Organ {
    Liver,
    Spleen,
}

/// Global feature vector of one organ branch (the max-pooled output of the
/// last shared-weight layer).
pub fn branch_forward<F: Scalar>(
    model: &MspnetModel<F>,
    organ: Organ,
    cloud: &PointCloud,
) -> Result<Vec<f64>, MspnetError> {
    model.check_cloud(cloud)?;
    let branch = match organ {
        Organ::Liver => model.layout.liver.as_ref(),
        Organ::Spleen => model.layout.spleen.as_ref(),
    }
    .ok_or(MspnetError::MissingBranch {
        organ: match organ {
            Organ::Liver => "liver",
            Organ::Spleen => "spleen",
        },
    })?;
    let mut tape: Tape<F> = Tape::new();
    let mut bindings = Bindings::new(model.params.len());
    let (s, _) = branch_on_tape(&mut tape, &model.params, &mut bindings, branch, cloud)?;
    Ok(tape.value(s).iter().map(|&v| v.into_f64()).collect())
}

/// Run the head on already-computed branch features, fixed order
/// `[liver || spleen]` in two-organ mode.
pub fn fuse_and_classify<F: Scalar>(
    model: &MspnetModel<F>,
    liver_feature: Option<&[f64]>,
    spleen_feature: Option<&[f64]>,
) -> Result<[f64; 2], MspnetError> {
    let per_branch = *model.config.point_widths.last().unwrap();
    let fused: Vec<f64> = match model.config.structures {
        StructureMode::Both => {
            let l = liver_feature.ok_or(MspnetError::MissingBranch { organ: "liver" })?;
            let s = spleen_feature.ok_or(MspnetError::MissingBranch { organ: "spleen" })?;
            l.iter().chain(s.iter()).copied().collect()
        }
        StructureMode::LiverOnly => liver_feature
            .ok_or(MspnetError::MissingBranch { organ: "liver" })?
            .to_vec(),
        StructureMode::SpleenOnly => spleen_feature
            .ok_or(MspnetError::MissingBranch { organ: "spleen" })?
            .to_vec(),
    };
    if fused.len() != model.config.fused_width() {
        return Err(MspnetError::BadConfig(format!(
            "fused feature has {} values, expected {} ({}x{per_branch})",
            fused.len(),
            model.config.fused_width(),
            if model.config.structures == StructureMode::Both {
                2
            } else {
                1
            },
        )));
    }
    let mut tape: Tape<F> = Tape::new();
    let mut bindings = Bindings::new(model.params.len());
    let values: Vec<F> = fused.iter().map(|&v| F::from_f64(v)).collect();
    let mut h = tape.leaf(1, fused.len(), values)?;
    let head_count = model.layout.head.len();
    for (i, layer) in model.layout.head.iter().enumerate() {
        let activate = i + 1 < head_count;
        h = dense_layer(&mut tape, &model.params, &mut bindings, layer, h, activate)?;
    }
    let lv = tape.value(h);
    Ok([lv[0].into_f64(), lv[1].into_f64()])
}

/// Softmax probability of class 1 for one subject.
pub fn predict_proba<F: Scalar>(
    model: &MspnetModel<F>,
    subject: &LabeledSubject,
) -> Result<f64, MspnetError> {
    model.check_cloud(&subject.liver)?;
    model.check_cloud(&subject.spleen)?;
    let mut tape: Tape<F> = Tape::new();
    let mut bindings = Bindings::new(model.params.len());
    let pass = subject_loss_on_tape(&mut tape, model, &mut bindings, subject)?;
    let lv = tape.value(pass.logits);
    let (l0, l1) = (lv[0].into_f64(), lv[1].into_f64());
    Ok(1.0 / (1.0 + (l0 - l1).exp()))
}

/// Pre-head feature of a subject: the fused `[liver || spleen]` vector in
/// two-organ mode, or the single branch feature otherwise.
pub fn global_features<F: Scalar>(
    model: &MspnetModel<F>,
    subject: &LabeledSubject,
) -> Result<Vec<f64>, MspnetError> {
    match model.config.structures {
        StructureMode::Both => {
            let mut f = branch_forward(model, Organ::Liver, &subject.liver)?;
            f.extend(branch_forward(model, Organ::Spleen, &subject.spleen)?);
            Ok(f)
        }
        StructureMode::LiverOnly => branch_forward(model, Organ::Liver, &subject.liver),
        StructureMode::SpleenOnly => branch_forward(model, Organ::Spleen, &subject.spleen),
    }
}

fn forward_backward<F: Scalar>(
    model: &MspnetModel<F>,
    subject: &LabeledSubject,
) -> Result<(f64, bool, Vec<Vec<F>>), MspnetError> {
    let mut tape: Tape<F> = Tape::new();
    let mut bindings = Bindings::new(model.params.len());
    let pass = subject_loss_on_tape(&mut tape, model, &mut bindings, subject)?;
    tape.backward(pass.loss)?;
    let lv = tape.value(pass.logits);
    let predicted = if lv[1] > lv[0] { 1u8 } else { 0u8 };
    let grads: Vec<Vec<F>> = model
        .params
        .iter()
        .enumerate()
        .map(|(i, e)| match bindings.map[i] {
            Some(id) => tape.grad(id).to_vec(),
            None => vec![F::zero(); e.values.len()],
        })
        .collect();
    Ok((
        tape.value(pass.loss)[0].into_f64(),
        predicted == subject.label,
        grads,
    ))
}

/// Loss and per-parameter gradients of one subject's forward pass; the
/// surface the finite-difference gradient check drives.
pub fn loss_and_gradient<F: Scalar>(
    model: &MspnetModel<F>,
    subject: &LabeledSubject,
) -> Result<(f64, Vec<Vec<F>>), MspnetError> {
    let (loss, _, grads) = forward_backward(model, subject)?;
    Ok((loss, grads))
}

/// Train a fresh model on the dataset. Deterministic per (dataset, config):
/// initialization, shuffling, and batch reduction order all derive from the
/// config seed. Per-subject gradient passes may run in parallel; the
/// summation order is fixed, so results do not depend on thread count.
pub fn train<F: Scalar>(
    dataset: &[LabeledSubject],
    config: MspnetConfig,
) -> Result<MspnetModel<F>, MspnetError> {
    config.validate()?;
    let mut class_counts = [0usize; 2];
    for s in dataset {
        if s.label > 1 {
            return Err(MspnetError::BadLabel {
                id: s.id.clone(),
                label: s.label,
            });
        }
        class_counts[s.label as usize] += 1;
    }
    if class_counts[0] == 0 || class_counts[1] == 0 {
        return Err(MspnetError::SingleClass);
    }
    for (class, &count) in class_counts.iter().enumerate() {
        if count < 2 {
            return Err(MspnetError::TooFewSubjects {
                class: class as u8,
                count,
            });
        }
    }
    let mut model = MspnetModel::<F>::init(config)?;
    for s in dataset {
        model.check_cloud(&s.liver)?;
        model.check_cloud(&s.spleen)?;
    }

    let sizes: Vec<usize> = model.params.iter().map(|e| e.values.len()).collect();
    let mut adam = AdamState::<F>::new(&sizes, model.config.learning_rate);
    let mut shuffle_rng =
        ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let m = dataset.len();

    for epoch in 0..model.config.epochs {
        let mut order: Vec<usize> = (0..m).collect();
        for i in 0..m {
            let j = i + (shuffle_rng.random::<u64>() as usize) % (m - i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(model.config.batch_size) {
            let results: Result<Vec<_>, MspnetError> = batch
                .par_iter()
                .map(|&si| forward_backward(&model, &dataset[si]))
                .collect();
            let results = results?;
            let scale = F::from_f64(1.0 / batch.len() as f64);
            let mut grads: Vec<Vec<F>> = sizes.iter().map(|&s| vec![F::zero(); s]).collect();
            for (loss, ok, g) in &results {
                epoch_loss += loss;
                correct += *ok as usize;
                for (acc, part) in grads.iter_mut().zip(g) {
                    for (a, &p) in acc.iter_mut().zip(part) {
                        *a += p * scale;
                    }
                }
            }
            let mut params: Vec<Vec<F>> =
                model.params.iter().map(|e| e.values.clone()).collect();
            adam_step(&mut params, &grads, &mut adam);
            for (entry, values) in model.params.iter_mut().zip(params) {
                entry.values = values;
            }
        }
        let stats = EpochStats {
            epoch,
            loss: epoch_loss / m as f64,
            accuracy: correct as f64 / m as f64,
        };
        let accuracy = stats.accuracy;
        model.history.push(stats);
        if let Some(target) = model.config.stop_accuracy
            && accuracy >= target
        {
            break;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> MspnetConfig {
        MspnetConfig {
            points_per_cloud: 16,
            point_widths: vec![8, 16],
            tnet_point_widths: vec![8, 16],
            tnet_dense_widths: vec![8],
            head_widths: vec![8, 2],
            learning_rate: 3e-3,
            epochs: 5,
            batch_size: 4,
            seed: 11,
            ..Default::default()
        }
    }

    fn blob_cloud(n: usize, center: [f64; 3], spread: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                [
                    center[0] + spread * (rng.random::<f64>() - 0.5),
                    center[1] + spread * (rng.random::<f64>() - 0.5),
                    center[2] + spread * (rng.random::<f64>() - 0.5),
                ]
            })
            .collect();
        PointCloud { points }
    }

    fn toy_dataset(config: &MspnetConfig, count_per_class: usize) -> Vec<LabeledSubject> {
        // Class 1 liver clouds are wider; spleens carry a weaker signal.
        (0..2 * count_per_class)
            .map(|i| {
                let label = (i % 2) as u8;
                let spread = if label == 1 { 3.0 } else { 1.0 };
                let liver = blob_cloud(64, [0.0; 3], spread, 100 + i as u64);
                let spleen = blob_cloud(40, [0.0; 3], 1.0 + 0.2 * label as f64, 200 + i as u64);
                prepare_subject(&format!("s{i:03}"), &liver, &spleen, label, config, i as u64)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn fresh_tnet_is_identity() {
        let config = tiny_config();
        let model = MspnetModel::<f64>::init(config.clone()).unwrap();
        let cloud = center_cloud(&blob_cloud(config.points_per_cloud, [0.0; 3], 2.0, 5), false);
        let t = tnet_forward(&model, &cloud).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert_eq!(t[r][c], expect, "T[{r}][{c}]");
            }
        }
    }

    #[test]
    fn tnet_is_permutation_invariant() {
        let config = tiny_config();
        let mut model = MspnetModel::<f64>::init(config.clone()).unwrap();
        // Give the zero-initialized output layer nonzero weights so T != I.
        let last = model.params.len();
        let _ = last;
        for e in model.params.iter_mut() {
            if e.name.ends_with("tnet.out.w") {
                for (i, v) in e.values.iter_mut().enumerate() {
                    *v = ((i * 37 % 11) as f64 - 5.0) * 0.01;
                }
            }
        }
        let cloud = blob_cloud(config.points_per_cloud, [0.0; 3], 2.0, 9);
        let t1 = tnet_forward(&model, &cloud).unwrap();
        let mut reversed = cloud.clone();
        reversed.points.reverse();
        let t2 = tnet_forward(&model, &reversed).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn branch_feature_is_exactly_permutation_invariant() {
        let config = tiny_config();
        let model = MspnetModel::<f64>::init(config.clone()).unwrap();
        let cloud = blob_cloud(config.points_per_cloud, [0.5, -1.0, 2.0], 2.0, 21);
        let f1 = branch_forward(&model, Organ::Liver, &cloud).unwrap();
        let mut shuffled = cloud.clone();
        shuffled.points.rotate_left(7);
        shuffled.points.swap(0, 3);
        let f2 = branch_forward(&model, Organ::Liver, &shuffled).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn duplicated_points_leave_feature_unchanged() {
        // Max-pool ignores multiplicity; run a doubled cloud through a model
        // configured for 2n points.
        let mut config = tiny_config();
        let cloud = blob_cloud(config.points_per_cloud, [0.0; 3], 1.5, 33);
        let model_small = MspnetModel::<f64>::init(config.clone()).unwrap();
        let f1 = branch_forward(&model_small, Organ::Liver, &cloud).unwrap();
        config.points_per_cloud *= 2;
        let model_big = MspnetModel::<f64>::init(config.clone()).unwrap();
        let mut doubled = cloud.points.clone();
        doubled.extend_from_slice(&cloud.points);
        let f2 = branch_forward(&model_big, Organ::Liver, &PointCloud { points: doubled }).unwrap();
        // Same per-point weights (same seed and prefix order) and same point
        // set, so features agree exactly.
        assert_eq!(f1, f2);
    }

    #[test]
    fn dominant_outlier_changes_the_feature() {
        let config = tiny_config();
        let model = MspnetModel::<f64>::init(config.clone()).unwrap();
        let cloud = blob_cloud(config.points_per_cloud, [0.0; 3], 1.0, 44);
        let f1 = branch_forward(&model, Organ::Liver, &cloud).unwrap();
        let mut spiked = cloud.clone();
        spiked.points[0] = [40.0, -35.0, 50.0];
        let f2 = branch_forward(&model, Organ::Liver, &spiked).unwrap();
        assert_ne!(f1, f2, "a dominant outlier must move at least one feature");
    }

    #[test]
    fn default_fused_width_matches_descriptor_arity() {
        // Default two-branch feature is 2 x 1024 wide.
        let config = MspnetConfig::default();
        assert_eq!(config.fused_width(), 2048);
        let liver_only = MspnetConfig {
            structures: StructureMode::LiverOnly,
            ..Default::default()
        };
        assert_eq!(liver_only.fused_width(), 1024);
    }

    #[test]
    fn fuse_orders_liver_then_spleen() {
        let config = tiny_config();
        let model = MspnetModel::<f64>::init(config.clone()).unwrap();
        let d = *config.point_widths.last().unwrap();
        let liver: Vec<f64> = (0..d).map(|i| i as f64 * 0.1).collect();
        let spleen: Vec<f64> = (0..d).map(|i| -(i as f64) * 0.2).collect();
        let a = fuse_and_classify(&model, Some(&liver), Some(&spleen)).unwrap();
        let b = fuse_and_classify(&model, Some(&spleen), Some(&liver)).unwrap();
        assert_ne!(a, b, "swapping organ features must change logits");
        assert!(matches!(
            fuse_and_classify(&model, Some(&liver), None),
            Err(MspnetError::MissingBranch { organ: "spleen" })
        ));
    }

    #[test]
    fn zero_head_gives_zero_logits_and_half_probability() {
        let config = tiny_config();
        let mut model = MspnetModel::<f64>::init(config.clone()).unwrap();
        for e in model.params.iter_mut() {
            if e.name.starts_with("head") {
                e.values.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let d = *config.point_widths.last().unwrap();
        let logits = fuse_and_classify(&model, Some(&vec![0.0; d]), Some(&vec![0.0; d])).unwrap();
        assert_eq!(logits, [0.0, 0.0]);
        let dataset = toy_dataset(&config, 2);
        let p = predict_proba(&model, &dataset[0]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn saturated_logits_give_probability_near_one() {
        let config = tiny_config();
        let model = MspnetModel::<f64>::init(config).unwrap();
        let _ = model;
        let p = 1.0 / (1.0 + ((-40.0f64) - 40.0).exp());
        assert!(p > 0.999999);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let mut config = tiny_config();
        config.epochs = 30;
        let dataset = toy_dataset(&config, 5);
        let model = train::<f64>(&dataset, config.clone()).unwrap();
        let first = model.history.first().unwrap();
        let last = model.history.last().unwrap();
        assert!(
            last.loss < first.loss,
            "loss should descend: {} -> {}",
            first.loss,
            last.loss
        );
        let again = train::<f64>(&dataset, config).unwrap();
        assert_eq!(model.history, again.history);
        assert_eq!(
            model.params.iter().map(|e| &e.values).collect::<Vec<_>>(),
            again.params.iter().map(|e| &e.values).collect::<Vec<_>>()
        );
    }

    #[test]
    fn overfit_probe_reaches_full_accuracy() {
        let mut config = tiny_config();
        config.epochs = 500;
        config.stop_accuracy = Some(1.0);
        config.batch_size = 4;
        let dataset = toy_dataset(&config, 2);
        assert_eq!(dataset.len(), 4);
        let model = train::<f64>(&dataset, config).unwrap();
        let best = model
            .history
            .iter()
            .map(|e| e.accuracy)
            .fold(0.0, f64::max);
        assert_eq!(best, 1.0, "4-subject probe must overfit to accuracy 1.0");
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let config = tiny_config();
        let mut dataset = toy_dataset(&config, 3);
        for s in &mut dataset {
            s.label = 0;
        }
        assert!(matches!(
            train::<f64>(&dataset, config),
            Err(MspnetError::SingleClass)
        ));
    }

    #[test]
    fn predict_proba_is_permutation_invariant() {
        let mut config = tiny_config();
        config.epochs = 3;
        let dataset = toy_dataset(&config, 3);
        let model = train::<f64>(&dataset, config).unwrap();
        let subject = &dataset[1];
        let p1 = predict_proba(&model, subject).unwrap();
        let mut permuted = subject.clone();
        permuted.liver.points.reverse();
        permuted.spleen.points.rotate_left(5);
        let p2 = predict_proba(&model, &permuted).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        // Full loss on a 2-subject batch against central differences.
        let mut config = tiny_config();
        config.points_per_cloud = 8;
        config.point_widths = vec![6, 10];
        config.tnet_point_widths = vec![4, 6];
        config.tnet_dense_widths = vec![6];
        config.head_widths = vec![6, 2];
        let dataset = vec![
            prepare_subject(
                "a",
                &blob_cloud(8, [0.0; 3], 2.0, 1),
                &blob_cloud(8, [0.0; 3], 1.0, 2),
                0,
                &config,
                1,
            )
            .unwrap(),
            prepare_subject(
                "b",
                &blob_cloud(8, [0.0; 3], 3.0, 3),
                &blob_cloud(8, [0.0; 3], 1.5, 4),
                1,
                &config,
                2,
            )
            .unwrap(),
        ];
        let template = MspnetModel::<f64>::init(config.clone()).unwrap();
        let sizes: Vec<usize> = template.params.iter().map(|e| e.values.len()).collect();
        let total: usize = sizes.iter().sum();
        // Perturb away from zero-init (relu kinks, zero tnet output layer).
        let point: Vec<f64> = (0..total)
            .map(|i| 0.23 * ((i as f64 * 0.377).sin() + 0.07))
            .collect();
        let f = {
            let dataset = dataset.clone();
            let config = config.clone();
            move |p: &[f64]| -> (f64, Vec<f64>) {
                let mut model = MspnetModel::<f64>::init(config.clone()).unwrap();
                let mut ofs = 0;
                for e in model.params.iter_mut() {
                    let len = e.values.len();
                    e.values.copy_from_slice(&p[ofs..ofs + len]);
                    ofs += e.values.len();
                }
                let mut value = 0.0;
                let mut grad = vec![0.0; p.len()];
                for s in &dataset {
                    let (loss, _, g) = forward_backward(&model, s).unwrap();
                    value += loss / dataset.len() as f64;
                    let mut o = 0;
                    for part in &g {
                        for &v in part {
                            grad[o] += v / dataset.len() as f64;
                            o += 1;
                        }
                    }
                }
                (value, grad)
            }
        };
        let err = crate::neural::grad_check(f, &point, 1e-5);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn shared_branches_tie_parameters() {
        let mut config = tiny_config();
        config.shared_branches = true;
        let model = MspnetModel::<f64>::init(config.clone()).unwrap();
        let shared_names: Vec<&str> = model
            .params
            .iter()
            .map(|e| e.name.as_str())
            .filter(|n| n.starts_with("branch"))
            .collect();
        assert!(!shared_names.is_empty());
        assert!(model.params.iter().all(|e| !e.name.starts_with("liver")));
        // Identical clouds through both organs give identical features.
        let cloud = blob_cloud(config.points_per_cloud, [0.0; 3], 2.0, 77);
        let fl = branch_forward(&model, Organ::Liver, &cloud).unwrap();
        let fs = branch_forward(&model, Organ::Spleen, &cloud).unwrap();
        assert_eq!(fl, fs);
    }

    #[test]
    fn checkpoint_round_trip_is_identical() {
        let mut config = tiny_config();
        config.epochs = 2;
        let dataset = toy_dataset(&config, 3);
        let model = train::<f64>(&dataset, config.clone()).unwrap();
        let arrays: Vec<(String, Vec<f64>)> = model
            .params
            .iter()
            .map(|e| (e.name.clone(), e.values.clone()))
            .collect();
        let restored =
            MspnetModel::<f64>::from_parts(config, model.history.clone(), arrays).unwrap();
        for (a, b) in model.params.iter().zip(&restored.params) {
            assert_eq!(a.values, b.values);
        }
        let p1 = predict_proba(&model, &dataset[0]).unwrap();
        let p2 = predict_proba(&restored, &dataset[0]).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn f32_training_runs() {
        let mut config = tiny_config();
        config.epochs = 2;
        let dataset = toy_dataset(&config, 2);
        let model = train::<f32>(&dataset, config).unwrap();
        assert_eq!(model.history.len(), 2);
    }
}
