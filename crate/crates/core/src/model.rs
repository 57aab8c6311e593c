//! The gated coarse-to-fine localization network.
//!
//! Three attention streams (left spectrogram, right spectrogram, their
//! difference) are pooled and fused with the cross-correlation vector
//! into a shared feature. Per azimuth sector a coarse branch emits a
//! detection probability and a coarse feature; per elevation band a fine
//! branch blends coarse and fine features through a learned sigmoid gate
//! and emits detection plus normalized azimuth/elevation.

use serde::{Deserialize, Serialize};

use crate::dsp::FeatureSet;
use crate::geometry::{PredictionGrid, SectorGrid};
use crate::nn::{
    global_average_pool, mlp, multi_head_self_attention, sinusoidal_positional_encoding,
    AttentionParams, HeadActivation, MlpParams, NnError, ParamStore, Scalar, Tape, VarId,
};

/// Architecture/loss ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Gated coarse-to-fine model with the masked multi-task loss.
    Full,
    /// Coarse detection task and gating removed.
    NoCoarse,
    /// One independent sub-network per fine sector.
    NonHierarchical,
    /// Same architecture as `Full`, trained with the unmasked loss.
    RegularLoss,
}

impl Variant {
    pub fn uses_coarse_branch(self) -> bool {
        matches!(self, Variant::Full | Variant::RegularLoss)
    }

    pub fn uses_masked_regression(self) -> bool {
        !matches!(self, Variant::RegularLoss)
    }
}

/// Dimensions and variant selection. Defaults follow the desk-scale
/// configuration; everything is overridable through the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuralNetConfig {
    pub grid: SectorGrid,
    /// Attention width; must equal the spectrogram band count.
    pub d_model: usize,
    pub heads: usize,
    /// Cross-correlation vector length appended to the pooled features.
    pub cc_len: usize,
    /// Hidden widths of the aggregation MLP.
    pub aggregation_hidden: Vec<usize>,
    /// Output width of the aggregation MLP, input to every branch.
    pub feature_dim: usize,
    /// Hidden widths of each coarse-branch MLP.
    pub coarse_hidden: Vec<usize>,
    /// Hidden widths of each fine pre-gate MLP.
    pub fine_hidden: Vec<usize>,
    /// Width of the coarse/fine features blended by the gate.
    pub branch_dim: usize,
    /// Hidden widths of each fine output head.
    pub head_hidden: Vec<usize>,
    /// Hidden widths of the per-sector nets in the non-hierarchical
    /// variant.
    pub nh_hidden: Vec<usize>,
    pub variant: Variant,
}

impl AuralNetConfig {
    pub fn desk_default(grid: SectorGrid, variant: Variant) -> Self {
        Self {
            grid,
            d_model: 64,
            heads: 4,
            cc_len: crate::dsp::CC_LEN,
            aggregation_hidden: vec![128],
            feature_dim: 64,
            coarse_hidden: vec![],
            fine_hidden: vec![],
            branch_dim: 32,
            head_hidden: vec![32],
            nh_hidden: vec![96],
            variant: Variant::Full,
        }
        .with_variant(variant)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(NnError::HeadsMismatch {
                dim: self.d_model,
                heads: self.heads,
            });
        }
        if self.d_model % 2 != 0 {
            return Err(NnError::BadShape {
                op: "AuralNetConfig",
                expected: "an even d_model for positional encoding",
                got: vec![self.d_model],
            });
        }
        Ok(())
    }

    fn aggregation_dims(&self) -> Vec<usize> {
        let mut dims = vec![3 * self.d_model + self.cc_len];
        dims.extend_from_slice(&self.aggregation_hidden);
        dims.push(self.feature_dim);
        dims
    }
}

struct CoarseBranch {
    features: MlpParams,
    det_head: MlpParams,
}

struct FineBranch {
    pre_gate: MlpParams,
    gate: MlpParams,
    head: MlpParams,
}

/// Model parameters plus the recipe to run them.
pub struct AuralNet<S: Scalar> {
    config: AuralNetConfig,
    store: ParamStore<S>,
    attn_left: AttentionParams,
    attn_right: AttentionParams,
    attn_diff: AttentionParams,
    aggregator: MlpParams,
    coarse: Vec<CoarseBranch>,
    fine: Vec<Vec<FineBranch>>,
    direct: Vec<Vec<MlpParams>>,
}

/// Model input as tape-ready buffers.
#[derive(Debug, Clone)]
pub struct FeatureInput<S> {
    pub frames: usize,
    pub bands: usize,
    pub left: Vec<S>,
    pub right: Vec<S>,
    pub cc: Vec<S>,
}

impl<S: Scalar> FeatureInput<S> {
    pub fn from_features(fs: &FeatureSet) -> Self {
        Self {
            frames: fs.left.frames(),
            bands: fs.left.bands(),
            left: fs.left.values().iter().map(|&v| S::from_f64(v)).collect(),
            right: fs.right.values().iter().map(|&v| S::from_f64(v)).collect(),
            cc: fs.cc.as_slice().iter().map(|&v| S::from_f64(v)).collect(),
        }
    }
}

/// Per-sector output handles on the tape.
pub struct NetOutput {
    pub coarse_det: Vec<VarId>,
    pub fine_det: Vec<Vec<VarId>>,
    pub fine_azi: Vec<Vec<VarId>>,
    pub fine_ele: Vec<Vec<VarId>>,
}

impl<S: Scalar> AuralNet<S> {
    pub fn new(config: AuralNetConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let attn_left = AttentionParams::init(&mut store, "attn.left", config.d_model, config.heads)?;
        let attn_right =
            AttentionParams::init(&mut store, "attn.right", config.d_model, config.heads)?;
        let attn_diff = AttentionParams::init(&mut store, "attn.diff", config.d_model, config.heads)?;
        let aggregator = MlpParams::init(
            &mut store,
            "aggregate",
            &config.aggregation_dims(),
            HeadActivation::Linear,
        );

        let m = config.grid.m_azimuth();
        let n = config.grid.n_elevation();
        let mut coarse = Vec::new();
        let mut fine = Vec::new();
        let mut direct = Vec::new();
        match config.variant {
            Variant::Full | Variant::RegularLoss | Variant::NoCoarse => {
                let use_coarse = config.variant.uses_coarse_branch();
                for i in 0..m {
                    if use_coarse {
                        let mut dims = vec![config.feature_dim];
                        dims.extend_from_slice(&config.coarse_hidden);
                        dims.push(config.branch_dim);
                        coarse.push(CoarseBranch {
                            features: MlpParams::init(
                                &mut store,
                                &format!("coarse.{i}.features"),
                                &dims,
                                HeadActivation::Linear,
                            ),
                            det_head: MlpParams::init(
                                &mut store,
                                &format!("coarse.{i}.det"),
                                &[config.branch_dim, 1],
                                HeadActivation::Sigmoid,
                            ),
                        });
                    }
                    let mut row = Vec::new();
                    for j in 0..n {
                        let mut pre_dims = vec![config.feature_dim];
                        pre_dims.extend_from_slice(&config.fine_hidden);
                        pre_dims.push(config.branch_dim);
                        let mut head_dims = vec![config.branch_dim];
                        head_dims.extend_from_slice(&config.head_hidden);
                        head_dims.push(3);
                        row.push(FineBranch {
                            pre_gate: MlpParams::init(
                                &mut store,
                                &format!("fine.{i}.{j}.pre"),
                                &pre_dims,
                                HeadActivation::Linear,
                            ),
                            gate: MlpParams::init(
                                &mut store,
                                &format!("fine.{i}.{j}.gate"),
                                &[2 * config.branch_dim, config.branch_dim],
                                HeadActivation::Sigmoid,
                            ),
                            head: MlpParams::init(
                                &mut store,
                                &format!("fine.{i}.{j}.head"),
                                &head_dims,
                                HeadActivation::Sigmoid,
                            ),
                        });
                    }
                    fine.push(row);
                }
            }
            Variant::NonHierarchical => {
                for i in 0..m {
                    let mut row = Vec::new();
                    for j in 0..n {
                        let mut dims = vec![config.feature_dim];
                        dims.extend_from_slice(&config.nh_hidden);
                        dims.push(3);
                        row.push(MlpParams::init(
                            &mut store,
                            &format!("direct.{i}.{j}"),
                            &dims,
                            HeadActivation::Sigmoid,
                        ));
                    }
                    direct.push(row);
                }
            }
        }
        Ok(Self {
            config,
            store,
            attn_left,
            attn_right,
            attn_diff,
            aggregator,
            coarse,
            fine,
            direct,
        })
    }

    pub fn config(&self) -> &AuralNetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    fn attention_stream(
        &self,
        tape: &mut Tape<S>,
        params: &AttentionParams,
        x: VarId,
    ) -> Result<VarId, NnError> {
        let shape = tape.shape(x).to_vec();
        let pe = sinusoidal_positional_encoding(tape, shape[0], shape[1])?;
        let with_pe = tape.add(x, pe)?;
        let attended = multi_head_self_attention(tape, &self.store, params, with_pe)?;
        global_average_pool(tape, attended)
    }

    /// Shared feature vector from one clip's features.
    fn aggregate(&self, tape: &mut Tape<S>, input: &FeatureInput<S>) -> Result<VarId, NnError> {
        if input.bands != self.config.d_model || input.cc.len() != self.config.cc_len {
            return Err(NnError::ShapeMismatch {
                op: "aggregate_features",
                left: vec![input.frames, input.bands, input.cc.len()],
                right: vec![input.frames, self.config.d_model, self.config.cc_len],
            });
        }
        let shape = [input.frames, input.bands];
        let left = tape.constant(&shape, input.left.clone());
        let right = tape.constant(&shape, input.right.clone());
        let diff = tape.sub(left, right)?;
        let pooled_left = self.attention_stream(tape, &self.attn_left, left)?;
        let pooled_right = self.attention_stream(tape, &self.attn_right, right)?;
        let pooled_diff = self.attention_stream(tape, &self.attn_diff, diff)?;
        let cc = tape.constant(&[input.cc.len()], input.cc.clone());
        let cat = tape.concat(&[pooled_left, pooled_right, pooled_diff, cc], 0)?;
        mlp(tape, &self.store, &self.aggregator, cat)
    }

    /// Runs the network on one clip, leaving per-sector outputs on the
    /// tape so a loss can be attached.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        input: &FeatureInput<S>,
    ) -> Result<NetOutput, NnError> {
        let f = self.aggregate(tape, input)?;
        let m = self.config.grid.m_azimuth();
        let n = self.config.grid.n_elevation();

        let mut out = NetOutput {
            coarse_det: Vec::with_capacity(m),
            fine_det: Vec::with_capacity(m),
            fine_azi: Vec::with_capacity(m),
            fine_ele: Vec::with_capacity(m),
        };
        for i in 0..m {
            let mut dets = Vec::with_capacity(n);
            let mut azis = Vec::with_capacity(n);
            let mut eles = Vec::with_capacity(n);
            let coarse_feature = if self.config.variant.uses_coarse_branch() {
                Some(mlp(tape, &self.store, &self.coarse[i].features, f)?)
            } else {
                None
            };
            for j in 0..n {
                let triple = match self.config.variant {
                    Variant::NonHierarchical => mlp(tape, &self.store, &self.direct[i][j], f)?,
                    _ => {
                        let branch = &self.fine[i][j];
                        let f_fine = mlp(tape, &self.store, &branch.pre_gate, f)?;
                        let fused = match coarse_feature {
                            Some(f_coarse) => {
                                gate_fuse(tape, &self.store, &branch.gate, f_coarse, f_fine)?
                            }
                            None => f_fine,
                        };
                        mlp(tape, &self.store, &branch.head, fused)?
                    }
                };
                dets.push(tape.slice(triple, 0, 0, 1)?);
                azis.push(tape.slice(triple, 0, 1, 1)?);
                eles.push(tape.slice(triple, 0, 2, 1)?);
            }
            let coarse_det = match coarse_feature {
                Some(f_coarse) => mlp(tape, &self.store, &self.coarse[i].det_head, f_coarse)?,
                // shape-compatibility slot: the row's best fine detection
                None => {
                    let mut best = dets[0];
                    for &d in &dets[1..] {
                        best = tape.max(best, d)?;
                    }
                    best
                }
            };
            out.coarse_det.push(coarse_det);
            out.fine_det.push(dets);
            out.fine_azi.push(azis);
            out.fine_ele.push(eles);
        }
        Ok(out)
    }

    /// Convenience wrapper: forward pass exported as plain numbers.
    pub fn predict(&self, input: &FeatureInput<S>) -> Result<PredictionGrid, NnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, input)?;
        Ok(export_predictions(&tape, &self.config.grid, &out))
    }
}

/// Blends fine and coarse features through the learned gate:
/// `g = sigmoid(W concat(f_coarse, f_fine) + b)`,
/// `fused = g * f_fine + (1 - g) * f_coarse`.
pub fn gate_fuse<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    gate: &MlpParams,
    f_coarse: VarId,
    f_fine: VarId,
) -> Result<VarId, NnError> {
    if tape.shape(f_coarse) != tape.shape(f_fine) {
        return Err(NnError::ShapeMismatch {
            op: "gate_fuse",
            left: tape.shape(f_coarse).to_vec(),
            right: tape.shape(f_fine).to_vec(),
        });
    }
    let cat = tape.concat(&[f_coarse, f_fine], 0)?;
    let g = mlp(tape, store, gate, cat)?;
    let gated_fine = tape.mul(g, f_fine)?;
    let g_shape = tape.shape(g).to_vec();
    let g_len = tape.values(g).len();
    let ones = tape.constant(&g_shape, vec![S::one(); g_len]);
    let inv = tape.sub(ones, g)?;
    let gated_coarse = tape.mul(inv, f_coarse)?;
    tape.add(gated_fine, gated_coarse)
}

/// Copies per-sector outputs into an `(M, 3N+1)` grid.
pub fn export_predictions<S: Scalar>(
    tape: &Tape<S>,
    grid: &SectorGrid,
    out: &NetOutput,
) -> PredictionGrid {
    let mut pred = PredictionGrid::zeros(grid);
    for i in 0..grid.m_azimuth() {
        pred.set_coarse_det(i, tape.scalar(out.coarse_det[i]).to_f64());
        for j in 0..grid.n_elevation() {
            pred.set_fine(
                i,
                j,
                tape.scalar(out.fine_det[i][j]).to_f64(),
                tape.scalar(out.fine_azi[i][j]).to_f64(),
                tape.scalar(out.fine_ele[i][j]).to_f64(),
            );
        }
    }
    pred
}
