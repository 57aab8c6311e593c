//! The masked multi-task loss and the evaluation metrics.
//!
//! The loss sums, over coarse sectors `i` and fine sectors `j`:
//! `delta * L_coarse_i + alpha * L_det_ij + beta * L_azi_ij +
//! gamma * L_ele_ij`, where detection terms are batch-mean binary
//! cross-entropy and the angle terms are mean absolute error masked to
//! sectors that actually contain a source. The regular-loss ablation
//! replaces the masked means with plain batch means over all sectors.

use serde::{Deserialize, Serialize};

use crate::geometry::{
    denormalize_in_sector, PredictionGrid, SectorGrid, SectorIndex, TargetGrid,
};
use crate::model::{NetOutput, Variant};
use crate::nn::{NnError, Scalar, Tape, VarId};

/// Probability clamp applied inside every cross-entropy term.
pub const BCE_CLAMP: f64 = 1e-7;

/// Weights of the four loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Coarse detection weight (delta).
    pub coarse: f64,
    /// Fine detection weight (alpha).
    pub detection: f64,
    /// Azimuth regression weight (beta).
    pub azimuth: f64,
    /// Elevation regression weight (gamma).
    pub elevation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            coarse: 0.2,
            detection: 0.2,
            azimuth: 0.5,
            elevation: 0.3,
        }
    }
}

/// Binary cross-entropy of a single probability against a 0/1 label,
/// with the probability clamped away from the endpoints.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Masked mean absolute error, normalized per sector by the number of
/// active entries across the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMae {
    /// Per-sector values, `M x N` row-major; 0 where no entry is active.
    pub per_sector: Vec<f64>,
    /// Sum of the per-sector values.
    pub total: f64,
}

/// `pred`, `target`, `mask` are `batch x M x N` with the sector axes
/// flattened row-major; entry `k * m * n + i * n + j` addresses sample
/// `k`, sector `(i, j)`.
pub fn masked_mae(
    pred: &[f64],
    target: &[f64],
    mask: &[f64],
    m: usize,
    n: usize,
) -> Result<MaskedMae, NnError> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(NnError::ShapeMismatch {
            op: "masked_mae",
            left: vec![pred.len()],
            right: vec![target.len().min(mask.len())],
        });
    }
    let sectors = m * n;
    if sectors == 0 || pred.len() % sectors != 0 {
        return Err(NnError::BadShape {
            op: "masked_mae",
            expected: "a whole number of M x N grids",
            got: vec![pred.len(), m, n],
        });
    }
    let batch = pred.len() / sectors;
    let mut per_sector = vec![0.0; sectors];
    let mut counts = vec![0usize; sectors];
    for k in 0..batch {
        for s in 0..sectors {
            let idx = k * sectors + s;
            if mask[idx] != 0.0 {
                per_sector[s] += (pred[idx] - target[idx]).abs();
                counts[s] += 1;
            }
        }
    }
    for s in 0..sectors {
        if counts[s] > 0 {
            per_sector[s] /= counts[s] as f64;
        }
    }
    let total = per_sector.iter().sum();
    Ok(MaskedMae { per_sector, total })
}

/// Handles to the loss scalar and its weighted components on the tape.
pub struct LossBreakdown {
    pub total: VarId,
    pub coarse: VarId,
    pub detection: VarId,
    pub azimuth: VarId,
    pub elevation: VarId,
}

/// Builds the training loss for a batch of forward passes. All terms are
/// recorded on the tape, so `backward(total)` yields parameter gradients.
///
/// Masked angle terms index only entries whose sector is active, so
/// inactive-sector angle predictions are not connected to the loss at
/// all: their perturbations change nothing and their gradients are
/// exactly zero. The regular-loss variant connects every entry.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    outputs: &[NetOutput],
    targets: &[TargetGrid],
    weights: &LossWeights,
    variant: Variant,
) -> Result<LossBreakdown, NnError> {
    assert_eq!(
        outputs.len(),
        targets.len(),
        "one target grid per forward pass"
    );
    assert!(!outputs.is_empty(), "empty batch");
    let batch = outputs.len();
    let m = targets[0].m();
    let n = targets[0].n();
    let inv_batch = 1.0 / batch as f64;

    // each BCE term contributes  -w * log(clamp(p or 1-p))
    let mut coarse_terms: Vec<(VarId, S)> = Vec::new();
    let mut det_terms: Vec<(VarId, S)> = Vec::new();
    let mut azi_terms: Vec<(VarId, S)> = Vec::new();
    let mut ele_terms: Vec<(VarId, S)> = Vec::new();

    let lo = S::from_f64(BCE_CLAMP);
    let hi = S::from_f64(1.0 - BCE_CLAMP);

    let bce_term =
        |tape: &mut Tape<S>, p: VarId, label_is_one: bool| -> Result<VarId, NnError> {
            let clamped = tape.clamp(p, lo, hi);
            let prob = if label_is_one {
                clamped
            } else {
                let one = tape.scalar_const(S::one());
                tape.sub(one, clamped)?
            };
            Ok(tape.log(prob))
        };

    for (out, target) in outputs.iter().zip(targets) {
        for i in 0..m {
            if variant.uses_coarse_branch() {
                let term = bce_term(tape, out.coarse_det[i], target.coarse_det(i) == 1.0)?;
                coarse_terms.push((term, S::from_f64(-weights.coarse * inv_batch)));
            }
            for j in 0..n {
                let term = bce_term(tape, out.fine_det[i][j], target.fine_det(i, j) == 1.0)?;
                det_terms.push((term, S::from_f64(-weights.detection * inv_batch)));
            }
        }
    }

    // angle regression
    match variant.uses_masked_regression() {
        true => {
            // per-sector normalizer: active entries across the batch
            for i in 0..m {
                for j in 0..n {
                    let c_valid = targets.iter().filter(|t| t.fine_det(i, j) == 1.0).count();
                    if c_valid == 0 {
                        continue;
                    }
                    let w_azi = S::from_f64(weights.azimuth / c_valid as f64);
                    let w_ele = S::from_f64(weights.elevation / c_valid as f64);
                    for (out, target) in outputs.iter().zip(targets) {
                        if target.fine_det(i, j) != 1.0 {
                            continue;
                        }
                        let t_azi = tape.scalar_const(S::from_f64(target.azi_norm(i, j)));
                        let d_azi = tape.sub(out.fine_azi[i][j], t_azi)?;
                        azi_terms.push((tape.abs(d_azi), w_azi));
                        let t_ele = tape.scalar_const(S::from_f64(target.ele_norm(i, j)));
                        let d_ele = tape.sub(out.fine_ele[i][j], t_ele)?;
                        ele_terms.push((tape.abs(d_ele), w_ele));
                    }
                }
            }
        }
        false => {
            let w_azi = S::from_f64(weights.azimuth * inv_batch);
            let w_ele = S::from_f64(weights.elevation * inv_batch);
            for (out, target) in outputs.iter().zip(targets) {
                for i in 0..m {
                    for j in 0..n {
                        let t_azi = tape.scalar_const(S::from_f64(target.azi_norm(i, j)));
                        let d_azi = tape.sub(out.fine_azi[i][j], t_azi)?;
                        azi_terms.push((tape.abs(d_azi), w_azi));
                        let t_ele = tape.scalar_const(S::from_f64(target.ele_norm(i, j)));
                        let d_ele = tape.sub(out.fine_ele[i][j], t_ele)?;
                        ele_terms.push((tape.abs(d_ele), w_ele));
                    }
                }
            }
        }
    }

    let zero = tape.scalar_const(S::zero());
    let component = |tape: &mut Tape<S>, terms: &[(VarId, S)]| -> Result<VarId, NnError> {
        if terms.is_empty() {
            Ok(zero)
        } else {
            tape.weighted_sum(terms)
        }
    };
    let coarse = component(tape, &coarse_terms)?;
    let detection = component(tape, &det_terms)?;
    let azimuth = component(tape, &azi_terms)?;
    let elevation = component(tape, &ele_terms)?;
    let total = tape.weighted_sum(&[
        (coarse, S::one()),
        (detection, S::one()),
        (azimuth, S::one()),
        (elevation, S::one()),
    ])?;
    Ok(LossBreakdown {
        total,
        coarse,
        detection,
        azimuth,
        elevation,
    })
}

/// Scalar snapshot of a [`LossBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub coarse: f64,
    pub detection: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

impl LossBreakdown {
    pub fn values<S: Scalar>(&self, tape: &Tape<S>) -> LossValues {
        LossValues {
            total: tape.scalar(self.total).to_f64(),
            coarse: tape.scalar(self.coarse).to_f64(),
            detection: tape.scalar(self.detection).to_f64(),
            azimuth: tape.scalar(self.azimuth).to_f64(),
            elevation: tape.scalar(self.elevation).to_f64(),
        }
    }
}

/// Loss evaluation without a tape, used where gradients are not needed
/// (validation loss over a full split). Normalizes masked angle terms by
/// the active counts across everything it is given.
pub fn scalar_total_loss(
    preds: &[PredictionGrid],
    targets: &[TargetGrid],
    weights: &LossWeights,
    variant: Variant,
) -> LossValues {
    assert_eq!(preds.len(), targets.len());
    assert!(!preds.is_empty());
    let batch = preds.len() as f64;
    let m = targets[0].m();
    let n = targets[0].n();

    let mut coarse = 0.0;
    let mut detection = 0.0;
    for (pred, target) in preds.iter().zip(targets) {
        for i in 0..m {
            if variant.uses_coarse_branch() {
                coarse += weights.coarse * bce(pred.coarse_det(i), target.coarse_det(i)) / batch;
            }
            for j in 0..n {
                detection +=
                    weights.detection * bce(pred.fine_det(i, j), target.fine_det(i, j)) / batch;
            }
        }
    }

    let mut azimuth = 0.0;
    let mut elevation = 0.0;
    if variant.uses_masked_regression() {
        for i in 0..m {
            for j in 0..n {
                let c_valid = targets.iter().filter(|t| t.fine_det(i, j) == 1.0).count();
                if c_valid == 0 {
                    continue;
                }
                for (pred, target) in preds.iter().zip(targets) {
                    if target.fine_det(i, j) != 1.0 {
                        continue;
                    }
                    azimuth += weights.azimuth
                        * (pred.azi_norm(i, j) - target.azi_norm(i, j)).abs()
                        / c_valid as f64;
                    elevation += weights.elevation
                        * (pred.ele_norm(i, j) - target.ele_norm(i, j)).abs()
                        / c_valid as f64;
                }
            }
        }
    } else {
        for (pred, target) in preds.iter().zip(targets) {
            for i in 0..m {
                for j in 0..n {
                    azimuth += weights.azimuth
                        * (pred.azi_norm(i, j) - target.azi_norm(i, j)).abs()
                        / batch;
                    elevation += weights.elevation
                        * (pred.ele_norm(i, j) - target.ele_norm(i, j)).abs()
                        / batch;
                }
            }
        }
    }
    LossValues {
        total: coarse + detection + azimuth + elevation,
        coarse,
        detection,
        azimuth,
        elevation,
    }
}

/// Detection accuracy and F1 over the fine detection slots (the coarse
/// slot is excluded).
pub fn detection_metrics(
    preds: &[PredictionGrid],
    targets: &[TargetGrid],
    threshold: f64,
) -> (f64, f64) {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    let mut tn = 0u64;
    for (pred, target) in preds.iter().zip(targets) {
        for i in 0..target.m() {
            for j in 0..target.n() {
                let p = pred.fine_det(i, j) >= threshold;
                let y = target.fine_det(i, j) == 1.0;
                match (p, y) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
    }
    let total = (tp + fp + fn_ + tn).max(1);
    let accuracy = (tp + tn) as f64 / total as f64;
    let f1 = if tp == 0 {
        0.0
    } else {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fn_) as f64;
        if precision + recall == 0.0 {
            0.0
        } else {
             2.0 * precision * recall / (precision + recall)
        }
    };
    (accuracy, f1)
}

/// Detection-aware angular errors in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaeReport {
    pub azimuth_deg: Option<f64>,
    pub elevation_deg: Option<f64>,
    /// Sum of the azimuth and elevation components.
    pub combined_deg: Option<f64>,
    pub n_valid: usize,
}

/// Mean absolute azimuth/elevation error over slots that are detected in
/// both the prediction (at `threshold`) and the target, after
/// denormalizing both to degrees within the slot's sector.
pub fn dae(
    grid: &SectorGrid,
    preds: &[PredictionGrid],
    targets: &[TargetGrid],
    threshold: f64,
) -> DaeReport {
    let mut n_valid = 0usize;
    let mut azi_sum = 0.0;
    let mut ele_sum = 0.0;
    for (pred, target) in preds.iter().zip(targets) {
        for i in 0..target.m() {
            for j in 0..target.n() {
                let detected = pred.fine_det(i, j) >= threshold;
                let active = target.fine_det(i, j) == 1.0;
                if !(detected && active) {
                    continue;
                }
                let idx = SectorIndex::new(i, j);
                let p = denormalize_in_sector(
                    grid,
                    idx,
                    pred.azi_norm(i, j).clamp(0.0, 1.0),
                    pred.ele_norm(i, j).clamp(0.0, 1.0),
                )
                .expect("sector enumerated from grid");
                let t = denormalize_in_sector(
                    grid,
                    idx,
                    target.azi_norm(i, j),
                    target.ele_norm(i, j),
                )
                .expect("targets encoded from grid");
                azi_sum += (p.azimuth_deg() - t.azimuth_deg()).abs();
                ele_sum += (p.elevation_deg() - t.elevation_deg()).abs();
                n_valid += 1;
            }
        }
    }
    if n_valid == 0 {
        return DaeReport {
            azimuth_deg: None,
            elevation_deg: None,
            combined_deg: None,
            n_valid: 0,
        };
    }
    let azi = azi_sum / n_valid as f64;
    let ele = ele_sum / n_valid as f64;
    DaeReport {
        azimuth_deg: Some(azi),
        elevation_deg: Some(ele),
        combined_deg: Some(azi + ele),
        n_valid,
    }
}

/// One evaluation table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub detection_accuracy: f64,
    pub f1: f64,
    pub azimuth_dae_deg: Option<f64>,
    pub elevation_dae_deg: Option<f64>,
    pub combined_dae_deg: Option<f64>,
    pub n_valid: usize,
    pub clip_count: usize,
}

/// Computes every metric for one group of clips.
pub fn evaluate(
    grid: &SectorGrid,
    preds: &[PredictionGrid],
    targets: &[TargetGrid],
    threshold: f64,
) -> MetricReport {
    let (detection_accuracy, f1) = detection_metrics(preds, targets, threshold);
    let d = dae(grid, preds, targets, threshold);
    MetricReport {
        detection_accuracy,
        f1,
        azimuth_dae_deg: d.azimuth_deg,
        elevation_dae_deg: d.elevation_deg,
        combined_dae_deg: d.combined_deg,
        n_valid: d.n_valid,
        clip_count: preds.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{encode_targets, Doa};
    use crate::model::{AuralNet, AuralNetConfig, FeatureInput};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_reference_values() {
        assert!((bce(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(1.0 - 1e-7, 1.0) < 1.01e-7);
        assert!((bce(0.9, 0.0) - (-(0.1f64).ln())).abs() < 1e-9);
        // the clamp keeps endpoints finite
        assert!(bce(0.0, 1.0).is_finite());
        assert!(bce(1.0, 0.0).is_finite());
    }

    #[test]
    fn masked_mae_reference_cases() {
        // all masks zero => zero everywhere
        let z = masked_mae(&[0.4, 0.9], &[0.1, 0.2], &[0.0, 0.0], 1, 2).unwrap();
        assert_eq!(z.total, 0.0);
        assert!(z.per_sector.iter().all(|&v| v == 0.0));

        // single active entry
        let m = masked_mae(&[0.7, 0.9], &[0.5, 0.2], &[1.0, 0.0], 1, 2).unwrap();
        assert!((m.per_sector[0] - 0.2).abs() < 1e-12);
        assert_eq!(m.per_sector[1], 0.0);
        assert!((m.total - 0.2).abs() < 1e-12);

        // masked-out entries are bit-ignored
        let a = masked_mae(&[0.7, 0.9], &[0.5, 0.2], &[1.0, 0.0], 1, 2).unwrap();
        let b = masked_mae(&[0.7, -55.0], &[0.5, 0.2], &[1.0, 0.0], 1, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masked_mae_normalizes_per_sector_across_batch() {
        // batch of 3, single sector; two active entries
        let pred = [0.2, 0.8, 0.5];
        let target = [0.0, 0.4, 0.9];
        let mask = [1.0, 1.0, 0.0];
        let m = masked_mae(&pred, &target, &mask, 1, 1).unwrap();
        assert!((m.per_sector[0] - (0.2 + 0.4) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn masked_mae_shape_errors() {
        assert!(masked_mae(&[0.0; 4], &[0.0; 3], &[0.0; 4], 2, 2).is_err());
        assert!(masked_mae(&[0.0; 5], &[0.0; 5], &[0.0; 5], 2, 2).is_err());
    }

    fn tiny_net(variant: Variant, seed: u64) -> AuralNet<f64> {
        let config = AuralNetConfig {
            grid: crate::geometry::SectorGrid::new(2, 2).unwrap(),
            d_model: 8,
            heads: 2,
            cc_len: 5,
            aggregation_hidden: vec![12],
            feature_dim: 10,
            coarse_hidden: vec![],
            fine_hidden: vec![],
            branch_dim: 6,
            head_hidden: vec![6],
            nh_hidden: vec![8],
            variant,
        };
        AuralNet::new(config, seed).unwrap()
    }

    fn tiny_input(seed: u64) -> FeatureInput<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureInput {
            frames: 4,
            bands: 8,
            left: (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            right: (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            cc: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn tiny_targets(grid: &crate::geometry::SectorGrid) -> TargetGrid {
        // one active sector at (0, 1) with mid normalized angles
        encode_targets(grid, &[Doa::new(22.5, 0.0).unwrap()])
            .map(|_| ())
            .ok();
        // the 2x2 grid has 90-degree wedges and 75-degree bands
        let doa = Doa::new(45.0, 0.0).unwrap();
        encode_targets(grid, &[doa]).unwrap()
    }

    #[test]
    fn hand_expanded_single_sample_loss() {
        let net = tiny_net(Variant::Full, 7);
        let grid = net.config().grid;
        let input = tiny_input(3);
        let target = tiny_targets(&grid);
        let weights = LossWeights::default();

        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &input).unwrap();
        let loss = total_loss(&mut tape, &[out], &[target.clone()], &weights, Variant::Full)
            .unwrap();
        let got = loss.values(&tape);

        // independent expansion from the prediction snapshot
        let pred = net.predict(&input).unwrap();
        let mut want = 0.0;
        for i in 0..2 {
            want += weights.coarse * bce(pred.coarse_det(i), target.coarse_det(i));
            for j in 0..2 {
                want += weights.detection * bce(pred.fine_det(i, j), target.fine_det(i, j));
                if target.fine_det(i, j) == 1.0 {
                    want += weights.azimuth * (pred.azi_norm(i, j) - target.azi_norm(i, j)).abs();
                    want +=
                        weights.elevation * (pred.ele_norm(i, j) - target.ele_norm(i, j)).abs();
                }
            }
        }
        assert!(
            (got.total - want).abs() < 1e-12,
            "tape {} vs hand expansion {}",
            got.total,
            want
        );
        let sum = got.coarse + got.detection + got.azimuth + got.elevation;
        assert!((got.total - sum).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_zero_the_loss() {
        let net = tiny_net(Variant::Full, 11);
        let grid = net.config().grid;
        let input = tiny_input(5);
        let target = tiny_targets(&grid);
        let weights = LossWeights {
            coarse: 0.0,
            detection: 0.0,
            azimuth: 0.0,
            elevation: 0.0,
        };
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &input).unwrap();
        let loss = total_loss(&mut tape, &[out], &[target], &weights, Variant::Full).unwrap();
        assert_eq!(loss.values(&tape).total, 0.0);
    }

    #[test]
    fn perfect_saturated_predictions_reach_the_clamp_floor() {
        // feed the targets back as "network outputs" made of constants
        let grid = crate::geometry::SectorGrid::new(2, 2).unwrap();
        let target = tiny_targets(&grid);
        let mut tape = Tape::<f64>::new();
        let mut out = NetOutput {
            coarse_det: Vec::new(),
            fine_det: vec![Vec::new(); 2],
            fine_azi: vec![Vec::new(); 2],
            fine_ele: vec![Vec::new(); 2],
        };
        for i in 0..2 {
            out.coarse_det
                .push(tape.constant(&[1], vec![target.coarse_det(i)]));
            for j in 0..2 {
                out.fine_det[i].push(tape.constant(&[1], vec![target.fine_det(i, j)]));
                out.fine_azi[i].push(tape.constant(&[1], vec![target.azi_norm(i, j)]));
                out.fine_ele[i].push(tape.constant(&[1], vec![target.ele_norm(i, j)]));
            }
        }
        let weights = LossWeights::default();
        let loss =
            total_loss(&mut tape, &[out], &[target], &weights, Variant::Full).unwrap();
        let v = loss.values(&tape).total;
        // bound: (M coarse + M*N det) clamped BCE terms, each ~1e-7
        let bound = (2.0 * 0.2 + 4.0 * 0.2) * 1.01e-7;
        assert!(v >= 0.0 && v <= bound, "loss {v} above saturation bound {bound}");
    }

    #[test]
    fn masked_variant_ignores_inactive_angle_predictions() {
        let net = tiny_net(Variant::Full, 13);
        let grid = net.config().grid;
        let input = tiny_input(9);
        let target = tiny_targets(&grid);
        let weights = LossWeights::default();

        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &input).unwrap();
        // gradient of inactive-sector angle outputs must be exactly zero
        let inactive: Vec<(usize, usize)> = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .filter(|&(i, j)| target.fine_det(i, j) == 0.0)
            .collect();
        assert!(!inactive.is_empty());
        let handles: Vec<(VarId, VarId)> = inactive
            .iter()
            .map(|&(i, j)| (out.fine_azi[i][j], out.fine_ele[i][j]))
            .collect();
        let loss =
            total_loss(&mut tape, &[out], &[target.clone()], &weights, Variant::Full).unwrap();
        tape.backward(loss.total).unwrap();
        for (azi, ele) in handles {
            assert_eq!(tape.grad(azi), &[0.0]);
            assert_eq!(tape.grad(ele), &[0.0]);
        }
    }

    #[test]
    fn regular_loss_sees_inactive_angle_predictions() {
        let net = tiny_net(Variant::RegularLoss, 13);
        let grid = net.config().grid;
        let input = tiny_input(9);
        let target = tiny_targets(&grid);
        let weights = LossWeights::default();

        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &input).unwrap();
        let inactive: Vec<(usize, usize)> = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .filter(|&(i, j)| target.fine_det(i, j) == 0.0)
            .collect();
        let handles: Vec<VarId> = inactive.iter().map(|&(i, j)| out.fine_azi[i][j]).collect();
        let loss = total_loss(
            &mut tape,
            &[out],
            &[target.clone()],
            &weights,
            Variant::RegularLoss,
        )
        .unwrap();
        tape.backward(loss.total).unwrap();
        for azi in handles {
            assert!(
                tape.grad(azi)[0] != 0.0,
                "regular loss must penalize inactive angle slots"
            );
        }
    }

    #[test]
    fn tape_and_scalar_loss_agree() {
        for variant in [Variant::Full, Variant::RegularLoss, Variant::NoCoarse] {
            let net = tiny_net(variant, 17);
            let grid = net.config().grid;
            let inputs = [tiny_input(1), tiny_input(2), tiny_input(3)];
            let targets = vec![
                encode_targets(&grid, &[Doa::new(45.0, 0.0).unwrap()]).unwrap(),
                encode_targets(&grid, &[Doa::new(200.0, -40.0).unwrap()]).unwrap(),
                encode_targets(&grid, &[]).unwrap(),
            ];
            let weights = LossWeights::default();

            let mut tape = Tape::new();
            let outs: Vec<_> = inputs
                .iter()
                .map(|inp| net.forward(&mut tape, inp).unwrap())
                .collect();
            let tape_loss = total_loss(&mut tape, &outs, &targets, &weights, variant).unwrap();
            let got = tape_loss.values(&tape);

            let preds: Vec<_> = inputs.iter().map(|inp| net.predict(inp).unwrap()).collect();
            let want = scalar_total_loss(&preds, &targets, &weights, variant);
            assert!(
                (got.total - want.total).abs() < 1e-10,
                "{variant:?}: tape {} vs scalar {}",
                got.total,
                want.total
            );
            assert!((got.azimuth - want.azimuth).abs() < 1e-10);
            assert!((got.coarse - want.coarse).abs() < 1e-10);
        }
    }

    #[test]
    fn detection_metrics_reference_cases() {
        let grid = crate::geometry::SectorGrid::default_8x3();
        let target = encode_targets(&grid, &[Doa::new(100.0, 0.0).unwrap()]).unwrap();
        // perfect prediction
        let perfect = PredictionGrid::from_targets(&target);
        let (acc, f1) = detection_metrics(&[perfect.clone()], &[target.clone()], 0.5);
        assert_eq!((acc, f1), (1.0, 1.0));

        // all-negative predictions on an all-negative target
        let empty_target = encode_targets(&grid, &[]).unwrap();
        let zeros = PredictionGrid::zeros(&grid);
        let (acc, f1) = detection_metrics(&[zeros], &[empty_target], 0.5);
        assert_eq!((acc, f1), (1.0, 0.0));

        // TP=1 FP=1 FN=0 TN=22 on the 24-slot grid
        let mut noisy = perfect;
        noisy.set_fine(5, 0, 0.8, 0.5, 0.5); // false positive
        let (acc, f1) = detection_metrics(&[noisy], &[target], 0.5);
        assert!((acc - 23.0 / 24.0).abs() < 1e-12);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dae_reference_case() {
        // one valid slot; predictions 2 deg off in azimuth, 3 in elevation
        let grid = crate::geometry::SectorGrid::default_8x3();
        let truth_doa = Doa::new(12.0, 2.0).unwrap();
        let target = encode_targets(&grid, &[truth_doa]).unwrap();
        let mut pred = PredictionGrid::from_targets(&target);
        let idx = crate::geometry::sector_of(&grid, &truth_doa).unwrap();
        // predicted direction (10, 5): azimuth error 2, elevation error 3
        let pred_doa = Doa::new(10.0, 5.0).unwrap();
        let (ua, ue) =
            crate::geometry::normalize_in_sector(&grid, &pred_doa, idx).unwrap();
        pred.set_fine(idx.coarse, idx.fine, 1.0, ua, ue);
        let report = dae(&grid, &[pred], &[target], 0.5);
        assert_eq!(report.n_valid, 1);
        assert!((report.azimuth_deg.unwrap() - 2.0).abs() < 1e-9);
        assert!((report.elevation_deg.unwrap() - 3.0).abs() < 1e-9);
        assert!((report.combined_deg.unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn dae_with_no_valid_slots_is_undefined() {
        let grid = crate::geometry::SectorGrid::default_8x3();
        let target = encode_targets(&grid, &[Doa::new(0.0, 0.0).unwrap()]).unwrap();
        let pred = PredictionGrid::zeros(&grid);
        let report = dae(&grid, &[pred], &[target], 0.5);
        assert_eq!(report.n_valid, 0);
        assert_eq!(report.combined_deg, None);
    }

    #[test]
    fn dae_monotone_in_slot_error() {
        let grid = crate::geometry::SectorGrid::default_8x3();
        let truth = Doa::new(10.0, 10.0).unwrap();
        let target = encode_targets(&grid, &[truth]).unwrap();
        let idx = crate::geometry::sector_of(&grid, &truth).unwrap();
        let mut last = 0.0;
        for delta in [0.0, 0.1, 0.2, 0.3] {
            let mut pred = PredictionGrid::from_targets(&target);
            pred.set_fine(
                idx.coarse,
                idx.fine,
                1.0,
                target.azi_norm(idx.coarse, idx.fine) + delta,
                target.ele_norm(idx.coarse, idx.fine),
            );
            let combined = dae(&grid, &[pred], &[target.clone()], 0.5)
                .combined_deg
                .unwrap();
            if delta > 0.0 {
                assert!(combined > last, "combined DAE must strictly increase");
            }
            last = combined;
        }
    }

    #[test]
    fn metrics_match_brute_force_on_random_grids() {
        let grid = crate::geometry::SectorGrid::default_8x3();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let mut pred = PredictionGrid::zeros(&grid);
            let mut target = PredictionGrid::zeros(&grid);
            for i in 0..8 {
                for j in 0..3 {
                    pred.set_fine(
                        i,
                        j,
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                    );
                    if rng.gen_bool(0.2) {
                        target.set_fine(i, j, 1.0, rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                    }
                }
            }
            // brute-force confusion matrix and angular sums
            let target_grid = {
                // rebuild a TargetGrid through encode-free construction:
                // use the prediction-grid values directly
                let mut sources = Vec::new();
                for i in 0..8 {
                    for j in 0..3 {
                        if target.fine_det(i, j) == 1.0 {
                            let doa = denormalize_in_sector(
                                &grid,
                                SectorIndex::new(i, j),
                                target.azi_norm(i, j),
                                target.ele_norm(i, j),
                            )
                            .unwrap();
                            sources.push(doa);
                        }
                    }
                }
                encode_targets(&grid, &sources).unwrap()
            };
            let (acc, f1) = detection_metrics(&[pred.clone()], &[target_grid.clone()], 0.5);
            let d = dae(&grid, &[pred.clone()], &[target_grid.clone()], 0.5);

            let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
            let mut n_valid = 0;
            let mut azi_sum = 0.0;
            let mut ele_sum = 0.0;
            for i in 0..8 {
                for j in 0..3 {
                    let p = pred.fine_det(i, j) >= 0.5;
                    let y = target_grid.fine_det(i, j) == 1.0;
                    match (p, y) {
                        (true, true) => tp += 1.0,
                        (true, false) => fp += 1.0,
                        (false, true) => fn_ += 1.0,
                        (false, false) => tn += 1.0,
                    }
                    if p && y {
                        n_valid += 1;
                        let (alo, ahi, elo, ehi) =
                            crate::geometry::sector_bounds(&grid, SectorIndex::new(i, j))
                                .unwrap();
                        azi_sum += ((pred.azi_norm(i, j) - target_grid.azi_norm(i, j))
                            * (ahi - alo))
                            .abs();
                        ele_sum += ((pred.ele_norm(i, j) - target_grid.ele_norm(i, j))
                            * (ehi - elo))
                            .abs();
                    }
                }
            }
            let want_acc = (tp + tn) / 24.0;
            assert!((acc - want_acc).abs() < 1e-12);
            let want_f1 = if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            };
            assert!((f1 - want_f1).abs() < 1e-12, "{f1} vs {want_f1}");
            assert_eq!(d.n_valid, n_valid);
            if n_valid > 0 {
                assert!((d.azimuth_deg.unwrap() - azi_sum / n_valid as f64).abs() < 1e-9);
                assert!((d.elevation_deg.unwrap() - ele_sum / n_valid as f64).abs() < 1e-9);
            }
        }
    }
}
