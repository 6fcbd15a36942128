//! Stage 3: composing the adapted feature block with the source regression
//! head, and evaluating any regressor on labeled data.

use crate::data::batching::BatchProvider;
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::nets::{forward_regressor, ParamStore};
use crate::objectives::angular_error_degrees;
use crate::Elem;

use super::EvalReport;

/// Splices networks for inference on the adapted domain: the feature block
/// (C1–C5, pools, FC1) comes from `target`, the regression block (FC2, FC3)
/// from `source`. Both stores must carry the same architecture.
pub fn compose_inference(
    target: &ParamStore<Elem>,
    source: &ParamStore<Elem>,
) -> Result<ParamStore<Elem>> {
    let tf = target.arch().fingerprint();
    let sf = source.arch().fingerprint();
    if tf != sf {
        return Err(Error::Composition(format!(
            "feature block is {tf} but regression head is {sf}"
        )));
    }
    let mut merged = target.tensors().clone();
    merged.fc2 = source.tensors().fc2.clone();
    merged.fc3 = source.tensors().fc3.clone();
    ParamStore::from_tensors(target.arch(), merged)
}

/// Mean angular error of `params` over a labeled dataset, evaluated in
/// sequential batches (the partial tail is kept). The per-batch means are
/// accumulated in f64 weighted by batch size, so the report is independent
/// of accumulation order.
pub fn evaluate_provider(
    params: &ParamStore<Elem>,
    data: &dyn BatchProvider,
    batch_size: usize,
) -> Result<EvalReport> {
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Evaluation("evaluation dataset is empty".into()));
    }
    if !data.is_labeled() {
        return Err(Error::Evaluation(
            "evaluation requires gaze labels on every record".into(),
        ));
    }
    let n = data.len();
    let all: Vec<usize> = (0..n).collect();
    let mut weighted_sum = 0f64;
    let mut batches = 0usize;
    for chunk in all.chunks(batch_size) {
        let batch = data.materialize(chunk);
        let gazes = batch
            .gazes
            .as_ref()
            .ok_or_else(|| Error::Evaluation("batch lost its labels".into()))?;
        let out = forward_regressor(params, &batch.images)?;
        let err = angular_error_degrees(&out.y, gazes)?;
        weighted_sum += err.to_f64() * chunk.len() as f64;
        batches += 1;
    }
    Ok(EvalReport {
        mean_error_deg: weighted_sum / n as f64,
        samples: n,
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::batching::ArrayDataset;
    use crate::nets::{Arch, Block};
    use ndarray::{Array2, Array4};
    use rand::Rng;

    fn labeled_toy(n: usize, seed: u64) -> ArrayDataset {
        let mut rng = crate::linalg::rng_from(seed);
        let images =
            Array4::from_shape_simple_fn((n, 1, 19, 25), || rng.gen::<Elem>() * 2.0 - 1.0);
        let mut gazes = Array2::<Elem>::zeros((n, 3));
        for mut row in gazes.rows_mut() {
            let v = [
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                -(rng.gen::<f64>() + 0.2),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            for (slot, val) in row.iter_mut().zip(v) {
                *slot = (val / norm) as Elem;
            }
        }
        ArrayDataset::new(images, Some(gazes)).unwrap()
    }

    #[test]
    fn composition_takes_features_from_target_and_head_from_source() {
        let arch = Arch::tiny();
        let target = ParamStore::<Elem>::init(&arch, 1).unwrap();
        let source = ParamStore::<Elem>::init(&arch, 2).unwrap();
        let merged = compose_inference(&target, &source).unwrap();

        for ((m, t), s) in merged
            .tensors()
            .slices()
            .iter()
            .zip(target.tensors().slices())
            .zip(source.tensors().slices())
        {
            match m.block {
                Block::Feature => assert_eq!(m.data, t.data, "{} must come from target", m.name),
                Block::Regression => {
                    assert_eq!(m.data, s.data, "{} must come from source", m.name)
                }
            }
        }
    }

    #[test]
    fn composing_a_store_with_itself_is_the_identity() {
        let arch = Arch::tiny();
        let source = ParamStore::<Elem>::init(&arch, 3).unwrap();
        let merged = compose_inference(&source, &source).unwrap();
        assert_eq!(merged.content_hash(), source.content_hash());
    }

    #[test]
    fn mismatched_architectures_cannot_compose() {
        let a = ParamStore::<Elem>::init(&Arch::tiny(), 1).unwrap();
        let mut wider = Arch::tiny();
        wider.fc2_out = 7;
        let b = ParamStore::<Elem>::init(&wider, 1).unwrap();
        let err = compose_inference(&a, &b).unwrap_err();
        assert!(matches!(err, Error::Composition(_)), "got {err:?}");
    }

    #[test]
    fn evaluation_reports_batches_and_is_deterministic() {
        let params = ParamStore::<Elem>::init(&Arch::tiny(), 7).unwrap();
        let data = labeled_toy(37, 11);
        let a = evaluate_provider(&params, &data, 16).unwrap();
        let b = evaluate_provider(&params, &data, 16).unwrap();
        assert_eq!(a.samples, 37);
        assert_eq!(a.batches, 3, "two full batches plus a tail of five");
        assert_eq!(a.mean_error_deg.to_bits(), b.mean_error_deg.to_bits());
        assert!(a.mean_error_deg > 0.0 && a.mean_error_deg < 180.0);
    }

    #[test]
    fn evaluation_requires_labels() {
        let params = ParamStore::<Elem>::init(&Arch::tiny(), 7).unwrap();
        let mut rng = crate::linalg::rng_from(5);
        let images =
            Array4::from_shape_simple_fn((4, 1, 19, 25), || rng.gen::<Elem>() * 2.0 - 1.0);
        let unlabeled = ArrayDataset::new(images, None).unwrap();
        let err = evaluate_provider(&params, &unlabeled, 4).unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)), "got {err:?}");
    }
}
