//! Seeded finite-difference suites, one per loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use umargin_core::cluster_loss::{
    clustering_active_set, clustering_loss, hybrid_loss, inter_class_margin_loss, margin_active_set, ClusterState,
};
use umargin_core::gradcheck::{check_excluding, CheckOptions, GradReport};
use umargin_core::margin_loss::{
    angular_variant_loss, large_margin_softmax_loss, segment_index, softmax_loss, uncertainty_weighted_margin_loss,
    AngularVariant, ClassifierState, LossResult,
};
use umargin_core::network::{forward, loss_and_gradients, MlpModel, SampleObjective};
use umargin_core::rng::{self, Stream};
use umargin_core::uncertainty::DropoutMask;
use umargin_core::{DenseMatrix, Result};

use crate::error::CliError;

pub const INSTANCES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Softmax,
    LargeMargin2,
    LargeMargin3,
    UncertaintyWeighted,
    Clustering,
    InterClass,
    Hybrid,
    EndToEnd,
    AngularI,
    AngularII,
}

impl Suite {
    pub const ALL: [Suite; 10] = [
        Suite::Softmax,
        Suite::LargeMargin2,
        Suite::LargeMargin3,
        Suite::UncertaintyWeighted,
        Suite::Clustering,
        Suite::InterClass,
        Suite::Hybrid,
        Suite::EndToEnd,
        Suite::AngularI,
        Suite::AngularII,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Softmax => "softmax",
            Suite::LargeMargin2 => "large-margin-2",
            Suite::LargeMargin3 => "large-margin-3",
            Suite::UncertaintyWeighted => "uncertainty-weighted",
            Suite::Clustering => "clustering",
            Suite::InterClass => "inter-class",
            Suite::Hybrid => "hybrid",
            Suite::EndToEnd => "end-to-end",
            Suite::AngularI => "angular-i",
            Suite::AngularII => "angular-ii",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> std::result::Result<Self, CliError> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown gradcheck loss '{s}'")))
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("finite draws")
}

fn margin_instance<F>(rng: &mut ChaCha8Rng, loss: F, m: Option<u32>) -> GradReport
where
    F: Fn(&ClassifierState, &[f64], usize) -> Result<LossResult>,
{
    let (c, d) = (4, 4);
    let state = ClassifierState::new(normal_matrix(rng, c, d, 1.0)).expect("C ≥ 2");
    let f: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let y = rng.random_range(0..c);
    let r = loss(&state, &f, y).expect("nondegenerate instance");
    let mut analytic = r.grad_weights.as_slice().to_vec();
    analytic.extend_from_slice(&r.grad_feature);
    let mut params = state.weights().as_slice().to_vec();
    params.extend_from_slice(&f);
    let split = |p: &[f64]| {
        let mut s = state.clone();
        s.weights_mut().as_mut_slice().copy_from_slice(&p[..c * d]);
        (s, p[c * d..].to_vec())
    };
    let value = |p: &[f64]| {
        let (s, f) = split(p);
        loss(&s, &f, y).map_or(f64::NAN, |r| r.value)
    };
    let segments = |p: &[f64]| {
        let (s, f) = split(p);
        m.map(|m| vec![segment_index(&s, &f, y, m).map_or(-1, i64::from)]).unwrap_or_default()
    };
    check_excluding(&value, &analytic, &params, &CheckOptions::default(), &segments)
}

fn cluster_state(centers: DenseMatrix) -> ClusterState {
    ClusterState::coupled(centers, ClusterState::DEFAULT_LAMBDA, ClusterState::DEFAULT_SCALE, ClusterState::DEFAULT_ALPHA)
        .expect("default cluster parameters")
}

fn clustering_instance(rng: &mut ChaCha8Rng) -> GradReport {
    let state = cluster_state(normal_matrix(rng, 3, 4, 2.0));
    let feats = normal_matrix(rng, 8, 4, 2.5);
    let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
    let (_, g) = clustering_loss(&state, &feats, &labels).expect("valid batch");
    let as_feats = |p: &[f64]| DenseMatrix::from_vec(8, 4, p.to_vec()).expect("finite");
    let value = |p: &[f64]| clustering_loss(&state, &as_feats(p), &labels).map_or(f64::NAN, |v| v.0);
    let segments = |p: &[f64]| clustering_active_set(&state, &as_feats(p), &labels);
    check_excluding(&value, g.as_slice(), feats.as_slice(), &CheckOptions::default(), &segments)
}

fn inter_class_instance(rng: &mut ChaCha8Rng) -> GradReport {
    let state = cluster_state(normal_matrix(rng, 4, 3, 3.0));
    let (_, g) = inter_class_margin_loss(&state).expect("C ≥ 2");
    let with = |p: &[f64]| {
        let mut s = state.clone();
        s.centers.as_mut_slice().copy_from_slice(p);
        s
    };
    let value = |p: &[f64]| inter_class_margin_loss(&with(p)).map_or(f64::NAN, |v| v.0);
    let segments = |p: &[f64]| margin_active_set(&with(p));
    check_excluding(&value, g.as_slice(), state.centers.as_slice(), &CheckOptions::default(), &segments)
}

fn hybrid_instance(rng: &mut ChaCha8Rng) -> GradReport {
    let state = cluster_state(normal_matrix(rng, 3, 4, 3.0));
    let feats = normal_matrix(rng, 6, 4, 3.0);
    let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
    let h = hybrid_loss(&state, &feats, &labels).expect("valid batch");
    let mut analytic = h.grad_features.as_slice().to_vec();
    analytic.extend_from_slice(h.grad_centers.as_slice());
    let mut params = feats.as_slice().to_vec();
    params.extend_from_slice(state.centers.as_slice());
    let split = |p: &[f64]| {
        let mut s = state.clone();
        s.centers.as_mut_slice().copy_from_slice(&p[24..]);
        (s, DenseMatrix::from_vec(6, 4, p[..24].to_vec()).expect("finite"))
    };
    let value = |p: &[f64]| {
        let (s, f) = split(p);
        hybrid_loss(&s, &f, &labels).map_or(f64::NAN, |h| h.value)
    };
    let segments = |p: &[f64]| {
        let (s, f) = split(p);
        let mut ids = clustering_active_set(&s, &f, &labels);
        ids.extend(margin_active_set(&s));
        ids
    };
    check_excluding(&value, &analytic, &params, &CheckOptions::default(), &segments)
}

fn end_to_end_instance(rng: &mut ChaCha8Rng, index: usize, clusters: &ClusterState) -> Option<GradReport> {
    let objectives = [
        SampleObjective::Softmax,
        SampleObjective::LargeMargin { m: 2 },
        SampleObjective::LargeMargin { m: 3 },
        SampleObjective::Weighted { m: 3, ccdf: 0.4 },
        SampleObjective::Angular(AngularVariant::Scaled(2.0)),
        SampleObjective::Angular(AngularVariant::HalfAngle(3.0)),
        SampleObjective::Cluster { state: clusters, weight: 0.3 },
    ];
    let objective = objectives[index % objectives.len()];
    let model = MlpModel::new(2, &[8, 8], 3, rng.random()).expect("valid shape");
    let mask = DropoutMask::sample(rng, &[8, 8], 0.8);
    let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    let y = rng.random_range(0..3);
    // a fully dropped feature has no angle; such draws are not instances
    let (_, g) = loss_and_gradients(&model, &x, y, Some(&mask), objective).ok()?;
    let with = |p: &[f64]| {
        let mut m = model.clone();
        m.set_flat(p);
        m
    };
    let value = |p: &[f64]| loss_and_gradients(&with(p), &x, y, Some(&mask), objective).map_or(f64::NAN, |v| v.0);
    let segments = |p: &[f64]| {
        let m = with(p);
        let Ok(c) = forward(&m, &x, Some(&mask)) else { return vec![-2] };
        let mut s: Vec<i64> = c.pre_activations.iter().flatten().map(|v| (*v > 0.0) as i64).collect();
        match objective {
            SampleObjective::LargeMargin { m: k } | SampleObjective::Weighted { m: k, .. } => {
                s.push(segment_index(&m.classifier, &c.feature, y, k).map_or(-1, i64::from));
            }
            SampleObjective::Cluster { state, .. } => {
                let row = DenseMatrix::from_vec(1, c.feature.len(), c.feature.clone()).expect("finite");
                s.extend(clustering_active_set(state, &row, &[y]));
            }
            _ => {}
        }
        s
    };
    Some(check_excluding(&value, &g.flatten(), &model.flatten(), &CheckOptions::default(), &segments))
}

/// Runs [`INSTANCES`] seeded instances of one suite and folds them into one report.
pub fn run(suite: Suite, seed: u64) -> GradReport {
    let mut rng = rng::stream(seed, Stream::Test);
    let mut report = GradReport::empty(CheckOptions::default().tolerance);
    let clusters = cluster_state(DenseMatrix::from_rows(&[vec![0.5; 8], vec![0.0; 8], vec![1.0; 8]]).expect("finite"));
    let mut done = 0;
    let mut index = 0;
    while done < INSTANCES {
        let r = match suite {
            Suite::Softmax => Some(margin_instance(&mut rng, softmax_loss, None)),
            Suite::LargeMargin2 => Some(margin_instance(&mut rng, |s, f, y| large_margin_softmax_loss(s, f, y, 2), Some(2))),
            Suite::LargeMargin3 => Some(margin_instance(&mut rng, |s, f, y| large_margin_softmax_loss(s, f, y, 3), Some(3))),
            Suite::UncertaintyWeighted => {
                let ccdf: f64 = rng.random();
                let m = rng.random_range(1..=3);
                Some(margin_instance(&mut rng, move |s, f, y| uncertainty_weighted_margin_loss(s, f, y, m, ccdf), Some(m)))
            }
            Suite::Clustering => Some(clustering_instance(&mut rng)),
            Suite::InterClass => Some(inter_class_instance(&mut rng)),
            Suite::Hybrid => Some(hybrid_instance(&mut rng)),
            Suite::EndToEnd => end_to_end_instance(&mut rng, index, &clusters),
            Suite::AngularI => Some(margin_instance(&mut rng, |s, f, y| angular_variant_loss(s, f, y, AngularVariant::Scaled(2.0)), None)),
            Suite::AngularII => {
                Some(margin_instance(&mut rng, |s, f, y| angular_variant_loss(s, f, y, AngularVariant::HalfAngle(3.0)), None))
            }
        };
        index += 1;
        if let Some(r) = r {
            report.merge(&r);
            done += 1;
        }
    }
    report
}
