//! The interpretable-model refinement loop and Bayesian feature selection.

pub mod session;
pub mod variational;

pub use session::{
    stopping_check, IterationInput, IterationReport, ReplayOutcome, Session, SessionConfig, SessionDir,
    SessionManifest, SessionStatus, train_reference, DEFAULT_STOP_EPSILON,
};
pub use variational::{
    fit_variational_blr, selection_loop, PosteriorSummary, SelectionConfig, SelectionResult, SelectionRound,
    VariationalConfig,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::SrmError;
    use crate::features::{hybrid_feature_set, hybrid_spec_text};
    use crate::models::{ChoiceModel, MlpTrainConfig};
    use crate::synth::{generate_dataset, JudgmentCounts, PopulationConfig};

    fn small_session() -> Session {
        let fs = hybrid_feature_set();
        let w: Vec<f64> = (0..fs.len()).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect();
        let truth = ChoiceModel::new(fs, w).unwrap();
        let cfg = PopulationConfig {
            n_dilemmas: 300,
            judgments_per_dilemma: JudgmentCounts::LogUniform { min: 50, max: 500 },
            ..Default::default()
        };
        let data = generate_dataset(&cfg, &truth, 1).unwrap();
        let config = SessionConfig {
            mlp: MlpTrainConfig {
                hidden_layers: vec![8],
                max_epochs: 10,
                batch_size: 64,
                ..Default::default()
            },
            top_k: 5,
            ..Default::default()
        };
        Session::init(data, &hybrid_spec_text(), config).unwrap()
    }

    #[test]
    fn init_records_iteration_zero() {
        let s = small_session();
        assert_eq!(s.history().len(), 1);
        let r = &s.history()[0];
        assert_eq!(r.iteration, 0);
        assert_eq!(r.n_features, 22);
        assert_eq!(r.smoothed_residuals.len(), 5);
        assert!(r.raw_residuals.iter().all(|x| x.n >= 100));
        assert!(r
            .smoothed_residuals
            .windows(2)
            .all(|w| w[0].smoothed.unwrap().abs() >= w[1].smoothed.unwrap().abs()));
        assert_eq!(s.split().train.len() + s.split().test.len(), 300);
    }

    #[test]
    fn empty_iteration_reevaluates() {
        let mut s = small_session();
        let before = s.history()[0].clone();
        let r = s.iterate("  # nothing\n", false).unwrap().clone();
        assert_eq!(r.iteration, 1);
        assert!(r.features_added.is_empty());
        assert_eq!(r.choice, before.choice);
        assert_eq!(r.reference, before.reference);
    }

    #[test]
    fn duplicate_column_warns_without_moving_metrics() {
        let mut s = small_session();
        let before = s.history()[0].choice.clone();
        let r = s.iterate("indicator swerve_again intervention\n", false).unwrap();
        assert_eq!(r.features_added, ["swerve_again"]);
        assert!((r.choice.accuracy - before.accuracy).abs() < 0.001);
        assert!(r.warnings.iter().any(|w| w.contains("collinear")), "{:?}", r.warnings);
    }

    #[test]
    fn parse_errors_are_relative_to_new_text() {
        let mut s = small_session();
        match s.iterate("indicator ok intervention\nindicator bad signal:purple\n", false) {
            Err(SrmError::Parse(d)) => assert_eq!(d.line, 2),
            other => panic!("{other:?}"),
        }
        match s.iterate("count Dog\n", false) {
            Err(SrmError::Parse(d)) => assert!(d.message.contains("duplicate"), "{d}"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.history().len(), 1);
    }

    #[test]
    fn stopping_check_on_identical_models() {
        let s = small_session();
        let mut r = s.history()[0].clone();
        r.reference = r.choice.clone();
        assert!(stopping_check(&r, 0.002));
        r.reference.accuracy = r.choice.accuracy + 0.01;
        assert!(!stopping_check(&r, 0.002));
    }

    #[test]
    fn persisted_session_reopens_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let sd = SessionDir::new(dir.path().join("sess"));
        let mut s = small_session();
        sd.create(&s).unwrap();
        assert!(sd.create(&s).is_err());
        s.iterate("indicator hva axis:humans_vs_animals:favored\n", false).unwrap();
        sd.save(&s).unwrap();
        for f in ["manifest.json", "data.jsonl", "checkpoints/choice-0.json", "checkpoints/choice-1.json",
                  "checkpoints/reference-0.json", "iterations/1/report.json", "iterations/1/raw_residuals.csv",
                  "iterations/0/smoothed_residuals.csv"] {
            assert!(sd.root().join(f).exists(), "{f}");
        }
        let reopened = sd.open().unwrap();
        assert_eq!(reopened.history(), s.history());
        assert_eq!(reopened.choice_model(), s.choice_model());
        assert_eq!(reopened.reference_model(), s.reference_model());
        let outcome = sd.replay().unwrap();
        assert_eq!(outcome.iterations, 2);
        assert!(outcome.identical(), "{outcome:?}");
    }
}
