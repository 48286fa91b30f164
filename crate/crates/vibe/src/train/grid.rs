//! Exhaustive hyperparameter search on validation accuracy.

use crate::classify::{argmax_class, stage1_predict, VibeState};
use crate::corpus::BowVector;
use crate::error::{Result, VibeError};
use crate::ntm::model::Side;
use crate::train::{init_state, train_stage1, Stage1Sample, StepRecord, TrainConfig};

/// A labeled validation document (future side).
#[derive(Debug, Clone)]
pub struct ValidationDoc {
    pub bow: BowVector,
    pub label: usize,
}

/// Winning cell of a grid search.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub lambda: f64,
    pub mu: f64,
    pub learning_rate: f64,
    pub validation_accuracy: f64,
    pub state: VibeState,
    pub history: Vec<StepRecord>,
}

fn validation_accuracy(state: &VibeState, validation: &[ValidationDoc]) -> f64 {
    let correct = validation
        .iter()
        .filter(|doc| {
            let probs = stage1_predict(
                &doc.bow,
                &state.model,
                &state.provider,
                &state.head_stage1,
                Side::Future,
            );
            argmax_class(&probs) == doc.label
        })
        .count();
    correct as f64 / validation.len() as f64
}

/// Train one stage-one model per (λ, μ, learning-rate) grid cell and keep
/// the best by validation accuracy. Diverged cells are skipped; exact ties
/// go to the lower λ, then lower μ, then lower learning rate. The winning
/// trained state is retained in the outcome.
pub fn grid_search(
    samples: &[Stage1Sample],
    validation: &[ValidationDoc],
    base: &TrainConfig,
    vocab: usize,
    classes: usize,
) -> Result<GridOutcome> {
    base.validate()?;
    if validation.is_empty() {
        return Err(VibeError::InvalidInput("validation set must be non-empty".into()));
    }
    let mut cells: Vec<(f64, f64, f64)> = Vec::new();
    for &lambda in &base.grid_lambda {
        for &mu in &base.grid_mu {
            for &lr in &base.grid_learning_rate {
                cells.push((lambda, mu, lr));
            }
        }
    }
    // Ascending order makes the tie-break "first strictly better wins".
    cells.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut best: Option<GridOutcome> = None;
    for (lambda, mu, lr) in cells {
        let mut config = base.clone();
        config.lambda = lambda;
        config.mu = mu;
        config.learning_rate = lr;
        let mut state = init_state(&config, vocab, classes);
        let history = match train_stage1(&mut state, samples, &config) {
            Ok(h) => h,
            Err(VibeError::Diverged) => continue,
            Err(other) => return Err(other),
        };
        let accuracy = validation_accuracy(&state, validation);
        let better = match &best {
            None => true,
            Some(b) => accuracy > b.validation_accuracy,
        };
        if better {
            best = Some(GridOutcome {
                lambda,
                mu,
                learning_rate: lr,
                validation_accuracy: accuracy,
                state,
                history,
            });
        }
    }
    best.ok_or(VibeError::Diverged)
}
