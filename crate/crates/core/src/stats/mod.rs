//! Logistic models, odds ratios, AUC, rank and contingency tests, and the
//! predictor-set evaluation grid.

mod grid;
mod hypothesis;
mod logistic;

pub use grid::{
    assemble_features, evaluate_grid, odds_ratio_csv, odds_ratio_report, AucGrid, GridCell,
    GridOptions, MissingReason, OddsRatioRow, Predictor, PredictorSet, DEMOGRAPHICS, OR_COLUMNS,
};
pub use hypothesis::{auc, chi_square, kruskal_wallis, mid_ranks, TestResult};
pub use logistic::{
    fit_logistic, odds_ratios, wald_odds_ratio, FeatureMatrix, FitOptions, LogisticModel,
    OddsRatio, INTERCEPT, SIGNIFICANCE, WALD_Z,
};
